#![allow(dead_code)]

use std::path::PathBuf;

use quadpool::kernel::StepInfo;
use quadpool::{Action, BlockState, KernelState, MemPool, Scenario, System, ThreadId};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(&fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Partition oracle that shares no code with the checker: list every slot
/// that stands for memory as a byte interval, sort, and require the
/// intervals to tile the pool window exactly once.
pub fn partition_oracle(p: &MemPool) -> bool {
    let c = p.config;
    let mut spans = Vec::new();
    let mut size = c.max_sz;
    for bits in p.levels.iter().map(|l| &l.bits) {
        for (i, st) in bits.iter().enumerate() {
            let real = matches!(
                st,
                BlockState::Allocated | BlockState::Free | BlockState::Allocating | BlockState::Freeing
            );
            if real {
                spans.push((i as u64 * size, (i as u64 + 1) * size));
            }
        }
        size /= 4;
    }
    spans.sort();
    let mut at = 0;
    for (lo, hi) in spans {
        if lo != at {
            return false;
        }
        at = hi;
    }
    at == c.max_sz * c.n_max
}

pub fn partition_oracle_state(s: &KernelState) -> bool {
    s.pools.iter().all(partition_oracle)
}

/// Random walk over the system, returning every visited state.
pub fn random_walk(sys: &System, rng: &mut impl Rng, steps: usize) -> Vec<KernelState> {
    let mut s = sys.initial_state().unwrap();
    let mut out = vec![s.clone()];
    for _ in 0..steps {
        let en = sys.enabled(&s);
        let Some(a) = en.choose(rng) else { break };
        s = sys.step(&s, *a).unwrap().0;
        out.push(s.clone());
    }
    out
}

/// Overwrite one random slot of one random pool with a random state.
pub fn mutate(s: &KernelState, rng: &mut impl Rng) -> KernelState {
    const ALL: [BlockState; 6] = [
        BlockState::Allocated,
        BlockState::Free,
        BlockState::Divided,
        BlockState::NoExist,
        BlockState::Freeing,
        BlockState::Allocating,
    ];
    let mut m = s.clone();
    let p = rng.gen_range(0..m.pools.len());
    let pool = &mut m.pools[p];
    let l = rng.gen_range(0..pool.levels.len());
    let b = rng.gen_range(0..pool.levels[l].bits.len());
    pool.levels[l].bits[b] = *ALL.choose(rng).unwrap();
    m
}

/// A random scenario over one or two pools and up to three threads, each
/// script allocating and later freeing.
pub fn random_scenario_json(rng: &mut impl Rng) -> String {
    let shapes = [(256, 1, 2), (64, 2, 2), (64, 1, 1), (128, 1, 1), (512, 1, 3)];
    let npools = rng.gen_range(1..=2);
    let pools: Vec<String> = (0..npools)
        .map(|i| {
            let (sz, n, lv) = shapes[rng.gen_range(0..shapes.len())];
            format!(r#"{{"pool_id": "P{i}", "max_sz": {sz}, "n_max": {n}, "n_levels": {lv}}}"#)
        })
        .collect();
    let nthreads = rng.gen_range(1..=3);
    let threads: Vec<String> = (0..nthreads)
        .map(|t| {
            let mut ops = Vec::new();
            let nallocs = rng.gen_range(1..=2);
            for _ in 0..nallocs {
                let size = *[1u64, 4, 16, 50, 64, 200, 256, 600].choose(rng).unwrap();
                let timeout = *[r#""FOREVER""#, r#""NOWAIT""#, r#"{"TICKS": 2}"#].choose(rng).unwrap();
                let pool = rng.gen_range(0..npools);
                ops.push(format!(r#"{{"Alloc": {{"pool": "P{pool}", "size": {size}, "timeout": {timeout}}}}}"#));
            }
            for k in 0..nallocs {
                if rng.gen_bool(0.8) {
                    ops.push(format!(r#"{{"Free": {{"alloc_index": {k}}}}}"#));
                }
            }
            format!(r#"{{"id": "t{}", "script": [{}]}}"#, t + 1, ops.join(", "))
        })
        .collect();
    format!(r#"{{"pools": [{}], "threads": [{}]}}"#, pools.join(", "), threads.join(", "))
}

/// Parse a reported schedule (`schedule:<name>`, `step:<name>`, `tick`)
/// back into actions.
pub fn parse_schedule(sys: &System, sched: &[String]) -> Vec<Action> {
    let id = |name: &str| {
        ThreadId(sys.threads.iter().position(|t| t.name == name).unwrap_or_else(|| panic!("no thread {name}")) as u32)
    };
    sched
        .iter()
        .map(|a| match a.split_once(':') {
            Some(("schedule", n)) => Action::Schedule(id(n)),
            Some(("step", n)) => Action::Thread(id(n)),
            _ if a == "tick" => Action::Tick,
            _ => panic!("bad schedule item {a}"),
        })
        .collect()
}

pub fn run_schedule(sys: &System, actions: &[Action]) -> (KernelState, Vec<StepInfo>) {
    let mut s = sys.initial_state().unwrap();
    let mut infos = Vec::new();
    for a in actions {
        let (n, info) = sys.step(&s, *a).unwrap();
        s = n;
        infos.push(info);
    }
    (s, infos)
}
