//! Browser bindings. Every entry point takes and returns JSON strings so
//! the page needs no generated types.

use quadpool::trace::parse_bugs;
use quadpool::{explore, run_random, MemPool, Mode, PoolConfig, PoolId, RunOptions, Scenario};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct PoolView {
    max_sz: u64,
    n_max: u64,
    /// One string per level, one character per slot.
    bits: Vec<String>,
}

impl PoolView {
    fn of(p: &MemPool) -> PoolView {
        PoolView { max_sz: p.config.max_sz, n_max: p.config.n_max, bits: p.render_bits() }
    }
}

#[derive(Serialize)]
struct Frame {
    step: usize,
    label: String,
    tick: u64,
    pools: Vec<PoolView>,
}

#[derive(Serialize)]
struct Simulation {
    frames: Vec<Frame>,
    report: quadpool::RunReport,
}

fn scenario(json: &str, bugs: &str) -> Result<(Scenario, quadpool::BugConfig), String> {
    let sc = Scenario::from_json(json).map_err(|e| e.to_string())?;
    let bugs = if bugs.is_empty() { sc.bugs } else { parse_bugs(bugs)? };
    Ok((sc, bugs))
}

pub fn init_pool_json(max_sz: u64, n_max: u64, n_levels: u32) -> Result<String, String> {
    let p = MemPool::init(PoolConfig::new(PoolId(0), 0, max_sz, n_max, n_levels)).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&PoolView::of(&p)).unwrap())
}

/// Seeded random run. Frames hold the pool bitmaps after every step, rebuilt
/// from the run's trace.
pub fn simulate_json(scenario_json: &str, seed: u64, bugs: &str, max_steps: u64) -> Result<String, String> {
    let (sc, bugs) = scenario(scenario_json, bugs)?;
    let sys = sc.system(Mode::Random, bugs);
    let opts = RunOptions { seed, max_steps, ..RunOptions::default() };
    let (trace, report) = run_random(&sys, &opts).map_err(|e| e.to_string())?;
    let mut s = sys.initial_state().map_err(|e| e.to_string())?;
    let mut frames = vec![Frame { step: 0, label: "init".into(), tick: 0, pools: s.pools.iter().map(PoolView::of).collect() }];
    for (i, e) in trace.entries.iter().enumerate() {
        s = sys.step(&s, e.choice).map_err(|e| e.to_string())?.0;
        // idle ticks make long runs heavy; keep only frames that change pools
        if e.choice == quadpool::Action::Tick && i + 1 < trace.entries.len() {
            continue;
        }
        frames.push(Frame {
            step: i + 1,
            label: format!("{} {}", e.domain, e.event_name),
            tick: s.tick,
            pools: s.pools.iter().map(PoolView::of).collect(),
        });
    }
    Ok(serde_json::to_string(&Simulation { frames, report }).unwrap())
}

pub fn explore_json(scenario_json: &str, bugs: &str, depth: u32) -> Result<String, String> {
    let (sc, bugs) = scenario(scenario_json, bugs)?;
    let sys = sc.system(Mode::Exhaustive, bugs);
    let report = explore(&sys, &RunOptions { depth_bound: depth, ..RunOptions::default() }).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&report).unwrap())
}

// u32 arguments keep the JS side on plain numbers instead of BigInt.

#[wasm_bindgen]
pub fn init_pool(max_sz: u32, n_max: u32, n_levels: u32) -> Result<String, JsValue> {
    init_pool_json(max_sz.into(), n_max.into(), n_levels).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(scenario_json: &str, seed: u32, bugs: &str, max_steps: u32) -> Result<String, JsValue> {
    simulate_json(scenario_json, seed.into(), bugs, max_steps.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn explore_scenario(scenario_json: &str, bugs: &str, depth: u32) -> Result<String, JsValue> {
    explore_json(scenario_json, bugs, depth).map_err(|e| JsValue::from_str(&e))
}
