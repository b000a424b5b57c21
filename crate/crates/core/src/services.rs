//! The allocation and release services as small-step event programs.
//!
//! Each service is a fixed table of steps ([`EventProgram`]). A step is the
//! unit of interleaving: either one plain statement (possibly fused with
//! adjacent statements that only touch the thread's own locals) or a whole
//! atomic section, which models an `irq_lock`/`irq_unlock` span. The
//! interpreter in [`exec_step`] runs exactly one step of the current event of
//! a thread against a [`KernelState`].

use serde::{Deserialize, Serialize};

use crate::kernel::{KernelState, ThreadState};
use crate::pool::{align4, BlockId, BlockState, MemPool, PoolError, PoolId, ThreadId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RetCode {
    Ok,
    Enomem,
    Eagain,
    Etimeout,
    Esizeerr,
}

/// How long an allocation may wait for memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeoutMode {
    #[serde(rename = "FOREVER")]
    Forever,
    #[serde(rename = "NOWAIT")]
    NoWait,
    /// Wait at most this many ticks (>= 1).
    #[serde(rename = "TICKS")]
    Ticks(u64),
}

/// Switches that restore each of the three defects of the original C code.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BugConfig {
    /// Split loop also requires `level_empty(p, alloc_l)`.
    #[serde(default)]
    pub bug1_split: bool,
    /// EAGAIN is handed back to the caller, and a timeout reports EAGAIN.
    #[serde(default)]
    pub bug2_forever_eagain: bool,
    /// Oversized requests report ENOMEM instead of ESIZEERR.
    #[serde(default)]
    pub bug3_nonterm: bool,
}

impl BugConfig {
    pub fn none() -> Self {
        BugConfig::default()
    }

    pub fn all() -> Self {
        BugConfig { bug1_split: true, bug2_forever_eagain: true, bug3_nonterm: true }
    }

    pub fn any(&self) -> bool {
        self.bug1_split || self.bug2_forever_eagain || self.bug3_nonterm
    }
}

/// Deliberate corruptions applied when an allocation completes. They exist
/// only to show that each checker can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultConfig {
    /// The returned block is also added to another thread's `mblocks`.
    #[serde(default)]
    pub mblocks_leak: bool,
    /// The allocating thread bumps `tick`.
    #[serde(default)]
    pub tick_write: bool,
    /// The allocating thread overwrites another thread's locals.
    #[serde(default)]
    pub foreign_local_write: bool,
}

impl FaultConfig {
    pub fn any(&self) -> bool {
        self.mblocks_leak || self.tick_write || self.foreign_local_write
    }
}

/// One entry of a thread script.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Alloc { pool: PoolId, size: u64, timeout: TimeoutMode },
    /// Free the `alloc_index`-th successful allocation of the same thread.
    Free { alloc_index: usize },
}

/// The event a thread is currently executing.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActiveEvent {
    Alloc { pool: PoolId, size: u64, timeout: TimeoutMode },
    Free { block: BlockId },
}

impl ActiveEvent {
    pub fn name(&self) -> &'static str {
        match self {
            ActiveEvent::Alloc { .. } => "alloc",
            ActiveEvent::Free { .. } => "free",
        }
    }
}

/// Program counter inside the alloc or free program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pc {
    AllocScan,
    AllocBlock,
    BreakGuard,
    BreakBlock,
    AllocFinish,
    Pend,
    Wake,
    FreeAwait,
    FreeSetup,
    FreeBlockIter,
    FreeWakeWaiters,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    EventOccur,
    ProgramStep,
    AtomicBlock,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::EventOccur => "EVENT_OCCUR",
            StepKind::ProgramStep => "PROGRAM_STEP",
            StepKind::AtomicBlock => "ATOMIC_BLOCK",
        }
    }

    pub fn parse(s: &str) -> Option<StepKind> {
        match s {
            "EVENT_OCCUR" => Some(StepKind::EventOccur),
            "PROGRAM_STEP" => Some(StepKind::ProgramStep),
            "ATOMIC_BLOCK" => Some(StepKind::AtomicBlock),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepDef {
    pub pc: Pc,
    pub label: &'static str,
    pub kind: StepKind,
    /// Step carries an AWAIT guard and is disabled while it is false.
    pub awaits: bool,
}

/// An event body as a list of interleavable steps.
#[derive(Clone, Copy, Debug)]
pub struct EventProgram {
    pub name: &'static str,
    pub steps: &'static [StepDef],
}

const fn step(pc: Pc, label: &'static str, kind: StepKind) -> StepDef {
    StepDef { pc, label, kind, awaits: false }
}

pub const ALLOC_PROGRAM: EventProgram = EventProgram {
    name: "alloc",
    steps: &[
        step(Pc::AllocScan, "scan", StepKind::ProgramStep),
        step(Pc::AllocBlock, "alloc_block", StepKind::AtomicBlock),
        step(Pc::BreakGuard, "break_guard", StepKind::ProgramStep),
        step(Pc::BreakBlock, "break_block", StepKind::AtomicBlock),
        step(Pc::AllocFinish, "finish", StepKind::AtomicBlock),
        step(Pc::Pend, "pend", StepKind::AtomicBlock),
        step(Pc::Wake, "wake", StepKind::ProgramStep),
    ],
};

pub const FREE_PROGRAM: EventProgram = EventProgram {
    name: "free",
    steps: &[
        StepDef { pc: Pc::FreeAwait, label: "await_allocated", kind: StepKind::AtomicBlock, awaits: true },
        step(Pc::FreeSetup, "setup", StepKind::ProgramStep),
        step(Pc::FreeBlockIter, "free_block", StepKind::AtomicBlock),
        step(Pc::FreeWakeWaiters, "wake_waiters", StepKind::AtomicBlock),
    ],
};

impl EventProgram {
    pub fn for_event(ev: &ActiveEvent) -> EventProgram {
        match ev {
            ActiveEvent::Alloc { .. } => ALLOC_PROGRAM,
            ActiveEvent::Free { .. } => FREE_PROGRAM,
        }
    }

    pub fn lookup(&self, pc: Pc) -> &'static StepDef {
        self.steps.iter().find(|s| s.pc == pc).expect("pc belongs to program")
    }
}

/// Per-thread local variables of the services, plus the thread's control
/// position (script cursor, current event, program counter).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreadLocals {
    pub lsizes: Vec<u64>,
    pub alloc_l: i32,
    pub free_l: i32,
    pub from_l: i32,
    pub lvl: u32,
    pub lsz: u64,
    pub bn: u64,
    pub bb: u64,
    pub i: u32,
    pub blk: Option<u64>,
    pub block_pt: u64,
    pub free_block_r: bool,
    pub need_resched: bool,
    pub th: Option<ThreadId>,
    pub endt: u64,
    pub freeing_node: Option<BlockId>,
    pub allocating_node: Option<BlockId>,
    pub ret: Option<RetCode>,
    pub mempoolalloc_ret: Option<BlockId>,

    /// Iterations of the free_block loop in the current free.
    pub free_iters: u32,
    /// Successful allocations, in order; `Free { alloc_index }` indexes this.
    pub allocated: Vec<BlockId>,
    pub script_pos: u32,
    pub event: Option<ActiveEvent>,
    pub pc: Option<Pc>,
}

/// Result of the level-selection loop at the top of `pool_alloc`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelChoice {
    pub lsizes: Vec<u64>,
    pub alloc_l: i32,
    pub free_l: i32,
}

/// One iteration of the level-selection loop. Returns false when the loop
/// breaks on a too-small level.
fn scan_level(pool: &MemPool, lsizes: &mut Vec<u64>, i: u32, size: u64, choice: (&mut i32, &mut i32)) -> bool {
    let (alloc_l, free_l) = choice;
    if i == 0 {
        lsizes.clear();
        lsizes.push(align4(pool.config.max_sz));
    } else {
        let prev = lsizes[i as usize - 1];
        lsizes.push(align4(prev / 4));
    }
    if lsizes[i as usize] < size {
        return false;
    }
    *alloc_l = i as i32;
    if !pool.levels[i as usize].free_list.is_empty() {
        *free_l = i as i32;
    }
    true
}

/// Whole level-selection loop in one go.
pub fn compute_lsizes_and_levels(pool: &MemPool, size: u64) -> LevelChoice {
    let mut lsizes = Vec::new();
    let (mut alloc_l, mut free_l) = (-1, -1);
    for i in 0..pool.config.n_levels {
        if !scan_level(pool, &mut lsizes, i, size, (&mut alloc_l, &mut free_l)) {
            break;
        }
    }
    LevelChoice { lsizes, alloc_l, free_l }
}

/// Pop the head of the level's free list and mark it ALLOCATING.
pub fn alloc_block(pool: &mut MemPool, level: u32, lsz: u64) -> Result<Option<BlockId>, PoolError> {
    if pool.level_empty(level)? {
        return Ok(None);
    }
    let addr = pool.levels[level as usize].free_list.remove(0);
    let block = pool.block_num(addr, lsz)?;
    pool.set_bit(level, block, BlockState::Allocating)?;
    Ok(Some(BlockId { pool: pool.config.pool_id, level, block, data: addr }))
}

/// Split the ALLOCATING block `node` into four children one level down.
/// The first child keeps the start address and becomes the new ALLOCATING
/// node; the other three become FREE and are listed.
pub fn break_block(pool: &mut MemPool, node: BlockId, lsizes: &[u64]) -> Result<BlockId, PoolError> {
    let child_level = node.level + 1;
    if child_level >= pool.config.n_levels {
        return Err(PoolError::LevelOutOfRange { level: child_level, n_levels: pool.config.n_levels });
    }
    pool.set_bit(node.level, node.block, BlockState::Divided)?;
    let lsz = lsizes[child_level as usize];
    let first = pool.block_num(node.data, lsz)?;
    pool.set_bit(child_level, first, BlockState::Allocating)?;
    for k in 1..4 {
        let b = first + k;
        pool.set_bit(child_level, b, BlockState::Free)?;
        let ptr = pool.block_ptr(lsz, b);
        if pool.block_fits(ptr, lsz) {
            pool.free_list_append(child_level, ptr)?;
        }
    }
    Ok(BlockId { pool: node.pool, level: child_level, block: first, data: node.data })
}

/// Outcome of one iteration of the coalescing loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreeStep {
    /// The quadruple was merged; the parent is now FREEING.
    Ascend(BlockId),
    /// The block was listed as FREE; the loop ends.
    Done,
}

/// Body of the free_block loop for block `bn` at `lvl`: mark it FREE and
/// either merge it with its three FREE partners or list it.
pub fn free_block_iteration(pool: &mut MemPool, lvl: u32, bn: u64, lsizes: &[u64]) -> Result<FreeStep, PoolError> {
    let lsz = lsizes[lvl as usize];
    let blk = pool.block_ptr(lsz, bn);
    pool.set_bit(lvl, bn, BlockState::Free)?;
    if lvl > 0 && pool.partner_bits(lvl, bn) {
        let first = bn / 4 * 4;
        for bb in first..first + 4 {
            pool.set_bit(lvl, bb, BlockState::NoExist)?;
            let ptr = pool.block_ptr(lsz, bb);
            if bb != bn && pool.block_fits(ptr, lsz) {
                pool.free_list_remove(lvl, ptr)?;
            }
        }
        let parent_level = lvl - 1;
        let parent = bn / 4;
        pool.set_bit(parent_level, parent, BlockState::Freeing)?;
        let parent_sz = align4(pool.config.max_sz) / 4u64.pow(parent_level);
        Ok(FreeStep::Ascend(BlockId {
            pool: pool.config.pool_id,
            level: parent_level,
            block: parent,
            data: pool.block_ptr(parent_sz, parent),
        }))
    } else {
        if pool.block_fits(blk, lsz) {
            pool.free_list_append(lvl, blk)?;
        }
        Ok(FreeStep::Done)
    }
}

/// Static knobs the interpreter needs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub bugs: BugConfig,
    pub faults: FaultConfig,
}

/// What a single thread step did, beyond the state change.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepEffects {
    pub label: &'static str,
    pub kind: Option<StepKind>,
    pub event_name: &'static str,
    /// The event that finished with this step, if any.
    pub completed: Option<ActiveEvent>,
    /// The event that started with this step, if any.
    pub started: Option<ActiveEvent>,
    /// Pool operations that failed; the step skipped them.
    pub anomalies: Vec<String>,
}

/// True when the thread's next step may run (ignoring scheduling).
pub fn step_ready(state: &KernelState, t: ThreadId, script_len: usize) -> bool {
    let l = &state.locals[t.0 as usize];
    match (&l.event, l.pc) {
        (Some(ActiveEvent::Free { block }), Some(Pc::FreeAwait)) => state
            .pools
            .get(block.pool.0 as usize)
            .and_then(|p| p.get_bit(block.level, block.block).ok())
            == Some(BlockState::Allocated),
        (Some(_), Some(_)) => true,
        _ => (l.script_pos as usize) < script_len,
    }
}

/// Execute the next step of thread `t` in place. The caller has checked
/// scheduling (`cur = t`, RUNNING) and [`step_ready`].
pub fn exec_step(state: &mut KernelState, t: ThreadId, script: &[Op], cfg: &ServiceConfig) -> StepEffects {
    let ti = t.0 as usize;
    match (state.locals[ti].event.clone(), state.locals[ti].pc) {
        (Some(ev), Some(pc)) => {
            let def = EventProgram::for_event(&ev).lookup(pc);
            let mut fx = StepEffects {
                label: def.label,
                kind: Some(def.kind),
                event_name: ev.name(),
                ..Default::default()
            };
            let finished = match ev {
                ActiveEvent::Alloc { pool, size, timeout } => {
                    alloc_step(state, t, pc, pool, size, timeout, cfg, &mut fx.anomalies)
                }
                ActiveEvent::Free { block } => free_step(state, t, pc, block, &mut fx.anomalies),
            };
            if finished {
                let l = &mut state.locals[ti];
                l.event = None;
                l.pc = None;
                fx.completed = Some(ev);
            }
            fx
        }
        _ => occur(state, t, script),
    }
}

/// Fire the next scripted event of `t`.
fn occur(state: &mut KernelState, t: ThreadId, script: &[Op]) -> StepEffects {
    let tick = state.tick;
    let l = &mut state.locals[t.0 as usize];
    let op = script[l.script_pos as usize].clone();
    l.script_pos += 1;
    match op {
        Op::Alloc { pool, size, timeout } => {
            l.ret = None;
            l.mempoolalloc_ret = None;
            l.i = 0;
            if let TimeoutMode::Ticks(n) = timeout {
                l.endt = tick + n;
            }
            let ev = ActiveEvent::Alloc { pool, size, timeout };
            l.event = Some(ev.clone());
            l.pc = Some(Pc::AllocScan);
            StepEffects {
                label: "occur",
                kind: Some(StepKind::EventOccur),
                event_name: "alloc",
                started: Some(ev),
                ..Default::default()
            }
        }
        Op::Free { alloc_index } => match l.allocated.get(alloc_index).copied() {
            Some(block) => {
                l.ret = None;
                l.free_iters = 0;
                let ev = ActiveEvent::Free { block };
                l.event = Some(ev.clone());
                l.pc = Some(Pc::FreeAwait);
                StepEffects {
                    label: "occur",
                    kind: Some(StepKind::EventOccur),
                    event_name: "free",
                    started: Some(ev),
                    ..Default::default()
                }
            }
            // the referenced allocation did not succeed; nothing to free
            None => StepEffects {
                label: "skip",
                kind: Some(StepKind::EventOccur),
                event_name: "free",
                ..Default::default()
            },
        },
    }
}

fn note<T>(anomalies: &mut Vec<String>, r: Result<T, PoolError>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            anomalies.push(e.to_string());
            None
        }
    }
}

/// The caller's decision after `pool_alloc` produced `ret`: finish, retry at
/// once, or block on the wait queue. Returns true when the event finishes.
fn after_pool_alloc(state: &mut KernelState, t: ThreadId, ret: RetCode, timeout: TimeoutMode, cfg: &ServiceConfig) -> bool {
    let l = &mut state.locals[t.0 as usize];
    l.ret = Some(ret);
    let give_back = match ret {
        RetCode::Ok | RetCode::Esizeerr | RetCode::Etimeout => true,
        RetCode::Eagain => cfg.bugs.bug2_forever_eagain,
        RetCode::Enomem => timeout == TimeoutMode::NoWait,
    };
    if give_back {
        return true;
    }
    l.pc = Some(if ret == RetCode::Eagain { Pc::AllocScan } else { Pc::Pend });
    false
}

#[allow(clippy::too_many_arguments)]
fn alloc_step(
    state: &mut KernelState,
    t: ThreadId,
    pc: Pc,
    pool: PoolId,
    size: u64,
    timeout: TimeoutMode,
    cfg: &ServiceConfig,
    anomalies: &mut Vec<String>,
) -> bool {
    let ti = t.0 as usize;
    let pi = pool.0 as usize;
    match pc {
        Pc::AllocScan => {
            let p = &state.pools[pi];
            let l = &mut state.locals[ti];
            if l.i == 0 {
                l.alloc_l = -1;
                l.free_l = -1;
            }
            let more = scan_level(p, &mut l.lsizes, l.i, size, (&mut l.alloc_l, &mut l.free_l))
                && l.i + 1 < p.config.n_levels;
            if more {
                l.i += 1;
                return false;
            }
            l.i = 0;
            if l.alloc_l < 0 {
                let ret = if cfg.bugs.bug3_nonterm { RetCode::Enomem } else { RetCode::Esizeerr };
                return after_pool_alloc(state, t, ret, timeout, cfg);
            }
            if l.free_l < 0 {
                return after_pool_alloc(state, t, RetCode::Enomem, timeout, cfg);
            }
            l.pc = Some(Pc::AllocBlock);
            false
        }
        Pc::AllocBlock => {
            let l = &mut state.locals[ti];
            let level = l.free_l as u32;
            let lsz = l.lsizes[level as usize];
            let got = note(anomalies, alloc_block(&mut state.pools[pi], level, lsz)).flatten();
            match got {
                None => {
                    l.blk = None;
                    after_pool_alloc(state, t, RetCode::Eagain, timeout, cfg)
                }
                Some(node) => {
                    l.blk = Some(node.data);
                    l.allocating_node = Some(node);
                    l.from_l = l.free_l;
                    l.pc = Some(Pc::BreakGuard);
                    false
                }
            }
        }
        Pc::BreakGuard => {
            let l = &mut state.locals[ti];
            let more = if cfg.bugs.bug1_split {
                state.pools[pi].levels[l.alloc_l as usize].free_list.is_empty() && l.from_l < l.alloc_l
            } else {
                l.from_l < l.alloc_l
            };
            l.pc = Some(if more { Pc::BreakBlock } else { Pc::AllocFinish });
            false
        }
        Pc::BreakBlock => {
            let l = &mut state.locals[ti];
            if let Some(node) = l.allocating_node {
                if let Some(child) = note(anomalies, break_block(&mut state.pools[pi], node, &l.lsizes)) {
                    l.allocating_node = Some(child);
                }
            }
            l.from_l += 1;
            l.pc = Some(Pc::BreakGuard);
            false
        }
        Pc::AllocFinish => {
            let l = &mut state.locals[ti];
            let blk = l.blk.unwrap_or_default();
            if let Some(node) = l.allocating_node.take() {
                note(anomalies, state.pools[pi].set_bit(node.level, node.block, BlockState::Allocated));
            }
            let lsz = l.lsizes[l.alloc_l as usize];
            let block = note(anomalies, state.pools[pi].block_num(blk, lsz)).unwrap_or_default();
            let id = BlockId { pool, level: l.alloc_l as u32, block, data: blk };
            l.mempoolalloc_ret = Some(id);
            l.allocated.push(id);
            state.mblocks[ti].insert(id);
            inject_faults(state, t, id, &cfg.faults);
            after_pool_alloc(state, t, RetCode::Ok, timeout, cfg)
        }
        Pc::Pend => {
            state.thd_state[ti] = ThreadState::Blocked;
            state.pools[pi].wait_q.push(t);
            state.locals[ti].pc = Some(Pc::Wake);
            false
        }
        Pc::Wake => {
            let tick = state.tick;
            let l = &mut state.locals[ti];
            if matches!(timeout, TimeoutMode::Ticks(_)) && tick > l.endt {
                let ret = if cfg.bugs.bug2_forever_eagain { RetCode::Eagain } else { RetCode::Etimeout };
                l.ret = Some(ret);
                return true;
            }
            l.pc = Some(Pc::AllocScan);
            false
        }
        _ => unreachable!("free pc in alloc program"),
    }
}

fn inject_faults(state: &mut KernelState, t: ThreadId, id: BlockId, faults: &FaultConfig) {
    let n = state.locals.len();
    let other = (t.0 as usize + 1) % n;
    if faults.mblocks_leak && other != t.0 as usize {
        state.mblocks[other].insert(id);
    }
    if faults.tick_write {
        state.tick += 1;
    }
    if faults.foreign_local_write && other != t.0 as usize {
        state.locals[other].bb = state.locals[other].bb.wrapping_add(1);
    }
}

fn free_step(state: &mut KernelState, t: ThreadId, pc: Pc, b: BlockId, anomalies: &mut Vec<String>) -> bool {
    let ti = t.0 as usize;
    let pi = b.pool.0 as usize;
    match pc {
        Pc::FreeAwait => {
            note(anomalies, state.pools[pi].set_bit(b.level, b.block, BlockState::Freeing));
            let l = &mut state.locals[ti];
            l.freeing_node = Some(b);
            l.pc = Some(Pc::FreeSetup);
            false
        }
        Pc::FreeSetup => {
            state.mblocks[ti].remove(&b);
            let max_sz = state.pools[pi].config.max_sz;
            let l = &mut state.locals[ti];
            l.need_resched = false;
            l.lsizes.clear();
            l.lsizes.push(align4(max_sz));
            for i in 1..=b.level as usize {
                let prev = l.lsizes[i - 1];
                l.lsizes.push(align4(prev / 4));
            }
            l.free_block_r = true;
            l.bn = b.block;
            l.lvl = b.level;
            l.free_iters = 0;
            l.pc = Some(Pc::FreeBlockIter);
            false
        }
        Pc::FreeBlockIter => {
            let l = &mut state.locals[ti];
            let pool = &mut state.pools[pi];
            l.lsz = l.lsizes[l.lvl as usize];
            l.blk = Some(pool.block_ptr(l.lsz, l.bn));
            l.free_iters += 1;
            l.freeing_node = None;
            match note(anomalies, free_block_iteration(pool, l.lvl, l.bn, &l.lsizes)) {
                Some(FreeStep::Ascend(parent)) => {
                    l.i = 4;
                    l.bb = l.bn / 4 * 4 + 3;
                    l.block_pt = pool.block_ptr(l.lsz, l.bb);
                    l.lvl = parent.level;
                    l.bn = parent.block;
                    l.freeing_node = Some(parent);
                }
                Some(FreeStep::Done) | None => {
                    l.free_block_r = false;
                    l.pc = Some(Pc::FreeWakeWaiters);
                }
            }
            false
        }
        Pc::FreeWakeWaiters => {
            let waiters = std::mem::take(&mut state.pools[pi].wait_q);
            for th in waiters {
                state.thd_state[th.0 as usize] = ThreadState::Ready;
                let l = &mut state.locals[ti];
                l.th = Some(th);
                l.need_resched = true;
            }
            if state.locals[ti].need_resched {
                // reschedule: give the CPU back to the scheduler
                state.thd_state[ti] = ThreadState::Ready;
            }
            true
        }
        _ => unreachable!("alloc pc in free program"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{POOL_A, POOL_B};

    #[test]
    fn level_choice_examples() {
        let p = MemPool::init(POOL_A).unwrap();
        // hand trace: i=0: 256 >= 50, alloc_l=0, level 0 listed -> free_l=0;
        // i=1: 64 >= 50, alloc_l=1, level 1 empty.
        assert_eq!(
            compute_lsizes_and_levels(&p, 50),
            LevelChoice { lsizes: vec![256, 64], alloc_l: 1, free_l: 0 }
        );
        assert_eq!(compute_lsizes_and_levels(&p, 300).alloc_l, -1);
        let exact = compute_lsizes_and_levels(&p, 256);
        assert_eq!((exact.alloc_l, exact.free_l), (0, 0));
    }

    #[test]
    fn alloc_block_pops_head() {
        let mut p = MemPool::init(POOL_A).unwrap();
        let node = alloc_block(&mut p, 0, 256).unwrap().unwrap();
        assert_eq!(node.data, 0);
        assert_eq!(p.get_bit(0, 0), Ok(BlockState::Allocating));
        let before = p.clone();
        assert_eq!(alloc_block(&mut p, 0, 256), Ok(None));
        assert_eq!(p, before);
    }

    #[test]
    fn break_block_one_split() {
        let mut p = MemPool::init(POOL_A).unwrap();
        let node = alloc_block(&mut p, 0, 256).unwrap().unwrap();
        let child = break_block(&mut p, node, &[256, 64]).unwrap();
        assert_eq!(p.get_bit(0, 0), Ok(BlockState::Divided));
        assert_eq!(
            p.levels[1].bits,
            vec![BlockState::Allocating, BlockState::Free, BlockState::Free, BlockState::Free]
        );
        assert_eq!(p.levels[1].free_list, vec![64, 128, 192]);
        assert_eq!(child, BlockId { pool: PoolId(0), level: 1, block: 0, data: 0 });
        // the deepest level cannot be split
        assert!(break_block(&mut p, child, &[256, 64]).is_err());
    }

    #[test]
    fn free_block_coalesces_to_root() {
        let mut p = MemPool::init(POOL_A).unwrap();
        p.set_bit(0, 0, BlockState::Divided).unwrap();
        p.levels[1].bits = vec![BlockState::Freeing, BlockState::Free, BlockState::Free, BlockState::Free];
        p.levels[0].free_list.clear();
        p.levels[1].free_list = vec![64, 128, 192];
        let step = free_block_iteration(&mut p, 1, 0, &[256, 64]).unwrap();
        assert_eq!(step, FreeStep::Ascend(BlockId { pool: PoolId(0), level: 0, block: 0, data: 0 }));
        assert_eq!(p.levels[1].bits, vec![BlockState::NoExist; 4]);
        assert!(p.levels[1].free_list.is_empty());
        assert_eq!(p.get_bit(0, 0), Ok(BlockState::Freeing));
        assert_eq!(free_block_iteration(&mut p, 0, 0, &[256, 64]), Ok(FreeStep::Done));
        assert_eq!(p.get_bit(0, 0), Ok(BlockState::Free));
        assert_eq!(p.levels[0].free_list, vec![0]);
        assert_eq!(p, MemPool::init(POOL_A).unwrap());
    }

    #[test]
    fn free_block_ascends_from_block_174() {
        // a pool deep enough to hold block 174 at level 4: 4^4 = 256 slots
        let cfg = crate::pool::PoolConfig::new(PoolId(0), 0, 4 * 4usize.pow(5) as u64, 1, 5);
        let mut p = MemPool::init(cfg).unwrap();
        for l in 0..4 {
            for b in 0..4u64.pow(l) {
                p.set_bit(l, b, BlockState::Divided).unwrap();
            }
        }
        p.levels[0].free_list.clear();
        let lsizes: Vec<u64> = (0..5).map(|l| cfg.max_sz / 4u64.pow(l)).collect();
        for b in 0..256 {
            p.set_bit(4, b, BlockState::Allocated).unwrap();
        }
        for b in [172, 173, 175] {
            p.set_bit(4, b, BlockState::Free).unwrap();
            let ptr = p.block_ptr(lsizes[4], b);
            p.levels[4].free_list.push(ptr);
        }
        p.set_bit(4, 174, BlockState::Freeing).unwrap();
        match free_block_iteration(&mut p, 4, 174, &lsizes).unwrap() {
            FreeStep::Ascend(parent) => {
                assert_eq!((parent.level, parent.block), (3, 43));
                assert_eq!(p.get_bit(3, 43), Ok(BlockState::Freeing));
            }
            FreeStep::Done => panic!("partners were free"),
        }
    }

    #[test]
    fn level_zero_free_lists_directly() {
        let mut p = MemPool::init(POOL_B).unwrap();
        p.levels[0].free_list = vec![64];
        p.set_bit(0, 0, BlockState::Freeing).unwrap();
        assert_eq!(free_block_iteration(&mut p, 0, 0, &[64]), Ok(FreeStep::Done));
        assert_eq!(p.levels[0].free_list, vec![64, 0]);
    }

    #[test]
    fn program_tables_cover_every_pc() {
        for pc in [Pc::AllocScan, Pc::AllocBlock, Pc::BreakGuard, Pc::BreakBlock, Pc::AllocFinish, Pc::Pend, Pc::Wake] {
            ALLOC_PROGRAM.lookup(pc);
        }
        for pc in [Pc::FreeAwait, Pc::FreeSetup, Pc::FreeBlockIter, Pc::FreeWakeWaiters] {
            FREE_PROGRAM.lookup(pc);
        }
        assert!(FREE_PROGRAM.lookup(Pc::FreeAwait).awaits);
    }
}
