//! Security policy (domains, interference, per-domain observation) and the
//! runtime monitors built on it: step and event integrity, the guarantee
//! and rely relations of the services, and alloc/free contracts.

use serde::{Deserialize, Serialize};

use crate::kernel::{Domain, KernelState};
use crate::pool::{BlockId, BlockState, PoolId, ThreadId};
use crate::safety::{self, mem_block_addr_valid};
use crate::services::{ActiveEvent, RetCode, TimeoutMode};

/// `d1 ~> d2`: may `d1` affect what `d2` observes?
pub fn interferes(d1: Domain, d2: Domain) -> bool {
    match (d1, d2) {
        (Domain::Timer, d) | (d, Domain::Timer) => d == Domain::Timer,
        (Domain::Thread(a), Domain::Thread(b)) => a == b,
        _ => true,
    }
}

/// `s ~d r`: the two states look the same to `d`.
pub fn state_equiv(d: Domain, s: &KernelState, r: &KernelState) -> bool {
    match d {
        Domain::Scheduler => s.cur == r.cur,
        Domain::Timer => s.tick == r.tick,
        Domain::Thread(t) => s.mblocks.get(t.0 as usize) == r.mblocks.get(t.0 as usize),
    }
}

/// Every domain of a system with `threads` threads.
pub fn domains(threads: usize) -> Vec<Domain> {
    let mut v = vec![Domain::Scheduler, Domain::Timer];
    v.extend((0..threads as u32).map(|t| Domain::Thread(ThreadId(t))));
    v
}

/// Domain of an event: the calling thread for services, otherwise the
/// scheduler or the timer.
pub fn dom_e(event: &str, thread: Option<ThreadId>) -> Option<Domain> {
    match (event, thread) {
        ("alloc" | "free", Some(t)) => Some(Domain::Thread(t)),
        ("schedule", _) => Some(Domain::Scheduler),
        ("tick", _) => Some(Domain::Timer),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecFailure {
    /// Domain or thread the failure is about.
    pub witness: String,
    pub detail: String,
}

pub type SecVerdict = Result<(), SecFailure>;

fn sec_fail(witness: impl ToString, detail: impl Into<String>) -> SecVerdict {
    Err(SecFailure { witness: witness.to_string(), detail: detail.into() })
}

/// Per-step integrity: a step of domain `da` changes nothing observable by
/// a domain it may not interfere with.
pub fn check_step_integrity(da: Domain, pre: &KernelState, post: &KernelState) -> SecVerdict {
    for d in domains(pre.thread_count()) {
        if !interferes(da, d) && !state_equiv(d, pre, post) {
            return sec_fail(d, format!("{da} step changed what {d} observes"));
        }
    }
    Ok(())
}

fn conf_stable(s: &KernelState, r: &KernelState) -> bool {
    s.pools.len() == r.pools.len()
        && s.pools.iter().zip(&r.pools).all(|(a, b)| a.config == b.config && a.levels.len() == b.levels.len())
}

fn pools_eq_ignoring_waitq(s: &KernelState, r: &KernelState) -> bool {
    s.pools.len() == r.pools.len() && s.pools.iter().zip(&r.pools).all(|(a, b)| a.config == b.config && a.levels == b.levels)
}

fn others_unchanged<T: PartialEq>(t: ThreadId, a: &[T], b: &[T]) -> bool {
    a.len() == b.len() && a.iter().zip(b).enumerate().all(|(i, (x, y))| i == t.0 as usize || x == y)
}

/// Guarantee of the services for thread `t`.
pub fn mem_pool_guar(t: ThreadId, s: &KernelState, r: &KernelState) -> SecVerdict {
    if s == r {
        return Ok(());
    }
    if !conf_stable(s, r) {
        return sec_fail(t, "pool configuration changed");
    }
    let ti = t.0 as usize;
    if s.cur != Some(t) {
        if s.pools != r.pools || s.mblocks != r.mblocks || s.tick != r.tick || s.locals.get(ti) != r.locals.get(ti) {
            return sec_fail(t, "state changed while the thread was not running");
        }
    } else if safety::inv(s) && !safety::inv(r) {
        return sec_fail(t, "step broke the invariant");
    }
    if !others_unchanged(t, &s.locals, &r.locals) {
        return sec_fail(t, "another thread's locals changed");
    }
    if !others_unchanged(t, &s.mblocks, &r.mblocks) {
        return sec_fail(t, "another thread's mblocks changed");
    }
    if s.tick != r.tick {
        return sec_fail(t, "tick changed");
    }
    Ok(())
}

/// Guarantee of the scheduler: only `cur` and thread states move.
pub fn schedule_guar(s: &KernelState, r: &KernelState) -> SecVerdict {
    if s.pools != r.pools || s.tick != r.tick || s.locals != r.locals || s.mblocks != r.mblocks {
        return sec_fail(Domain::Scheduler, "schedule touched more than cur and thread states");
    }
    Ok(())
}

/// Guarantee of the timer: tick, thread states and wait queues.
pub fn tick_guar(s: &KernelState, r: &KernelState) -> SecVerdict {
    if !pools_eq_ignoring_waitq(s, r) || s.cur != r.cur || s.locals != r.locals || s.mblocks != r.mblocks {
        return sec_fail(Domain::Timer, "tick touched more than tick, thread states and wait queues");
    }
    Ok(())
}

/// Guarantee of whichever component owns `d`.
pub fn guar(d: Domain, s: &KernelState, r: &KernelState) -> SecVerdict {
    match d {
        Domain::Thread(t) => mem_pool_guar(t, s, r),
        Domain::Scheduler => schedule_guar(s, r),
        Domain::Timer => tick_guar(s, r),
    }
}

/// What thread `t` assumes about steps of its environment.
pub fn mem_pool_rely(t: ThreadId, s: &KernelState, r: &KernelState) -> SecVerdict {
    if s == r {
        return Ok(());
    }
    if !conf_stable(s, r) {
        return sec_fail(t, "pool configuration changed");
    }
    if safety::inv(s) && !safety::inv(r) {
        return sec_fail(t, "environment broke the invariant");
    }
    let ti = t.0 as usize;
    if s.locals.get(ti) != r.locals.get(ti) {
        return sec_fail(t, "environment changed the thread's locals");
    }
    if s.cur == Some(t) && (!pools_eq_ignoring_waitq(s, r) || !others_unchanged(t, &s.locals, &r.locals)) {
        return sec_fail(t, "memory or locals changed while the thread was running");
    }
    if s.mblocks.get(ti) != r.mblocks.get(ti) {
        return sec_fail(t, "environment changed the thread's mblocks");
    }
    Ok(())
}

/// Event integrity: a step inside the guarantee of its domain leaves every
/// non-interfered domain's view alone. Steps outside the guarantee are
/// reported as well, since the per-event argument depends on them.
pub fn check_event_integrity(d: Domain, s: &KernelState, r: &KernelState) -> SecVerdict {
    guar(d, s, r).map_err(|f| SecFailure { detail: format!("step outside its guarantee: {}", f.detail), ..f })?;
    check_step_integrity(d, s, r)
}

fn nodes_clear(s: &KernelState, t: ThreadId) -> bool {
    let l = &s.locals[t.0 as usize];
    l.freeing_node.is_none() && l.allocating_node.is_none()
}

/// Precondition of both services: invariant holds and the thread holds no
/// node.
pub fn check_precondition(t: ThreadId, s: &KernelState) -> SecVerdict {
    if !safety::inv(s) {
        return sec_fail(t, "invariant false at event start");
    }
    if !nodes_clear(s, t) {
        return sec_fail(t, "thread holds a node at event start");
    }
    Ok(())
}

/// The returned block is a real ALLOCATED block of the requested pool,
/// big enough, and owned by `t`.
pub fn mblk_valid(s: &KernelState, t: ThreadId, pool: PoolId, size: u64, b: &BlockId) -> bool {
    let Some(p) = s.pools.get(pool.0 as usize) else { return false };
    b.pool == pool
        && mem_block_addr_valid(s, b)
        && p.get_bit(b.level, b.block) == Ok(BlockState::Allocated)
        && p.block_size(b.level).is_ok_and(|sz| sz >= size)
        && s.mblocks[t.0 as usize].contains(b)
}

/// Postcondition of the event `ev` of thread `t`, evaluated on the state
/// right after it finished.
pub fn check_postcondition(t: ThreadId, ev: &ActiveEvent, s: &KernelState) -> SecVerdict {
    if !safety::inv(s) {
        return sec_fail(t, "invariant false at event end");
    }
    if !nodes_clear(s, t) {
        return sec_fail(t, "thread still holds a node");
    }
    let ActiveEvent::Alloc { pool, size, timeout } = ev else { return Ok(()) };
    let l = &s.locals[t.0 as usize];
    let ret = l.ret;
    let blk = l.mempoolalloc_ret;
    let ok = match (ret, blk) {
        (Some(RetCode::Ok), Some(b)) => mblk_valid(s, t, *pool, *size, &b),
        (Some(RetCode::Esizeerr), None) => true,
        (Some(RetCode::Enomem), None) => *timeout == TimeoutMode::NoWait,
        (Some(RetCode::Etimeout), None) => matches!(timeout, TimeoutMode::Ticks(_)),
        _ => false,
    };
    if !ok {
        let shown = blk.map_or("none".to_string(), |b| b.to_string());
        return sec_fail(t, format!("alloc({size}, {timeout:?}) returned {ret:?} with block {shown}"));
    }
    Ok(())
}
