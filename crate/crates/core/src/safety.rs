//! Structural invariants of the pools and threads, and the memory
//! partition property.
//!
//! Every check is a pure function of a [`KernelState`]. A failure names
//! the first offending location in (pool, level, index) order; [`recheck`]
//! evaluates the same predicate at that location alone.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kernel::{KernelState, ThreadState};
use crate::pool::{pow4, size_quantum, BlockId, BlockState, MemPool, PoolId, ThreadId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyCheck {
    InvBitmap,
    InvBitmap0,
    InvBitmapn,
    InvMempoolInfo,
    InvBitmapNot4free,
    InvBitmapFreelist,
    InvPoolsNotoverlap,
    InvThdWaitq,
    InvAuxVars,
    MemPart,
}

impl SafetyCheck {
    pub const ALL: [SafetyCheck; 10] = [
        SafetyCheck::InvBitmap,
        SafetyCheck::InvBitmap0,
        SafetyCheck::InvBitmapn,
        SafetyCheck::InvMempoolInfo,
        SafetyCheck::InvBitmapNot4free,
        SafetyCheck::InvBitmapFreelist,
        SafetyCheck::InvPoolsNotoverlap,
        SafetyCheck::InvThdWaitq,
        SafetyCheck::InvAuxVars,
        SafetyCheck::MemPart,
    ];

    /// The nine invariant families, without `mem_part`.
    pub const INVARIANTS: [SafetyCheck; 9] = [
        SafetyCheck::InvBitmap,
        SafetyCheck::InvBitmap0,
        SafetyCheck::InvBitmapn,
        SafetyCheck::InvMempoolInfo,
        SafetyCheck::InvBitmapNot4free,
        SafetyCheck::InvBitmapFreelist,
        SafetyCheck::InvPoolsNotoverlap,
        SafetyCheck::InvThdWaitq,
        SafetyCheck::InvAuxVars,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SafetyCheck::InvBitmap => "inv_bitmap",
            SafetyCheck::InvBitmap0 => "inv_bitmap0",
            SafetyCheck::InvBitmapn => "inv_bitmapn",
            SafetyCheck::InvMempoolInfo => "inv_mempool_info",
            SafetyCheck::InvBitmapNot4free => "inv_bitmap_not4free",
            SafetyCheck::InvBitmapFreelist => "inv_bitmap_freelist",
            SafetyCheck::InvPoolsNotoverlap => "inv_pools_notoverlap",
            SafetyCheck::InvThdWaitq => "inv_thd_waitq",
            SafetyCheck::InvAuxVars => "inv_aux_vars",
            SafetyCheck::MemPart => "mem_part",
        }
    }

    pub fn run(self, s: &KernelState) -> Verdict {
        match self {
            SafetyCheck::InvBitmap => check_inv_bitmap(s),
            SafetyCheck::InvBitmap0 => check_inv_bitmap0(s),
            SafetyCheck::InvBitmapn => check_inv_bitmapn(s),
            SafetyCheck::InvMempoolInfo => check_inv_mempool_info(s),
            SafetyCheck::InvBitmapNot4free => check_inv_not4free(s),
            SafetyCheck::InvBitmapFreelist => check_inv_freelist(s),
            SafetyCheck::InvPoolsNotoverlap => check_inv_pools_notoverlap(s),
            SafetyCheck::InvThdWaitq => check_inv_thd_waitq(s),
            SafetyCheck::InvAuxVars => check_inv_aux_vars(s),
            SafetyCheck::MemPart => check_mem_part(s),
        }
    }
}

impl fmt::Display for SafetyCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a violation was found.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Slot { pool: PoolId, level: u32, block: u64 },
    /// Relative address inside the pool window.
    Addr { pool: PoolId, addr: u64 },
    ListEntry { pool: PoolId, level: u32, addr: u64 },
    Pool { pool: PoolId },
    PoolPair { first: PoolId, second: PoolId },
    Thread { thread: ThreadId },
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Witness::Slot { pool, level, block } => write!(f, "({pool},{level},{block})"),
            Witness::Addr { pool, addr } => write!(f, "{pool}+{addr}"),
            Witness::ListEntry { pool, level, addr } => write!(f, "{pool} level {level} list entry {addr}"),
            Witness::Pool { pool } => write!(f, "{pool}"),
            Witness::PoolPair { first, second } => write!(f, "{first}/{second}"),
            Witness::Thread { thread } => write!(f, "{thread}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub witness: Witness,
    pub detail: String,
}

pub type Verdict = Result<(), Failure>;

fn fail(witness: Witness, detail: impl Into<String>) -> Verdict {
    Err(Failure { witness, detail: detail.into() })
}

fn slot(p: &MemPool, level: u32, block: u64) -> Witness {
    Witness::Slot { pool: p.config.pool_id, level, block }
}

fn bit(p: &MemPool, level: u32, block: u64) -> Option<BlockState> {
    p.levels.get(level as usize)?.bits.get(block as usize).copied()
}

fn slots(p: &MemPool) -> impl Iterator<Item = (u32, u64, BlockState)> + '_ {
    p.levels
        .iter()
        .enumerate()
        .flat_map(|(i, lv)| lv.bits.iter().enumerate().map(move |(j, &b)| (i as u32, j as u64, b)))
}

/// Slot rule of the bitmap shape, looking only upwards: a physical or
/// DIVIDED slot sits under a DIVIDED parent, a NOEXIST slot does not.
fn bitmap_slot_ok(p: &MemPool, i: u32, j: u64) -> bool {
    let Some(st) = bit(p, i, j) else { return false };
    if i == 0 {
        return true;
    }
    let parent = bit(p, i - 1, j / 4);
    match st {
        BlockState::NoExist => parent != Some(BlockState::Divided),
        _ => parent == Some(BlockState::Divided),
    }
}

fn noexist_children(p: &MemPool, i: u32, j: u64) -> Result<(), u64> {
    if i + 1 >= p.levels.len() as u32 {
        return Ok(());
    }
    match (4 * j..4 * j + 4).find(|&c| bit(p, i + 1, c) != Some(BlockState::NoExist)) {
        Some(c) => Err(c),
        None => Ok(()),
    }
}

pub fn check_inv_bitmap(s: &KernelState) -> Verdict {
    for p in &s.pools {
        for (i, j, st) in slots(p) {
            if (st.is_memblock() || st == BlockState::NoExist) && noexist_children(p, i, j).is_err() {
                let c = noexist_children(p, i, j).unwrap_err();
                return fail(slot(p, i + 1, c), format!("child of ({i},{j}) {st:?} is not NOEXIST"));
            }
            if !bitmap_slot_ok(p, i, j) {
                return fail(slot(p, i, j), format!("{st:?} under parent {:?}", bit(p, i - 1, j / 4)));
            }
        }
    }
    Ok(())
}

pub fn check_inv_bitmap0(s: &KernelState) -> Verdict {
    for p in &s.pools {
        let Some(lv) = p.levels.first() else { continue };
        if let Some(j) = lv.bits.iter().position(|&b| b == BlockState::NoExist) {
            return fail(slot(p, 0, j as u64), "NOEXIST at level 0");
        }
    }
    Ok(())
}

pub fn check_inv_bitmapn(s: &KernelState) -> Verdict {
    for p in &s.pools {
        let Some(lv) = p.levels.last() else { continue };
        if let Some(j) = lv.bits.iter().position(|&b| b == BlockState::Divided) {
            return fail(slot(p, p.levels.len() as u32 - 1, j as u64), "DIVIDED at the deepest level");
        }
    }
    Ok(())
}

fn mempool_info_problem(p: &MemPool) -> Option<String> {
    let c = &p.config;
    if size_quantum(c.max_sz, c.n_levels).is_none() {
        return Some(format!("max_sz {} has no n > 0 with max_sz = 4n*4^{}", c.max_sz, c.n_levels));
    }
    if c.n_max == 0 || c.n_levels == 0 {
        return Some("n_max and n_levels must be positive".into());
    }
    if c.n_levels as usize != p.levels.len() {
        return Some(format!("n_levels {} but {} levels", c.n_levels, p.levels.len()));
    }
    for (i, lv) in p.levels.iter().enumerate() {
        let want = c.n_max.checked_mul(pow4(i as u32));
        if want != Some(lv.bits.len() as u64) {
            return Some(format!("level {i} has {} bits", lv.bits.len()));
        }
    }
    None
}

pub fn check_inv_mempool_info(s: &KernelState) -> Verdict {
    for p in &s.pools {
        if let Some(why) = mempool_info_problem(p) {
            return fail(Witness::Pool { pool: p.config.pool_id }, why);
        }
    }
    Ok(())
}

pub fn check_inv_not4free(s: &KernelState) -> Verdict {
    for p in &s.pools {
        for (i, lv) in p.levels.iter().enumerate().skip(1) {
            for j in (0..lv.bits.len() as u64).step_by(4) {
                if p.partner_bits(i as u32, j) {
                    return fail(slot(p, i as u32, j), "four FREE partners");
                }
            }
        }
    }
    Ok(())
}

fn level_size(p: &MemPool, i: u32) -> u64 {
    p.config.max_sz / pow4(i)
}

/// Problem with a free-list entry: misaligned, out of range or repeated.
fn list_entry_problem(p: &MemPool, i: u32, addr: u64) -> Option<&'static str> {
    let lv = &p.levels[i as usize];
    let sz = level_size(p, i);
    let buf = p.config.buf;
    if addr < buf || !(addr - buf).is_multiple_of(sz) || (addr - buf) / sz >= lv.bits.len() as u64 {
        return Some("not a block start of this level");
    }
    if lv.free_list.iter().filter(|&&a| a == addr).count() > 1 {
        return Some("duplicate entry");
    }
    None
}

fn freelist_slot_ok(p: &MemPool, i: u32, j: u64) -> bool {
    let Some(lv) = p.levels.get(i as usize) else { return false };
    let addr = p.config.buf + j * level_size(p, i);
    (bit(p, i, j) == Some(BlockState::Free)) == lv.free_list.contains(&addr)
}

pub fn check_inv_freelist(s: &KernelState) -> Verdict {
    for p in &s.pools {
        for (i, lv) in p.levels.iter().enumerate() {
            let i = i as u32;
            for j in 0..lv.bits.len() as u64 {
                if !freelist_slot_ok(p, i, j) {
                    return fail(slot(p, i, j), "FREE bit and list membership disagree");
                }
            }
            for &addr in &lv.free_list {
                if let Some(why) = list_entry_problem(p, i, addr) {
                    return fail(Witness::ListEntry { pool: p.config.pool_id, level: i, addr }, why);
                }
            }
        }
    }
    Ok(())
}

fn windows_overlap(a: &MemPool, b: &MemPool) -> bool {
    a.config.buf < b.config.end() && b.config.buf < a.config.end()
}

pub fn check_inv_pools_notoverlap(s: &KernelState) -> Verdict {
    for (x, a) in s.pools.iter().enumerate() {
        for b in &s.pools[x + 1..] {
            if windows_overlap(a, b) {
                return fail(
                    Witness::PoolPair { first: a.config.pool_id, second: b.config.pool_id },
                    "pool windows overlap",
                );
            }
        }
    }
    Ok(())
}

fn waitq_thread_problem(s: &KernelState, t: ThreadId) -> Option<&'static str> {
    let queued: usize = s.pools.iter().map(|p| p.wait_q.iter().filter(|&&w| w == t).count()).sum();
    let blocked = s.thd_state.get(t.0 as usize) == Some(&ThreadState::Blocked);
    match (blocked, queued) {
        (false, 0) => None,
        (false, _) => Some("queued but not BLOCKED"),
        (true, 0) => Some("BLOCKED but in no wait queue"),
        (true, 1) => None,
        (true, _) => Some("queued more than once"),
    }
}

pub fn check_inv_thd_waitq(s: &KernelState) -> Verdict {
    for p in &s.pools {
        if let Some(&w) = p.wait_q.iter().find(|w| w.0 as usize >= s.thd_state.len()) {
            return fail(Witness::Thread { thread: w }, "unknown thread in wait queue");
        }
    }
    for t in 0..s.thd_state.len() {
        let t = ThreadId(t as u32);
        if let Some(why) = waitq_thread_problem(s, t) {
            return fail(Witness::Thread { thread: t }, why);
        }
    }
    Ok(())
}

/// `level/block` in range and `data = block_ptr(...)`.
pub fn mem_block_addr_valid(s: &KernelState, b: &BlockId) -> bool {
    let Some(p) = s.pools.get(b.pool.0 as usize) else { return false };
    b.level < p.config.n_levels
        && b.block < p.config.level_len(b.level)
        && b.data == p.block_ptr(level_size(p, b.level), b.block)
}

fn same_slot(a: &BlockId, b: &BlockId) -> bool {
    (a.pool, a.level, a.block) == (b.pool, b.level, b.block)
}

fn node_bit(s: &KernelState, n: &BlockId) -> Option<BlockState> {
    bit(s.pools.get(n.pool.0 as usize)?, n.level, n.block)
}

fn aux_thread_problem(s: &KernelState, t: usize) -> Option<&'static str> {
    let l = &s.locals[t];
    if let Some(n) = &l.freeing_node {
        if node_bit(s, n) != Some(BlockState::Freeing) {
            return Some("freeing_node bit is not FREEING");
        }
    }
    if let Some(n) = &l.allocating_node {
        if node_bit(s, n) != Some(BlockState::Allocating) {
            return Some("allocating_node bit is not ALLOCATING");
        }
    }
    let mine = [l.freeing_node, l.allocating_node];
    for (u, other) in s.locals.iter().enumerate() {
        if u == t {
            continue;
        }
        let theirs = [other.freeing_node, other.allocating_node];
        if mine.iter().flatten().any(|a| theirs.iter().flatten().any(|b| same_slot(a, b))) {
            return Some("node aliased by another thread");
        }
    }
    None
}

fn aux_slot_owners(s: &KernelState, pool: PoolId, level: u32, block: u64, st: BlockState) -> usize {
    s.locals
        .iter()
        .filter(|l| {
            let node = if st == BlockState::Freeing { l.freeing_node } else { l.allocating_node };
            node.is_some_and(|n| (n.pool, n.level, n.block) == (pool, level, block))
        })
        .count()
}

pub fn check_inv_aux_vars(s: &KernelState) -> Verdict {
    for t in 0..s.locals.len() {
        if let Some(why) = aux_thread_problem(s, t) {
            return fail(Witness::Thread { thread: ThreadId(t as u32) }, why);
        }
    }
    for p in &s.pools {
        for (i, j, st) in slots(p) {
            if matches!(st, BlockState::Freeing | BlockState::Allocating)
                && aux_slot_owners(s, p.config.pool_id, i, j, st) != 1
            {
                return fail(slot(p, i, j), format!("{st:?} slot without exactly one owner"));
            }
        }
    }
    Ok(())
}

/// Number of physical blocks whose span contains relative address `addr`.
/// For each level the only candidate slot is `addr / size`.
fn cover_count(p: &MemPool, addr: u64) -> usize {
    (0..p.levels.len() as u32)
        .filter(|&i| bit(p, i, addr / level_size(p, i)).is_some_and(BlockState::is_memblock))
        .count()
}

pub fn check_mem_part(s: &KernelState) -> Verdict {
    for p in &s.pools {
        if p.levels.is_empty() || p.config.max_sz == 0 {
            continue;
        }
        for addr in 0..p.config.capacity() {
            let n = cover_count(p, addr);
            if n != 1 {
                return fail(Witness::Addr { pool: p.config.pool_id, addr }, format!("covered by {n} blocks"));
            }
        }
    }
    Ok(())
}

/// The structural invariants imply the partition property. Only a state
/// satisfying the premises and violating `mem_part` fails.
pub fn check_theorem1(s: &KernelState) -> Verdict {
    let premises = check_inv_mempool_info(s).is_ok()
        && check_inv_bitmap(s).is_ok()
        && check_inv_bitmap0(s).is_ok()
        && check_inv_bitmapn(s).is_ok();
    if premises {
        check_mem_part(s)
    } else {
        Ok(())
    }
}

/// Conjunction of the nine invariant families.
pub fn inv(s: &KernelState) -> bool {
    SafetyCheck::INVARIANTS.iter().all(|c| c.run(s).is_ok())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub verdicts: Vec<(SafetyCheck, Verdict)>,
}

impl InvariantReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|(_, v)| v.is_ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (SafetyCheck, &Failure)> {
        self.verdicts.iter().filter_map(|(c, v)| v.as_ref().err().map(|f| (*c, f)))
    }

    pub fn get(&self, c: SafetyCheck) -> &Verdict {
        &self.verdicts.iter().find(|(k, _)| *k == c).expect("every check present").1
    }
}

pub fn check_all(s: &KernelState) -> InvariantReport {
    InvariantReport { verdicts: SafetyCheck::ALL.iter().map(|&c| (c, c.run(s))).collect() }
}

/// Evaluate `check` at the witness location only. True when it still fails
/// there.
pub fn recheck(check: SafetyCheck, s: &KernelState, w: &Witness) -> bool {
    let pool = |id: &PoolId| s.pools.iter().find(|p| p.config.pool_id == *id);
    match (check, w) {
        (SafetyCheck::InvBitmap, Witness::Slot { pool: id, level, block }) => {
            pool(id).is_some_and(|p| !bitmap_slot_ok(p, *level, *block))
        }
        (SafetyCheck::InvBitmap0, Witness::Slot { pool: id, level: 0, block }) => {
            pool(id).is_some_and(|p| bit(p, 0, *block) == Some(BlockState::NoExist))
        }
        (SafetyCheck::InvBitmapn, Witness::Slot { pool: id, level, block }) => pool(id).is_some_and(|p| {
            *level as usize + 1 == p.levels.len() && bit(p, *level, *block) == Some(BlockState::Divided)
        }),
        (SafetyCheck::InvMempoolInfo, Witness::Pool { pool: id }) => {
            pool(id).is_some_and(|p| mempool_info_problem(p).is_some())
        }
        (SafetyCheck::InvBitmapNot4free, Witness::Slot { pool: id, level, block }) => {
            pool(id).is_some_and(|p| *level > 0 && p.partner_bits(*level, *block))
        }
        (SafetyCheck::InvBitmapFreelist, Witness::Slot { pool: id, level, block }) => {
            pool(id).is_some_and(|p| !freelist_slot_ok(p, *level, *block))
        }
        (SafetyCheck::InvBitmapFreelist, Witness::ListEntry { pool: id, level, addr }) => pool(id)
            .is_some_and(|p| (*level as usize) < p.levels.len() && list_entry_problem(p, *level, *addr).is_some()),
        (SafetyCheck::InvPoolsNotoverlap, Witness::PoolPair { first, second }) => {
            matches!((pool(first), pool(second)), (Some(a), Some(b)) if windows_overlap(a, b))
        }
        (SafetyCheck::InvThdWaitq, Witness::Thread { thread }) => {
            thread.0 as usize >= s.thd_state.len() || waitq_thread_problem(s, *thread).is_some()
        }
        (SafetyCheck::InvAuxVars, Witness::Thread { thread }) => {
            (thread.0 as usize) < s.locals.len() && aux_thread_problem(s, thread.0 as usize).is_some()
        }
        (SafetyCheck::InvAuxVars, Witness::Slot { pool: id, level, block }) => pool(id).is_some_and(|p| {
            matches!(bit(p, *level, *block), Some(st @ (BlockState::Freeing | BlockState::Allocating))
                if aux_slot_owners(s, *id, *level, *block, st) != 1)
        }),
        (SafetyCheck::MemPart, Witness::Addr { pool: id, addr }) => {
            pool(id).is_some_and(|p| *addr < p.config.capacity() && cover_count(p, *addr) != 1)
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::pool::{PoolConfig, POOL_A, POOL_B};
    use crate::services::ThreadLocals;

    fn state(pools: Vec<MemPool>, threads: usize) -> KernelState {
        KernelState {
            pools,
            cur: None,
            tick: 0,
            thd_state: vec![ThreadState::Ready; threads],
            locals: vec![ThreadLocals::default(); threads],
            mblocks: vec![BTreeSet::new(); threads],
        }
    }

    fn fresh(cfg: PoolConfig) -> KernelState {
        state(vec![MemPool::init(cfg).unwrap()], 2)
    }

    fn assert_rechecks(check: SafetyCheck, s: &KernelState) -> Witness {
        let f = check.run(s).expect_err("check should fail");
        assert!(recheck(check, s, &f.witness), "{check} witness {} does not re-fail", f.witness);
        f.witness
    }

    #[test]
    fn fresh_pools_pass_everything() {
        for cfg in [POOL_A, POOL_B] {
            let r = check_all(&fresh(cfg));
            assert!(r.all_pass(), "{r:?}");
        }
    }

    #[test]
    fn bitmap_examples() {
        let mut s = fresh(POOL_A);
        s.pools[0].set_bit(0, 0, BlockState::Divided).unwrap();
        s.pools[0].levels[1].bits = vec![BlockState::Free; 4];
        assert!(check_inv_bitmap(&s).is_ok());
        assert!(check_inv_not4free(&s).is_err());

        let mut s = fresh(POOL_A);
        s.pools[0].set_bit(1, 0, BlockState::Free).unwrap();
        let w = assert_rechecks(SafetyCheck::InvBitmap, &s);
        assert_eq!(w, Witness::Slot { pool: PoolId(0), level: 1, block: 0 });
    }

    #[test]
    fn bound_examples() {
        let mut s = fresh(POOL_A);
        s.pools[0].set_bit(0, 0, BlockState::NoExist).unwrap();
        assert_rechecks(SafetyCheck::InvBitmap0, &s);
        let mut s = fresh(POOL_A);
        s.pools[0].set_bit(1, 2, BlockState::Divided).unwrap();
        assert_rechecks(SafetyCheck::InvBitmapn, &s);
    }

    #[test]
    fn mempool_info_examples() {
        let mut s = fresh(POOL_A);
        s.pools[0].config.max_sz = 100;
        assert_rechecks(SafetyCheck::InvMempoolInfo, &s);
        let mut s = fresh(POOL_A);
        s.pools[0].levels.pop();
        assert_eq!(assert_rechecks(SafetyCheck::InvMempoolInfo, &s), Witness::Pool { pool: PoolId(0) });
    }

    #[test]
    fn not4free_examples() {
        let mut s = fresh(POOL_A);
        s.pools[0].set_bit(0, 0, BlockState::Divided).unwrap();
        s.pools[0].levels[1].bits =
            vec![BlockState::Allocated, BlockState::Free, BlockState::Free, BlockState::Free];
        assert!(check_inv_not4free(&s).is_ok());
        s.pools[0].set_bit(1, 0, BlockState::Free).unwrap();
        assert_rechecks(SafetyCheck::InvBitmapNot4free, &s);
        // level 0 is exempt
        assert!(check_inv_not4free(&fresh(POOL_B)).is_ok());
    }

    #[test]
    fn freelist_examples() {
        let mut s = fresh(POOL_A);
        s.pools[0].levels[0].free_list.clear();
        assert_rechecks(SafetyCheck::InvBitmapFreelist, &s);
        let mut s = fresh(POOL_A);
        s.pools[0].levels[1].free_list.push(100);
        let w = assert_rechecks(SafetyCheck::InvBitmapFreelist, &s);
        assert_eq!(w, Witness::ListEntry { pool: PoolId(0), level: 1, addr: 100 });
    }

    #[test]
    fn overlap_examples() {
        let a = MemPool::init(POOL_A).unwrap();
        let mut b_cfg = POOL_B;
        b_cfg.pool_id = PoolId(1);
        b_cfg.buf = 256;
        let s = state(vec![a.clone(), MemPool::init(b_cfg).unwrap()], 0);
        assert!(check_inv_pools_notoverlap(&s).is_ok());
        b_cfg.buf = 0;
        let s = state(vec![a, MemPool::init(b_cfg).unwrap()], 0);
        assert_rechecks(SafetyCheck::InvPoolsNotoverlap, &s);
    }

    #[test]
    fn waitq_examples() {
        let mut s = fresh(POOL_A);
        s.thd_state[1] = ThreadState::Blocked;
        s.pools[0].wait_q.push(ThreadId(1));
        assert!(check_inv_thd_waitq(&s).is_ok());
        s.pools[0].wait_q.clear();
        assert_rechecks(SafetyCheck::InvThdWaitq, &s);

        let mut b_cfg = POOL_B;
        b_cfg.pool_id = PoolId(1);
        b_cfg.buf = 256;
        let mut s = state(vec![MemPool::init(POOL_A).unwrap(), MemPool::init(b_cfg).unwrap()], 2);
        s.thd_state[1] = ThreadState::Blocked;
        s.pools[0].wait_q.push(ThreadId(1));
        s.pools[1].wait_q.push(ThreadId(1));
        assert_rechecks(SafetyCheck::InvThdWaitq, &s);
    }

    #[test]
    fn aux_examples() {
        let mut s = fresh(POOL_A);
        s.pools[0].set_bit(0, 0, BlockState::Freeing).unwrap();
        s.pools[0].levels[0].free_list.clear();
        assert_rechecks(SafetyCheck::InvAuxVars, &s);
        let node = s.pools[0].block_id(0, 0).unwrap();
        s.locals[0].freeing_node = Some(node);
        assert!(check_inv_aux_vars(&s).is_ok());

        let mut s = fresh(POOL_A);
        s.pools[0].set_bit(0, 0, BlockState::Allocating).unwrap();
        s.pools[0].levels[0].free_list.clear();
        s.locals[0].allocating_node = Some(node);
        s.locals[1].allocating_node = Some(node);
        assert_rechecks(SafetyCheck::InvAuxVars, &s);
    }

    #[test]
    fn mem_part_examples() {
        assert!(check_mem_part(&fresh(POOL_A)).is_ok());
        let mut s = fresh(POOL_A);
        s.pools[0].set_bit(0, 0, BlockState::Divided).unwrap();
        s.pools[0].levels[1].bits =
            vec![BlockState::Allocated, BlockState::Free, BlockState::Free, BlockState::Allocated];
        assert!(check_mem_part(&s).is_ok());
        s.pools[0].levels[1].bits = vec![BlockState::NoExist; 4];
        let w = assert_rechecks(SafetyCheck::MemPart, &s);
        assert_eq!(w, Witness::Addr { pool: PoolId(0), addr: 0 });
    }

    #[test]
    fn theorem1_is_an_implication() {
        let mut s = fresh(POOL_A);
        s.pools[0].set_bit(0, 0, BlockState::Divided).unwrap();
        // NOEXIST children under a DIVIDED root: a hole, but inv_bitmap
        // fails too, so the implication holds vacuously
        assert!(check_mem_part(&s).is_err());
        assert!(check_inv_bitmap(&s).is_err());
        assert!(check_theorem1(&s).is_ok());
        assert!(check_theorem1(&fresh(POOL_B)).is_ok());
    }

    #[test]
    fn addr_validity() {
        let s = fresh(POOL_A);
        assert!(mem_block_addr_valid(&s, &BlockId { pool: PoolId(0), level: 1, block: 3, data: 192 }));
        assert!(!mem_block_addr_valid(&s, &BlockId { pool: PoolId(0), level: 1, block: 3, data: 190 }));
        assert!(!mem_block_addr_valid(&s, &BlockId { pool: PoolId(0), level: 1, block: 4, data: 256 }));
    }
}
