//! Quad-buddy pool data model: configuration, per-level bitmaps and free
//! lists, and the address arithmetic shared by the services and checkers.
//!
//! Addresses are plain byte offsets. A pool owns the window
//! `[buf, buf + n_max * max_sz)`; level `l` blocks are `max_sz / 4^l` bytes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a pool inside a [`crate::kernel::KernelState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PoolId(pub u32);

/// Index of a thread inside a [`crate::kernel::KernelState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ThreadId(pub u32);

impl fmt::Display for PoolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("invalid pool configuration: {0}")]
    InvalidConfig(String),
    #[error("level {level} out of range (n_levels = {n_levels})")]
    LevelOutOfRange { level: u32, n_levels: u32 },
    #[error("block {block} out of range at level {level} (len = {len})")]
    BlockOutOfRange { level: u32, block: u64, len: u64 },
    #[error("address {data} is not aligned to level size {lsz} from base {buf}")]
    Misaligned { data: u64, lsz: u64, buf: u64 },
    #[error("address {addr} already in the level {level} free list")]
    DuplicateFreeEntry { level: u32, addr: u64 },
    #[error("address {addr} not in the level {level} free list")]
    AbsentFreeEntry { level: u32, addr: u64 },
}

/// State of one bitmap slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BlockState {
    Allocated,
    Free,
    Divided,
    NoExist,
    Freeing,
    Allocating,
}

impl BlockState {
    /// A slot that stands for physical memory. `Divided` is only a logical
    /// container and `NoExist` is nothing at all.
    pub fn is_memblock(self) -> bool {
        matches!(
            self,
            BlockState::Allocated | BlockState::Free | BlockState::Allocating | BlockState::Freeing
        )
    }

    pub fn short(self) -> char {
        match self {
            BlockState::Allocated => 'A',
            BlockState::Free => 'F',
            BlockState::Divided => 'D',
            BlockState::NoExist => '.',
            BlockState::Freeing => 'f',
            BlockState::Allocating => 'a',
        }
    }
}

/// Smallest multiple of 4 that is `>= x`.
pub fn align4(x: u64) -> u64 {
    x.div_ceil(4) * 4
}

pub(crate) fn pow4(e: u32) -> u64 {
    4u64.pow(e)
}

/// The `n` solving `max_sz = (4 * n) * 4^n_levels`, if one exists.
pub fn size_quantum(max_sz: u64, n_levels: u32) -> Option<u64> {
    let unit = 4u64.checked_mul(4u64.checked_pow(n_levels)?)?;
    (max_sz > 0 && max_sz.is_multiple_of(unit)).then_some(max_sz / unit)
}

/// Upper bound on the total number of bitmap slots of one pool.
pub const MAX_SLOTS: u64 = 1 << 20;

/// One level-0 block of 256 bytes split over two levels.
pub const POOL_A: PoolConfig =
    PoolConfig { pool_id: PoolId(0), buf: 0, max_sz: 256, n_max: 1, n_levels: 2 };

/// Two level-0 blocks of 64 bytes split over two levels.
pub const POOL_B: PoolConfig =
    PoolConfig { pool_id: PoolId(0), buf: 0, max_sz: 64, n_max: 2, n_levels: 2 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolConfig {
    pub pool_id: PoolId,
    /// Base address of the pool window.
    pub buf: u64,
    /// Level-0 block size in bytes.
    pub max_sz: u64,
    /// Number of level-0 blocks.
    pub n_max: u64,
    pub n_levels: u32,
}

impl PoolConfig {
    pub fn new(pool_id: PoolId, buf: u64, max_sz: u64, n_max: u64, n_levels: u32) -> Self {
        PoolConfig { pool_id, buf, max_sz, n_max, n_levels }
    }

    pub fn validate(&self) -> Result<(), PoolError> {
        if self.n_max == 0 {
            return Err(PoolError::InvalidConfig("n_max must be positive".into()));
        }
        if self.n_levels == 0 {
            return Err(PoolError::InvalidConfig("n_levels must be positive".into()));
        }
        if size_quantum(self.max_sz, self.n_levels).is_none() {
            return Err(PoolError::InvalidConfig(format!(
                "max_sz {} is not (4*n)*4^{} for any n > 0",
                self.max_sz, self.n_levels
            )));
        }
        // bitmaps are materialised in full; keep them a sane size
        let slots = (0..self.n_levels)
            .try_fold(0u64, |acc, l| self.n_max.checked_mul(pow4(l)).and_then(|n| acc.checked_add(n)));
        if slots.is_none_or(|n| n > MAX_SLOTS) {
            return Err(PoolError::InvalidConfig(format!("more than {MAX_SLOTS} bitmap slots")));
        }
        if self.n_max.checked_mul(self.max_sz).and_then(|c| self.buf.checked_add(c)).is_none() {
            return Err(PoolError::InvalidConfig("pool window overflows the address space".into()));
        }
        Ok(())
    }

    pub fn block_size(&self, level: u32) -> Result<u64, PoolError> {
        self.check_level(level)?;
        Ok(self.max_sz / pow4(level))
    }

    /// Number of bitmap slots at `level`: `n_max * 4^level`.
    pub fn level_len(&self, level: u32) -> u64 {
        self.n_max * pow4(level)
    }

    /// Size of the pool window in bytes.
    pub fn capacity(&self) -> u64 {
        self.n_max * self.max_sz
    }

    pub fn end(&self) -> u64 {
        self.buf + self.capacity()
    }

    fn check_level(&self, level: u32) -> Result<(), PoolError> {
        if level < self.n_levels {
            Ok(())
        } else {
            Err(PoolError::LevelOutOfRange { level, n_levels: self.n_levels })
        }
    }
}

/// Block naming: `(pool, level, block)` plus its start address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId {
    pub pool: PoolId,
    pub level: u32,
    pub block: u64,
    pub data: u64,
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{}@{})", self.pool, self.level, self.block, self.data)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelInfo {
    pub bits: Vec<BlockState>,
    pub free_list: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemPool {
    pub config: PoolConfig,
    pub levels: Vec<LevelInfo>,
    pub wait_q: Vec<ThreadId>,
}

impl MemPool {
    /// Level 0 all free and listed in index order; deeper levels absent.
    pub fn init(config: PoolConfig) -> Result<MemPool, PoolError> {
        config.validate()?;
        let levels = (0..config.n_levels)
            .map(|l| {
                let len = config.level_len(l) as usize;
                if l == 0 {
                    LevelInfo {
                        bits: vec![BlockState::Free; len],
                        free_list: (0..len as u64).map(|b| config.buf + config.max_sz * b).collect(),
                    }
                } else {
                    LevelInfo { bits: vec![BlockState::NoExist; len], free_list: Vec::new() }
                }
            })
            .collect();
        Ok(MemPool { config, levels, wait_q: Vec::new() })
    }

    pub fn block_size(&self, level: u32) -> Result<u64, PoolError> {
        self.config.block_size(level)
    }

    pub fn block_ptr(&self, lsz: u64, block: u64) -> u64 {
        debug_assert!(lsz > 0);
        self.config.buf + lsz * block
    }

    pub fn block_num(&self, data: u64, lsz: u64) -> Result<u64, PoolError> {
        let buf = self.config.buf;
        if lsz == 0 || data < buf || !(data - buf).is_multiple_of(lsz) {
            return Err(PoolError::Misaligned { data, lsz, buf });
        }
        Ok((data - buf) / lsz)
    }

    /// Well-formed id for `(level, block)` of this pool.
    pub fn block_id(&self, level: u32, block: u64) -> Result<BlockId, PoolError> {
        let lsz = self.block_size(level)?;
        Ok(BlockId { pool: self.config.pool_id, level, block, data: self.block_ptr(lsz, block) })
    }

    fn level(&self, level: u32) -> Result<&LevelInfo, PoolError> {
        self.levels
            .get(level as usize)
            .ok_or(PoolError::LevelOutOfRange { level, n_levels: self.levels.len() as u32 })
    }

    fn level_mut(&mut self, level: u32) -> Result<&mut LevelInfo, PoolError> {
        let n_levels = self.levels.len() as u32;
        self.levels
            .get_mut(level as usize)
            .ok_or(PoolError::LevelOutOfRange { level, n_levels })
    }

    pub fn get_bit(&self, level: u32, block: u64) -> Result<BlockState, PoolError> {
        let lv = self.level(level)?;
        lv.bits.get(block as usize).copied().ok_or(PoolError::BlockOutOfRange {
            level,
            block,
            len: lv.bits.len() as u64,
        })
    }

    pub fn set_bit(&mut self, level: u32, block: u64, st: BlockState) -> Result<(), PoolError> {
        let lv = self.level_mut(level)?;
        let len = lv.bits.len() as u64;
        let slot = lv
            .bits
            .get_mut(block as usize)
            .ok_or(PoolError::BlockOutOfRange { level, block, len })?;
        *slot = st;
        Ok(())
    }

    /// Value-semantic variant of [`MemPool::set_bit`].
    pub fn with_bit(&self, level: u32, block: u64, st: BlockState) -> Result<MemPool, PoolError> {
        let mut next = self.clone();
        next.set_bit(level, block, st)?;
        Ok(next)
    }

    pub fn level_empty(&self, level: u32) -> Result<bool, PoolError> {
        Ok(self.level(level)?.free_list.is_empty())
    }

    /// True iff `[ptr, ptr + sz)` lies inside the pool window.
    pub fn block_fits(&self, ptr: u64, sz: u64) -> bool {
        ptr >= self.config.buf && (ptr - self.config.buf) + sz <= self.config.capacity()
    }

    pub fn free_list_append(&mut self, level: u32, addr: u64) -> Result<(), PoolError> {
        let lv = self.level_mut(level)?;
        if lv.free_list.contains(&addr) {
            return Err(PoolError::DuplicateFreeEntry { level, addr });
        }
        lv.free_list.push(addr);
        Ok(())
    }

    pub fn free_list_remove(&mut self, level: u32, addr: u64) -> Result<(), PoolError> {
        let lv = self.level_mut(level)?;
        let pos = lv
            .free_list
            .iter()
            .position(|&a| a == addr)
            .ok_or(PoolError::AbsentFreeEntry { level, addr })?;
        lv.free_list.remove(pos);
        Ok(())
    }

    /// All four members of the quadruple containing `block` are FREE.
    pub fn partner_bits(&self, level: u32, block: u64) -> bool {
        let Ok(lv) = self.level(level) else { return false };
        let first = (block / 4 * 4) as usize;
        lv.bits
            .get(first..first + 4)
            .is_some_and(|q| q.iter().all(|&s| s == BlockState::Free))
    }

    /// Compact one-line-per-level rendering of the bitmaps, used in reports
    /// and the browser demo.
    pub fn render_bits(&self) -> Vec<String> {
        self.levels
            .iter()
            .map(|lv| lv.bits.iter().map(|b| b.short()).collect())
            .collect()
    }
}
