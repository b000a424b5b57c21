//! Executable model of a quad-buddy memory pool with concurrent allocation
//! and release services, plus runtime checkers for its safety invariants,
//! rely/guarantee conditions and information-flow security.

pub mod kernel;
pub mod monitor;
pub mod pool;
pub mod run;
pub mod safety;
pub mod scenario;
pub mod security;
pub mod services;
pub mod trace;

pub use kernel::{Action, Domain, KernelState, System, ThreadSpec, ThreadState, TimerPolicy};
pub use pool::{BlockId, BlockState, MemPool, PoolConfig, PoolError, PoolId, ThreadId, POOL_A, POOL_B};
pub use services::{BugConfig, FaultConfig, Op, RetCode, ServiceConfig, TimeoutMode};
pub use monitor::{CheckFamily, Checks};
pub use run::{explore, replay, run_random, Outcome, RunOptions, RunReport};
pub use scenario::{Mode, Scenario};
pub use trace::Trace;
