//! Mono-core kernel model: global state, the scheduler and timer events,
//! and the transition relation that interleaves them with thread steps.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pool::{BlockId, MemPool, PoolConfig, PoolError, ThreadId};
use crate::services::{self, ActiveEvent, Op, Pc, ServiceConfig, StepKind, ThreadLocals, TimeoutMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ThreadState {
    Ready,
    Running,
    Blocked,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelState {
    pub pools: Vec<MemPool>,
    pub cur: Option<ThreadId>,
    pub tick: u64,
    pub thd_state: Vec<ThreadState>,
    pub locals: Vec<ThreadLocals>,
    pub mblocks: Vec<BTreeSet<BlockId>>,
}

impl KernelState {
    /// Stable 64-bit fingerprint of the whole state.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }

    pub fn thread_count(&self) -> usize {
        self.locals.len()
    }
}

/// Security domain of an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Scheduler,
    Timer,
    Thread(ThreadId),
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Scheduler => write!(f, "SCHEDULER"),
            Domain::Timer => write!(f, "TIMER"),
            Domain::Thread(t) => write!(f, "THREAD({t})"),
        }
    }
}

/// A scheduling choice: which component moves next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    /// Next step of the running thread.
    Thread(ThreadId),
    /// Scheduler switches to this READY thread.
    Schedule(ThreadId),
    Tick,
}

impl Action {
    pub fn domain(self) -> Domain {
        match self {
            Action::Thread(t) => Domain::Thread(t),
            Action::Schedule(_) => Domain::Scheduler,
            Action::Tick => Domain::Timer,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Thread(t) => write!(f, "step:{t}"),
            Action::Schedule(t) => write!(f, "schedule:{t}"),
            Action::Tick => write!(f, "tick"),
        }
    }
}

impl std::str::FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Action, String> {
        let thread = |v: &str| {
            v.strip_prefix('t')
                .and_then(|n| n.parse().ok())
                .map(ThreadId)
                .ok_or_else(|| format!("bad thread token {v:?}"))
        };
        match s.split_once(':') {
            None if s == "tick" => Ok(Action::Tick),
            Some(("step", v)) => Ok(Action::Thread(thread(v)?)),
            Some(("schedule", v)) => Ok(Action::Schedule(thread(v)?)),
            _ => Err(format!("bad action {s:?}")),
        }
    }
}

/// When the timer may tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimerPolicy {
    /// Always enabled.
    Always,
    /// Enabled while `tick < n`, or while some thread waits with a deadline.
    Bounded(u64),
}

impl fmt::Display for TimerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimerPolicy::Always => write!(f, "always"),
            TimerPolicy::Bounded(n) => write!(f, "bounded:{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreadSpec {
    pub name: String,
    pub script: Vec<Op>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("action {0} is not enabled")]
    NotEnabled(Action),
    #[error("no such thread {0}")]
    UnknownThread(ThreadId),
}

/// What one transition did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepInfo {
    pub action: Action,
    pub domain: Domain,
    /// `alloc`, `free`, `schedule` or `tick`.
    pub event: &'static str,
    /// Step label inside the event program.
    pub label: &'static str,
    pub kind: StepKind,
    pub started: Option<ActiveEvent>,
    pub completed: Option<ActiveEvent>,
    pub anomalies: Vec<String>,
}

impl StepInfo {
    /// `event:label`, as written in traces.
    pub fn name(&self) -> String {
        format!("{}:{}", self.event, self.label)
    }
}

/// Static part of a simulation: pools, scripts and switches.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct System {
    pub pools: Vec<PoolConfig>,
    pub threads: Vec<ThreadSpec>,
    pub services: ServiceConfig,
    pub timer: TimerPolicy,
    /// A free also requires the block to be in the caller's `mblocks`.
    pub strict: bool,
}

impl System {
    pub fn initial_state(&self) -> Result<KernelState, SimError> {
        let pools = self.pools.iter().map(|c| MemPool::init(*c)).collect::<Result<Vec<_>, _>>()?;
        let n = self.threads.len();
        Ok(KernelState {
            pools,
            cur: None,
            tick: 0,
            thd_state: vec![ThreadState::Ready; n],
            locals: vec![ThreadLocals::default(); n],
            mblocks: vec![BTreeSet::new(); n],
        })
    }

    pub fn thread_name(&self, t: ThreadId) -> &str {
        self.threads.get(t.0 as usize).map_or("?", |s| s.name.as_str())
    }

    /// Script finished and no event in flight.
    pub fn thread_done(&self, s: &KernelState, t: ThreadId) -> bool {
        let l = &s.locals[t.0 as usize];
        l.event.is_none() && l.script_pos as usize >= self.threads[t.0 as usize].script.len()
    }

    pub fn all_done(&self, s: &KernelState) -> bool {
        (0..self.threads.len()).all(|i| self.thread_done(s, ThreadId(i as u32)))
    }

    fn thread_step_ready(&self, s: &KernelState, t: ThreadId) -> bool {
        let script = &self.threads[t.0 as usize].script;
        if !services::step_ready(s, t, script.len()) {
            return false;
        }
        if self.strict {
            let l = &s.locals[t.0 as usize];
            if let (Some(ActiveEvent::Free { block }), Some(Pc::FreeAwait)) = (&l.event, l.pc) {
                return s.mblocks[t.0 as usize].contains(block);
            }
        }
        true
    }

    fn timer_enabled(&self, s: &KernelState) -> bool {
        match self.timer {
            TimerPolicy::Always => true,
            TimerPolicy::Bounded(n) => s.tick < n || self.has_deadline_waiter(s),
        }
    }

    fn has_deadline_waiter(&self, s: &KernelState) -> bool {
        s.locals.iter().zip(&s.thd_state).any(|(l, st)| {
            *st == ThreadState::Blocked
                && matches!(l.event, Some(ActiveEvent::Alloc { timeout: TimeoutMode::Ticks(_), .. }))
        })
    }

    /// Enabled actions in canonical order: running thread, schedules by
    /// thread id, tick.
    pub fn enabled(&self, s: &KernelState) -> Vec<Action> {
        let mut out = Vec::new();
        if let Some(t) = s.cur {
            if s.thd_state[t.0 as usize] == ThreadState::Running && self.thread_step_ready(s, t) {
                out.push(Action::Thread(t));
            }
        }
        for (i, st) in s.thd_state.iter().enumerate() {
            if *st == ThreadState::Ready && !self.thread_done(s, ThreadId(i as u32)) {
                out.push(Action::Schedule(ThreadId(i as u32)));
            }
        }
        if self.timer_enabled(s) {
            out.push(Action::Tick);
        }
        out
    }

    /// A state with nothing left to do: every script finished, or the only
    /// possible move is a tick that cannot wake anybody.
    pub fn is_terminal(&self, s: &KernelState) -> bool {
        if self.all_done(s) {
            return true;
        }
        let en = self.enabled(s);
        en.is_empty() || (en == [Action::Tick] && !self.has_deadline_waiter(s) && self.timer == TimerPolicy::Always)
    }

    /// Apply `action` to `s`, producing the successor state.
    pub fn step(&self, s: &KernelState, action: Action) -> Result<(KernelState, StepInfo), SimError> {
        if !self.enabled(s).contains(&action) {
            return Err(SimError::NotEnabled(action));
        }
        let mut next = s.clone();
        let info = match action {
            Action::Schedule(t) => {
                if let Some(c) = next.cur {
                    if next.thd_state[c.0 as usize] == ThreadState::Running {
                        next.thd_state[c.0 as usize] = ThreadState::Ready;
                    }
                }
                next.cur = Some(t);
                next.thd_state[t.0 as usize] = ThreadState::Running;
                StepInfo::simple(action, "schedule")
            }
            Action::Tick => {
                next.tick += 1;
                tick_timeouts(&mut next);
                StepInfo::simple(action, "tick")
            }
            Action::Thread(t) => {
                let script = &self.threads.get(t.0 as usize).ok_or(SimError::UnknownThread(t))?.script;
                let fx = services::exec_step(&mut next, t, script, &self.services);
                StepInfo {
                    action,
                    domain: action.domain(),
                    event: fx.event_name,
                    label: fx.label,
                    kind: fx.kind.unwrap_or(StepKind::ProgramStep),
                    started: fx.started,
                    completed: fx.completed,
                    anomalies: fx.anomalies,
                }
            }
        };
        Ok((next, info))
    }
}

impl StepInfo {
    fn simple(action: Action, event: &'static str) -> StepInfo {
        StepInfo {
            action,
            domain: action.domain(),
            event,
            label: "occur",
            kind: StepKind::EventOccur,
            started: None,
            completed: None,
            anomalies: Vec::new(),
        }
    }
}

/// Wake every waiter whose deadline has passed.
fn tick_timeouts(s: &mut KernelState) {
    for ti in 0..s.locals.len() {
        let l = &s.locals[ti];
        let expired = s.thd_state[ti] == ThreadState::Blocked
            && matches!(l.event, Some(ActiveEvent::Alloc { timeout: TimeoutMode::Ticks(_), .. }))
            && l.endt < s.tick;
        if expired {
            s.thd_state[ti] = ThreadState::Ready;
            for p in &mut s.pools {
                p.wait_q.retain(|&w| w.0 as usize != ti);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{BlockState, PoolId, POOL_A};
    use crate::services::{RetCode, TimeoutMode};

    fn one_thread(script: Vec<Op>) -> System {
        System {
            pools: vec![POOL_A],
            threads: vec![ThreadSpec { name: "t0".into(), script }],
            services: ServiceConfig::default(),
            timer: TimerPolicy::Always,
            strict: false,
        }
    }

    fn run_thread_to_end(sys: &System, mut s: KernelState) -> KernelState {
        s = sys.step(&s, Action::Schedule(ThreadId(0))).unwrap().0;
        for _ in 0..100 {
            if sys.thread_done(&s, ThreadId(0)) {
                return s;
            }
            s = sys.step(&s, Action::Thread(ThreadId(0))).unwrap().0;
        }
        panic!("thread did not finish");
    }

    #[test]
    fn initial_state_shape() {
        let sys = one_thread(vec![]);
        let s = sys.initial_state().unwrap();
        assert_eq!(s.cur, None);
        assert_eq!(s.tick, 0);
        assert_eq!(s.thd_state, vec![ThreadState::Ready]);
        assert!(sys.all_done(&s));
    }

    #[test]
    fn sequential_alloc_then_free() {
        let alloc = Op::Alloc { pool: PoolId(0), size: 50, timeout: TimeoutMode::Forever };
        let sys = one_thread(vec![alloc, Op::Free { alloc_index: 0 }]);
        let s0 = sys.initial_state().unwrap();
        let mut s = sys.step(&s0, Action::Schedule(ThreadId(0))).unwrap().0;
        // occur + scan(2 levels) + alloc_block + guard + break + guard + finish
        while s.locals[0].script_pos == 1 && s.locals[0].event.is_some() || s.locals[0].script_pos == 0 {
            s = sys.step(&s, Action::Thread(ThreadId(0))).unwrap().0;
        }
        let id = BlockId { pool: PoolId(0), level: 1, block: 0, data: 0 };
        assert_eq!(s.locals[0].ret, Some(RetCode::Ok));
        assert_eq!(s.locals[0].mempoolalloc_ret, Some(id));
        assert_eq!(s.pools[0].get_bit(1, 0), Ok(BlockState::Allocated));
        assert_eq!(s.pools[0].levels[1].free_list, vec![64, 128, 192]);
        assert!(s.mblocks[0].contains(&id));
        let end = run_thread_to_end(&sys, s0);
        assert_eq!(end.pools[0], MemPool::init(POOL_A).unwrap());
        assert!(end.mblocks[0].is_empty());
    }

    #[test]
    fn oversized_request_reports_size_error() {
        let sys = one_thread(vec![Op::Alloc { pool: PoolId(0), size: 300, timeout: TimeoutMode::Forever }]);
        let end = run_thread_to_end(&sys, sys.initial_state().unwrap());
        assert_eq!(end.locals[0].ret, Some(RetCode::Esizeerr));
        assert_eq!(end.locals[0].mempoolalloc_ret, None);
    }

    #[test]
    fn nowait_on_full_pool_reports_enomem() {
        let big = Op::Alloc { pool: PoolId(0), size: 256, timeout: TimeoutMode::Forever };
        let nowait = Op::Alloc { pool: PoolId(0), size: 256, timeout: TimeoutMode::NoWait };
        let sys = one_thread(vec![big, nowait]);
        let end = run_thread_to_end(&sys, sys.initial_state().unwrap());
        assert_eq!(end.locals[0].ret, Some(RetCode::Enomem));
    }

    #[test]
    fn schedule_preempts_running_thread() {
        let op = Op::Alloc { pool: PoolId(0), size: 50, timeout: TimeoutMode::Forever };
        let mut sys = one_thread(vec![op.clone()]);
        sys.threads.push(ThreadSpec { name: "t1".into(), script: vec![op] });
        let s = sys.initial_state().unwrap();
        let s = sys.step(&s, Action::Schedule(ThreadId(0))).unwrap().0;
        let s = sys.step(&s, Action::Schedule(ThreadId(1))).unwrap().0;
        assert_eq!(s.cur, Some(ThreadId(1)));
        assert_eq!(s.thd_state, vec![ThreadState::Ready, ThreadState::Running]);
        assert!(sys.step(&s, Action::Thread(ThreadId(0))).is_err());
    }

    #[test]
    fn tick_expires_deadline_waiters() {
        let big = Op::Alloc { pool: PoolId(0), size: 256, timeout: TimeoutMode::Forever };
        let timed = Op::Alloc { pool: PoolId(0), size: 256, timeout: TimeoutMode::Ticks(1) };
        let sys = one_thread(vec![big, timed]);
        let mut s = sys.step(&sys.initial_state().unwrap(), Action::Schedule(ThreadId(0))).unwrap().0;
        while s.thd_state[0] != ThreadState::Blocked {
            s = sys.step(&s, Action::Thread(ThreadId(0))).unwrap().0;
        }
        assert_eq!(s.pools[0].wait_q, vec![ThreadId(0)]);
        s = sys.step(&s, Action::Tick).unwrap().0;
        assert_eq!(s.thd_state[0], ThreadState::Blocked);
        s = sys.step(&s, Action::Tick).unwrap().0;
        assert_eq!(s.thd_state[0], ThreadState::Ready);
        assert!(s.pools[0].wait_q.is_empty());
        let end = run_thread_to_end(&sys, s);
        assert_eq!(end.locals[0].ret, Some(RetCode::Etimeout));
    }

    #[test]
    fn action_tokens_round_trip() {
        for a in [Action::Tick, Action::Thread(ThreadId(3)), Action::Schedule(ThreadId(0))] {
            assert_eq!(a.to_string().parse::<Action>(), Ok(a));
        }
        assert!("jump:t1".parse::<Action>().is_err());
    }

    #[test]
    fn digest_tracks_changes() {
        let sys = one_thread(vec![]);
        let s = sys.initial_state().unwrap();
        let mut t = s.clone();
        assert_eq!(s.digest(), t.digest());
        t.tick = 1;
        assert_ne!(s.digest(), t.digest());
    }
}
