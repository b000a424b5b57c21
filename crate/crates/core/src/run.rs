//! Run orchestration: seeded random runs, exhaustive breadth-first
//! exploration and trace replay, all producing a [`RunReport`].

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{Action, Domain, KernelState, SimError, StepInfo, System};
use crate::monitor::{Checks, Finding, Monitor, NONTERMINATION};
use crate::pool::{BlockId, ThreadId};
use crate::scenario::{system_digest, Mode};
use crate::services::{ActiveEvent, RetCode, TimeoutMode};
use crate::trace::{format_bugs, Trace, TraceEntry, TraceHeader};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: u64,
    pub max_steps: u64,
    pub depth_bound: u32,
    pub checks: Checks,
    pub fail_fast: bool,
    /// Random and replay runs evaluate state checks every this many steps.
    pub sample_every: u64,
    /// Exhaustive mode keeps at most this many violations per check name.
    pub keep_per_check: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: 0,
            max_steps: 10_000,
            depth_bound: 2_000,
            checks: Checks::all(),
            fail_fast: false,
            sample_every: 1,
            keep_per_check: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Trace index of the step (random, replay) or depth of the state
    /// (exhaustive). End-of-run checks use the step count.
    pub step: u64,
    pub check_name: String,
    pub witness: String,
    pub detail: String,
    pub state_digest: String,
    /// Shortest schedule reaching the violation (exhaustive mode).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventVerdict {
    Terminated,
    Pending,
    Nontermination,
}

/// One service call observed in a random or replayed run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub thread: String,
    pub event: String,
    pub start_step: u64,
    pub end_step: Option<u64>,
    /// Steps the calling thread executed for this event.
    pub own_steps: u64,
    pub ret: Option<RetCode>,
    pub block: Option<BlockId>,
    pub verdict: EventVerdict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Clean,
    Violation,
    BoundExhausted,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Clean => 0,
            Outcome::Violation => 1,
            Outcome::BoundExhausted => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_digest: String,
    pub mode: Mode,
    pub seed: u64,
    pub bugs: String,
    pub checks: Checks,
    pub states: u64,
    pub transitions: u64,
    pub max_depth: u64,
    /// Exploration or step bound reached before the run finished.
    pub bound_exhausted: bool,
    /// Replay of a truncated trace.
    pub partial: bool,
    pub violations: Vec<Violation>,
    pub violation_counts: BTreeMap<String, u64>,
    pub events: Vec<EventRecord>,
    pub outcome: Outcome,
    pub exit_code: i32,
}

impl RunReport {
    fn new(sys: &System, mode: Mode, opts: &RunOptions) -> RunReport {
        RunReport {
            scenario_digest: format!("{:016x}", system_digest(sys)),
            mode,
            seed: opts.seed,
            bugs: format_bugs(&sys.services.bugs),
            checks: opts.checks,
            states: 0,
            transitions: 0,
            max_depth: 0,
            bound_exhausted: false,
            partial: false,
            violations: Vec::new(),
            violation_counts: BTreeMap::new(),
            events: Vec::new(),
            outcome: Outcome::Clean,
            exit_code: 0,
        }
    }

    fn finish(&mut self) {
        self.outcome = if !self.violations.is_empty() {
            Outcome::Violation
        } else if self.bound_exhausted {
            Outcome::BoundExhausted
        } else {
            Outcome::Clean
        };
        self.exit_code = self.outcome.exit_code();
    }

    /// Violations with this check name.
    pub fn violations_of<'a>(&'a self, check: &'a str) -> impl Iterator<Item = &'a Violation> + 'a {
        self.violations.iter().filter(move |v| v.check_name == check)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} mode {:?} seed {} bugs {}", self.scenario_digest, self.mode, self.seed, self.bugs);
        let _ = writeln!(s, "checks {}", self.checks);
        let _ = writeln!(
            s,
            "states {} transitions {} max depth {}{}{}",
            self.states,
            self.transitions,
            self.max_depth,
            if self.bound_exhausted { " (bound exhausted)" } else { "" },
            if self.partial { " (partial trace)" } else { "" }
        );
        for e in &self.events {
            let _ = writeln!(
                s,
                "  {} {} steps {}..{} own {} ret {} {:?}",
                e.thread,
                e.event,
                e.start_step,
                e.end_step.map_or("-".into(), |x| x.to_string()),
                e.own_steps,
                e.ret.map_or("-".into(), |r| format!("{r:?}")),
                e.verdict
            );
        }
        if self.violations.is_empty() {
            let _ = writeln!(s, "no violations");
        }
        for (name, n) in &self.violation_counts {
            let _ = writeln!(s, "{name}: {n} violation(s)");
        }
        for v in &self.violations {
            let _ = writeln!(s, "  [{}] step {} at {}: {} (state {})", v.check_name, v.step, v.witness, v.detail, v.state_digest);
            if let Some(sched) = &v.schedule {
                let _ = writeln!(s, "    schedule: {}", sched.join(" "));
            }
        }
        let _ = writeln!(s, "outcome {:?} exit {}", self.outcome, self.exit_code);
        s
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("trace was recorded for scenario {found}, this scenario is {expected}")]
    ScenarioMismatch { expected: String, found: String },
    #[error("trace diverges at entry {index}: {message}")]
    Diverged { index: u64, message: String },
}

pub fn domain_token(sys: &System, d: Domain) -> String {
    match d {
        Domain::Thread(t) => format!("THREAD({})", sys.thread_name(t)),
        other => other.to_string(),
    }
}

fn describe(ev: &ActiveEvent) -> String {
    match ev {
        ActiveEvent::Alloc { pool, size, timeout } => {
            let to = match timeout {
                TimeoutMode::Forever => "FOREVER".to_string(),
                TimeoutMode::NoWait => "NOWAIT".to_string(),
                TimeoutMode::Ticks(n) => format!("TICKS({n})"),
            };
            format!("alloc({pool},{size},{to})")
        }
        ActiveEvent::Free { block } => format!("free{block}"),
    }
}

fn record(report: &mut RunReport, v: Violation, keep: usize) {
    let n = report.violation_counts.entry(v.check_name.clone()).or_insert(0);
    *n += 1;
    if *n as usize <= keep {
        report.violations.push(v);
    }
}

fn violation(sys: &System, step: u64, f: Finding, digest: u64, schedule: Option<Vec<String>>) -> Violation {
    // thread witnesses are shown by script name
    let witness = match thread_witness(&f.witness) {
        Some(t) if (t.0 as usize) < sys.threads.len() => sys.thread_name(t).to_string(),
        _ => f.witness,
    };
    Violation {
        step,
        check_name: f.check,
        witness,
        detail: f.detail,
        state_digest: format!("{digest:016x}"),
        schedule,
    }
}

/// Tracks service calls of a linear run.
struct EventLog {
    open: Vec<Option<usize>>,
    records: Vec<EventRecord>,
}

impl EventLog {
    fn new(threads: usize) -> Self {
        EventLog { open: vec![None; threads], records: Vec::new() }
    }

    fn on_step(&mut self, sys: &System, step: u64, info: &StepInfo, post: &KernelState) {
        let Action::Thread(t) = info.action else { return };
        let ti = t.0 as usize;
        if let Some(ev) = &info.started {
            self.open[ti] = Some(self.records.len());
            self.records.push(EventRecord {
                thread: sys.thread_name(t).to_string(),
                event: describe(ev),
                start_step: step,
                end_step: None,
                own_steps: 0,
                ret: None,
                block: None,
                verdict: EventVerdict::Pending,
            });
        }
        if let Some(i) = self.open[ti] {
            let r = &mut self.records[i];
            r.own_steps += 1;
            if info.completed.is_some() {
                let l = &post.locals[ti];
                r.end_step = Some(step);
                r.verdict = EventVerdict::Terminated;
                if matches!(info.completed, Some(ActiveEvent::Alloc { .. })) {
                    r.ret = l.ret;
                    r.block = l.mempoolalloc_ret;
                }
                self.open[ti] = None;
            }
        }
    }

    fn close(mut self, nonterm: &[ThreadId]) -> Vec<EventRecord> {
        for (ti, open) in self.open.iter().enumerate() {
            if let Some(i) = open {
                if nonterm.contains(&ThreadId(ti as u32)) {
                    self.records[*i].verdict = EventVerdict::Nontermination;
                }
            }
        }
        self.records
    }
}

/// Where the next action of a linear run comes from.
#[allow(clippy::large_enum_variant)]
enum Chooser<'a> {
    Random(ChaCha8Rng),
    Replay(&'a [TraceEntry]),
}

struct Linear {
    trace: Vec<TraceEntry>,
    report: RunReport,
    finished: bool,
}

/// Run one linear execution. `end_checks` enables the end-of-run checks.
fn drive(
    sys: &System,
    mode: Mode,
    opts: &RunOptions,
    mut chooser: Chooser<'_>,
    end_checks: bool,
) -> Result<Linear, RunError> {
    let monitor = Monitor::new(sys, opts.checks);
    let mut report = RunReport::new(sys, mode, opts);
    let mut log = EventLog::new(sys.threads.len());
    let mut trace = Vec::new();
    let mut s = sys.initial_state()?;
    let mut digest = s.digest();
    for f in monitor.on_state(&s) {
        record(&mut report, violation(sys, 0, f, digest, None), usize::MAX);
    }
    report.states = 1;
    let mut step = 0u64;
    let mut stopped_early = false;
    let mut stuck;
    loop {
        let enabled = sys.enabled(&s);
        stuck = enabled.is_empty();
        if sys.all_done(&s) || stuck {
            break;
        }
        let action = match &mut chooser {
            Chooser::Random(rng) => {
                if step >= opts.max_steps {
                    report.bound_exhausted = true;
                    break;
                }
                enabled[rng.gen_range(0..enabled.len())]
            }
            Chooser::Replay(entries) => {
                let Some(e) = entries.get(step as usize) else {
                    // a finished recording that stops here was cut by max_steps
                    report.bound_exhausted = end_checks;
                    break;
                };
                if e.pre_digest != digest {
                    return Err(RunError::Diverged { index: e.index, message: "pre-state digest differs".into() });
                }
                e.choice
            }
        };
        let (post, info) = sys.step(&s, action).map_err(|e| RunError::Diverged { index: step, message: e.to_string() })?;
        let post_digest = post.digest();
        trace.push(TraceEntry {
            index: step,
            domain: domain_token(sys, info.domain),
            event_name: info.name(),
            step_kind: info.kind,
            choice: action,
            pre_digest: digest,
            post_digest,
        });
        let mut findings = monitor.on_step(&s, &post, &info);
        if (step + 1).is_multiple_of(opts.sample_every.max(1)) {
            findings.extend(monitor.on_state(&post));
        }
        log.on_step(sys, step, &info, &post);
        let any = !findings.is_empty();
        for f in findings {
            record(&mut report, violation(sys, step, f, post_digest, None), usize::MAX);
        }
        report.transitions += 1;
        report.states += 1;
        s = post;
        digest = post_digest;
        step += 1;
        if any && opts.fail_fast {
            stopped_early = true;
            break;
        }
    }
    if let Chooser::Replay(entries) = chooser {
        if (step as usize) < entries.len() {
            return Err(RunError::Diverged { index: step, message: "run ended before the trace".into() });
        }
    }
    let mut nonterm = Vec::new();
    let finished = !stopped_early;
    if finished && end_checks {
        for f in monitor.on_end(&s, stuck) {
            nonterm.extend(nonterm_thread(&f));
            record(&mut report, violation(sys, step, f, digest, None), usize::MAX);
        }
    }
    report.max_depth = step;
    report.events = log.close(&nonterm);
    Ok(Linear { trace, report, finished })
}

fn nonterm_thread(f: &Finding) -> Option<ThreadId> {
    if f.check != NONTERMINATION {
        return None;
    }
    thread_witness(&f.witness)
}

fn thread_witness(w: &str) -> Option<ThreadId> {
    w.strip_prefix('t')?.parse().ok().map(ThreadId)
}

fn header(sys: &System, opts: &RunOptions) -> TraceHeader {
    TraceHeader {
        scenario: system_digest(sys),
        version: VERSION.to_string(),
        timer: sys.timer,
        bugs: sys.services.bugs,
        checks: opts.checks,
    }
}

/// Seeded random run: picks uniformly among enabled actions until every
/// script is done, nothing is enabled, or `max_steps` is reached.
pub fn run_random(sys: &System, opts: &RunOptions) -> Result<(Trace, RunReport), RunError> {
    let rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lin = drive(sys, Mode::Random, opts, Chooser::Random(rng), true)?;
    let mut report = lin.report;
    report.finish();
    let trace = Trace { header: header(sys, opts), entries: lin.trace, finished: lin.finished, complete: true };
    Ok((trace, report))
}

/// Re-execute a recorded trace. The caller builds `sys` with the trace's
/// timer and bug settings; the scenario digest must match.
pub fn replay(sys: &System, trace: &Trace, opts: &RunOptions) -> Result<RunReport, RunError> {
    let expected = format!("{:016x}", system_digest(sys));
    let found = format!("{:016x}", trace.header.scenario);
    if expected != found {
        return Err(RunError::ScenarioMismatch { expected, found });
    }
    let opts = RunOptions { max_steps: u64::MAX, fail_fast: false, ..*opts };
    let end_checks = trace.complete && trace.finished;
    let lin = drive(sys, Mode::Replay, &opts, Chooser::Replay(&trace.entries), end_checks)?;
    for (got, want) in lin.trace.iter().zip(&trace.entries) {
        if got != want {
            return Err(RunError::Diverged { index: want.index, message: format!("recorded {want:?}, replayed {got:?}") });
        }
    }
    let mut report = lin.report;
    report.partial = !trace.complete;
    report.finish();
    Ok(report)
}

/// Breadth-first exploration of every interleaving up to `depth_bound`
/// steps. Every transition is checked, including those into states seen
/// before; reported schedules are shortest paths.
pub fn explore(sys: &System, opts: &RunOptions) -> Result<RunReport, RunError> {
    let monitor = Monitor::new(sys, opts.checks);
    let mut report = RunReport::new(sys, Mode::Exhaustive, opts);
    let init = sys.initial_state()?;
    let root = init.digest();
    // digest -> (parent digest, action, depth)
    let mut seen: HashMap<u64, (u64, Option<Action>, u32)> = HashMap::new();
    seen.insert(root, (root, None, 0));
    let schedule_to = |seen: &HashMap<u64, (u64, Option<Action>, u32)>, mut d: u64| {
        let mut path = Vec::new();
        while let Some((parent, Some(a), _)) = seen.get(&d) {
            path.push(*a);
            d = *parent;
        }
        path.reverse();
        path
    };
    let show = |path: Vec<Action>| -> Vec<String> {
        path.into_iter()
            .map(|a| match a {
                Action::Thread(t) => format!("step:{}", sys.thread_name(t)),
                Action::Schedule(t) => format!("schedule:{}", sys.thread_name(t)),
                Action::Tick => "tick".into(),
            })
            .collect()
    };
    let keep = if opts.fail_fast { 1 } else { opts.keep_per_check };
    for f in monitor.on_state(&init) {
        record(&mut report, violation(sys, 0, f, root, Some(Vec::new())), keep);
    }
    let mut frontier = VecDeque::from([init]);
    report.states = 1;
    'outer: while let Some(s) = frontier.pop_front() {
        let d = s.digest();
        let depth = seen[&d].2;
        report.max_depth = report.max_depth.max(depth as u64);
        let enabled = sys.enabled(&s);
        if sys.all_done(&s) || enabled.is_empty() {
            for f in monitor.on_end(&s, enabled.is_empty()) {
                record(&mut report, violation(sys, depth as u64, f, d, Some(show(schedule_to(&seen, d)))), keep);
            }
            continue;
        }
        if depth >= opts.depth_bound {
            report.bound_exhausted = true;
            continue;
        }
        for a in enabled {
            let (post, info) = sys.step(&s, a)?;
            report.transitions += 1;
            let pd = post.digest();
            let mut findings = monitor.on_step(&s, &post, &info);
            let fresh = !seen.contains_key(&pd);
            if fresh {
                seen.insert(pd, (d, Some(a), depth + 1));
                report.states += 1;
                findings.extend(monitor.on_state(&post));
            }
            if !findings.is_empty() {
                let mut path = schedule_to(&seen, d);
                path.push(a);
                let sched = show(path);
                for f in findings {
                    record(&mut report, violation(sys, depth as u64 + 1, f, pd, Some(sched.clone())), keep);
                }
                if opts.fail_fast {
                    break 'outer;
                }
            }
            if fresh {
                frontier.push_back(post);
            }
        }
    }
    report.finish();
    Ok(report)
}
