//! Line-oriented trace files.
//!
//! ```text
//! # quadpool-trace v1 scenario=<hex> version=<v> timer=<policy> bugs=<list> checks=<list>
//! <index> <domain> <event_name> <step_kind> <choice> <pre_digest> <post_digest>
//! ...
//! # end steps=<n> final=<0|1>
//! ```
//! A file without the end line is a truncated trace.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{Action, TimerPolicy};
use crate::monitor::Checks;
use crate::services::{BugConfig, StepKind};

pub const TRACE_MAGIC: &str = "quadpool-trace v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: u64,
    /// `SCHEDULER`, `TIMER` or `THREAD(<name>)`.
    pub domain: String,
    /// `<event>:<step label>`.
    pub event_name: String,
    pub step_kind: StepKind,
    pub choice: Action,
    pub pre_digest: u64,
    pub post_digest: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario: u64,
    pub version: String,
    pub timer: TimerPolicy,
    pub bugs: BugConfig,
    pub checks: Checks,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub entries: Vec<TraceEntry>,
    /// The run ended normally (rather than on --fail-fast), so its end-of-run
    /// checks were evaluated.
    pub finished: bool,
    /// The end line was present.
    pub complete: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing trace header")]
    NoHeader,
}

pub fn format_bugs(b: &BugConfig) -> String {
    let mut v = Vec::new();
    if b.bug1_split {
        v.push("bug1");
    }
    if b.bug2_forever_eagain {
        v.push("bug2");
    }
    if b.bug3_nonterm {
        v.push("bug3");
    }
    if v.is_empty() {
        "none".into()
    } else {
        v.join(",")
    }
}

/// Parse `none`, `all` or a comma list of `bug1`, `bug2`, `bug3`.
pub fn parse_bugs(s: &str) -> Result<BugConfig, String> {
    match s {
        "none" => return Ok(BugConfig::none()),
        "all" => return Ok(BugConfig::all()),
        _ => {}
    }
    let mut b = BugConfig::none();
    for item in s.split(',').map(str::trim) {
        match item {
            "bug1" => b.bug1_split = true,
            "bug2" => b.bug2_forever_eagain = true,
            "bug3" => b.bug3_nonterm = true,
            _ => return Err(format!("unknown bug {item:?} (expected bug1, bug2, bug3, none or all)")),
        }
    }
    Ok(b)
}

fn parse_timer(s: &str) -> Option<TimerPolicy> {
    match s {
        "always" => Some(TimerPolicy::Always),
        _ => s.strip_prefix("bounded:")?.parse().ok().map(TimerPolicy::Bounded),
    }
}

impl Trace {
    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut out = format!(
            "# {TRACE_MAGIC} scenario={:016x} version={} timer={} bugs={} checks={}\n",
            h.scenario,
            h.version,
            h.timer,
            format_bugs(&h.bugs),
            h.checks
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {:016x} {:016x}",
                e.index,
                e.domain,
                e.event_name,
                e.step_kind.as_str(),
                e.choice,
                e.pre_digest,
                e.post_digest
            );
        }
        let _ = writeln!(out, "# end steps={} final={}", self.entries.len(), u8::from(self.finished));
        out
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TraceError::NoHeader)?;
        let header = parse_header(first)?;
        let mut entries = Vec::new();
        let mut complete = false;
        let mut finished = false;
        for (n, line) in lines {
            let line_no = n + 1;
            let err = |m: &str| TraceError::Syntax { line: line_no, message: m.to_string() };
            if let Some(rest) = line.strip_prefix("# end") {
                complete = true;
                finished = rest.split_whitespace().any(|f| f == "final=1");
                break;
            }
            if line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(err("expected 7 fields"));
            }
            let hex = |s: &str| u64::from_str_radix(s, 16).map_err(|_| err("bad digest"));
            entries.push(TraceEntry {
                index: f[0].parse().map_err(|_| err("bad index"))?,
                domain: f[1].to_string(),
                event_name: f[2].to_string(),
                step_kind: StepKind::parse(f[3]).ok_or_else(|| err("bad step kind"))?,
                choice: f[4].parse().map_err(|e: String| err(&e))?,
                pre_digest: hex(f[5])?,
                post_digest: hex(f[6])?,
            });
        }
        Ok(Trace { header, entries, finished, complete })
    }
}

fn parse_header(line: &str) -> Result<TraceHeader, TraceError> {
    let err = |m: &str| TraceError::Syntax { line: 1, message: m.to_string() };
    let body = line.strip_prefix('#').map(str::trim).ok_or(TraceError::NoHeader)?;
    let rest = body.strip_prefix(TRACE_MAGIC).ok_or(TraceError::NoHeader)?;
    let mut scenario = None;
    let mut version = None;
    let mut timer = None;
    let mut bugs = BugConfig::none();
    let mut checks = Checks::all();
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| err("expected key=value"))?;
        match k {
            "scenario" => scenario = Some(u64::from_str_radix(v, 16).map_err(|_| err("bad scenario digest"))?),
            "version" => version = Some(v.to_string()),
            "timer" => timer = Some(parse_timer(v).ok_or_else(|| err("bad timer"))?),
            "bugs" => bugs = parse_bugs(v).map_err(|e| err(&e))?,
            "checks" => checks = v.parse().map_err(|e: String| err(&e))?,
            _ => {}
        }
    }
    Ok(TraceHeader {
        scenario: scenario.ok_or_else(|| err("missing scenario"))?,
        version: version.ok_or_else(|| err("missing version"))?,
        timer: timer.ok_or_else(|| err("missing timer"))?,
        bugs,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::ThreadId;

    fn sample() -> Trace {
        Trace {
            header: TraceHeader {
                scenario: 0xabc,
                version: "0.1.0".into(),
                timer: TimerPolicy::Bounded(2),
                bugs: BugConfig { bug2_forever_eagain: true, ..BugConfig::none() },
                checks: "rely,termination".parse().unwrap(),
            },
            entries: vec![
                TraceEntry {
                    index: 0,
                    domain: "SCHEDULER".into(),
                    event_name: "schedule:occur".into(),
                    step_kind: StepKind::EventOccur,
                    choice: Action::Schedule(ThreadId(1)),
                    pre_digest: 1,
                    post_digest: u64::MAX,
                },
                TraceEntry {
                    index: 1,
                    domain: "THREAD(t1)".into(),
                    event_name: "alloc:scan".into(),
                    step_kind: StepKind::ProgramStep,
                    choice: Action::Thread(ThreadId(1)),
                    pre_digest: u64::MAX,
                    post_digest: 7,
                },
            ],
            finished: true,
            complete: true,
        }
    }

    #[test]
    fn text_round_trip() {
        let t = sample();
        assert_eq!(Trace::parse(&t.to_text()), Ok(t));
    }

    #[test]
    fn truncated_trace_is_incomplete() {
        let text = sample().to_text();
        let cut: Vec<&str> = text.lines().take(2).collect();
        let t = Trace::parse(&cut.join("\n")).unwrap();
        assert!(!t.complete);
        assert_eq!(t.entries.len(), 1);
    }

    #[test]
    fn bug_lists() {
        assert_eq!(parse_bugs("all"), Ok(BugConfig::all()));
        assert_eq!(parse_bugs("bug1,bug3").map(|b| format_bugs(&b)), Ok("bug1,bug3".into()));
        assert!(parse_bugs("bug4").is_err());
    }

    #[test]
    fn garbage_is_rejected() {
        assert_eq!(Trace::parse(""), Err(TraceError::NoHeader));
        let mut text = sample().to_text();
        text.insert_str(text.find('\n').unwrap() + 1, "0 SCHEDULER x\n");
        assert!(matches!(Trace::parse(&text), Err(TraceError::Syntax { .. })));
    }
}
