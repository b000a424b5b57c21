//! Runs the selected checkers over states and transitions of a run.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernel::{Domain, KernelState, StepInfo, System};
use crate::pool::{align4, ThreadId};
use crate::safety::{self, SafetyCheck};
use crate::security;
use crate::services::{ActiveEvent, Pc, TimeoutMode};

/// Check families that can be switched on and off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckFamily {
    Invariants,
    MemPart,
    Integrity,
    Guarantee,
    Rely,
    Postconditions,
    Termination,
}

impl CheckFamily {
    pub const ALL: [CheckFamily; 7] = [
        CheckFamily::Invariants,
        CheckFamily::MemPart,
        CheckFamily::Integrity,
        CheckFamily::Guarantee,
        CheckFamily::Rely,
        CheckFamily::Postconditions,
        CheckFamily::Termination,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckFamily::Invariants => "invariants",
            CheckFamily::MemPart => "mem_part",
            CheckFamily::Integrity => "integrity",
            CheckFamily::Guarantee => "guarantee",
            CheckFamily::Rely => "rely",
            CheckFamily::Postconditions => "postconditions",
            CheckFamily::Termination => "termination",
        }
    }
}

impl FromStr for CheckFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        CheckFamily::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown check family {s:?}"))
    }
}

/// A set of enabled check families. Serialised as a list of names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Checks(u8);

impl TryFrom<Vec<String>> for Checks {
    type Error = String;

    fn try_from(v: Vec<String>) -> Result<Checks, String> {
        Checks::from_list(&v)
    }
}

impl From<Checks> for Vec<String> {
    fn from(c: Checks) -> Vec<String> {
        c.families().map(|f| f.name().to_string()).collect()
    }
}

impl Checks {
    pub fn all() -> Checks {
        Checks(0x7f)
    }

    pub fn none() -> Checks {
        Checks(0)
    }

    pub fn has(self, c: CheckFamily) -> bool {
        self.0 & (1 << c as u8) != 0
    }

    pub fn with(self, c: CheckFamily) -> Checks {
        Checks(self.0 | 1 << c as u8)
    }

    pub fn families(self) -> impl Iterator<Item = CheckFamily> {
        CheckFamily::ALL.into_iter().filter(move |c| self.has(*c))
    }

    pub fn from_list<S: AsRef<str>>(items: &[S]) -> Result<Checks, String> {
        items.iter().try_fold(Checks::none(), |acc, s| Ok(acc.with(s.as_ref().parse()?)))
    }
}

impl Default for Checks {
    fn default() -> Self {
        Checks::all()
    }
}

impl fmt::Display for Checks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.families().map(CheckFamily::name).collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for Checks {
    type Err = String;

    fn from_str(s: &str) -> Result<Checks, String> {
        match s {
            "all" => Ok(Checks::all()),
            "none" => Ok(Checks::none()),
            _ => Checks::from_list(&s.split(',').map(str::trim).collect::<Vec<_>>()),
        }
    }
}

/// A single failed check, before it is tied to a position in a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub check: String,
    pub witness: String,
    pub detail: String,
}

impl Finding {
    fn new(check: impl Into<String>, witness: impl ToString, detail: impl Into<String>) -> Finding {
        Finding { check: check.into(), witness: witness.to_string(), detail: detail.into() }
    }
}

pub const NONTERMINATION: &str = "NONTERMINATION";

pub struct Monitor<'a> {
    pub sys: &'a System,
    pub checks: Checks,
}

impl<'a> Monitor<'a> {
    pub fn new(sys: &'a System, checks: Checks) -> Self {
        Monitor { sys, checks }
    }

    /// State predicates: the invariant families, `mem_part` and the
    /// implication between them.
    pub fn on_state(&self, s: &KernelState) -> Vec<Finding> {
        let mut out = Vec::new();
        if self.checks.has(CheckFamily::Invariants) {
            for c in SafetyCheck::INVARIANTS {
                if let Err(f) = c.run(s) {
                    out.push(Finding::new(c.name(), f.witness, f.detail));
                }
            }
        }
        if self.checks.has(CheckFamily::MemPart) {
            if let Err(f) = safety::check_mem_part(s) {
                out.push(Finding::new("mem_part", &f.witness, f.detail));
            }
            if let Err(f) = safety::check_theorem1(s) {
                out.push(Finding::new("theorem1", f.witness, f.detail));
            }
        }
        out
    }

    /// Transition predicates for the step `pre -> post` described by `info`.
    pub fn on_step(&self, pre: &KernelState, post: &KernelState, info: &StepInfo) -> Vec<Finding> {
        let mut out = Vec::new();
        let da = info.domain;
        if self.checks.has(CheckFamily::Invariants) {
            for a in &info.anomalies {
                out.push(Finding::new("consistency", da, a.clone()));
            }
        }
        if self.checks.has(CheckFamily::Integrity) {
            if let Err(f) = security::check_step_integrity(da, pre, post) {
                out.push(Finding::new("integrity", f.witness, f.detail));
            }
            if let Err(f) = security::check_event_integrity(da, pre, post) {
                out.push(Finding::new("event_integrity", f.witness, f.detail));
            }
        }
        let guar_ok = security::guar(da, pre, post);
        if self.checks.has(CheckFamily::Guarantee) {
            if let Err(f) = &guar_ok {
                out.push(Finding::new("guarantee", &f.witness, f.detail.clone()));
            }
        }
        if self.checks.has(CheckFamily::Rely) {
            for t in 0..pre.thread_count() {
                let t = ThreadId(t as u32);
                if da == Domain::Thread(t) {
                    continue;
                }
                if let Err(f) = security::mem_pool_rely(t, pre, post) {
                    out.push(Finding::new("rely", f.witness, format!("{da} step: {}", f.detail)));
                    if guar_ok.is_ok() {
                        out.push(Finding::new("rely_duality", t, format!("{da} step within its guarantee breaks the rely of {t}")));
                    }
                }
            }
        }
        if let Domain::Thread(t) = da {
            if self.checks.has(CheckFamily::Postconditions) {
                if info.started.is_some() {
                    if let Err(f) = security::check_precondition(t, pre) {
                        out.push(Finding::new("precondition", f.witness, f.detail));
                    }
                }
                if let Some(ev) = &info.completed {
                    if let Err(f) = security::check_postcondition(t, ev, post) {
                        out.push(Finding::new("postcondition", f.witness, f.detail));
                    }
                }
            }
            if self.checks.has(CheckFamily::Termination) {
                let l = &post.locals[t.0 as usize];
                if let Some(ActiveEvent::Free { block }) = &l.event {
                    if l.free_iters > block.level + 1 {
                        out.push(Finding::new(
                            "free_loop_bound",
                            t,
                            format!("{} iterations freeing a level {} block", l.free_iters, block.level),
                        ));
                    }
                }
            }
        }
        out
    }

    /// Checks on the last state of a run. `stuck` means nothing is enabled
    /// any more; otherwise the run was cut off by a bound.
    pub fn on_end(&self, s: &KernelState, stuck: bool) -> Vec<Finding> {
        let mut out = Vec::new();
        if !self.checks.has(CheckFamily::Termination) {
            return out;
        }
        for (t, l) in s.locals.iter().enumerate() {
            let t = ThreadId(t as u32);
            let Some(ActiveEvent::Alloc { pool, size, timeout }) = &l.event else { continue };
            let max = s.pools.get(pool.0 as usize).map_or(0, |p| align4(p.config.max_sz));
            // an oversized request that already went round once and kept waiting
            if *size > max && l.ret.is_some() {
                out.push(Finding::new(
                    NONTERMINATION,
                    t,
                    format!("alloc({size}) larger than any block never returns ({})", pc_name(l.pc)),
                ));
            } else if stuck && *timeout != TimeoutMode::Forever {
                out.push(Finding::new(
                    NONTERMINATION,
                    t,
                    format!("{timeout:?} alloc({size}) still running with nothing left to happen"),
                ));
            }
        }
        out
    }
}

fn pc_name(pc: Option<Pc>) -> String {
    pc.map_or("idle".to_string(), |p| format!("{p:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_list_parsing() {
        assert_eq!("all".parse::<Checks>(), Ok(Checks::all()));
        assert_eq!("none".parse::<Checks>(), Ok(Checks::none()));
        let c: Checks = "rely,mem_part".parse().unwrap();
        assert!(c.has(CheckFamily::Rely) && c.has(CheckFamily::MemPart));
        assert!(!c.has(CheckFamily::Integrity));
        assert_eq!(c.to_string(), "mem_part,rely");
        assert!("bogus".parse::<Checks>().is_err());
        assert_eq!(Checks::all().families().count(), 7);
    }
}
