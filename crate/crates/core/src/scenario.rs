//! Scenario files: pools, thread scripts and run settings, as JSON.

use std::collections::{HashMap, HashSet};
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{System, ThreadSpec, TimerPolicy};
use crate::monitor::Checks;
use crate::pool::{PoolConfig, PoolId};
use crate::services::{BugConfig, FaultConfig, Op, ServiceConfig, TimeoutMode};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Random,
    Exhaustive,
    Replay,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "random" => Ok(Mode::Random),
            "exhaustive" => Ok(Mode::Exhaustive),
            "replay" => Ok(Mode::Replay),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub pool_id: String,
    /// Base address; pools without one are placed after the others.
    #[serde(default)]
    pub buf: Option<u64>,
    pub max_sz: u64,
    pub n_max: u64,
    pub n_levels: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScriptOp {
    Alloc { pool: String, size: u64, timeout: TimeoutMode },
    Free { alloc_index: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadScript {
    pub id: String,
    pub script: Vec<ScriptOp>,
}

fn default_max_steps() -> u64 {
    10_000
}

fn default_depth() -> u32 {
    2_000
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub pools: Vec<PoolSpec>,
    pub threads: Vec<ThreadScript>,
    #[serde(default)]
    pub bugs: BugConfig,
    #[serde(default)]
    pub faults: FaultConfig,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_depth")]
    pub depth_bound: u32,
    /// Exhaustive mode only: ticks allowed while nobody waits on a deadline.
    #[serde(default)]
    pub max_ticks: u64,
    /// Frees also require the block to be in the caller's `mblocks`.
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario at {path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { path: path.into(), message: message.into() }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Scenario::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    /// Check references and pool layout, and assign missing base addresses.
    pub fn validate(&mut self) -> Result<(), ScenarioError> {
        let mut names = HashSet::new();
        for (i, p) in self.pools.iter().enumerate() {
            check_token(&p.pool_id, &format!("pools[{i}].pool_id"))?;
            if !names.insert(p.pool_id.as_str()) {
                return Err(invalid(format!("pools[{i}].pool_id"), format!("duplicate pool {:?}", p.pool_id)));
            }
            self.pool_config(i).validate().map_err(|e| invalid(format!("pools[{i}]"), e.to_string()))?;
        }
        let mut next = self.pools.iter().filter_map(|p| p.buf.map(|b| b + p.n_max * p.max_sz)).max().unwrap_or(0);
        for i in 0..self.pools.len() {
            let p = &mut self.pools[i];
            if p.buf.is_none() {
                p.buf = Some(next);
                next = next.saturating_add(p.n_max * p.max_sz);
                self.pool_config(i).validate().map_err(|e| invalid(format!("pools[{i}].buf"), e.to_string()))?;
            }
        }
        for i in 0..self.pools.len() {
            for j in i + 1..self.pools.len() {
                let (a, b) = (self.pool_config(i), self.pool_config(j));
                if a.buf < b.end() && b.buf < a.end() {
                    return Err(invalid(
                        format!("pools[{j}].buf"),
                        format!("window overlaps pool {:?} (inv_pools_notoverlap)", self.pools[i].pool_id),
                    ));
                }
            }
        }

        let pool_names: HashMap<&str, usize> =
            self.pools.iter().enumerate().map(|(i, p)| (p.pool_id.as_str(), i)).collect();
        let mut ids = HashSet::new();
        for (ti, t) in self.threads.iter().enumerate() {
            check_token(&t.id, &format!("threads[{ti}].id"))?;
            if !ids.insert(t.id.as_str()) {
                return Err(invalid(format!("threads[{ti}].id"), format!("duplicate thread {:?}", t.id)));
            }
            let mut allocs = 0usize;
            let mut freed = HashSet::new();
            for (k, op) in t.script.iter().enumerate() {
                let at = format!("threads[{ti}].script[{k}]");
                match op {
                    ScriptOp::Alloc { pool, timeout, .. } => {
                        if !pool_names.contains_key(pool.as_str()) {
                            return Err(invalid(format!("{at}.pool"), format!("unknown pool {pool:?}")));
                        }
                        if *timeout == TimeoutMode::Ticks(0) {
                            return Err(invalid(format!("{at}.timeout"), "TICKS needs at least one tick"));
                        }
                        allocs += 1;
                    }
                    ScriptOp::Free { alloc_index } => {
                        if *alloc_index >= allocs {
                            return Err(invalid(
                                format!("{at}.alloc_index"),
                                format!("no earlier Alloc number {alloc_index} in this script"),
                            ));
                        }
                        if !freed.insert(*alloc_index) {
                            return Err(invalid(format!("{at}.alloc_index"), "allocation freed twice"));
                        }
                    }
                }
            }
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps", "must be positive"));
        }
        Ok(())
    }

    fn pool_config(&self, i: usize) -> PoolConfig {
        let p = &self.pools[i];
        PoolConfig::new(PoolId(i as u32), p.buf.unwrap_or(0), p.max_sz, p.n_max, p.n_levels)
    }

    /// The static system for a run in `mode`. Random and replayed runs use
    /// a free-running timer; exhaustive runs bound idle ticks.
    pub fn system(&self, mode: Mode, bugs: BugConfig) -> System {
        let pool_index: HashMap<&str, u32> =
            self.pools.iter().enumerate().map(|(i, p)| (p.pool_id.as_str(), i as u32)).collect();
        let threads = self
            .threads
            .iter()
            .map(|t| ThreadSpec {
                name: t.id.clone(),
                script: t
                    .script
                    .iter()
                    .map(|op| match op {
                        ScriptOp::Alloc { pool, size, timeout } => {
                            Op::Alloc { pool: PoolId(pool_index[pool.as_str()]), size: *size, timeout: *timeout }
                        }
                        ScriptOp::Free { alloc_index } => Op::Free { alloc_index: *alloc_index },
                    })
                    .collect(),
            })
            .collect();
        System {
            pools: (0..self.pools.len()).map(|i| self.pool_config(i)).collect(),
            threads,
            services: ServiceConfig { bugs, faults: self.faults },
            timer: match mode {
                Mode::Exhaustive => TimerPolicy::Bounded(self.max_ticks),
                Mode::Random | Mode::Replay => TimerPolicy::Always,
            },
            strict: self.strict,
        }
    }
}

fn check_token(s: &str, path: &str) -> Result<(), ScenarioError> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '(' || c == ')') {
        return Err(invalid(path, format!("{s:?} must be non-empty without spaces or parentheses")));
    }
    Ok(())
}

/// Fingerprint of everything that determines a run's transitions.
pub fn system_digest(sys: &System) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    sys.hash(&mut h);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "pools": [{"pool_id": "A", "max_sz": 256, "n_max": 1, "n_levels": 2}],
        "threads": [{"id": "t1", "script": [
            {"Alloc": {"pool": "A", "size": 50, "timeout": "FOREVER"}},
            {"Alloc": {"pool": "A", "size": 10, "timeout": {"TICKS": 3}}},
            {"Free": {"alloc_index": 0}}
        ]}]
    }"#;

    #[test]
    fn parses_with_defaults() {
        let sc = Scenario::from_json(BASE).unwrap();
        assert_eq!(sc.pools[0].buf, Some(0));
        assert_eq!(sc.max_steps, 10_000);
        assert_eq!(sc.checks, Checks::all());
        assert_eq!(sc.bugs, BugConfig::none());
        let sys = sc.system(Mode::Random, sc.bugs);
        assert_eq!(sys.threads[0].script[1], Op::Alloc { pool: PoolId(0), size: 10, timeout: TimeoutMode::Ticks(3) });
    }

    #[test]
    fn dangling_free_is_rejected_with_path() {
        let text = BASE.replace(r#""alloc_index": 0"#, r#""alloc_index": 5"#);
        match Scenario::from_json(&text) {
            Err(ScenarioError::Invalid { path, .. }) => assert_eq!(path, "threads[0].script[2].alloc_index"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overlapping_pools_are_rejected() {
        let text = BASE.replace(
            r#""n_levels": 2}]"#,
            r#""n_levels": 2, "buf": 0}, {"pool_id": "B", "buf": 128, "max_sz": 64, "n_max": 2, "n_levels": 2}]"#,
        );
        let err = Scenario::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("inv_pools_notoverlap"), "{err}");
    }

    #[test]
    fn auto_placement_avoids_overlap() {
        let text = BASE.replace(
            r#""n_levels": 2}]"#,
            r#""n_levels": 2}, {"pool_id": "B", "max_sz": 64, "n_max": 2, "n_levels": 2}]"#,
        );
        let sc = Scenario::from_json(&text).unwrap();
        assert_eq!(sc.pools[1].buf, Some(256));
    }

    #[test]
    fn bad_field_reports_path() {
        let text = BASE.replace(r#""size": 50"#, r#""size": "big""#);
        match Scenario::from_json(&text) {
            Err(ScenarioError::Parse { path, .. }) => assert!(path.starts_with("threads[0].script[0]"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_pool_config_is_rejected() {
        let text = BASE.replace(r#""max_sz": 256"#, r#""max_sz": 100"#);
        assert!(matches!(Scenario::from_json(&text), Err(ScenarioError::Invalid { .. })));
    }
}
