// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration, read from JSON.
//!
//! Every field has a default, so `{"seed": 7}` is a complete config that
//! runs the standard sweep. Unknown fields are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::CostModel;
use crate::contract::{Function, Genesis, GenesisError};
use crate::ibft::IbftConfig;
use crate::netsim::{FaultAction, Topology};
use crate::raft::RaftConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Genesis(#[from] GenesisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusKind {
    Raft,
    Ibft,
}

impl ConsensusKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConsensusKind::Raft => "raft",
            ConsensusKind::Ibft => "ibft",
        }
    }
}

impl fmt::Display for ConsensusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConsensusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "raft" => Ok(ConsensusKind::Raft),
            "ibft" => Ok(ConsensusKind::Ibft),
            other => Err(format!("unknown consensus {other:?}, expected raft or ibft")),
        }
    }
}

/// Proportions of the three contract functions in a round.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mix {
    pub add_network_provider: f64,
    pub request_resources: f64,
    pub return_resources: f64,
}

impl Mix {
    pub fn only(f: Function) -> Self {
        let mut mix = Mix::default();
        match f {
            Function::AddNetworkProvider => mix.add_network_provider = 1.0,
            Function::RequestResources => mix.request_resources = 1.0,
            Function::ReturnResources => mix.return_resources = 1.0,
        }
        mix
    }

    pub fn weight(&self, f: Function) -> f64 {
        match f {
            Function::AddNetworkProvider => self.add_network_provider,
            Function::RequestResources => self.request_resources,
            Function::ReturnResources => self.return_resources,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let w = [self.add_network_provider, self.request_resources, self.return_resources];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(format!("mix weights must be non-negative: {self:?}"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("mix weights sum to {sum}, expected 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundSpec {
    pub name: String,
    pub mix: Mix,
}

impl RoundSpec {
    pub fn single(f: Function) -> Self {
        RoundSpec { name: f.name().to_owned(), mix: Mix::only(f) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Input transaction rates to sweep, in transactions per second.
    pub itrs: Vec<f64>,
    pub duration_s: f64,
    /// Time before the first injection, left to elections and startup.
    pub warmup_s: f64,
    pub tx_timeout_s: f64,
    /// Extra simulated time after the last deadline, before the drain.
    pub grace_s: f64,
    pub rounds: Vec<RoundSpec>,
    /// Providers registered at genesis by the default fixture.
    pub registry_size: usize,
    /// Fraction of `request_resources` calls that underpay.
    pub insufficient_payment_fraction: f64,
    /// Fraction of `request_resources` calls no provider can serve.
    pub no_match_fraction: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            itrs: vec![2.0, 5.0, 10.0, 20.0, 40.0, 60.0],
            duration_s: 60.0,
            warmup_s: 5.0,
            tx_timeout_s: 60.0,
            grace_s: 5.0,
            rounds: vec![
                RoundSpec::single(Function::AddNetworkProvider),
                RoundSpec::single(Function::RequestResources),
                RoundSpec::single(Function::ReturnResources),
                RoundSpec {
                    name: "mixed".into(),
                    mix: Mix { add_network_provider: 0.1, request_resources: 0.6, return_resources: 0.3 },
                },
            ],
            registry_size: 5,
            insufficient_payment_fraction: 0.0,
            no_match_fraction: 0.0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.itrs.is_empty() || self.itrs.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err("workload itrs must be a non-empty list of positive rates".into());
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let non_negative = |x: f64| x.is_finite() && x >= 0.0;
        if !positive(self.duration_s) || !positive(self.tx_timeout_s) {
            return Err("workload duration_s and tx_timeout_s must be positive".into());
        }
        if !non_negative(self.warmup_s) || !non_negative(self.grace_s) {
            return Err("workload warmup_s and grace_s must be non-negative".into());
        }
        if self.rounds.is_empty() {
            return Err("workload needs at least one round".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for round in &self.rounds {
            round.mix.validate().map_err(|e| format!("round {}: {e}", round.name))?;
            let safe = !round.name.is_empty()
                && round.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !safe {
                return Err(format!("round name {:?} must be [A-Za-z0-9_-]+", round.name));
            }
            if !names.insert(round.name.as_str()) {
                return Err(format!("duplicate round name {}", round.name));
            }
        }
        let frac = self.insufficient_payment_fraction + self.no_match_fraction;
        if !non_negative(self.insufficient_payment_fraction) || !non_negative(self.no_match_fraction) || frac > 1.0 {
            return Err("fault payload fractions must be in [0,1] and sum to at most 1".into());
        }
        Ok(())
    }

    /// Number of injections in one round: `floor(itr * duration)`.
    pub fn injections(&self, itr: f64) -> u64 {
        (itr * self.duration_s + 1e-9).floor() as u64
    }
}

/// A fault applied at a fixed simulated time in every cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledFault {
    pub at_ms: u64,
    pub action: FaultAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub consensus: Vec<ConsensusKind>,
    pub topology: Topology,
    pub cost_model: CostModel,
    pub raft: RaftConfig,
    pub ibft: IbftConfig,
    pub workload: WorkloadConfig,
    /// Genesis JSON replacing the built-in fixture; relative paths are
    /// resolved against the config file's directory.
    pub genesis_file: Option<PathBuf>,
    pub dump_ledgers: bool,
    pub faults: Vec<ScheduledFault>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: None,
            consensus: vec![ConsensusKind::Raft, ConsensusKind::Ibft],
            topology: Topology::default(),
            cost_model: CostModel::default(),
            raft: RaftConfig::default(),
            ibft: IbftConfig::default(),
            workload: WorkloadConfig::default(),
            genesis_file: None,
            dump_ledgers: false,
            faults: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: shown, source })?;
        if let Some(g) = &cfg.genesis_file {
            if g.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.genesis_file = Some(base.join(g));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = ConfigError::Invalid;
        if self.consensus.is_empty() {
            return Err(invalid("consensus list is empty".into()));
        }
        self.topology.validate().map_err(|e| invalid(e.to_string()))?;
        self.cost_model.validate().map_err(invalid)?;
        self.raft.validate().map_err(invalid)?;
        self.ibft.validate().map_err(invalid)?;
        self.workload.validate().map_err(invalid)?;
        for f in &self.faults {
            if f.action.node() >= self.topology.len() {
                return Err(invalid(format!("fault targets unknown node {}", f.action.node())));
            }
        }
        if let Some(path) = &self.genesis_file {
            Genesis::load(path)?.build()?;
        }
        Ok(())
    }
}
