// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Benchmark harness: one simulation per (consensus, ITR, round) cell.
//!
//! Each cell builds a fresh genesis, starts five nodes, lets the network
//! settle during the warm-up, injects the round's transactions at a fixed
//! rate and waits until every one of them has either confirmed or passed
//! its deadline. Block production is then halted and the replicas are left
//! to drain before their ledgers are compared.

pub mod metrics;
pub mod report;
pub mod workload;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::chain::{Digest, Ledger, LedgerDump, TxStatus};
use crate::cluster::{Cluster, Confirmation, Engine};
use crate::config::{ConfigError, ConsensusKind, ExperimentConfig, RoundSpec};
use crate::contract::{Genesis, GenesisError};
use crate::ibft::IbftNode;
use crate::netsim::{NetStats, NetsimError};
use crate::raft::RaftNode;
use crate::SimTime;

pub use metrics::{round_metrics, FunctionMetrics, TxRecord, OVERALL};
pub use workload::{build_workload, default_genesis, owner, Injection, Workload, ADMIN};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Genesis(#[from] GenesisError),
    #[error("simulator: {0}")]
    Netsim(#[from] NetsimError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Simulated time allowed for replicas to catch up after the last deadline.
const DRAIN_LIMIT: SimTime = SimTime::from_secs(600);
const DRAIN_STEP: SimTime = SimTime::from_millis(100);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSpec {
    pub consensus: ConsensusKind,
    pub itr: f64,
    pub round: RoundSpec,
    pub seed: u64,
}

impl CellSpec {
    /// File-name stem, e.g. `raft_itr40_request_resources`.
    pub fn label(&self) -> String {
        format!("{}_itr{}_{}", self.consensus, fmt_itr(self.itr), self.round.name)
    }
}

pub fn fmt_itr(itr: f64) -> String {
    if itr.fract() == 0.0 && itr.abs() < 1e15 {
        format!("{}", itr as i64)
    } else {
        format!("{itr}")
    }
}

/// Seed of one cell, derived from the run seed and the cell's identity so
/// that cells are independent of how many others run or in which order.
pub fn cell_seed(base: u64, consensus: ConsensusKind, itr: f64, round: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_be_bytes());
    h.update(consensus.name().as_bytes());
    h.update(itr.to_bits().to_be_bytes());
    h.update(round.as_bytes());
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("8 bytes"))
}

pub fn plan_cells(cfg: &ExperimentConfig, seed: u64) -> Vec<CellSpec> {
    let mut cells = Vec::new();
    for &consensus in &cfg.consensus {
        for &itr in &cfg.workload.itrs {
            for round in &cfg.workload.rounds {
                cells.push(CellSpec {
                    consensus,
                    itr,
                    round: round.clone(),
                    seed: cell_seed(seed, consensus, itr, &round.name),
                });
            }
        }
    }
    cells
}

/// The configured genesis file, or the built-in fixture.
pub fn base_genesis(cfg: &ExperimentConfig) -> Result<Genesis, BenchError> {
    match &cfg.genesis_file {
        Some(path) => Ok(Genesis::load(path)?),
        None => Ok(default_genesis(cfg.topology.len(), cfg.workload.registry_size)),
    }
}

/// Agreement of the replicas after the drain. Crashed nodes are reported
/// but not compared.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaReport {
    pub consistent: bool,
    pub converged: bool,
    pub drained_at_s: f64,
    pub heights: Vec<u64>,
    pub tip_hashes: Vec<Digest>,
    pub state_digests: Vec<Digest>,
    pub crashed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub consensus: ConsensusKind,
    pub itr: f64,
    pub round: String,
    pub seed: u64,
    pub injected: u64,
    pub metrics: Vec<FunctionMetrics>,
    pub replicas: ReplicaReport,
    /// Blocks on the first live replica, and how many of them carry no
    /// transactions.
    pub blocks: u64,
    pub empty_blocks: u64,
    pub net: NetStats,
    pub consensus_stats: BTreeMap<String, u64>,
}

impl CellSummary {
    pub fn label(&self) -> String {
        format!("{}_itr{}_{}", self.consensus, fmt_itr(self.itr), self.round)
    }

    pub fn row(&self, function: &str) -> Option<&FunctionMetrics> {
        self.metrics.iter().find(|m| m.function == function)
    }
}

pub struct CellResult {
    pub summary: CellSummary,
    pub records: Vec<TxRecord>,
    /// One per node, only when requested.
    pub dumps: Vec<LedgerDump>,
    pub trace: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub jobs: usize,
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { jobs: 1, trace: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
}

impl Report {
    pub fn cell(&self, consensus: ConsensusKind, itr: f64, round: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.consensus == consensus && c.itr == itr && c.round == round)
    }
}

pub fn run_cell(
    cfg: &ExperimentConfig,
    base: &Genesis,
    spec: &CellSpec,
    trace: bool,
) -> Result<CellResult, BenchError> {
    let nodes = cfg.topology.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let workload = build_workload(base, nodes, &cfg.workload, &spec.round, spec.itr, &mut rng);
    let state = workload.genesis.build()?;
    let ledger = Ledger::new(state);
    // The workload and the simulator draw from separate streams.
    let sim_seed = rand::Rng::random::<u64>(&mut rng);
    match spec.consensus {
        ConsensusKind::Raft => {
            let engines = (0..nodes).map(|id| RaftNode::new(id, nodes, cfg.raft, ledger.clone())).collect();
            simulate(cfg, spec, &workload, engines, sim_seed, trace, |c: &Cluster<RaftNode>| {
                let leaderships: usize = c.engines().map(|e| e.leaderships().len()).sum();
                let max_term = c.engines().map(|e| e.term()).max().unwrap_or(0);
                BTreeMap::from([("leader_elections".into(), leaderships as u64), ("max_term".into(), max_term)])
            })
        }
        ConsensusKind::Ibft => {
            let engines = (0..nodes).map(|id| IbftNode::new(id, nodes, cfg.ibft, ledger.clone())).collect();
            simulate(cfg, spec, &workload, engines, sim_seed, trace, |c: &Cluster<IbftNode>| {
                let max_round = c.engines().map(|e| e.max_round()).max().unwrap_or(0);
                let changes = c.engines().map(|e| e.round_change_count()).sum();
                BTreeMap::from([("max_round".into(), max_round), ("round_changes".into(), changes)])
            })
        }
    }
}

fn simulate<E: Engine>(
    cfg: &ExperimentConfig,
    spec: &CellSpec,
    workload: &Workload,
    engines: Vec<E>,
    seed: u64,
    trace: bool,
    stats: impl Fn(&Cluster<E>) -> BTreeMap<String, u64>,
) -> Result<CellResult, BenchError> {
    let mut cluster = Cluster::new(engines, cfg.topology.clone(), cfg.cost_model, seed)?;
    if trace {
        cluster.enable_trace();
    }
    for inj in &workload.injections {
        cluster.submit(inj.at, inj.node, inj.tx.clone())?;
    }
    for f in &cfg.faults {
        cluster.inject_fault(SimTime::from_millis(f.at_ms), f.action)?;
    }
    let w = &cfg.workload;
    let end = SimTime::from_secs_f64(w.warmup_s + w.duration_s + w.tx_timeout_s + w.grace_s);
    cluster.run_until(end);
    cluster.halt_all();

    let cap = end + DRAIN_LIMIT;
    let mut t = end;
    let converged = loop {
        if settled(&cluster) {
            break true;
        }
        if t >= cap {
            break false;
        }
        t += DRAIN_STEP;
        cluster.run_until(t);
    };

    let timeout = SimTime::from_secs_f64(w.tx_timeout_s);
    let records = tx_records(&workload.injections, cluster.confirmations(), timeout);
    let metrics = round_metrics(&records, spec.itr);
    let replicas = replica_report(&cluster, converged, t);
    let first_live = (0..cluster.nodes()).find(|&n| !cluster.is_crashed(n)).unwrap_or(0);
    let blocks = &cluster.ledger(first_live).blocks()[1..];
    let summary = CellSummary {
        consensus: spec.consensus,
        itr: spec.itr,
        round: spec.round.name.clone(),
        seed: spec.seed,
        injected: records.len() as u64,
        metrics,
        replicas,
        blocks: blocks.len() as u64,
        empty_blocks: blocks.iter().filter(|b| b.txs.is_empty()).count() as u64,
        net: cluster.net_stats(),
        consensus_stats: stats(&cluster),
    };
    let dumps = if cfg.dump_ledgers {
        (0..cluster.nodes()).map(|n| cluster.ledger(n).dump(n)).collect()
    } else {
        Vec::new()
    };
    let trace = cluster.trace().map(<[String]>::to_vec);
    Ok(CellResult { summary, records, dumps, trace })
}

fn settled<E: Engine>(cluster: &Cluster<E>) -> bool {
    let live: Vec<&E> = (0..cluster.nodes())
        .filter(|&n| !cluster.is_crashed(n))
        .map(|n| cluster.engine(n))
        .collect();
    let Some(first) = live.first() else {
        return true;
    };
    let tip = first.ledger().tip().hash;
    live.iter().all(|e| e.is_quiescent() && e.ledger().tip().hash == tip)
}

fn replica_report<E: Engine>(cluster: &Cluster<E>, converged: bool, at: SimTime) -> ReplicaReport {
    let n = cluster.nodes();
    let heights: Vec<u64> = (0..n).map(|i| cluster.ledger(i).height()).collect();
    let tip_hashes: Vec<Digest> = (0..n).map(|i| cluster.ledger(i).tip().hash).collect();
    let state_digests: Vec<Digest> = (0..n).map(|i| Digest(cluster.ledger(i).state().digest())).collect();
    let crashed: Vec<bool> = (0..n).map(|i| cluster.is_crashed(i)).collect();
    let live: Vec<usize> = (0..n).filter(|&i| !crashed[i]).collect();
    let consistent = live.windows(2).all(|w| {
        tip_hashes[w[0]] == tip_hashes[w[1]] && state_digests[w[0]] == state_digests[w[1]]
    }) && live.iter().all(|&i| cluster.ledger(i).verify());
    ReplicaReport { consistent, converged, drained_at_s: at.as_secs_f64(), heights, tip_hashes, state_digests, crashed }
}

/// Joins the schedule with confirmations at the submitting node. A
/// transaction confirmed after its deadline counts as timed out.
pub fn tx_records(injections: &[Injection], confirmations: &[Confirmation], timeout: SimTime) -> Vec<TxRecord> {
    let mut first: HashMap<u64, &Confirmation> = HashMap::new();
    for c in confirmations {
        first.entry(c.tx_id).or_insert(c);
    }
    injections
        .iter()
        .map(|inj| {
            let submit = inj.at;
            let conf = first
                .get(&inj.tx.id)
                .filter(|c| c.node == inj.node && c.at.saturating_sub(submit) <= timeout);
            let (status, error, confirm_us, block_height) = match conf {
                Some(c) => {
                    let error = match &c.status {
                        TxStatus::Reverted { error } => Some(error.to_string()),
                        _ => None,
                    };
                    (c.status.label().to_owned(), error, Some(c.at.as_micros()), Some(c.height))
                }
                None => (TxStatus::TimedOut.label().to_owned(), None, None, None),
            };
            TxRecord {
                tx_id: inj.tx.id,
                function: inj.tx.call.function(),
                node: inj.node,
                submit_us: submit.as_micros(),
                confirm_us,
                status,
                error,
                block_height,
            }
        })
        .collect()
}

/// Runs every cell, `opts.jobs` at a time. Results come back in plan order.
pub fn run_cells(cfg: &ExperimentConfig, seed: u64, opts: RunOptions) -> Result<Vec<CellResult>, BenchError> {
    run_cells_with(cfg, seed, opts, |_| Ok(()))
}

fn run_cells_with<F>(cfg: &ExperimentConfig, seed: u64, opts: RunOptions, sink: F) -> Result<Vec<CellResult>, BenchError>
where
    F: Fn(&CellResult) -> Result<(), BenchError> + Sync,
{
    cfg.validate()?;
    let base = base_genesis(cfg)?;
    let cells = plan_cells(cfg, seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|spec| {
                let result = run_cell(cfg, &base, spec, opts.trace)?;
                log::info!(
                    "{}: {} injected, {} committed",
                    spec.label(),
                    result.summary.injected,
                    result.summary.row(OVERALL).map_or(0, |m| m.committed)
                );
                sink(&result)?;
                Ok(result)
            })
            .collect()
    })
}

/// Runs the experiment and, when `out` is given, writes per-cell files as
/// cells finish and the reports at the end.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    seed: u64,
    opts: RunOptions,
    out: Option<&Path>,
) -> Result<Report, BenchError> {
    if let Some(dir) = out {
        report::prepare_dir(dir)?;
    }
    let results = run_cells_with(cfg, seed, opts, |r| match out {
        Some(dir) => report::write_cell(dir, r),
        None => Ok(()),
    })?;
    let report = Report { seed, config: cfg.clone(), cells: results.into_iter().map(|r| r.summary).collect() };
    if let Some(dir) = out {
        report::write_report(dir, &report)?;
    }
    Ok(report)
}
