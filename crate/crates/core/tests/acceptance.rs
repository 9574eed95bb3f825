// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Acceptance gate. Prints one line per criterion and exits non-zero if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use npmarket::bench::{self, build_workload, default_genesis, fmt_itr, Report, RunOptions, OVERALL};
use npmarket::chain::{verify_chain, Block, Ledger, Transaction};
use npmarket::cluster::{Cluster, CostModel, Engine};
use npmarket::config::{ConsensusKind, ExperimentConfig, Mix, RoundSpec, WorkloadConfig};
use npmarket::contract::{Call, Function, Genesis};
use npmarket::ibft::{self, IbftConfig, IbftMessage, IbftNode};
use npmarket::netsim::{ByzantinePolicy, FaultAction, NodeId, Topology};
use npmarket::oracle::{check_scenario, random_scenario};
use npmarket::raft::{RaftConfig, RaftNode, Role};
use npmarket::SimTime;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE_SCENARIOS: usize = 1_000;
const ORACLE_MAX_PROVIDERS: usize = 20;
const ORACLE_MAX_STEPS: usize = 200;
const ORACLE_TIME_LIMIT: Duration = Duration::from_secs(60);
const TAMPER_TRIALS: usize = 1_000;
const CONSENSUS_SEEDS: u64 = 100;
const SWEEP_SEED: u64 = 20_260_101;
const SWEEP_TIME_LIMIT: Duration = Duration::from_secs(600);
/// A round is saturated once throughput falls below this share of the ITR.
const SATURATION_SHARE: f64 = 0.95;
const MIN_THROUGHPUT_RATIO: f64 = 1.5;
const PLATEAU_TOLERANCE: f64 = 0.15;
/// Throughput may dip this much between consecutive ITRs and still count as rising.
const MONOTONE_SLACK: f64 = 0.05;
const PROCESSING_LATENCY_GAP: f64 = 0.20;
const RECOUNT_DECIMALS: f64 = 1e-6;

const N: usize = 5;

struct Gate {
    results: Vec<(String, bool, String)>,
}

impl Gate {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id}: {detail}");
        self.results.push((id.to_owned(), pass, detail));
    }
}

fn main() -> ExitCode {
    let mut gate = Gate { results: Vec::new() };
    oracle_and_conservation(&mut gate);
    let sweep_dir = tempfile::tempdir().expect("temp dir");
    let sweep = default_sweep(sweep_dir.path());
    chain_integrity(&mut gate, &sweep);
    raft_safety(&mut gate);
    ibft_safety(&mut gate);
    match &sweep {
        Ok((report, elapsed)) => {
            success_trend(&mut gate, report, *elapsed);
            throughput_ratio(&mut gate, report);
            saturation_shape(&mut gate, report);
            latency_ordering(&mut gate, report);
            metric_recount(&mut gate, report, sweep_dir.path());
        }
        Err(e) => {
            for id in ["6 success trend", "7 throughput ratio", "8 saturation shape", "9 latency ordering", "10 metric recount"] {
                gate.record(id, false, format!("default sweep failed: {e}"));
            }
        }
    }
    let failed = gate.results.iter().filter(|r| !r.1).count();
    println!("{} criteria checked, {failed} failed", gate.results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn oracle_and_conservation(gate: &mut Gate) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac1e);
    let (mut steps, mut selections, mut mismatches, mut violations) = (0, 0, 0, 0);
    let mut first = None;
    for i in 0..ORACLE_SCENARIOS {
        let scenario = random_scenario(&mut rng, ORACLE_MAX_PROVIDERS, ORACLE_MAX_STEPS);
        let report = check_scenario(&scenario).expect("generated genesis builds");
        steps += report.steps;
        selections += report.selection_checks;
        mismatches += report.mismatches.len();
        violations += report.conservation_violations.len();
        if first.is_none() {
            if let Some(m) = report.mismatches.first().or(report.conservation_violations.first()) {
                first = Some(format!("scenario {i} step {}: {}", m.step, m.detail));
            }
        }
    }
    let elapsed = started.elapsed();
    let suffix = first.map(|f| format!("; first: {f}")).unwrap_or_default();
    gate.record(
        "1 contract oracle equivalence",
        mismatches == 0 && elapsed < ORACLE_TIME_LIMIT,
        format!(
            "{ORACLE_SCENARIOS} scenarios, {steps} calls, {selections} selections, {mismatches} mismatches in {:.1}s{suffix}",
            elapsed.as_secs_f64()
        ),
    );
    gate.record("2 conservation", violations == 0, format!("{violations} violations over {steps} calls"));
}

fn default_sweep(out: &Path) -> Result<(Report, Duration), String> {
    let cfg = ExperimentConfig { seed: Some(SWEEP_SEED), dump_ledgers: true, ..Default::default() };
    cfg.validate().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = bench::run_experiment(&cfg, SWEEP_SEED, RunOptions { jobs, trace: false }, Some(out))
        .map_err(|e| e.to_string())?;
    Ok((report, started.elapsed()))
}

/// One random, detectable mutation of a valid chain. Dropping the tip is
/// not a tamper the chain alone can reveal, so it is not generated.
fn tamper(blocks: &mut Vec<Block>, rng: &mut ChaCha8Rng) -> &'static str {
    let len = blocks.len();
    let h = rng.random_range(1..len);
    let bit = 1u8 << rng.random_range(0..8);
    let with_txs: Vec<usize> = (1..len).filter(|&i| !blocks[i].txs.is_empty()).collect();
    loop {
        match rng.random_range(0..10) {
            0 => {
                blocks[h].prev_hash.0[rng.random_range(0..32)] ^= bit;
                return "prev_hash bit";
            }
            1 => {
                blocks[h].hash.0[rng.random_range(0..32)] ^= bit;
                return "hash bit";
            }
            2 => {
                blocks[h].timestamp_ms ^= bit as u64;
                return "timestamp";
            }
            3 => {
                blocks[h].proposer ^= bit as usize;
                return "proposer";
            }
            4 => {
                blocks[h].height += 1 + rng.random_range(0..3);
                return "height";
            }
            5 if len > 2 => {
                let k = rng.random_range(1..len - 1);
                blocks.remove(k);
                return "drop inner block";
            }
            6 if len > 2 => {
                let k = rng.random_range(1..len - 1);
                blocks.swap(k, k + 1);
                return "swap blocks";
            }
            7 if !with_txs.is_empty() => {
                let b = &mut blocks[*with_txs.choose(rng).unwrap()];
                let i = rng.random_range(0..b.txs.len());
                b.txs.remove(i);
                return "drop tx";
            }
            8 if !with_txs.is_empty() => {
                let b = &mut blocks[*with_txs.choose(rng).unwrap()];
                let i = rng.random_range(0..b.txs.len());
                let tx = &mut b.txs[i];
                match &mut tx.call {
                    Call::RequestResources { payment, .. } => *payment ^= bit as u64,
                    Call::ReturnResources { lease_id } => lease_id.0 ^= bit as u64,
                    Call::AddNetworkProvider(spec) => spec.cost ^= bit as u64,
                }
                return "edit tx payload";
            }
            9 if !with_txs.is_empty() => {
                let b = &mut blocks[*with_txs.choose(rng).unwrap()];
                let dup = b.txs[0].clone();
                b.txs.push(dup);
                return "duplicate tx";
            }
            _ => {}
        }
    }
}

fn chain_integrity(gate: &mut Gate, sweep: &Result<(Report, Duration), String>) {
    // A real chain: the mixed round at a moderate rate, under Raft.
    let mut cfg = ExperimentConfig { consensus: vec![ConsensusKind::Raft], ..Default::default() };
    cfg.workload.itrs = vec![10.0];
    cfg.workload.duration_s = 20.0;
    cfg.workload.rounds.retain(|r| r.name == "mixed");
    cfg.dump_ledgers = true;
    let results = bench::run_cells(&cfg, 3, RunOptions::default()).expect("tamper source chain");
    let chain = results[0].dumps[0].blocks.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a3);
    let mut missed = Vec::new();
    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    for trial in 0..TAMPER_TRIALS {
        let mut blocks = chain.clone();
        let kind = tamper(&mut blocks, &mut rng);
        *kinds.entry(kind).or_default() += 1;
        if blocks != chain && verify_chain(&blocks) {
            missed.push(format!("trial {trial} ({kind})"));
        }
    }
    let intact = verify_chain(&chain);
    let (replicas_ok, cells) = match sweep {
        Ok((report, _)) => (report.cells.iter().all(|c| c.replicas.consistent && c.replicas.converged), report.cells.len()),
        Err(_) => (false, 0),
    };
    let divergent: Vec<String> = match sweep {
        Ok((report, _)) => report.cells.iter().filter(|c| !c.replicas.consistent).map(|c| c.label()).collect(),
        Err(_) => Vec::new(),
    };
    gate.record(
        "3 chain integrity",
        intact && missed.is_empty() && replicas_ok,
        format!(
            "{}/{TAMPER_TRIALS} tampers detected on a {}-block chain {kinds:?}; identical tips on all replicas in {} sweep cells{}",
            TAMPER_TRIALS - missed.len(),
            chain.len(),
            cells,
            if divergent.is_empty() { String::new() } else { format!("; diverged: {divergent:?}") }
        ),
    );
}

/// A short mixed-function workload starting after elections settle.
fn consensus_workload(seed: u64) -> (Genesis, Vec<(SimTime, Transaction)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = WorkloadConfig { duration_s: 6.0, warmup_s: 4.0, ..Default::default() };
    let round = RoundSpec {
        name: "mixed".into(),
        mix: Mix { add_network_provider: 0.2, request_resources: 0.5, return_resources: 0.3 },
    };
    let workload = build_workload(&default_genesis(N, 5), N, &w, &round, 5.0, &mut rng);
    let txs = workload.injections.into_iter().map(|i| (i.at, i.tx)).collect();
    (workload.genesis, txs)
}

/// Every pair of ledgers agrees on every height both have.
fn prefix_consistent<E: Engine>(c: &Cluster<E>, nodes: &[NodeId]) -> bool {
    nodes.iter().all(|&a| {
        nodes.iter().all(|&b| {
            let (la, lb) = (c.ledger(a), c.ledger(b));
            (0..=la.height().min(lb.height())).all(|h| la.block(h).map(|x| x.hash) == lb.block(h).map(|x| x.hash))
        })
    })
}

fn raft_safety(gate: &mut Gate) {
    let mut failures = Vec::new();
    let (mut elections, mut committed, mut crashed_leaders) = (0, 0, 0);
    for seed in 0..CONSENSUS_SEEDS {
        let (genesis, txs) = consensus_workload(seed);
        let ledger = Ledger::new(genesis.build().unwrap());
        let engines = (0..N).map(|i| RaftNode::new(i, N, RaftConfig::default(), ledger.clone())).collect();
        let mut c = Cluster::new(engines, Topology::default(), CostModel::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc4a5);
        // Let a leader emerge, then crash two nodes, the leader half of the time.
        c.run_until(SimTime::from_secs(2));
        let leader = (0..N).find(|&n| c.engine(n).role() == Role::Leader);
        let mut order: Vec<NodeId> = (0..N).collect();
        order.shuffle(&mut rng);
        if let (Some(l), true) = (leader, rng.random_bool(0.5)) {
            order.retain(|&n| n != l);
            order.insert(0, l);
            crashed_leaders += 1;
        }
        let victims = [order[0], order[1]];
        for &v in &victims {
            let at = SimTime::from_millis(rng.random_range(2_000..4_000));
            c.inject_fault(at, FaultAction::Crash(v)).unwrap();
        }
        let live: Vec<NodeId> = (0..N).filter(|n| !victims.contains(n)).collect();
        for (k, (at, tx)) in txs.iter().enumerate() {
            c.submit(*at, live[k % live.len()], tx.clone()).unwrap();
        }
        c.run_until(SimTime::from_secs(40));

        let mut by_term: BTreeMap<u64, BTreeSet<NodeId>> = BTreeMap::new();
        for n in 0..N {
            for &(term, _) in c.engine(n).leaderships() {
                by_term.entry(term).or_default().insert(n);
            }
        }
        elections += by_term.len();
        if let Some((term, who)) = by_term.iter().find(|(_, w)| w.len() > 1) {
            failures.push(format!("seed {seed}: term {term} leaders {who:?}"));
        }
        let all: Vec<NodeId> = (0..N).collect();
        if !prefix_consistent(&c, &all) {
            failures.push(format!("seed {seed}: committed blocks diverge"));
        }
        let missing = txs.iter().filter(|(_, tx)| !live.iter().all(|&n| c.ledger(n).contains_tx(tx.id))).count();
        if missing > 0 {
            failures.push(format!("seed {seed}: {missing}/{} txs not committed with 2/5 crashed", txs.len()));
        }
        committed += txs.len() - missing;
        if (0..N).any(|n| c.ledger(n).blocks()[1..].iter().any(|b| b.txs.is_empty())) {
            failures.push(format!("seed {seed}: empty block"));
        }
    }
    gate.record(
        "4 raft safety and liveness",
        failures.is_empty(),
        format!(
            "{CONSENSUS_SEEDS} seeds, 2/5 crashed ({crashed_leaders} times including the leader), {elections} elected terms, {committed} txs committed{}",
            failures.first().map(|f| format!("; first failure: {f}")).unwrap_or_default()
        ),
    );
}

/// Commits from three validators never finalize; a fourth does.
fn ibft_quorum_construction() -> Result<(), String> {
    let config = IbftConfig { block_period_ms: 1 << 40, round_timeout_ms: 1 << 30, ..Default::default() };
    let ledger = Ledger::new(default_genesis(N, 5).build().unwrap());
    let engines = (0..N).map(|i| IbftNode::new(i, N, config, ledger.clone())).collect();
    let mut c = Cluster::new(engines, Topology::default(), CostModel::default(), 1).unwrap();
    let block = Block::new(1, ledger.tip().hash, ibft::proposer(1, 0, N), 10, Vec::new());
    let hash = block.hash;
    let t = SimTime::from_millis(100);
    c.inject_message(t, block.proposer, 0, IbftMessage::PrePrepare { height: 1, round: 0, block }).unwrap();
    for from in 1..ibft::quorum(N) {
        c.inject_message(t, from, 0, IbftMessage::Commit { height: 1, round: 0, hash }).unwrap();
    }
    c.run_until(SimTime::from_secs(1));
    if c.ledger(0).height() != 0 {
        return Err(format!("finalized with {} commits", ibft::quorum(N) - 1));
    }
    c.inject_message(SimTime::from_secs(1), ibft::quorum(N), 0, IbftMessage::Commit { height: 1, round: 0, hash }).unwrap();
    c.run_until(SimTime::from_secs(2));
    if c.ledger(0).tip().hash != hash {
        return Err(format!("not finalized with {} commits", ibft::quorum(N)));
    }
    Ok(())
}

fn ibft_safety(gate: &mut Gate) {
    let policies = [ByzantinePolicy::Silence, ByzantinePolicy::Equivocate, ByzantinePolicy::InvalidProposal];
    let mut failures = Vec::new();
    let (mut heights, mut committed, mut total) = (0u64, 0, 0);
    for seed in 0..CONSENSUS_SEEDS {
        let policy = policies[seed as usize % 3];
        let bad = (seed as usize / 3) % N;
        let (genesis, txs) = consensus_workload(seed);
        let ledger = Ledger::new(genesis.build().unwrap());
        let config = IbftConfig { round_timeout_ms: 3_000, ..Default::default() };
        let engines = (0..N).map(|i| IbftNode::new(i, N, config, ledger.clone())).collect();
        let mut c = Cluster::new(engines, Topology::default(), CostModel::default(), seed).unwrap();
        c.inject_fault(SimTime::ZERO, FaultAction::Byzantine(bad, policy)).unwrap();
        let honest: Vec<NodeId> = (0..N).filter(|&n| n != bad).collect();
        for (k, (at, tx)) in txs.iter().enumerate() {
            c.submit(*at, honest[k % honest.len()], tx.clone()).unwrap();
        }
        c.run_until(SimTime::from_secs(45));
        if !prefix_consistent(&c, &honest) {
            failures.push(format!("seed {seed} {policy:?}@{bad}: honest nodes finalized different blocks"));
        }
        for &n in &honest {
            if let Some(h) = c.engine(n).committers().iter().position(|s| s.len() < ibft::quorum(N)) {
                failures.push(format!("seed {seed}: node {n} finalized height {} with fewer than quorum", h + 1));
            }
        }
        let tip = c.ledger(honest[0]);
        heights += tip.height();
        total += txs.len();
        committed += txs.iter().filter(|(_, tx)| tip.contains_tx(tx.id)).count();
    }
    let construction = ibft_quorum_construction();
    if let Err(e) = &construction {
        failures.push(format!("quorum construction: {e}"));
    }
    gate.record(
        "5 ibft safety",
        failures.is_empty(),
        format!(
            "{CONSENSUS_SEEDS} seeds with 1/5 byzantine (silence, equivocation, invalid proposal); quorum {} of {N} (F={}); {} heights finalized, {committed}/{total} txs committed{}",
            ibft::quorum(N),
            ibft::max_faulty(N),
            heights,
            failures.first().map(|f| format!("; first failure: {f}")).unwrap_or_default()
        ),
    );
}

fn overall(report: &Report, consensus: ConsensusKind, itr: f64, round: &str) -> (f64, f64, f64) {
    let m = report.cell(consensus, itr, round).and_then(|c| c.row(OVERALL)).expect("cell in sweep");
    (m.throughput_tps, m.success_rate, m.latency_avg_s)
}

/// First ITR at which the round saturates, or one past the highest ITR if it never does.
fn saturation_itr(report: &Report, consensus: ConsensusKind, round: &str) -> f64 {
    let itrs = &report.config.workload.itrs;
    itrs.iter()
        .copied()
        .find(|&itr| overall(report, consensus, itr, round).0 < SATURATION_SHARE * itr)
        .unwrap_or(f64::INFINITY)
}

fn success_trend(gate: &mut Gate, report: &Report, elapsed: Duration) {
    let mut problems = Vec::new();
    let mut witness = None;
    for round in &report.config.workload.rounds {
        let sat = saturation_itr(report, ConsensusKind::Raft, &round.name);
        // The saturation point lies between the last ITR that is fully served and `sat`.
        for &itr in report.config.workload.itrs.iter().filter(|&&i| i < sat) {
            let s = overall(report, ConsensusKind::Raft, itr, &round.name).1;
            if s < 1.0 {
                problems.push(format!("raft {} itr {} success {s:.4}", round.name, fmt_itr(itr)));
            }
        }
        for &itr in &report.config.workload.itrs {
            let raft = overall(report, ConsensusKind::Raft, itr, &round.name).1;
            let ibft = overall(report, ConsensusKind::Ibft, itr, &round.name).1;
            if witness.is_none() && raft == 1.0 && ibft < 1.0 {
                witness = Some(format!("{} itr {}: raft 1.0000, ibft {ibft:.4}", round.name, fmt_itr(itr)));
            }
        }
    }
    let pass = problems.is_empty() && witness.is_some() && elapsed < SWEEP_TIME_LIMIT;
    gate.record(
        "6 success trend",
        pass,
        format!(
            "raft 100% up to saturation in every round{}; ibft below 100% where raft is not: {}; sweep of {} cells took {:.1}s",
            if problems.is_empty() { String::new() } else { format!(" VIOLATED {problems:?}") },
            witness.unwrap_or_else(|| "none".into()),
            report.cells.len(),
            elapsed.as_secs_f64()
        ),
    );
}

const REQUEST: &str = "request_resources";

fn throughput_ratio(gate: &mut Gate, report: &Report) {
    let itrs = &report.config.workload.itrs;
    let itr = saturation_itr(report, ConsensusKind::Raft, REQUEST).min(itrs[itrs.len() - 1]);
    let raft = overall(report, ConsensusKind::Raft, itr, REQUEST).0;
    let ibft = overall(report, ConsensusKind::Ibft, itr, REQUEST).0;
    let ratio = raft / ibft;
    gate.record(
        "7 throughput ratio",
        ratio >= MIN_THROUGHPUT_RATIO,
        format!("{REQUEST} at itr {}: raft {raft:.3} tps, ibft {ibft:.3} tps, ratio {ratio:.2} (need >= {MIN_THROUGHPUT_RATIO})", fmt_itr(itr)),
    );
}

fn saturation_shape(gate: &mut Gate, report: &Report) {
    let itrs = &report.config.workload.itrs;
    let tps: Vec<f64> = itrs.iter().map(|&i| overall(report, ConsensusKind::Raft, i, REQUEST).0).collect();
    let rising = tps.windows(2).all(|w| w[1] >= w[0] * (1.0 - MONOTONE_SLACK));
    let top_itr = itrs[itrs.len() - 1];
    let plateau = tps[tps.len() - 1];
    let saturated = plateau < SATURATION_SHARE * top_itr;
    let capacity = report.config.cost_model.request_capacity_tps(report.config.workload.registry_size);
    let off = (plateau - capacity).abs() / capacity;
    gate.record(
        "8 saturation shape",
        rising && saturated && off <= PLATEAU_TOLERANCE,
        format!(
            "raft {REQUEST} tps {:?}; plateau {plateau:.2} vs cost-model capacity {capacity:.2} ({:+.1}%, limit {:.0}%)",
            tps.iter().map(|t| (t * 100.0).round() / 100.0).collect::<Vec<_>>(),
            100.0 * (plateau - capacity) / capacity,
            100.0 * PLATEAU_TOLERANCE
        ),
    );
}

/// Request latency of Raft and IBFT when one request costs seconds of CPU.
fn processing_dominated() -> Result<(f64, f64), String> {
    let mut cfg = ExperimentConfig::default();
    cfg.cost_model.scan_ms = 1_700.0;
    cfg.ibft.round_timeout_ms = 60_000;
    cfg.workload.itrs = vec![0.02];
    cfg.workload.duration_s = 300.0;
    cfg.workload.tx_timeout_s = 120.0;
    cfg.workload.rounds = vec![RoundSpec::single(Function::RequestResources)];
    cfg.validate().map_err(|e| e.to_string())?;
    let report = bench::run_experiment(&cfg, 9, RunOptions { jobs: 2, trace: false }, None).map_err(|e| e.to_string())?;
    let lat = |c| overall(&report, c, 0.02, REQUEST);
    let (raft, ibft) = (lat(ConsensusKind::Raft), lat(ConsensusKind::Ibft));
    if raft.1 < 1.0 || ibft.1 < 1.0 {
        return Err(format!("requests failed: raft success {}, ibft success {}", raft.1, ibft.1));
    }
    Ok((raft.2, ibft.2))
}

fn latency_ordering(gate: &mut Gate, report: &Report) {
    let mut violations = Vec::new();
    let mut checked = 0;
    for consensus in [ConsensusKind::Raft, ConsensusKind::Ibft] {
        for &itr in &report.config.workload.itrs {
            let req = overall(report, consensus, itr, REQUEST).2;
            for other in [Function::AddNetworkProvider, Function::ReturnResources] {
                let o = overall(report, consensus, itr, other.name()).2;
                checked += 1;
                if req <= o {
                    violations.push(format!("{consensus} itr {}: request {req:.3}s <= {} {o:.3}s", fmt_itr(itr), other.name()));
                }
            }
        }
    }
    let dominated = processing_dominated();
    let (gap_ok, gap_text) = match dominated {
        Ok((raft, ibft)) => {
            let gap = (raft - ibft).abs() / raft.max(ibft);
            (gap < PROCESSING_LATENCY_GAP, format!("raft {raft:.2}s vs ibft {ibft:.2}s, gap {:.1}%", 100.0 * gap))
        }
        Err(e) => (false, e),
    };
    gate.record(
        "9 latency ordering",
        violations.is_empty() && gap_ok,
        format!(
            "request slower than add and return in {}/{checked} comparisons{}; processing-dominated request latency: {gap_text} (limit {:.0}%)",
            checked - violations.len(),
            violations.first().map(|v| format!(" (first violation: {v})")).unwrap_or_default(),
            100.0 * PROCESSING_LATENCY_GAP
        ),
    );
}

/// Recomputes every row of report.csv from the per-transaction files.
fn recount(dir: &Path, itr: f64, label: &str) -> Result<BTreeMap<String, [f64; 7]>, String> {
    let path = dir.join("txs").join(format!("{label}.csv"));
    let mut reader = csv::Reader::from_path(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("no column {name}"));
    let (f_col, s_col, c_col, st_col) = (col("function")?, col("submit_us")?, col("confirm_us")?, col("status")?);
    let mut rows: Vec<(String, u64, Option<u64>, String)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let confirm = match &rec[c_col] {
            "" => None,
            v => Some(v.parse::<u64>().map_err(|e| e.to_string())?),
        };
        rows.push((rec[f_col].to_owned(), rec[s_col].parse().map_err(|e: std::num::ParseIntError| e.to_string())?, confirm, rec[st_col].to_owned()));
    }
    let first = rows.iter().map(|r| r.1).min().unwrap_or(0);
    let last = rows.iter().filter(|r| r.3 == "success").filter_map(|r| r.2).max().unwrap_or(first);
    let span = ((last - first) as f64 / 1e6).max(rows.len() as f64 / itr);
    let mut groups: HashMap<String, Vec<&(String, u64, Option<u64>, String)>> = HashMap::new();
    for r in &rows {
        groups.entry(r.0.clone()).or_default().push(r);
        groups.entry(OVERALL.to_owned()).or_default().push(r);
    }
    if rows.is_empty() {
        groups.insert(OVERALL.to_owned(), Vec::new());
    }
    let mut out = BTreeMap::new();
    for (name, g) in groups {
        let ok: Vec<f64> = g
            .iter()
            .filter(|r| r.3 == "success")
            .map(|r| (r.2.expect("success has confirmation") - r.1) as f64 / 1e6)
            .collect();
        let n = g.len() as f64;
        let tps = if span > 0.0 { ok.len() as f64 / span } else { 0.0 };
        let (lo, avg, hi) = if ok.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (
                ok.iter().cloned().fold(f64::MAX, f64::min),
                ok.iter().sum::<f64>() / ok.len() as f64,
                ok.iter().cloned().fold(f64::MIN, f64::max),
            )
        };
        let rate = if g.is_empty() { 0.0 } else { ok.len() as f64 / n };
        out.insert(name, [n, ok.len() as f64, tps, lo, avg, hi, rate]);
    }
    Ok(out)
}

fn metric_recount(gate: &mut Gate, report: &Report, dir: &Path) {
    let run = || -> Result<(usize, Vec<String>), String> {
        let path = dir.join("report.csv");
        let mut reader = csv::Reader::from_path(&path).map_err(|e| e.to_string())?;
        let headers = reader.headers().map_err(|e| e.to_string())?.clone();
        let idx = |name: &str| headers.iter().position(|h| h == name).expect("report column");
        let fields = ["injected", "committed", "throughput_tps", "latency_min_s", "latency_avg_s", "latency_max_s", "success_rate"];
        let mut cache: HashMap<String, BTreeMap<String, [f64; 7]>> = HashMap::new();
        let (mut compared, mut diffs) = (0, Vec::new());
        for rec in reader.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let itr: f64 = rec[idx("itr")].parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
            let label = format!("{}_itr{}_{}", &rec[idx("consensus")], fmt_itr(itr), &rec[idx("round")]);
            if !cache.contains_key(&label) {
                cache.insert(label.clone(), recount(dir, itr, &label)?);
            }
            let ours = cache[&label].get(&rec[idx("function")]).ok_or(format!("{label}: no rows for {}", &rec[idx("function")]))?;
            for (k, field) in fields.iter().enumerate() {
                let theirs: f64 = rec[idx(field)].parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
                compared += 1;
                if (theirs - ours[k]).abs() >= RECOUNT_DECIMALS * 0.5 {
                    diffs.push(format!("{label} {} {field}: report {theirs} recount {}", &rec[idx("function")], ours[k]));
                }
            }
        }
        Ok((compared, diffs))
    };
    match run() {
        Ok((compared, diffs)) => gate.record(
            "10 metric recount",
            diffs.is_empty() && compared > 0,
            format!(
                "{compared} values in {} cells recomputed from txs/*.csv, {} differ at 6 decimals{}",
                report.cells.len(),
                diffs.len(),
                diffs.first().map(|d| format!("; first: {d}")).unwrap_or_default()
            ),
        ),
        Err(e) => gate.record("10 metric recount", false, e),
    }
}
