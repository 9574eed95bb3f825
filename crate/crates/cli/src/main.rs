// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use npmarket::bench::{self, RunOptions, OVERALL};
use npmarket::chain::LedgerDump;
use npmarket::config::{ConsensusKind, ExperimentConfig};
use npmarket::oracle::{self, Scenario};

/// Marketplace simulator under Raft or IBFT.
#[derive(Parser)]
#[command(name = "npmarket", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep and write reports.
    Run(RunArgs),
    /// Check the hash chain of ledger dumps.
    Verify {
        /// Dump files, or directories searched recursively for `*.json`.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Compare the contract with the brute-force oracle.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON). Defaults apply to every missing field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this consensus; overrides the config's list.
    #[arg(long)]
    consensus: Option<ConsensusKind>,
    /// Run seed; required unless the config sets one.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Write one event per line to trace/<cell>.log.
    #[arg(long)]
    trace: bool,
    /// Cells simulated in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write every node's ledger to ledgers/<cell>/.
    #[arg(long)]
    dump_ledgers: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// Scenario file (JSON with `genesis` and `steps`).
    #[arg(long, conflicts_with = "random")]
    scenario: Option<PathBuf>,
    /// Check this many random scenarios instead.
    #[arg(long, requires = "seed")]
    random: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    max_providers: usize,
    #[arg(long, default_value_t = 200)]
    max_steps: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Verify { paths } => verify(&paths),
        Command::Oracle(args) => oracle_cmd(args),
    }
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(c) = args.consensus {
        cfg.consensus = vec![c];
    }
    if args.dump_ledgers {
        cfg.dump_ledgers = true;
    }
    let Some(seed) = args.seed.or(cfg.seed) else {
        bail!("a seed is required: pass --seed or set \"seed\" in the config");
    };
    cfg.seed = Some(seed);
    cfg.validate()?;
    let opts = RunOptions { jobs: args.jobs.max(1), trace: args.trace };
    let report = bench::run_experiment(&cfg, seed, opts, Some(&args.out))
        .with_context(|| format!("running experiment into {}", args.out.display()))?;

    println!("{:<6} {:>6} {:<22} {:>9} {:>10} {:>10} {:>8}", "cons", "itr", "round", "tps", "lat_avg_s", "success", "replicas");
    for c in &report.cells {
        if let Some(m) = c.row(OVERALL) {
            println!(
                "{:<6} {:>6} {:<22} {:>9.3} {:>10.3} {:>10.4} {:>8}",
                c.consensus.name(),
                bench::fmt_itr(c.itr),
                c.round,
                m.throughput_tps,
                m.latency_avg_s,
                m.success_rate,
                if c.replicas.consistent { "ok" } else { "DIVERGED" }
            );
        }
    }
    if report.cells.iter().any(|c| !c.replicas.consistent) {
        eprintln!("error: replicas diverged in at least one cell");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn collect_dumps(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.is_dir() || e.extension().is_some_and(|x| x == "json") {
                collect_dumps(&e, out)?;
            }
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn verify(paths: &[PathBuf]) -> Result<ExitCode> {
    let mut files = Vec::new();
    for p in paths {
        collect_dumps(p, &mut files)?;
    }
    if files.is_empty() {
        bail!("no ledger dumps found");
    }
    let mut failed = 0;
    for f in &files {
        let dump = LedgerDump::load(f).with_context(|| format!("loading ledger dump {}", f.display()))?;
        if dump.verify() {
            println!("ok      {} height {} tip {}", f.display(), dump.height, dump.tip_hash.short());
        } else {
            println!("FAILED  {}", f.display());
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("error: {failed} of {} ledger dumps failed verification", files.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle_cmd(args: OracleArgs) -> Result<ExitCode> {
    let scenarios: Vec<(String, Scenario)> = match (&args.scenario, args.random) {
        (Some(path), _) => {
            let s = Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))?;
            vec![(path.display().to_string(), s)]
        }
        (None, Some(n)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed.expect("clap requires seed"));
            (0..n)
                .map(|i| (format!("random#{i}"), oracle::random_scenario(&mut rng, args.max_providers, args.max_steps)))
                .collect()
        }
        (None, None) => bail!("pass --scenario PATH or --random N --seed S"),
    };
    let mut dirty = 0;
    let (mut steps, mut mismatches, mut violations) = (0, 0, 0);
    for (name, s) in &scenarios {
        let report = oracle::check_scenario(s).with_context(|| format!("scenario {name}"))?;
        steps += report.steps;
        mismatches += report.mismatches.len();
        violations += report.conservation_violations.len();
        if !report.is_clean() {
            dirty += 1;
            println!("MISMATCH {name}: {}", serde_json::to_string(&report)?);
        }
    }
    println!(
        "{} scenarios, {steps} steps, {mismatches} mismatches, {violations} conservation violations",
        scenarios.len()
    );
    Ok(if dirty == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
