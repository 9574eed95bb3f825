// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Output files. Every file is written to a temporary name in its final
//! directory and renamed into place, so readers never see a partial file.
//!
//! ```text
//! out/
//!   report.csv  report.json
//!   series/throughput_vs_itr.csv  latency_vs_itr.csv  success_vs_itr.csv
//!   txs/<cell>.csv              one row per injected transaction
//!   ledgers/<cell>/node<k>.json when ledger dumps are enabled
//!   trace/<cell>.log            with --trace
//! ```

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{BenchError, CellResult, Report};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.display().to_string(), source }
}

pub fn prepare_dir(dir: &Path) -> Result<(), BenchError> {
    for sub in ["", "series", "txs"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| BenchError::Csv(e.into_error().into()))
}

/// Transaction records, and optionally ledger dumps and the event trace.
pub fn write_cell(dir: &Path, cell: &CellResult) -> Result<(), BenchError> {
    let label = cell.summary.label();
    write_atomic(&dir.join("txs").join(format!("{label}.csv")), &csv_bytes(&cell.records)?)?;
    if !cell.dumps.is_empty() {
        let ldir = dir.join("ledgers").join(&label);
        fs::create_dir_all(&ldir).map_err(io_err(&ldir))?;
        for dump in &cell.dumps {
            let bytes = serde_json::to_vec_pretty(dump)?;
            write_atomic(&ldir.join(format!("node{}.json", dump.node)), &bytes)?;
        }
    }
    if let Some(trace) = &cell.trace {
        let tdir = dir.join("trace");
        fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
        let mut text = trace.join("\n");
        text.push('\n');
        write_atomic(&tdir.join(format!("{label}.log")), text.as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportRow<'a> {
    consensus: &'a str,
    itr: f64,
    round: &'a str,
    function: &'a str,
    injected: u64,
    committed: u64,
    failed: u64,
    reverted: u64,
    timed_out: u64,
    throughput_tps: f64,
    latency_min_s: f64,
    latency_avg_s: f64,
    latency_max_s: f64,
    success_rate: f64,
    replicas_consistent: bool,
    seed: u64,
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    consensus: &'a str,
    round: &'a str,
    function: &'a str,
    itr: f64,
    value: f64,
}

pub fn write_report(dir: &Path, report: &Report) -> Result<(), BenchError> {
    write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(report)?)?;
    let rows = report.cells.iter().flat_map(|c| {
        c.metrics.iter().map(move |m| ReportRow {
            consensus: c.consensus.name(),
            itr: c.itr,
            round: &c.round,
            function: &m.function,
            injected: m.injected,
            committed: m.committed,
            failed: m.failed,
            reverted: m.reverted,
            timed_out: m.timed_out,
            throughput_tps: m.throughput_tps,
            latency_min_s: m.latency_min_s,
            latency_avg_s: m.latency_avg_s,
            latency_max_s: m.latency_max_s,
            success_rate: m.success_rate,
            replicas_consistent: c.replicas.consistent,
            seed: c.seed,
        })
    });
    write_atomic(&dir.join("report.csv"), &csv_bytes(rows)?)?;

    let series: [(&str, fn(&super::FunctionMetrics) -> f64); 3] = [
        ("throughput_vs_itr", |m| m.throughput_tps),
        ("latency_vs_itr", |m| m.latency_avg_s),
        ("success_vs_itr", |m| m.success_rate),
    ];
    for (name, value) in series {
        let mut cells: Vec<_> = report.cells.iter().collect();
        cells.sort_by(|a, b| {
            (a.consensus, &a.round)
                .cmp(&(b.consensus, &b.round))
                .then(a.itr.total_cmp(&b.itr))
        });
        let rows = cells.into_iter().flat_map(|c| {
            c.metrics.iter().map(move |m| SeriesRow {
                consensus: c.consensus.name(),
                round: &c.round,
                function: &m.function,
                itr: c.itr,
                value: value(m),
            })
        });
        write_atomic(&dir.join("series").join(format!("{name}.csv")), &csv_bytes(rows)?)?;
    }
    log::info!("wrote {} cells to {}", report.cells.len(), dir.display());
    Ok(())
}
