// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Throughput, latency and success rate of one round.

use serde::{Deserialize, Serialize};

use crate::contract::Function;
use crate::netsim::NodeId;

/// Outcome of one injected transaction, as written to `txs/*.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub tx_id: u64,
    pub function: Function,
    pub node: NodeId,
    pub submit_us: u64,
    /// Absent unless the transaction was in a block within the deadline.
    pub confirm_us: Option<u64>,
    /// `success`, `reverted` or `timed_out`.
    pub status: String,
    pub error: Option<String>,
    pub block_height: Option<u64>,
}

impl TxRecord {
    pub fn is_success(&self) -> bool {
        self.status == "success"
    }

    /// Confirmation minus submission, in seconds, for successful transactions.
    pub fn latency_s(&self) -> Option<f64> {
        match (self.is_success(), self.confirm_us) {
            (true, Some(c)) => Some(c.saturating_sub(self.submit_us) as f64 / 1e6),
            _ => None,
        }
    }
}

/// Metrics for one function, or for all of them when `function` is
/// `"overall"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionMetrics {
    pub function: String,
    pub injected: u64,
    pub committed: u64,
    pub failed: u64,
    pub reverted: u64,
    pub timed_out: u64,
    pub throughput_tps: f64,
    pub latency_min_s: f64,
    pub latency_avg_s: f64,
    pub latency_max_s: f64,
    pub success_rate: f64,
}

pub const OVERALL: &str = "overall";

/// Length of the measurement window in seconds: from the first submission
/// to the last successful confirmation, but never shorter than the
/// injection schedule itself (`injected / itr`).
pub fn round_span_s(records: &[TxRecord], itr: f64) -> f64 {
    let Some(first) = records.iter().map(|r| r.submit_us).min() else {
        return 0.0;
    };
    let last = records
        .iter()
        .filter(|r| r.is_success())
        .filter_map(|r| r.confirm_us)
        .max()
        .unwrap_or(first);
    let confirm_span = last.saturating_sub(first) as f64 / 1e6;
    confirm_span.max(records.len() as f64 / itr)
}

/// Per-function rows (only functions that were injected) followed by the
/// overall row. All rows share the round's window, so per-function
/// throughputs add up to the overall one.
pub fn round_metrics(records: &[TxRecord], itr: f64) -> Vec<FunctionMetrics> {
    let span = round_span_s(records, itr);
    let mut rows = Vec::new();
    for f in Function::ALL {
        let subset: Vec<&TxRecord> = records.iter().filter(|r| r.function == f).collect();
        if !subset.is_empty() {
            rows.push(summarize(f.name(), &subset, span));
        }
    }
    let all: Vec<&TxRecord> = records.iter().collect();
    rows.push(summarize(OVERALL, &all, span));
    rows
}

fn summarize(name: &str, records: &[&TxRecord], span_s: f64) -> FunctionMetrics {
    let injected = records.len() as u64;
    let committed = records.iter().filter(|r| r.is_success()).count() as u64;
    let reverted = records.iter().filter(|r| r.status == "reverted").count() as u64;
    let timed_out = records.iter().filter(|r| r.status == "timed_out").count() as u64;
    let lat: Vec<f64> = records.iter().filter_map(|r| r.latency_s()).collect();
    let (min, avg, max) = if lat.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let sum: f64 = lat.iter().sum();
        (
            lat.iter().copied().fold(f64::INFINITY, f64::min),
            sum / lat.len() as f64,
            lat.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let throughput_tps = if span_s > 0.0 {
        committed as f64 / span_s
    } else {
        log::warn!("empty round for {name}; throughput reported as 0");
        0.0
    };
    FunctionMetrics {
        function: name.to_owned(),
        injected,
        committed,
        failed: injected - committed,
        reverted,
        timed_out,
        throughput_tps,
        latency_min_s: min,
        latency_avg_s: avg,
        latency_max_s: max,
        success_rate: if injected == 0 { 0.0 } else { committed as f64 / injected as f64 },
    }
}
