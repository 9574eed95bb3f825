// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Deterministic simulator of a five-node permissioned marketplace in which
//! network providers lease compute resources to one another through a
//! replicated smart-contract state machine.
//!
//! The crate is organised bottom-up:
//!
//! * [`contract`] is the marketplace state machine (`add_network_provider`,
//!   `request_resources`, `return_resources`) together with genesis loading.
//! * [`oracle`] is an independent brute-force model of the contract used to
//!   cross-check it.
//! * [`chain`] holds transactions, hash-linked blocks and the per-node ledger.
//! * [`netsim`] is the discrete-event scheduler and WAN model.
//! * [`cluster`] runs one consensus [`cluster::Engine`] per simulated node on
//!   top of the scheduler, charging execution time on a per-node CPU.
//! * [`raft`] and [`ibft`] are the two consensus engines.
//! * [`bench`] drives fixed-rate workloads and computes throughput, latency
//!   and success-rate reports.
//!
//! Everything is a pure function of the configuration and a 64-bit seed.

pub mod bench;
pub mod chain;
pub mod cluster;
pub mod codec;
pub mod config;
pub mod contract;
pub mod ibft;
pub mod netsim;
pub mod oracle;
pub mod raft;
mod time;

pub use time::SimTime;
