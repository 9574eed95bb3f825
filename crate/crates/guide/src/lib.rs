// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! The chapters of `book/` as doc-tests, so every snippet in the guide
//! compiles and runs against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/contract.md")]
pub mod contract {}
#[doc = include_str!("../../../book/src/chain.md")]
pub mod chain {}
#[doc = include_str!("../../../book/src/netsim.md")]
pub mod netsim {}
#[doc = include_str!("../../../book/src/raft.md")]
pub mod raft {}
#[doc = include_str!("../../../book/src/ibft.md")]
pub mod ibft {}
#[doc = include_str!("../../../book/src/bench.md")]
pub mod bench {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
