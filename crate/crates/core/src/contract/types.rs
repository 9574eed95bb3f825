// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{Decode, DecodeError, Decoder, Encode};

/// Account identifier. Signatures are not modelled; the sender of a
/// transaction is trusted to be who it claims.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub String);

impl Address {
    pub fn new(s: impl Into<String>) -> Self {
        Address(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Address {
    fn from(s: &str) -> Self {
        Address(s.to_owned())
    }
}

/// Registry key of a network provider. Indices start at 1.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ProviderIndex(pub u64);

impl fmt::Display for ProviderIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct LeaseId(pub u64);

impl fmt::Display for LeaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lease-{}", self.0)
    }
}

/// A bundle of compute resources: vCPUs, GB of RAM, GB of storage.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Resources {
    pub cpu: u64,
    pub ram: u64,
    pub storage: u64,
}

impl Resources {
    pub const fn new(cpu: u64, ram: u64, storage: u64) -> Self {
        Resources { cpu, ram, storage }
    }

    pub fn is_zero(&self) -> bool {
        self.cpu == 0 && self.ram == 0 && self.storage == 0
    }

    /// True if every dimension of `self` is at least the matching one of `other`.
    pub fn covers(&self, other: &Resources) -> bool {
        self.cpu >= other.cpu && self.ram >= other.ram && self.storage >= other.storage
    }

    pub fn checked_add(&self, other: &Resources) -> Option<Resources> {
        Some(Resources {
            cpu: self.cpu.checked_add(other.cpu)?,
            ram: self.ram.checked_add(other.ram)?,
            storage: self.storage.checked_add(other.storage)?,
        })
    }

    pub fn checked_sub(&self, other: &Resources) -> Option<Resources> {
        Some(Resources {
            cpu: self.cpu.checked_sub(other.cpu)?,
            ram: self.ram.checked_sub(other.ram)?,
            storage: self.storage.checked_sub(other.storage)?,
        })
    }

    /// Dimensionless total used by the pricing function.
    pub fn checked_total(&self) -> Option<u64> {
        self.cpu.checked_add(self.ram)?.checked_add(self.storage)
    }
}

/// Packet-loss tolerance in thousandths of a percent (`1_000` is 1 %).
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct LossPct(pub u32);

impl LossPct {
    pub const MAX: LossPct = LossPct(100_000);

    pub const fn from_milli_pct(v: u32) -> Self {
        LossPct(v)
    }

    /// Whole hundredths of a percent, e.g. `from_centi_pct(10)` is 0.1 %.
    pub const fn from_centi_pct(v: u32) -> Self {
        LossPct(v * 10)
    }

    pub fn as_pct(&self) -> f64 {
        self.0 as f64 / 1_000.0
    }
}

/// Service level a provider guarantees, or a requester demands.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Sla {
    pub max_latency_ms: u64,
    pub min_throughput_mbps: u64,
    pub max_packet_loss: LossPct,
}

impl Sla {
    pub const fn new(max_latency_ms: u64, min_throughput_mbps: u64, max_packet_loss: LossPct) -> Self {
        Sla { max_latency_ms, min_throughput_mbps, max_packet_loss }
    }

    pub fn is_valid(&self) -> bool {
        self.max_packet_loss <= LossPct::MAX
    }

    /// `self` (an offer) is at least as good as `requested` on all three axes.
    pub fn dominates(&self, requested: &Sla) -> bool {
        self.max_latency_ms <= requested.max_latency_ms
            && self.min_throughput_mbps >= requested.min_throughput_mbps
            && self.max_packet_loss <= requested.max_packet_loss
    }
}

/// Fields supplied to `add_network_provider`; the contract assigns the index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub name: String,
    pub resources: Resources,
    /// Price per resource unit per second.
    pub cost: u64,
    pub domain: String,
    pub slas: BTreeSet<Sla>,
    pub vnf_images: BTreeSet<String>,
    pub address: Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkProvider {
    pub index: ProviderIndex,
    pub name: String,
    /// Registered capacity; never changes after registration.
    pub capacity: Resources,
    /// Capacity not currently leased out.
    pub available: Resources,
    pub cost: u64,
    pub domain: String,
    pub slas: BTreeSet<Sla>,
    pub vnf_images: BTreeSet<String>,
    pub address: Address,
}

impl NetworkProvider {
    pub fn from_spec(index: ProviderIndex, spec: ProviderSpec) -> Self {
        NetworkProvider {
            index,
            name: spec.name,
            capacity: spec.resources,
            available: spec.resources,
            cost: spec.cost,
            domain: spec.domain,
            slas: spec.slas,
            vnf_images: spec.vnf_images,
            address: spec.address,
        }
    }

    /// Candidate test used by provider selection.
    pub fn can_serve(&self, req: &ResourceRequest) -> bool {
        self.available.covers(&req.resources)
            && self.domain == req.domain
            && super::sla_satisfied(&self.slas, &req.sla)
            && super::vnf_supported(&self.vnf_images, &req.vnf_image)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceRequest {
    pub resources: Resources,
    pub domain: String,
    pub sla: Sla,
    pub vnf_image: String,
    /// Lease duration in seconds.
    pub lend_time_s: u64,
}

impl ResourceRequest {
    pub fn is_valid(&self) -> bool {
        !self.resources.is_zero() && self.lend_time_s > 0 && self.sla.is_valid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaseStatus {
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub id: LeaseId,
    pub supplier: ProviderIndex,
    pub requester: Address,
    pub resources: Resources,
    pub start_ms: u64,
    pub lend_time_s: u64,
    pub price: u64,
    pub status: LeaseStatus,
}

impl Lease {
    /// Simulation time (ms) from which the lease may be returned, or `None`
    /// if it does not fit in a `u64`.
    pub fn expires_at_ms(&self) -> Option<u64> {
        self.lend_time_s.checked_mul(1_000)?.checked_add(self.start_ms)
    }

    pub fn is_active(&self) -> bool {
        self.status == LeaseStatus::Active
    }
}

/// A contract call as carried by a transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "function", rename_all = "snake_case")]
pub enum Call {
    AddNetworkProvider(ProviderSpec),
    RequestResources { request: ResourceRequest, payment: u64 },
    ReturnResources { lease_id: LeaseId },
}

impl Call {
    pub fn function(&self) -> Function {
        match self {
            Call::AddNetworkProvider(_) => Function::AddNetworkProvider,
            Call::RequestResources { .. } => Function::RequestResources,
            Call::ReturnResources { .. } => Function::ReturnResources,
        }
    }

    /// Payload checks that do not depend on world state.
    pub fn is_well_formed(&self) -> bool {
        match self {
            Call::AddNetworkProvider(spec) => super::validate_provider(spec).is_ok(),
            Call::RequestResources { request, .. } => request.is_valid(),
            Call::ReturnResources { .. } => true,
        }
    }
}

/// The three contract entry points.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Function {
    AddNetworkProvider,
    RequestResources,
    ReturnResources,
}

impl Function {
    pub const ALL: [Function; 3] = [
        Function::AddNetworkProvider,
        Function::RequestResources,
        Function::ReturnResources,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Function::AddNetworkProvider => "add_network_provider",
            Function::RequestResources => "request_resources",
            Function::ReturnResources => "return_resources",
        }
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Successful result of a call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutput {
    ProviderAdded(ProviderIndex),
    ResourcesLeased { lease_id: LeaseId, supplier: ProviderIndex, price: u64 },
    ResourcesReturned(LeaseId),
}

// Canonical encodings, used by block hashing.

impl Encode for Address {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

impl Decode for Address {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Address(String::decode(dec)?))
    }
}

impl Encode for Resources {
    fn encode(&self, out: &mut Vec<u8>) {
        self.cpu.encode(out);
        self.ram.encode(out);
        self.storage.encode(out);
    }
}

impl Decode for Resources {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Resources { cpu: u64::decode(dec)?, ram: u64::decode(dec)?, storage: u64::decode(dec)? })
    }
}

impl Encode for Sla {
    fn encode(&self, out: &mut Vec<u8>) {
        self.max_latency_ms.encode(out);
        self.min_throughput_mbps.encode(out);
        self.max_packet_loss.0.encode(out);
    }
}

impl Decode for Sla {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Sla {
            max_latency_ms: u64::decode(dec)?,
            min_throughput_mbps: u64::decode(dec)?,
            max_packet_loss: LossPct(u32::decode(dec)?),
        })
    }
}

impl Encode for ProviderSpec {
    fn encode(&self, out: &mut Vec<u8>) {
        self.name.encode(out);
        self.resources.encode(out);
        self.cost.encode(out);
        self.domain.encode(out);
        self.slas.encode(out);
        self.vnf_images.encode(out);
        self.address.encode(out);
    }
}

impl Decode for ProviderSpec {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ProviderSpec {
            name: Decode::decode(dec)?,
            resources: Decode::decode(dec)?,
            cost: Decode::decode(dec)?,
            domain: Decode::decode(dec)?,
            slas: Decode::decode(dec)?,
            vnf_images: Decode::decode(dec)?,
            address: Decode::decode(dec)?,
        })
    }
}

impl Encode for ResourceRequest {
    fn encode(&self, out: &mut Vec<u8>) {
        self.resources.encode(out);
        self.domain.encode(out);
        self.sla.encode(out);
        self.vnf_image.encode(out);
        self.lend_time_s.encode(out);
    }
}

impl Decode for ResourceRequest {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ResourceRequest {
            resources: Decode::decode(dec)?,
            domain: Decode::decode(dec)?,
            sla: Decode::decode(dec)?,
            vnf_image: Decode::decode(dec)?,
            lend_time_s: Decode::decode(dec)?,
        })
    }
}

impl Encode for Call {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Call::AddNetworkProvider(spec) => {
                out.push(0);
                spec.encode(out);
            }
            Call::RequestResources { request, payment } => {
                out.push(1);
                request.encode(out);
                payment.encode(out);
            }
            Call::ReturnResources { lease_id } => {
                out.push(2);
                lease_id.0.encode(out);
            }
        }
    }
}

impl Decode for Call {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.tag()? {
            0 => Ok(Call::AddNetworkProvider(Decode::decode(dec)?)),
            1 => Ok(Call::RequestResources {
                request: Decode::decode(dec)?,
                payment: Decode::decode(dec)?,
            }),
            2 => Ok(Call::ReturnResources { lease_id: LeaseId(Decode::decode(dec)?) }),
            tag => Err(DecodeError::InvalidTag { what: "call", tag }),
        }
    }
}
