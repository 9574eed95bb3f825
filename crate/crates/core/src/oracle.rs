// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Brute-force reference model of the marketplace contract.
//!
//! The model keeps flat vectors, filters every provider and then takes an
//! argmin, and does its arithmetic in `u128`. It shares no code with
//! [`crate::contract`] beyond the input types, so agreement between the two
//! is meaningful. [`check_scenario`] replays a [`Scenario`] through both and
//! reports every disagreement together with conservation checks on the
//! contract state.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contract::{
    Address, Call, CallOutput, ContractError, Genesis, GenesisAccount, GenesisError, LeaseId,
    LossPct, ProviderIndex, ProviderSpec, ResourceRequest, Resources, Sla, WorldState,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub sender: Address,
    pub call: Call,
    pub now_ms: u64,
}

/// Genesis plus an ordered list of calls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub genesis: Genesis,
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, GenesisError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| GenesisError::Io { path: path.display().to_string(), source })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Outcome of a call, reduced to what both models must agree on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Ok(CallOutput),
    Reverted(&'static str),
}

pub fn error_kind(e: &ContractError) -> &'static str {
    match e {
        ContractError::NotAdmin { .. } => "not_admin",
        ContractError::InvalidProvider { .. } => "invalid_provider",
        ContractError::InvalidRequest { .. } => "invalid_request",
        ContractError::UnknownAccount { .. } => "unknown_account",
        ContractError::InsufficientBalance { .. } => "insufficient_balance",
        ContractError::NoProviderFound => "no_provider_found",
        ContractError::InsufficientPayment { .. } => "insufficient_payment",
        ContractError::ArithmeticOverflow => "arithmetic_overflow",
        ContractError::UnknownLease { .. } => "unknown_lease",
        ContractError::LeaseClosed { .. } => "lease_closed",
        ContractError::LeaseNotExpired { .. } => "lease_not_expired",
        ContractError::AdminFundsExhausted { .. } => "admin_funds_exhausted",
    }
}

#[derive(Debug, Clone)]
struct Provider {
    name: String,
    capacity: [u64; 3],
    free: [u64; 3],
    cost: u64,
    domain: String,
    slas: Vec<Sla>,
    images: Vec<String>,
    owner: Address,
}

#[derive(Debug, Clone)]
struct Loan {
    supplier: usize,
    amounts: [u64; 3],
    start_ms: u64,
    lend_time_s: u64,
    open: bool,
}

/// Flat reference model of the world state.
#[derive(Debug, Clone)]
pub struct OracleModel {
    admin: Address,
    providers: Vec<Provider>,
    balances: Vec<(Address, u64)>,
    loans: Vec<Loan>,
    initial_balance: u64,
}

fn triple(r: &Resources) -> [u64; 3] {
    [r.cpu, r.ram, r.storage]
}

impl OracleModel {
    pub fn from_genesis(g: &Genesis) -> Result<Self, String> {
        let mut m = OracleModel {
            admin: g.admin.clone(),
            providers: Vec::new(),
            balances: vec![(g.admin.clone(), 0)],
            loans: Vec::new(),
            initial_balance: g.provider_initial_balance,
        };
        for a in &g.accounts {
            match m.balances.iter_mut().find(|(addr, _)| *addr == a.address) {
                Some(slot) => slot.1 = a.balance,
                None => m.balances.push((a.address.clone(), a.balance)),
            }
        }
        for p in &g.providers {
            if let Outcome::Reverted(k) = m.apply(&g.admin, &Call::AddNetworkProvider(p.clone()), 0) {
                return Err(format!("genesis provider rejected: {k}"));
            }
        }
        for l in &g.leases {
            let call = Call::RequestResources { request: l.request.clone(), payment: l.payment };
            if let Outcome::Reverted(k) = m.apply(&l.requester, &call, 0) {
                return Err(format!("genesis lease rejected: {k}"));
            }
        }
        Ok(m)
    }

    fn balance_slot(&mut self, a: &Address) -> Option<&mut u64> {
        self.balances.iter_mut().find(|(addr, _)| addr == a).map(|(_, b)| b)
    }

    fn balance(&self, a: &Address) -> Option<u64> {
        self.balances.iter().find(|(addr, _)| addr == a).map(|(_, b)| *b)
    }

    fn qualifies(p: &Provider, req: &ResourceRequest) -> bool {
        let want = triple(&req.resources);
        (0..3).all(|d| p.free[d] >= want[d])
            && p.domain == req.domain
            && p.slas.iter().any(|s| {
                s.max_latency_ms <= req.sla.max_latency_ms
                    && s.min_throughput_mbps >= req.sla.min_throughput_mbps
                    && s.max_packet_loss <= req.sla.max_packet_loss
            })
            && p.images.iter().any(|i| *i == req.vnf_image)
    }

    /// Filter-then-argmin; among equal minimum costs the largest index wins.
    /// Returns a 0-based position.
    fn argmin(&self, req: &ResourceRequest, exclude_owner: Option<&Address>) -> Option<usize> {
        let candidates: Vec<usize> = (0..self.providers.len())
            .filter(|&i| Self::qualifies(&self.providers[i], req))
            .filter(|&i| exclude_owner.is_none_or(|o| self.providers[i].owner != *o))
            .collect();
        let min_cost = candidates.iter().map(|&i| self.providers[i].cost).min()?;
        candidates.into_iter().filter(|&i| self.providers[i].cost == min_cost).max()
    }

    /// Best provider ignoring who asks, as a 1-based registry index.
    pub fn best_provider(&self, req: &ResourceRequest) -> Option<ProviderIndex> {
        self.argmin(req, None).map(|i| ProviderIndex(i as u64 + 1))
    }

    pub fn apply(&mut self, sender: &Address, call: &Call, now_ms: u64) -> Outcome {
        match call {
            Call::AddNetworkProvider(spec) => self.add(sender, spec),
            Call::RequestResources { request, payment } => self.request(sender, request, *payment, now_ms),
            Call::ReturnResources { lease_id } => self.give_back(*lease_id, now_ms),
        }
    }

    fn add(&mut self, sender: &Address, spec: &ProviderSpec) -> Outcome {
        if *sender != self.admin {
            return Outcome::Reverted("not_admin");
        }
        let loss_ok = spec.slas.iter().all(|s| s.max_packet_loss.0 <= 100_000);
        if spec.name.is_empty() || spec.domain.is_empty() || spec.address.0.is_empty() || !loss_ok {
            return Outcome::Reverted("invalid_provider");
        }
        let exists = self.balance(&spec.address).is_some();
        if !exists {
            let admin_bal = self.balance(&self.admin.clone()).unwrap_or(0);
            if admin_bal < self.initial_balance {
                return Outcome::Reverted("admin_funds_exhausted");
            }
            let grant = self.initial_balance;
            *self.balance_slot(&self.admin.clone()).expect("admin present") -= grant;
            self.balances.push((spec.address.clone(), grant));
        }
        self.providers.push(Provider {
            name: spec.name.clone(),
            capacity: triple(&spec.resources),
            free: triple(&spec.resources),
            cost: spec.cost,
            domain: spec.domain.clone(),
            slas: spec.slas.iter().copied().collect(),
            images: spec.vnf_images.iter().cloned().collect(),
            owner: spec.address.clone(),
        });
        Outcome::Ok(CallOutput::ProviderAdded(ProviderIndex(self.providers.len() as u64)))
    }

    fn request(&mut self, sender: &Address, req: &ResourceRequest, payment: u64, now_ms: u64) -> Outcome {
        let want = triple(&req.resources);
        if want == [0, 0, 0] || req.lend_time_s == 0 || req.sla.max_packet_loss > LossPct::MAX {
            return Outcome::Reverted("invalid_request");
        }
        let Some(balance) = self.balance(sender) else {
            return Outcome::Reverted("unknown_account");
        };
        if payment > balance {
            return Outcome::Reverted("insufficient_balance");
        }
        let Some(pos) = self.argmin(req, Some(sender)).or_else(|| self.argmin(req, None)) else {
            return Outcome::Reverted("no_provider_found");
        };
        let units: u128 = want.iter().map(|&v| v as u128).sum();
        let price = units * self.providers[pos].cost as u128 * req.lend_time_s as u128;
        if price > u64::MAX as u128 {
            return Outcome::Reverted("arithmetic_overflow");
        }
        let price = price as u64;
        if payment < price {
            return Outcome::Reverted("insufficient_payment");
        }
        let owner = self.providers[pos].owner.clone();
        if owner != *sender && self.balance(&owner).unwrap_or(0) as u128 + price as u128 > u64::MAX as u128 {
            return Outcome::Reverted("arithmetic_overflow");
        }
        *self.balance_slot(sender).expect("checked") -= price;
        match self.balance_slot(&owner) {
            Some(b) => *b += price,
            None => self.balances.push((owner, price)),
        }
        for d in 0..3 {
            self.providers[pos].free[d] -= want[d];
        }
        self.loans.push(Loan { supplier: pos, amounts: want, start_ms: now_ms, lend_time_s: req.lend_time_s, open: true });
        Outcome::Ok(CallOutput::ResourcesLeased {
            lease_id: LeaseId(self.loans.len() as u64),
            supplier: ProviderIndex(pos as u64 + 1),
            price,
        })
    }

    fn give_back(&mut self, lease_id: LeaseId, now_ms: u64) -> Outcome {
        let Some(pos) = (lease_id.0 as usize).checked_sub(1).filter(|&p| p < self.loans.len()) else {
            return Outcome::Reverted("unknown_lease");
        };
        let loan = self.loans[pos].clone();
        if !loan.open {
            return Outcome::Reverted("lease_closed");
        }
        let expiry = loan.start_ms as u128 + loan.lend_time_s as u128 * 1000;
        if expiry > u64::MAX as u128 {
            return Outcome::Reverted("arithmetic_overflow");
        }
        if (now_ms as u128) < expiry {
            return Outcome::Reverted("lease_not_expired");
        }
        for d in 0..3 {
            self.providers[loan.supplier].free[d] += loan.amounts[d];
        }
        self.loans[pos].open = false;
        Outcome::Ok(CallOutput::ResourcesReturned(lease_id))
    }

    /// Differences between this model and a contract state, empty if equal.
    pub fn diff(&self, state: &WorldState) -> Vec<String> {
        let mut out = Vec::new();
        if state.providers.len() != self.providers.len() {
            out.push(format!("registry size {} vs {}", state.providers.len(), self.providers.len()));
        }
        for (i, p) in self.providers.iter().enumerate() {
            match state.providers.get(&ProviderIndex(i as u64 + 1)) {
                Some(q) if triple(&q.available) == p.free && triple(&q.capacity) == p.capacity && q.name == p.name => {}
                Some(q) => out.push(format!("provider {}: available {:?} vs {:?}", i + 1, q.available, p.free)),
                None => out.push(format!("provider {} missing", i + 1)),
            }
        }
        if state.accounts.len() != self.balances.len() {
            out.push(format!("account count {} vs {}", state.accounts.len(), self.balances.len()));
        }
        for (addr, bal) in &self.balances {
            if state.accounts.get(addr) != Some(bal) {
                out.push(format!("balance of {addr}: {:?} vs {bal}", state.accounts.get(addr)));
            }
        }
        if state.leases.len() != self.loans.len() {
            out.push(format!("lease count {} vs {}", state.leases.len(), self.loans.len()));
        }
        for (i, loan) in self.loans.iter().enumerate() {
            match state.leases.get(&LeaseId(i as u64 + 1)) {
                Some(l) if l.is_active() == loan.open && triple(&l.resources) == loan.amounts && l.start_ms == loan.start_ms => {}
                _ => out.push(format!("lease {} differs", i + 1)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub step: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScenarioReport {
    pub steps: usize,
    pub successes: usize,
    pub selection_checks: usize,
    pub mismatches: Vec<Mismatch>,
    pub conservation_violations: Vec<Mismatch>,
}

impl ScenarioReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty() && self.conservation_violations.is_empty()
    }
}

fn conservation_errors(state: &WorldState, expected_total: Option<u64>) -> Vec<String> {
    let mut out = Vec::new();
    if state.total_balance() != expected_total {
        out.push(format!("currency total {:?} != {:?}", state.total_balance(), expected_total));
    }
    for p in state.providers.values() {
        let leased = state.leased_from(p.index);
        if p.available.checked_add(&leased) != Some(p.capacity) {
            out.push(format!(
                "provider {}: available {:?} + leased {:?} != capacity {:?}",
                p.index, p.available, leased, p.capacity
            ));
        }
    }
    out
}

/// Replays `scenario` through the contract and the oracle, comparing every
/// outcome, every selection and the full state after each step.
pub fn check_scenario(scenario: &Scenario) -> Result<ScenarioReport, GenesisError> {
    let mut state = scenario.genesis.build()?;
    let mut model = match OracleModel::from_genesis(&scenario.genesis) {
        Ok(m) => m,
        Err(detail) => {
            let mut report = ScenarioReport::default();
            report.mismatches.push(Mismatch { step: 0, detail });
            return Ok(report);
        }
    };
    let mut report = ScenarioReport { steps: scenario.steps.len(), ..Default::default() };
    let total = state.total_balance();
    for detail in model.diff(&state) {
        report.mismatches.push(Mismatch { step: 0, detail: format!("genesis: {detail}") });
    }
    for (i, step) in scenario.steps.iter().enumerate() {
        if let Call::RequestResources { request, .. } = &step.call {
            report.selection_checks += 1;
            let ours = state.select_best_provider(request);
            let theirs = model.best_provider(request);
            if ours != theirs {
                report.mismatches.push(Mismatch { step: i, detail: format!("selection {ours:?} vs oracle {theirs:?}") });
            }
        }
        let before = state.clone();
        let ours = match state.execute(&step.sender, &step.call, step.now_ms) {
            Ok(out) => Outcome::Ok(out),
            Err(e) => Outcome::Reverted(error_kind(&e)),
        };
        let theirs = model.apply(&step.sender, &step.call, step.now_ms);
        if matches!(ours, Outcome::Ok(_)) {
            report.successes += 1;
        } else if state != before {
            report.conservation_violations.push(Mismatch { step: i, detail: "reverted call changed state".into() });
        }
        if ours != theirs {
            report.mismatches.push(Mismatch { step: i, detail: format!("outcome {ours:?} vs oracle {theirs:?}") });
        }
        for detail in model.diff(&state) {
            report.mismatches.push(Mismatch { step: i, detail });
        }
        for detail in conservation_errors(&state, total) {
            report.conservation_violations.push(Mismatch { step: i, detail });
        }
    }
    Ok(report)
}

const DOMAINS: [&str; 3] = ["attica", "crete", "macedonia"];
const IMAGES: [&str; 4] = ["fw-v1", "lb-v2", "dpi-v1", "nat-v3"];

fn random_sla<R: Rng>(rng: &mut R) -> Sla {
    Sla::new(
        [5, 10, 20, 50][rng.random_range(0..4)],
        [10, 50, 100, 1000][rng.random_range(0..4)],
        LossPct::from_centi_pct([1, 10, 50, 100][rng.random_range(0..4)]),
    )
}

/// Random marketplace scenario with small alphabets so that ties, SLA
/// misses, exhausted capacity, early returns and underpayments all occur.
pub fn random_scenario<R: Rng>(rng: &mut R, max_providers: usize, max_steps: usize) -> Scenario {
    let owners: Vec<Address> = (1..=5).map(|i| Address::new(format!("np-{i}"))).collect();
    let mut genesis = Genesis::new(Address::from("admin"));
    genesis.provider_initial_balance = [0, 0, 50][rng.random_range(0..3)];
    let pre = rng.random_range(0..=max_providers.min(20));
    // Genesis providers are funded by the admin; later additions may find it broke.
    let admin_balance = pre as u64 * genesis.provider_initial_balance + rng.random_range(0..500);
    genesis.accounts.push(GenesisAccount { address: Address::from("admin"), balance: admin_balance });
    for o in &owners {
        genesis.accounts.push(GenesisAccount { address: o.clone(), balance: rng.random_range(0..20_000) });
    }
    let provider = |rng: &mut R, k: usize| ProviderSpec {
        name: format!("prov-{k}"),
        resources: Resources::new(rng.random_range(0..32), rng.random_range(0..128), rng.random_range(0..1000)),
        cost: rng.random_range(0..6),
        domain: DOMAINS.choose(rng).unwrap().to_string(),
        slas: (0..rng.random_range(0..3)).map(|_| random_sla(rng)).collect(),
        vnf_images: (0..rng.random_range(0..3)).map(|_| IMAGES.choose(rng).unwrap().to_string()).collect(),
        address: if rng.random_bool(0.8) {
            owners.choose(rng).unwrap().clone()
        } else {
            Address::new(format!("fresh-{k}"))
        },
    };
    for k in 0..pre {
        genesis.providers.push(provider(rng, k));
    }
    let mut now_ms = 0u64;
    let mut steps = Vec::new();
    let mut added = pre;
    let n_steps = rng.random_range(1..=max_steps.max(1));
    for _ in 0..n_steps {
        now_ms += rng.random_range(0..20_000);
        let roll = rng.random_range(0..100);
        let step = if roll < 10 && added < max_providers {
            added += 1;
            let sender = if rng.random_bool(0.85) { Address::from("admin") } else { owners[0].clone() };
            Step { sender, call: Call::AddNetworkProvider(provider(rng, added)), now_ms }
        } else if roll < 65 {
            let request = ResourceRequest {
                resources: Resources::new(rng.random_range(0..6), rng.random_range(0..16), rng.random_range(0..100)),
                domain: DOMAINS.choose(rng).unwrap().to_string(),
                sla: random_sla(rng),
                vnf_image: IMAGES.choose(rng).unwrap().to_string(),
                lend_time_s: rng.random_range(0..120),
            };
            let payment = rng.random_range(0..6_000);
            let sender = if rng.random_bool(0.95) {
                owners.choose(rng).unwrap().clone()
            } else {
                Address::from("stranger")
            };
            Step { sender, call: Call::RequestResources { request, payment }, now_ms }
        } else {
            let lease_id = LeaseId(rng.random_range(0..(steps.len() as u64 + 3)));
            Step { sender: owners.choose(rng).unwrap().clone(), call: Call::ReturnResources { lease_id }, now_ms }
        };
        steps.push(step);
    }
    Scenario { genesis, steps }
}
