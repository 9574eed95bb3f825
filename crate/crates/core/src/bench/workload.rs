// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Fixed-rate controller and payload generator.

use rand::Rng;
use rand::seq::IndexedRandom;

use crate::chain::Transaction;
use crate::config::{RoundSpec, WorkloadConfig};
use crate::contract::{
    Address, Call, Function, Genesis, GenesisAccount, GenesisLease, LeaseId, LossPct, ProviderSpec, ResourceRequest,
    Resources, Sla,
};
use crate::netsim::NodeId;
use crate::SimTime;

pub const ADMIN: &str = "admin";
const DOMAIN: &str = "cloud-a";
const VNF_IMAGES: [&str; 3] = ["dpi-v3", "fw-v1", "lb-v2"];
const HUGE: u64 = 1_000_000_000;
const MAX_ADDED_COST: u64 = 9;

/// Account of the network provider operating `node`.
pub fn owner(node: NodeId) -> Address {
    Address::new(format!("np-{}", node + 1))
}

/// Built-in genesis: an administrator, one funded account per node and
/// `registry_size` providers with effectively unlimited capacity, owned
/// round-robin by the nodes' operators.
pub fn default_genesis(nodes: usize, registry_size: usize) -> Genesis {
    let mut g = Genesis::new(Address::from(ADMIN));
    g.accounts.push(GenesisAccount { address: Address::from(ADMIN), balance: 1_000_000_000_000_000 });
    for node in 0..nodes {
        g.accounts.push(GenesisAccount { address: owner(node), balance: 1_000_000_000_000 });
    }
    for i in 0..registry_size {
        let o = i % nodes.max(1);
        g.providers.push(ProviderSpec {
            name: format!("np-{}-p{}", o + 1, i + 1),
            resources: Resources::new(HUGE, HUGE, HUGE),
            cost: 1 + (3 * i as u64) % 7,
            domain: DOMAIN.into(),
            slas: [Sla::new(10, 1_000, LossPct::from_milli_pct(100))].into_iter().collect(),
            vnf_images: VNF_IMAGES.iter().map(|s| s.to_string()).collect(),
            address: owner(o),
        });
    }
    g
}

/// What a matching request may ask for, derived from one registered provider.
#[derive(Debug, Clone)]
struct Template {
    domain: String,
    sla: Sla,
    vnf: String,
}

fn templates(g: &Genesis) -> Vec<Template> {
    let found: Vec<Template> = g
        .providers
        .iter()
        .filter_map(|p| {
            Some(Template {
                domain: p.domain.clone(),
                sla: *p.slas.iter().next()?,
                vnf: p.vnf_images.iter().next()?.clone(),
            })
        })
        .collect();
    if found.is_empty() {
        vec![Template {
            domain: DOMAIN.into(),
            sla: Sla::new(10, 1_000, LossPct::from_milli_pct(100)),
            vnf: VNF_IMAGES[0].into(),
        }]
    } else {
        found
    }
}

/// One scheduled submission.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub at: SimTime,
    pub node: NodeId,
    pub tx: Transaction,
}

#[derive(Debug, Clone)]
pub struct Workload {
    /// `base` plus the leases that `return_resources` calls will close.
    pub genesis: Genesis,
    pub injections: Vec<Injection>,
}

struct Generator<'a, R> {
    rng: &'a mut R,
    templates: Vec<Template>,
    max_cost: u64,
    spec: &'a WorkloadConfig,
}

impl<R: Rng> Generator<'_, R> {
    fn request(&mut self, lend_time_s: u64) -> ResourceRequest {
        let t = self.templates.choose(self.rng).expect("templates never empty").clone();
        let loss = (t.sla.max_packet_loss.0 + self.rng.random_range(0..=1_000)).min(LossPct::MAX.0);
        ResourceRequest {
            resources: Resources::new(
                self.rng.random_range(1..=4),
                self.rng.random_range(1..=8),
                self.rng.random_range(1..=16),
            ),
            domain: t.domain,
            sla: Sla::new(
                t.sla.max_latency_ms + self.rng.random_range(0..=40),
                self.rng.random_range(0..=t.sla.min_throughput_mbps),
                LossPct(loss),
            ),
            vnf_image: t.vnf,
            lend_time_s,
        }
    }

    fn price_bound(&self, req: &ResourceRequest) -> u64 {
        req.resources
            .checked_total()
            .and_then(|t| t.checked_mul(self.max_cost))
            .and_then(|t| t.checked_mul(req.lend_time_s))
            .unwrap_or(u64::MAX)
    }

    fn request_call(&mut self) -> Call {
        let lend = self.rng.random_range(60..=600);
        let mut request = self.request(lend);
        let mut payment = self.price_bound(&request);
        let u: f64 = self.rng.random();
        if u < self.spec.insufficient_payment_fraction {
            payment = 0;
        } else if u < self.spec.insufficient_payment_fraction + self.spec.no_match_fraction {
            request.vnf_image = "no-such-vnf".into();
        }
        Call::RequestResources { request, payment }
    }

    fn add_call(&mut self, node: NodeId, seq: u64) -> Call {
        let t = self.templates.choose(self.rng).expect("templates never empty").clone();
        Call::AddNetworkProvider(ProviderSpec {
            name: format!("np-{}-x{seq}", node + 1),
            resources: Resources::new(HUGE, HUGE, HUGE),
            cost: self.rng.random_range(1..=MAX_ADDED_COST),
            domain: t.domain,
            slas: [t.sla].into_iter().collect(),
            vnf_images: [t.vnf].into_iter().collect(),
            address: owner(node),
        })
    }
}

fn pick(mix: &crate::config::Mix, u: f64) -> Function {
    let mut acc = 0.0;
    for f in Function::ALL {
        acc += mix.weight(f);
        if u < acc {
            return f;
        }
    }
    // Rounding can leave `u` just above the last cumulative weight.
    *Function::ALL.iter().rev().find(|f| mix.weight(**f) > 0.0).expect("mix sums to 1")
}

/// Schedules `floor(itr * duration)` submissions spaced `1/itr` apart,
/// starting at the end of the warm-up and assigned to nodes round-robin.
/// Functions follow the round's mix. Each `return_resources` call closes a
/// distinct lease that is added to the genesis with a one-second term.
pub fn build_workload<R: Rng>(
    base: &Genesis,
    nodes: usize,
    spec: &WorkloadConfig,
    round: &RoundSpec,
    itr: f64,
    rng: &mut R,
) -> Workload {
    let count = spec.injections(itr);
    let max_cost = base.providers.iter().map(|p| p.cost).max().unwrap_or(0).max(MAX_ADDED_COST);
    let mut genesis = base.clone();
    let mut next_lease = base.leases.len() as u64 + 1;
    let mut gen = Generator { rng, templates: templates(base), max_cost, spec };
    let mut injections = Vec::with_capacity(count as usize);
    for i in 0..count {
        let at = SimTime::from_secs_f64(spec.warmup_s + i as f64 / itr);
        let node = (i % nodes as u64) as NodeId;
        let function = pick(&round.mix, gen.rng.random());
        let (sender, call) = match function {
            Function::AddNetworkProvider => (Address::from(ADMIN), gen.add_call(node, i + 1)),
            Function::RequestResources => (owner(node), gen.request_call()),
            Function::ReturnResources => {
                let request = gen.request(1);
                let payment = gen.price_bound(&request);
                genesis.leases.push(GenesisLease { requester: owner(node), request, payment });
                let lease_id = LeaseId(next_lease);
                next_lease += 1;
                (owner(node), Call::ReturnResources { lease_id })
            }
        };
        injections.push(Injection { at, node, tx: Transaction { id: i + 1, sender, call, submitted_at: at } });
    }
    Workload { genesis, injections }
}
