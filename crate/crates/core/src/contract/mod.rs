// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! The marketplace contract.
//!
//! [`WorldState`] is the replicated state: the provider registry, account
//! balances and the lease registry. Every entry point validates all of its
//! preconditions before touching state, so a call that returns `Err` leaves
//! the state exactly as it found it.

mod genesis;
mod types;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::Encode;

pub use genesis::{Genesis, GenesisAccount, GenesisError, GenesisLease};
pub use types::{
    Address, Call, CallOutput, Function, Lease, LeaseId, LeaseStatus, LossPct, NetworkProvider,
    ProviderIndex, ProviderSpec, ResourceRequest, Resources, Sla,
};

/// Reason a contract call reverted.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum ContractError {
    #[error("caller {caller} is not the administrator")]
    NotAdmin { caller: Address },
    #[error("invalid provider: {detail}")]
    InvalidProvider { detail: String },
    #[error("invalid request: {detail}")]
    InvalidRequest { detail: String },
    #[error("no account for {address}")]
    UnknownAccount { address: Address },
    #[error("payment {payment} exceeds balance {balance}")]
    InsufficientBalance { payment: u64, balance: u64 },
    #[error("no provider satisfies the request")]
    NoProviderFound,
    #[error("payment {payment} below price {price}")]
    InsufficientPayment { payment: u64, price: u64 },
    #[error("arithmetic overflow")]
    ArithmeticOverflow,
    #[error("unknown lease {lease_id}")]
    UnknownLease { lease_id: LeaseId },
    #[error("lease {lease_id} already returned")]
    LeaseClosed { lease_id: LeaseId },
    #[error("lease {lease_id} expires at {expires_at_ms} ms, now is {now_ms} ms")]
    LeaseNotExpired { lease_id: LeaseId, expires_at_ms: u64, now_ms: u64 },
    #[error("administrator cannot fund initial balance {needed}")]
    AdminFundsExhausted { needed: u64 },
}

/// True iff some offered SLA is at least as good as `requested` on latency,
/// throughput and packet loss simultaneously.
pub fn sla_satisfied<'a>(offered: impl IntoIterator<Item = &'a Sla>, requested: &Sla) -> bool {
    offered.into_iter().any(|sla| sla.dominates(requested))
}

/// Exact, case-sensitive image-name membership.
pub fn vnf_supported(images: &BTreeSet<String>, requested: &str) -> bool {
    images.contains(requested)
}

/// Price of a lease: `(cpu + ram + storage) * cost * lend_time_s`.
pub fn calculate_best_cost(
    provider: &NetworkProvider,
    req: &ResourceRequest,
) -> Result<u64, ContractError> {
    price_for(provider.cost, &req.resources, req.lend_time_s)
}

pub(crate) fn price_for(cost: u64, resources: &Resources, lend_time_s: u64) -> Result<u64, ContractError> {
    resources
        .checked_total()
        .and_then(|units| units.checked_mul(cost))
        .and_then(|v| v.checked_mul(lend_time_s))
        .ok_or(ContractError::ArithmeticOverflow)
}

pub(crate) fn validate_provider(spec: &ProviderSpec) -> Result<(), ContractError> {
    let invalid = |detail: &str| Err(ContractError::InvalidProvider { detail: detail.to_owned() });
    if spec.name.is_empty() {
        return invalid("empty name");
    }
    if spec.domain.is_empty() {
        return invalid("empty domain");
    }
    if spec.address.as_str().is_empty() {
        return invalid("empty address");
    }
    if !spec.slas.iter().all(Sla::is_valid) {
        return invalid("packet loss above 100%");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub admin: Address,
    pub providers: BTreeMap<ProviderIndex, NetworkProvider>,
    pub accounts: BTreeMap<Address, u64>,
    pub leases: BTreeMap<LeaseId, Lease>,
    pub next_provider_index: u64,
    pub next_lease_id: u64,
    /// Balance moved from the administrator into a provider account that
    /// `add_network_provider` creates.
    pub provider_initial_balance: u64,
}

impl WorldState {
    pub fn new(admin: Address) -> Self {
        let mut accounts = BTreeMap::new();
        accounts.insert(admin.clone(), 0);
        WorldState {
            admin,
            providers: BTreeMap::new(),
            accounts,
            leases: BTreeMap::new(),
            next_provider_index: 1,
            next_lease_id: 1,
            provider_initial_balance: 0,
        }
    }

    pub fn provider(&self, index: ProviderIndex) -> Option<&NetworkProvider> {
        self.providers.get(&index)
    }

    pub fn balance(&self, address: &Address) -> Option<u64> {
        self.accounts.get(address).copied()
    }

    pub fn registry_size(&self) -> usize {
        self.providers.len()
    }

    /// Sum of all balances, or `None` on overflow.
    pub fn total_balance(&self) -> Option<u64> {
        self.accounts.values().try_fold(0u64, |acc, b| acc.checked_add(*b))
    }

    /// Sum of the resources held by active leases of one supplier.
    pub fn leased_from(&self, index: ProviderIndex) -> Resources {
        self.leases
            .values()
            .filter(|l| l.supplier == index && l.is_active())
            .fold(Resources::default(), |acc, l| {
                acc.checked_add(&l.resources).expect("leased amounts bounded by capacity")
            })
    }

    /// Runs one contract call. `now_ms` is the timestamp of the enclosing block.
    pub fn execute(
        &mut self,
        sender: &Address,
        call: &Call,
        now_ms: u64,
    ) -> Result<CallOutput, ContractError> {
        match call {
            Call::AddNetworkProvider(spec) => self
                .add_network_provider(sender, spec.clone())
                .map(CallOutput::ProviderAdded),
            Call::RequestResources { request, payment } => self
                .request_resources(sender, request, *payment, now_ms)
                .map(|lease| CallOutput::ResourcesLeased {
                    lease_id: lease.id,
                    supplier: lease.supplier,
                    price: lease.price,
                }),
            Call::ReturnResources { lease_id } => self
                .return_resources(sender, *lease_id, now_ms)
                .map(|()| CallOutput::ResourcesReturned(*lease_id)),
        }
    }

    pub fn add_network_provider(
        &mut self,
        caller: &Address,
        spec: ProviderSpec,
    ) -> Result<ProviderIndex, ContractError> {
        if *caller != self.admin {
            return Err(ContractError::NotAdmin { caller: caller.clone() });
        }
        validate_provider(&spec)?;
        let index = ProviderIndex(self.next_provider_index);
        let next = self.next_provider_index.checked_add(1).ok_or(ContractError::ArithmeticOverflow)?;

        let funding = if self.accounts.contains_key(&spec.address) {
            0
        } else {
            self.provider_initial_balance
        };
        let admin_balance = self.accounts.get(&self.admin).copied().unwrap_or(0);
        if admin_balance < funding {
            return Err(ContractError::AdminFundsExhausted { needed: funding });
        }

        if !self.accounts.contains_key(&spec.address) {
            self.accounts.insert(spec.address.clone(), funding);
            *self.accounts.get_mut(&self.admin).expect("admin account exists") -= funding;
        }
        self.providers.insert(index, NetworkProvider::from_spec(index, spec));
        self.next_provider_index = next;
        Ok(index)
    }

    /// Cheapest candidate provider, scanning indices in ascending order. On a
    /// cost tie the later index replaces the incumbent.
    pub fn select_best_provider(&self, req: &ResourceRequest) -> Option<ProviderIndex> {
        self.select_where(req, |_| true)
    }

    fn select_where(
        &self,
        req: &ResourceRequest,
        mut admit: impl FnMut(&NetworkProvider) -> bool,
    ) -> Option<ProviderIndex> {
        let mut best: Option<&NetworkProvider> = None;
        for p in self.providers.values() {
            if !admit(p) || !p.can_serve(req) {
                continue;
            }
            match best {
                Some(b) if p.cost > b.cost => {}
                _ => best = Some(p),
            }
        }
        best.map(|p| p.index)
    }

    /// Supplier for `caller`: the best provider owned by someone else, or the
    /// caller's own provider when nobody else qualifies.
    pub fn select_supplier(&self, caller: &Address, req: &ResourceRequest) -> Option<ProviderIndex> {
        self.select_where(req, |p| p.address != *caller)
            .or_else(|| self.select_best_provider(req))
    }

    pub fn request_resources(
        &mut self,
        caller: &Address,
        req: &ResourceRequest,
        payment: u64,
        now_ms: u64,
    ) -> Result<Lease, ContractError> {
        if !req.is_valid() {
            return Err(ContractError::InvalidRequest {
                detail: "empty resources, zero lend time or invalid sla".to_owned(),
            });
        }
        let balance = self
            .balance(caller)
            .ok_or_else(|| ContractError::UnknownAccount { address: caller.clone() })?;
        if payment > balance {
            return Err(ContractError::InsufficientBalance { payment, balance });
        }
        let supplier = self.select_supplier(caller, req).ok_or(ContractError::NoProviderFound)?;
        let provider = &self.providers[&supplier];
        let price = calculate_best_cost(provider, req)?;
        if payment < price {
            return Err(ContractError::InsufficientPayment { payment, price });
        }
        let supplier_addr = provider.address.clone();
        let remaining = provider
            .available
            .checked_sub(&req.resources)
            .expect("candidate covers the request");
        let supplier_balance = self.balance(&supplier_addr).unwrap_or(0);
        if supplier_addr != *caller && supplier_balance.checked_add(price).is_none() {
            return Err(ContractError::ArithmeticOverflow);
        }
        let lease_id = LeaseId(self.next_lease_id);
        let next_lease = self.next_lease_id.checked_add(1).ok_or(ContractError::ArithmeticOverflow)?;

        // All checks passed; mutate.
        *self.accounts.get_mut(caller).expect("checked above") -= price;
        *self.accounts.entry(supplier_addr).or_insert(0) += price;
        self.providers.get_mut(&supplier).expect("selected").available = remaining;
        let lease = Lease {
            id: lease_id,
            supplier,
            requester: caller.clone(),
            resources: req.resources,
            start_ms: now_ms,
            lend_time_s: req.lend_time_s,
            price,
            status: LeaseStatus::Active,
        };
        self.leases.insert(lease_id, lease.clone());
        self.next_lease_id = next_lease;
        Ok(lease)
    }

    /// Any caller may close an expired lease; the simulation clock stands in
    /// for an external time source.
    pub fn return_resources(
        &mut self,
        _caller: &Address,
        lease_id: LeaseId,
        now_ms: u64,
    ) -> Result<(), ContractError> {
        let lease = self.leases.get(&lease_id).ok_or(ContractError::UnknownLease { lease_id })?;
        if !lease.is_active() {
            return Err(ContractError::LeaseClosed { lease_id });
        }
        let expires_at_ms = lease.expires_at_ms().ok_or(ContractError::ArithmeticOverflow)?;
        if now_ms < expires_at_ms {
            return Err(ContractError::LeaseNotExpired { lease_id, expires_at_ms, now_ms });
        }
        let provider = &self.providers[&lease.supplier];
        let restored = provider
            .available
            .checked_add(&lease.resources)
            .ok_or(ContractError::ArithmeticOverflow)?;
        let supplier = lease.supplier;

        self.providers.get_mut(&supplier).expect("lease supplier exists").available = restored;
        self.leases.get_mut(&lease_id).expect("checked above").status = LeaseStatus::Closed;
        Ok(())
    }

    /// SHA-256 over a canonical encoding of the whole state.
    pub fn digest(&self) -> [u8; 32] {
        let mut out = Vec::new();
        self.admin.encode(&mut out);
        self.next_provider_index.encode(&mut out);
        self.next_lease_id.encode(&mut out);
        self.provider_initial_balance.encode(&mut out);
        (self.accounts.len() as u64).encode(&mut out);
        for (addr, bal) in &self.accounts {
            addr.encode(&mut out);
            bal.encode(&mut out);
        }
        (self.providers.len() as u64).encode(&mut out);
        for p in self.providers.values() {
            p.index.0.encode(&mut out);
            p.name.encode(&mut out);
            p.capacity.encode(&mut out);
            p.available.encode(&mut out);
            p.cost.encode(&mut out);
            p.domain.encode(&mut out);
            p.slas.encode(&mut out);
            p.vnf_images.encode(&mut out);
            p.address.encode(&mut out);
        }
        (self.leases.len() as u64).encode(&mut out);
        for l in self.leases.values() {
            l.id.0.encode(&mut out);
            l.supplier.0.encode(&mut out);
            l.requester.encode(&mut out);
            l.resources.encode(&mut out);
            l.start_ms.encode(&mut out);
            l.lend_time_s.encode(&mut out);
            l.price.encode(&mut out);
            l.is_active().encode(&mut out);
        }
        Sha256::digest(&out).into()
    }
}
