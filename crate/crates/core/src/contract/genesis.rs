// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Address, ContractError, ProviderSpec, ResourceRequest, WorldState};

#[derive(Debug, Error)]
pub enum GenesisError {
    #[error("reading genesis file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing genesis file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate account {0}")]
    DuplicateAccount(Address),
    #[error("genesis provider {index}: {source}")]
    Provider { index: usize, source: ContractError },
    #[error("genesis lease {index}: {source}")]
    Lease { index: usize, source: ContractError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisAccount {
    pub address: Address,
    pub balance: u64,
}

/// A lease opened at time zero, before the first block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisLease {
    pub requester: Address,
    pub request: ResourceRequest,
    pub payment: u64,
}

/// Initial world state as stored in a genesis file.
///
/// ```json
/// { "admin": "admin",
///   "accounts": [{"address": "np-1", "balance": 1000}],
///   "providers": [],
///   "leases": [] }
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genesis {
    pub admin: Address,
    #[serde(default)]
    pub accounts: Vec<GenesisAccount>,
    #[serde(default)]
    pub providers: Vec<ProviderSpec>,
    #[serde(default)]
    pub leases: Vec<GenesisLease>,
    #[serde(default)]
    pub provider_initial_balance: u64,
}

impl Genesis {
    pub fn new(admin: Address) -> Self {
        Genesis {
            admin,
            accounts: Vec::new(),
            providers: Vec::new(),
            leases: Vec::new(),
            provider_initial_balance: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self, GenesisError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| GenesisError::Io { path: path.display().to_string(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Builds the state every replica starts from: accounts first, then
    /// providers registered by the administrator, then leases opened at t=0.
    pub fn build(&self) -> Result<WorldState, GenesisError> {
        let mut state = WorldState::new(self.admin.clone());
        state.provider_initial_balance = self.provider_initial_balance;
        let mut seen_admin = false;
        for acct in &self.accounts {
            if acct.address == self.admin {
                if seen_admin {
                    return Err(GenesisError::DuplicateAccount(acct.address.clone()));
                }
                seen_admin = true;
            } else if state.accounts.contains_key(&acct.address) {
                return Err(GenesisError::DuplicateAccount(acct.address.clone()));
            }
            state.accounts.insert(acct.address.clone(), acct.balance);
        }
        for (index, spec) in self.providers.iter().enumerate() {
            state
                .add_network_provider(&self.admin, spec.clone())
                .map_err(|source| GenesisError::Provider { index, source })?;
        }
        for (index, lease) in self.leases.iter().enumerate() {
            state
                .request_resources(&lease.requester, &lease.request, lease.payment, 0)
                .map_err(|source| GenesisError::Lease { index, source })?;
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::{LeaseId, LossPct, Resources, Sla};

    #[test]
    fn parses_minimal_json() {
        let g: Genesis = serde_json::from_str(
            r#"{"admin":"admin","accounts":[{"address":"np-1","balance":1000}]}"#,
        )
        .unwrap();
        let s = g.build().unwrap();
        assert_eq!(s.balance(&Address::from("np-1")), Some(1000));
        assert_eq!(s.balance(&Address::from("admin")), Some(0));
        assert_eq!(s.next_provider_index, 1);
    }

    #[test]
    fn rejects_duplicate_accounts() {
        let mut g = Genesis::new(Address::from("admin"));
        g.accounts.push(GenesisAccount { address: Address::from("a"), balance: 1 });
        g.accounts.push(GenesisAccount { address: Address::from("a"), balance: 2 });
        assert!(matches!(g.build(), Err(GenesisError::DuplicateAccount(_))));
    }

    #[test]
    fn opens_leases_at_time_zero() {
        let mut g = Genesis::new(Address::from("admin"));
        g.accounts.push(GenesisAccount { address: Address::from("req"), balance: 100 });
        g.providers.push(ProviderSpec {
            name: "p".into(),
            resources: Resources::new(4, 4, 4),
            cost: 1,
            domain: "d".into(),
            slas: [Sla::new(1, 1, LossPct(0))].into_iter().collect(),
            vnf_images: ["v".to_owned()].into_iter().collect(),
            address: Address::from("np-1"),
        });
        g.leases.push(GenesisLease {
            requester: Address::from("req"),
            request: ResourceRequest {
                resources: Resources::new(1, 1, 1),
                domain: "d".into(),
                sla: Sla::new(5, 1, LossPct(0)),
                vnf_image: "v".into(),
                lend_time_s: 1,
            },
            payment: 3,
        });
        let s = g.build().unwrap();
        assert_eq!(s.leases[&LeaseId(1)].start_ms, 0);
        assert_eq!(s.balance(&Address::from("np-1")), Some(3));
    }
}
