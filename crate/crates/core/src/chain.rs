// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Hash-linked blocks and the per-node ledger that replays them through the
//! contract.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Decoder, Encode};
use crate::contract::{Address, Call, CallOutput, ContractError, WorldState};
use crate::netsim::NodeId;
use crate::SimTime;

pub type TxId = u64;

/// 256-bit block digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub sender: Address,
    pub call: Call,
    pub submitted_at: SimTime,
}

impl Encode for Transaction {
    fn encode(&self, out: &mut Vec<u8>) {
        self.id.encode(out);
        self.sender.encode(out);
        self.call.encode(out);
        self.submitted_at.as_micros().encode(out);
    }
}

impl Decode for Transaction {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            id: Decode::decode(dec)?,
            sender: Decode::decode(dec)?,
            call: Decode::decode(dec)?,
            submitted_at: SimTime::from_micros(Decode::decode(dec)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TxStatus {
    Success,
    Reverted { error: ContractError },
    TimedOut,
}

impl TxStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, TxStatus::Success)
    }

    pub fn label(&self) -> &'static str {
        match self {
            TxStatus::Success => "success",
            TxStatus::Reverted { .. } => "reverted",
            TxStatus::TimedOut => "timed_out",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_id: TxId,
    #[serde(flatten)]
    pub status: TxStatus,
    pub block_height: Option<u64>,
    /// When the block holding the transaction was applied on this node.
    pub confirmed_at: Option<SimTime>,
    pub output: Option<CallOutput>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub hash: Digest,
    pub proposer: NodeId,
    pub timestamp_ms: u64,
    pub txs: Vec<Transaction>,
}

impl Block {
    /// Builds a block and seals it with its hash.
    pub fn new(height: u64, prev_hash: Digest, proposer: NodeId, timestamp_ms: u64, txs: Vec<Transaction>) -> Self {
        let mut block = Block { height, prev_hash, hash: Digest::ZERO, proposer, timestamp_ms, txs };
        block.hash = block.compute_hash();
        block
    }

    pub fn genesis() -> Self {
        Block::new(0, Digest::ZERO, 0, 0, Vec::new())
    }

    fn encode_header_and_body(&self, out: &mut Vec<u8>) {
        self.height.encode(out);
        self.prev_hash.0.encode(out);
        (self.proposer as u64).encode(out);
        self.timestamp_ms.encode(out);
        self.txs.encode(out);
    }

    /// SHA-256 of `height ‖ prev_hash ‖ proposer ‖ timestamp ‖ txs`.
    pub fn compute_hash(&self) -> Digest {
        let mut out = Vec::new();
        self.encode_header_and_body(&mut out);
        Digest(Sha256::digest(&out).into())
    }

    pub fn is_sealed(&self) -> bool {
        self.hash == self.compute_hash()
    }
}

/// Storage encoding: the hashed fields followed by the stored hash.
impl Encode for Block {
    fn encode(&self, out: &mut Vec<u8>) {
        self.encode_header_and_body(out);
        self.hash.0.encode(out);
    }
}

impl Decode for Block {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let height = u64::decode(dec)?;
        let prev_hash = Digest(Decode::decode(dec)?);
        let proposer = usize::try_from(u64::decode(dec)?).map_err(|_| DecodeError::OutOfRange("proposer"))?;
        let timestamp_ms = u64::decode(dec)?;
        let txs = Vec::<Transaction>::decode(dec)?;
        let hash = Digest(Decode::decode(dec)?);
        Ok(Block { height, prev_hash, hash, proposer, timestamp_ms, txs })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("block height {got}, expected {expected}")]
    HeightMismatch { expected: u64, got: u64 },
    #[error("block {height} does not link to the tip")]
    BrokenLink { height: u64 },
    #[error("block {height} hash does not match its contents")]
    BadHash { height: u64 },
}

/// True iff every block is correctly sealed and links to its predecessor,
/// starting from a genesis block at height 0 with a zero parent.
pub fn verify_chain(blocks: &[Block]) -> bool {
    let Some(first) = blocks.first() else {
        return false;
    };
    if first.height != 0 || first.prev_hash != Digest::ZERO {
        return false;
    }
    blocks.iter().all(Block::is_sealed)
        && blocks
            .windows(2)
            .all(|w| w[1].height == w[0].height + 1 && w[1].prev_hash == w[0].hash)
}

/// Applies every transaction of `blocks[1..]` to `genesis` in order.
pub fn replay(genesis: &WorldState, blocks: &[Block]) -> WorldState {
    let mut state = genesis.clone();
    for block in blocks.iter().skip(1) {
        for tx in &block.txs {
            let _ = state.execute(&tx.sender, &tx.call, block.timestamp_ms);
        }
    }
    state
}

/// A node's copy of the chain and the state it produces.
#[derive(Debug, Clone)]
pub struct Ledger {
    blocks: Vec<Block>,
    state: WorldState,
    genesis_state: WorldState,
    receipts: BTreeMap<TxId, Receipt>,
}

impl Ledger {
    pub fn new(genesis_state: WorldState) -> Self {
        Ledger {
            blocks: vec![Block::genesis()],
            state: genesis_state.clone(),
            genesis_state,
            receipts: BTreeMap::new(),
        }
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("ledger always holds genesis")
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(usize::try_from(height).ok()?)
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn genesis_state(&self) -> &WorldState {
        &self.genesis_state
    }

    pub fn receipts(&self) -> &BTreeMap<TxId, Receipt> {
        &self.receipts
    }

    pub fn receipt(&self, tx: TxId) -> Option<&Receipt> {
        self.receipts.get(&tx)
    }

    pub fn contains_tx(&self, tx: TxId) -> bool {
        self.receipts.contains_key(&tx)
    }

    /// Checks the header against the tip, then runs every transaction with
    /// the block timestamp as the contract clock. Reverted transactions stay
    /// in the block and get a `Reverted` receipt.
    pub fn append_block(&mut self, block: Block, now: SimTime) -> Result<(), ChainError> {
        let tip = self.tip();
        if block.height != tip.height + 1 {
            return Err(ChainError::HeightMismatch { expected: tip.height + 1, got: block.height });
        }
        if block.prev_hash != tip.hash {
            return Err(ChainError::BrokenLink { height: block.height });
        }
        if !block.is_sealed() {
            return Err(ChainError::BadHash { height: block.height });
        }
        for tx in &block.txs {
            let (status, output) = match self.state.execute(&tx.sender, &tx.call, block.timestamp_ms) {
                Ok(out) => (TxStatus::Success, Some(out)),
                Err(error) => (TxStatus::Reverted { error }, None),
            };
            self.receipts.insert(
                tx.id,
                Receipt { tx_id: tx.id, status, block_height: Some(block.height), confirmed_at: Some(now), output },
            );
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn verify(&self) -> bool {
        verify_chain(&self.blocks)
    }

    pub fn dump(&self, node: NodeId) -> LedgerDump {
        LedgerDump {
            node,
            height: self.height(),
            tip_hash: self.tip().hash,
            state_digest: Digest(self.state.digest()),
            blocks: self.blocks.clone(),
            receipts: self.receipts.values().cloned().collect(),
        }
    }
}

/// On-disk ledger snapshot for post-mortem inspection and `verify`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerDump {
    pub node: NodeId,
    pub height: u64,
    pub tip_hash: Digest,
    pub state_digest: Digest,
    pub blocks: Vec<Block>,
    pub receipts: Vec<Receipt>,
}

impl LedgerDump {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    /// Chain check plus consistency of the recorded tip.
    pub fn verify(&self) -> bool {
        verify_chain(&self.blocks)
            && self.blocks.last().is_some_and(|b| b.hash == self.tip_hash && b.height == self.height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::{Genesis, GenesisAccount, LossPct, ProviderSpec, Resources, Sla};

    fn genesis_state() -> WorldState {
        let mut g = Genesis::new(Address::from("admin"));
        g.accounts.push(GenesisAccount { address: Address::from("np-1"), balance: 1_000 });
        g.build().unwrap()
    }

    fn add_tx(id: TxId, name: &str) -> Transaction {
        Transaction {
            id,
            sender: Address::from("admin"),
            call: Call::AddNetworkProvider(ProviderSpec {
                name: name.into(),
                resources: Resources::new(8, 8, 8),
                cost: 2,
                domain: "attica".into(),
                slas: [Sla::new(5, 100, LossPct(0))].into_iter().collect(),
                vnf_images: ["fw-v1".to_owned()].into_iter().collect(),
                address: Address::from("np-1"),
            }),
            submitted_at: SimTime::from_millis(id),
        }
    }

    pub(crate) fn build_chain(n: u64) -> Ledger {
        let mut ledger = Ledger::new(genesis_state());
        for h in 1..=n {
            let tip = ledger.tip().hash;
            let block = Block::new(h, tip, (h % 5) as usize, h * 1000, vec![add_tx(h, &format!("p{h}"))]);
            ledger.append_block(block, SimTime::from_secs(h)).unwrap();
        }
        ledger
    }

    #[test]
    fn smallest_valid_append() {
        let mut ledger = Ledger::new(genesis_state());
        let block = Block::new(1, ledger.tip().hash, 0, 10, vec![add_tx(1, "a")]);
        ledger.append_block(block, SimTime::from_millis(11)).unwrap();
        assert_eq!(ledger.height(), 1);
        assert_eq!(ledger.receipt(1).unwrap().status, TxStatus::Success);
        assert!(ledger.verify());
    }

    #[test]
    fn reverted_tx_is_kept_in_block() {
        let mut ledger = Ledger::new(genesis_state());
        let mut tx = add_tx(1, "a");
        tx.sender = Address::from("np-1");
        let block = Block::new(1, ledger.tip().hash, 0, 10, vec![tx]);
        ledger.append_block(block, SimTime::ZERO).unwrap();
        assert_eq!(ledger.tip().txs.len(), 1);
        assert!(matches!(ledger.receipt(1).unwrap().status, TxStatus::Reverted { .. }));
    }

    #[test]
    fn wrong_parent_is_rejected() {
        let mut ledger = build_chain(2);
        let before = ledger.clone();
        let block = Block::new(3, Digest([7; 32]), 0, 10, vec![]);
        assert_eq!(ledger.append_block(block, SimTime::ZERO), Err(ChainError::BrokenLink { height: 3 }));
        let block = Block::new(5, ledger.tip().hash, 0, 10, vec![]);
        assert!(matches!(ledger.append_block(block, SimTime::ZERO), Err(ChainError::HeightMismatch { .. })));
        let mut forged = Block::new(3, ledger.tip().hash, 0, 10, vec![]);
        forged.timestamp_ms += 1;
        assert_eq!(ledger.append_block(forged, SimTime::ZERO), Err(ChainError::BadHash { height: 3 }));
        assert_eq!(ledger.blocks(), before.blocks());
        assert_eq!(ledger.state(), before.state());
    }

    #[test]
    fn fifty_blocks_verify_and_tamper_is_detected() {
        let ledger = build_chain(50);
        assert!(ledger.verify());
        let mut blocks = ledger.blocks().to_vec();
        if let Call::AddNetworkProvider(spec) = &mut blocks[10].txs[0].call {
            spec.cost ^= 1;
        }
        assert!(!verify_chain(&blocks));
    }

    #[test]
    fn replay_matches_state() {
        let ledger = build_chain(20);
        assert_eq!(&replay(ledger.genesis_state(), ledger.blocks()), ledger.state());
    }

    #[test]
    fn replicas_agree_byte_for_byte() {
        let a = build_chain(100);
        let b = build_chain(100);
        assert_eq!(a.tip().hash, b.tip().hash);
        assert_eq!(a.state().digest(), b.state().digest());
        let bytes_a: Vec<u8> = a.blocks().iter().flat_map(|b| b.to_canonical_bytes()).collect();
        let bytes_b: Vec<u8> = b.blocks().iter().flat_map(|b| b.to_canonical_bytes()).collect();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn block_storage_encoding_round_trips() {
        let ledger = build_chain(3);
        for block in ledger.blocks() {
            assert_eq!(&Block::from_canonical_bytes(&block.to_canonical_bytes()).unwrap(), block);
        }
    }

    #[test]
    fn dump_round_trips_through_json() {
        let ledger = build_chain(5);
        let dump = ledger.dump(2);
        let text = serde_json::to_string(&dump).unwrap();
        let back: LedgerDump = serde_json::from_str(&text).unwrap();
        assert!(back.verify());
        let tampered = text.replacen("\"cost\":2", "\"cost\":3", 1);
        let back: LedgerDump = serde_json::from_str(&tampered).unwrap();
        assert!(!back.verify());
    }

    #[test]
    fn empty_chain_is_invalid() {
        assert!(!verify_chain(&[]));
    }
}
