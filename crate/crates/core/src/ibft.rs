// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Istanbul BFT: PRE-PREPARE, PREPARE and COMMIT with round changes.
//!
//! Validators are all nodes, the proposer of `(height, round)` is
//! `(height + round) mod N`, and every quorum is `ceil(2N/3)` distinct
//! validators. A validator that reaches PREPARED locks the block and will
//! accept or re-propose only that block until the height is finalized.
//! Nodes that fall two or more heights behind fetch finalized blocks, with
//! their commit signers, from a peer.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chain::{Block, Digest, Ledger, Transaction, TxId};
use crate::cluster::{Ctx, Engine};
use crate::netsim::{ByzantinePolicy, NodeId};
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IbftConfig {
    /// Minimum spacing between a block's timestamp and its parent's.
    pub block_period_ms: u64,
    /// Timeout of round 0; round `r` waits `round_timeout_ms * 2^r`.
    pub round_timeout_ms: u64,
    pub max_block_txs: usize,
    /// Execution budget of one block, like a gas limit. A block holds at
    /// least one transaction even if that alone exceeds the budget.
    pub max_block_exec_ms: u64,
    pub sync_batch: usize,
}

impl Default for IbftConfig {
    fn default() -> Self {
        IbftConfig {
            block_period_ms: 1_000,
            round_timeout_ms: 10_000,
            max_block_txs: 100,
            max_block_exec_ms: 2_000,
            sync_batch: 64,
        }
    }
}

impl IbftConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.round_timeout_ms == 0 || self.max_block_txs == 0 || self.max_block_exec_ms == 0 || self.sync_batch == 0 {
            return Err("ibft timeouts and batch sizes must be positive".into());
        }
        Ok(())
    }

    pub fn round_timeout(&self, round: u64) -> SimTime {
        SimTime::from_millis(self.round_timeout_ms).saturating_mul(1 << round.min(16))
    }
}

/// Votes needed for PREPARED, finalization and starting a new round.
pub fn quorum(n: usize) -> usize {
    (2 * n).div_ceil(3)
}

/// Byzantine validators tolerated by `n` validators.
pub fn max_faulty(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

pub fn proposer(height: u64, round: u64, n: usize) -> NodeId {
    ((height + round) % n as u64) as NodeId
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    AwaitingProposal,
    Preprepared,
    Prepared,
    Committed,
}

/// A finalized block with the validators whose COMMITs finalized it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finalized {
    pub block: Block,
    pub committers: BTreeSet<NodeId>,
}

#[derive(Debug, Clone)]
pub enum IbftMessage {
    PrePrepare { height: u64, round: u64, block: Block },
    Prepare { height: u64, round: u64, hash: Digest },
    Commit { height: u64, round: u64, hash: Digest },
    RoundChange { height: u64, round: u64 },
    SyncRequest { from_height: u64 },
    SyncResponse { blocks: Vec<Finalized> },
    Tx(Transaction),
}

impl IbftMessage {
    fn height(&self) -> Option<u64> {
        match self {
            IbftMessage::PrePrepare { height, .. }
            | IbftMessage::Prepare { height, .. }
            | IbftMessage::Commit { height, .. }
            | IbftMessage::RoundChange { height, .. } => Some(*height),
            _ => None,
        }
    }
}

impl fmt::Display for IbftMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IbftMessage::PrePrepare { height, round, block } => {
                write!(f, "PrePrepare(h={height},r={round},{},n={})", block.hash.short(), block.txs.len())
            }
            IbftMessage::Prepare { height, round, hash } => write!(f, "Prepare(h={height},r={round},{})", hash.short()),
            IbftMessage::Commit { height, round, hash } => write!(f, "Commit(h={height},r={round},{})", hash.short()),
            IbftMessage::RoundChange { height, round } => write!(f, "RoundChange(h={height},r={round})"),
            IbftMessage::SyncRequest { from_height } => write!(f, "SyncRequest({from_height})"),
            IbftMessage::SyncResponse { blocks } => write!(f, "SyncResponse(n={})", blocks.len()),
            IbftMessage::Tx(tx) => write!(f, "Tx(tx{})", tx.id),
        }
    }
}

#[derive(Debug, Clone)]
pub enum IbftTimer {
    Propose { height: u64 },
    RoundTimeout { height: u64, round: u64 },
    MintDone { height: u64, round: u64, block: Block },
    VerifyDone { height: u64, hash: Digest },
}

impl fmt::Display for IbftTimer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IbftTimer::Propose { height } => write!(f, "Propose(h={height})"),
            IbftTimer::RoundTimeout { height, round } => write!(f, "RoundTimeout(h={height},r={round})"),
            IbftTimer::MintDone { height, round, .. } => write!(f, "MintDone(h={height},r={round})"),
            IbftTimer::VerifyDone { height, hash } => write!(f, "VerifyDone(h={height},{})", hash.short()),
        }
    }
}

const MAX_BUFFERED: usize = 8_192;

pub struct IbftNode {
    id: NodeId,
    n: usize,
    q: usize,
    config: IbftConfig,
    height: u64,
    round: u64,
    phase: Phase,
    proposal: Option<Block>,
    proposed_in_round: bool,
    /// Block bodies seen at the current height.
    bodies: HashMap<Digest, Block>,
    /// Hashes whose transactions this node has executed at this height.
    verified: HashSet<Digest>,
    verifying: HashSet<Digest>,
    locked: Option<Block>,
    prepares: BTreeMap<(u64, NodeId), Digest>,
    commits: BTreeMap<(u64, NodeId), Digest>,
    /// Highest round each validator asked to move to at this height.
    round_changes: BTreeMap<NodeId, u64>,
    sent_prepare: bool,
    sent_commit: bool,
    buffered: Vec<(NodeId, IbftMessage)>,
    mempool: VecDeque<Transaction>,
    pooled: HashSet<TxId>,
    ledger: Ledger,
    committers: Vec<BTreeSet<NodeId>>,
    byzantine: Option<ByzantinePolicy>,
    halted: bool,
    minting: bool,
    sync_requested: Option<u64>,
    max_round: u64,
    round_change_count: u64,
}

type Cx<'a, 'b> = &'a mut Ctx<'b, IbftMessage, IbftTimer>;

impl IbftNode {
    pub fn new(id: NodeId, n: usize, config: IbftConfig, ledger: Ledger) -> Self {
        let height = ledger.height() + 1;
        IbftNode {
            id,
            n,
            q: quorum(n),
            config,
            height,
            round: 0,
            phase: Phase::AwaitingProposal,
            proposal: None,
            proposed_in_round: false,
            bodies: HashMap::new(),
            verified: HashSet::new(),
            verifying: HashSet::new(),
            locked: None,
            prepares: BTreeMap::new(),
            commits: BTreeMap::new(),
            round_changes: BTreeMap::new(),
            sent_prepare: false,
            sent_commit: false,
            buffered: Vec::new(),
            mempool: VecDeque::new(),
            pooled: HashSet::new(),
            ledger,
            committers: Vec::new(),
            byzantine: None,
            halted: false,
            minting: false,
            sync_requested: None,
            max_round: 0,
            round_change_count: 0,
        }
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn locked(&self) -> Option<&Block> {
        self.locked.as_ref()
    }

    pub fn is_byzantine(&self) -> bool {
        self.byzantine.is_some()
    }

    /// Commit signers of each finalized block, indexed by `height - 1`.
    pub fn committers(&self) -> &[BTreeSet<NodeId>] {
        &self.committers
    }

    /// Highest round reached at any height.
    pub fn max_round(&self) -> u64 {
        self.max_round
    }

    pub fn round_change_count(&self) -> u64 {
        self.round_change_count
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    fn enter_height(&mut self, height: u64, cx: Cx) {
        self.height = height;
        self.round = 0;
        self.phase = Phase::AwaitingProposal;
        self.proposal = None;
        self.proposed_in_round = false;
        self.bodies.clear();
        self.verified.clear();
        self.verifying.clear();
        self.locked = None;
        self.prepares.clear();
        self.commits.clear();
        self.round_changes.clear();
        self.sent_prepare = false;
        self.sent_commit = false;
        cx.set_timer(self.config.round_timeout(0), IbftTimer::RoundTimeout { height, round: 0 });
        if proposer(height, 0, self.n) == self.id {
            let due = SimTime::from_millis(self.ledger.tip().timestamp_ms + self.config.block_period_ms);
            cx.set_timer_at(due.max(cx.now()), IbftTimer::Propose { height });
        }
        self.replay_buffered(cx);
    }

    fn enter_round(&mut self, round: u64, cx: Cx) {
        self.round = round;
        self.max_round = self.max_round.max(round);
        self.round_change_count += 1;
        self.phase = Phase::AwaitingProposal;
        self.proposal = None;
        self.proposed_in_round = false;
        self.sent_prepare = false;
        self.sent_commit = false;
        let height = self.height;
        cx.set_timer(self.config.round_timeout(round), IbftTimer::RoundTimeout { height, round });
        self.round_changes.insert(self.id, round);
        cx.broadcast(IbftMessage::RoundChange { height, round });
        self.check_round_change(cx);
        self.replay_buffered(cx);
    }

    fn replay_buffered(&mut self, cx: Cx) {
        let pending = std::mem::take(&mut self.buffered);
        for (from, msg) in pending {
            self.on_message(cx, from, msg);
        }
    }

    fn buffer(&mut self, from: NodeId, msg: IbftMessage) {
        if self.buffered.len() < MAX_BUFFERED {
            self.buffered.push((from, msg));
        }
    }

    fn request_sync(&mut self, from: NodeId, cx: Cx) {
        if self.sync_requested != Some(self.height) {
            self.sync_requested = Some(self.height);
            cx.send(from, IbftMessage::SyncRequest { from_height: self.height });
        }
    }

    fn try_propose(&mut self, cx: Cx) {
        if self.halted || self.minting || self.proposed_in_round || proposer(self.height, self.round, self.n) != self.id {
            return;
        }
        self.proposed_in_round = true;
        if let Some(block) = self.locked.clone() {
            self.send_proposal(block, cx);
            return;
        }
        let registry = self.ledger.state().registry_size();
        let budget = SimTime::from_millis(self.config.max_block_exec_ms);
        let mut txs = Vec::new();
        let mut cost = SimTime::ZERO;
        let mut full = false;
        let mut seen = HashSet::new();
        let mut kept = VecDeque::new();
        while let Some(tx) = self.mempool.pop_front() {
            if self.ledger.contains_tx(tx.id) {
                self.pooled.remove(&tx.id);
                continue;
            }
            if !full && seen.insert(tx.id) {
                let next = cost + cx.cost().tx_cost(&tx.call, registry);
                if txs.is_empty() || next <= budget {
                    txs.push(tx.clone());
                    cost = next;
                }
                full = txs.len() >= self.config.max_block_txs || next > budget;
            }
            kept.push_back(tx);
        }
        self.mempool = kept;
        let tip = self.ledger.tip();
        let block = Block::new(self.height, tip.hash, self.id, cx.now().as_millis(), txs);
        self.minting = true;
        cx.run_on_cpu(cost, IbftTimer::MintDone { height: self.height, round: self.round, block });
    }

    fn send_proposal(&mut self, block: Block, cx: Cx) {
        let (height, round) = (self.height, self.round);
        match self.byzantine {
            Some(ByzantinePolicy::Equivocate) => {
                let twin = Block::new(block.height, block.prev_hash, block.proposer, block.timestamp_ms + 1, Vec::new());
                for peer in (0..self.n).filter(|&p| p != self.id) {
                    let b = if peer % 2 == 0 { block.clone() } else { twin.clone() };
                    let hash = b.hash;
                    cx.send(peer, IbftMessage::PrePrepare { height, round, block: b });
                    cx.send(peer, IbftMessage::Prepare { height, round, hash });
                    cx.send(peer, IbftMessage::Commit { height, round, hash });
                }
            }
            Some(ByzantinePolicy::InvalidProposal) => {
                let mut bad = block;
                if height % 2 == 0 {
                    bad.hash = Digest([0xab; 32]);
                } else {
                    bad.prev_hash = Digest([0xcd; 32]);
                    bad.hash = bad.compute_hash();
                }
                cx.broadcast(IbftMessage::PrePrepare { height, round, block: bad });
            }
            _ => {
                cx.broadcast(IbftMessage::PrePrepare { height, round, block: block.clone() });
                self.verified.insert(block.hash);
                self.accept_proposal(block, cx);
            }
        }
    }

    fn valid_proposal(&self, block: &Block, now: SimTime, cx: &Ctx<'_, IbftMessage, IbftTimer>) -> bool {
        let tip = self.ledger.tip();
        let within_budget = block.txs.len() <= 1
            || cx.cost().block_cost(&block.txs, self.ledger.state().registry_size())
                <= SimTime::from_millis(self.config.max_block_exec_ms);
        let mut ids = HashSet::new();
        block.height == self.height
            && block.prev_hash == tip.hash
            && block.is_sealed()
            && block.timestamp_ms >= tip.timestamp_ms
            && block.timestamp_ms <= now.as_millis()
            && block.txs.len() <= self.config.max_block_txs
            && within_budget
            && block
                .txs
                .iter()
                .all(|tx| tx.call.is_well_formed() && ids.insert(tx.id) && !self.ledger.contains_tx(tx.id))
            && self.locked.as_ref().is_none_or(|l| l.hash == block.hash)
    }

    fn accept_proposal(&mut self, block: Block, cx: Cx) {
        let hash = block.hash;
        self.bodies.insert(hash, block.clone());
        self.proposal = Some(block.clone());
        self.phase = Phase::Preprepared;
        if self.verified.contains(&hash) {
            self.send_prepare(cx);
        } else if self.verifying.insert(hash) {
            let cost = cx.cost().block_cost(&block.txs, self.ledger.state().registry_size());
            cx.run_on_cpu(cost, IbftTimer::VerifyDone { height: self.height, hash });
        }
    }

    fn send_prepare(&mut self, cx: Cx) {
        let Some(hash) = self.proposal.as_ref().map(|b| b.hash) else { return };
        if self.sent_prepare {
            return;
        }
        self.sent_prepare = true;
        let (height, round) = (self.height, self.round);
        self.prepares.entry((round, self.id)).or_insert(hash);
        cx.broadcast(IbftMessage::Prepare { height, round, hash });
        self.check_progress(cx);
    }

    fn count(votes: &BTreeMap<(u64, NodeId), Digest>, round: u64, hash: &Digest) -> BTreeSet<NodeId> {
        votes
            .range((round, 0)..=(round, NodeId::MAX))
            .filter(|(_, h)| *h == hash)
            .map(|(&(_, node), _)| node)
            .collect()
    }

    fn check_progress(&mut self, cx: Cx) {
        if let Some(block) = &self.proposal {
            let hash = block.hash;
            if self.phase == Phase::Preprepared
                && self.verified.contains(&hash)
                && Self::count(&self.prepares, self.round, &hash).len() >= self.q
            {
                self.phase = Phase::Prepared;
                self.locked = Some(block.clone());
                if !self.sent_commit {
                    self.sent_commit = true;
                    let (height, round) = (self.height, self.round);
                    self.commits.entry((round, self.id)).or_insert(hash);
                    cx.broadcast(IbftMessage::Commit { height, round, hash });
                }
            }
        }
        let rounds: BTreeSet<(u64, Digest)> = self.commits.iter().map(|(&(r, _), &h)| (r, h)).collect();
        for (round, hash) in rounds {
            let signers = Self::count(&self.commits, round, &hash);
            if signers.len() < self.q {
                continue;
            }
            if !self.bodies.contains_key(&hash) {
                // Decided without us seeing the proposal: fetch it.
                if let Some(&peer) = signers.iter().find(|&&s| s != self.id) {
                    self.request_sync(peer, cx);
                }
                continue;
            }
            if self.verified.contains(&hash) {
                let block = self.bodies[&hash].clone();
                self.finalize(block, signers, cx);
                return;
            }
        }
    }

    fn finalize(&mut self, block: Block, committers: BTreeSet<NodeId>, cx: Cx) {
        let height = block.height;
        self.phase = Phase::Committed;
        for tx in &block.txs {
            self.pooled.remove(&tx.id);
        }
        if let Err(e) = self.ledger.append_block(block, cx.now()) {
            log::error!("node {} could not append finalized block {height}: {e}", self.id);
            return;
        }
        self.committers.push(committers);
        self.mempool.retain(|tx| !self.ledger.contains_tx(tx.id));
        self.enter_height(height + 1, cx);
    }

    fn check_round_change(&mut self, cx: Cx) {
        // Catch up when F+1 validators are already in a later round.
        let f = max_faulty(self.n);
        let mut ahead: Vec<u64> = self.round_changes.values().copied().filter(|&r| r > self.round).collect();
        if ahead.len() > f {
            ahead.sort_unstable_by(|a, b| b.cmp(a));
            let target = ahead[f];
            self.enter_round(target, cx);
            return;
        }
        let ready = self.round_changes.values().filter(|&&r| r == self.round).count();
        if self.round > 0 && ready >= self.q && self.proposal.is_none() {
            self.try_propose(cx);
        }
    }

    fn on_preprepare(&mut self, from: NodeId, height: u64, round: u64, block: Block, cx: Cx) {
        if round > self.round {
            self.buffer(from, IbftMessage::PrePrepare { height, round, block });
            return;
        }
        if round < self.round || from != proposer(height, round, self.n) || self.proposal.is_some() {
            return;
        }
        if self.byzantine == Some(ByzantinePolicy::Equivocate) {
            // Vote for whatever arrives, and for a phantom block too.
            let phantom = Digest([from as u8 ^ 0x5a; 32]);
            for (k, peer) in (0..self.n).filter(|&p| p != self.id).enumerate() {
                let hash = if k % 2 == 0 { block.hash } else { phantom };
                cx.send(peer, IbftMessage::Prepare { height, round, hash });
                cx.send(peer, IbftMessage::Commit { height, round, hash });
            }
            return;
        }
        if !self.valid_proposal(&block, cx.now(), cx) {
            log::debug!("node {} rejects proposal h={height} r={round} from {from}", self.id);
            return;
        }
        self.accept_proposal(block, cx);
    }

    fn serve_sync(&mut self, to: NodeId, from_height: u64, cx: Cx) {
        if self.byzantine.is_some() {
            return;
        }
        let blocks: Vec<Finalized> = (from_height..=self.ledger.height())
            .take(self.config.sync_batch)
            .filter_map(|h| {
                let block = self.ledger.block(h)?.clone();
                let committers = self.committers.get(h.checked_sub(1)? as usize)?.clone();
                Some(Finalized { block, committers })
            })
            .collect();
        cx.send(to, IbftMessage::SyncResponse { blocks });
    }

    fn on_sync_response(&mut self, blocks: Vec<Finalized>, cx: Cx) {
        self.sync_requested = None;
        for fin in blocks {
            if fin.block.height != self.height {
                continue;
            }
            let tip = self.ledger.tip();
            let certified = fin.committers.len() >= self.q && fin.committers.iter().all(|&c| c < self.n);
            if !certified || fin.block.prev_hash != tip.hash || !fin.block.is_sealed() {
                break;
            }
            let mut fin = fin;
            let block = std::mem::replace(&mut fin.block, Block::genesis());
            self.finalize(block, fin.committers, cx);
        }
    }
}

impl Engine for IbftNode {
    type Msg = IbftMessage;
    type Timer = IbftTimer;

    fn start(&mut self, cx: Cx) {
        let h = self.ledger.height() + 1;
        self.enter_height(h, cx);
    }

    fn on_message(&mut self, cx: Cx, from: NodeId, msg: IbftMessage) {
        if let Some(h) = msg.height() {
            if h < self.height {
                // A peer still voting on a height we finalized missed the decision.
                if matches!(msg, IbftMessage::RoundChange { .. }) {
                    self.serve_sync(from, h, cx);
                }
                return;
            }
            if h > self.height {
                if h >= self.height + 2 {
                    self.request_sync(from, cx);
                } else {
                    self.buffer(from, msg);
                }
                return;
            }
        }
        match msg {
            IbftMessage::PrePrepare { height, round, block } => self.on_preprepare(from, height, round, block, cx),
            IbftMessage::Prepare { round, hash, .. } => {
                self.prepares.entry((round, from)).or_insert(hash);
                self.check_progress(cx);
            }
            IbftMessage::Commit { round, hash, .. } => {
                self.commits.entry((round, from)).or_insert(hash);
                self.check_progress(cx);
            }
            IbftMessage::RoundChange { round, .. } => {
                let slot = self.round_changes.entry(from).or_insert(round);
                *slot = (*slot).max(round);
                self.check_round_change(cx);
            }
            IbftMessage::SyncRequest { from_height } => self.serve_sync(from, from_height, cx),
            IbftMessage::SyncResponse { blocks } => self.on_sync_response(blocks, cx),
            IbftMessage::Tx(tx) => {
                if !self.ledger.contains_tx(tx.id) && self.pooled.insert(tx.id) {
                    self.mempool.push_back(tx);
                }
            }
        }
    }

    fn on_timer(&mut self, cx: Cx, timer: IbftTimer) {
        match timer {
            IbftTimer::Propose { height } => {
                if height == self.height && self.round == 0 && self.proposal.is_none() {
                    self.try_propose(cx);
                }
            }
            IbftTimer::RoundTimeout { height, round } => {
                if height == self.height && round == self.round {
                    self.enter_round(round + 1, cx);
                }
            }
            IbftTimer::MintDone { height, round, block } => {
                self.minting = false;
                if height == self.height && round == self.round && self.proposal.is_none() {
                    self.send_proposal(block, cx);
                } else if self.round > 0 {
                    self.check_round_change(cx);
                } else if cx.now().as_millis() >= self.ledger.tip().timestamp_ms + self.config.block_period_ms {
                    self.try_propose(cx);
                }
            }
            IbftTimer::VerifyDone { height, hash } => {
                if height == self.height {
                    self.verifying.remove(&hash);
                    self.verified.insert(hash);
                    if self.proposal.as_ref().is_some_and(|b| b.hash == hash) {
                        self.send_prepare(cx);
                    }
                    self.check_progress(cx);
                }
            }
        }
    }

    fn on_client_tx(&mut self, cx: Cx, tx: Transaction) {
        if self.ledger.contains_tx(tx.id) || !self.pooled.insert(tx.id) {
            return;
        }
        cx.broadcast(IbftMessage::Tx(tx.clone()));
        self.mempool.push_back(tx);
    }

    fn on_recover(&mut self, cx: Cx) {
        self.minting = false;
        self.sync_requested = None;
        self.buffered.clear();
        let h = self.ledger.height() + 1;
        self.enter_height(h, cx);
        self.sync_requested = Some(h);
        cx.broadcast(IbftMessage::SyncRequest { from_height: h });
    }

    fn set_byzantine(&mut self, policy: ByzantinePolicy) {
        self.byzantine = Some(policy);
    }

    fn halt(&mut self) {
        self.halted = true;
    }

    fn is_quiescent(&self) -> bool {
        !self.minting && self.verifying.is_empty() && self.phase == Phase::AwaitingProposal
    }

    fn ledger(&self) -> &Ledger {
        &self.ledger
    }
}
