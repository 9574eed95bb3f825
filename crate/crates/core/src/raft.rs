// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Raft ordering with blocks created on demand.
//!
//! The log holds one block per entry plus a no-op entry at the start of each
//! leader term, so a new leader can commit earlier entries without minting
//! an empty block. Blocks are applied to the ledger once committed.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{Block, Ledger, Transaction, TxId};
use crate::cluster::{Ctx, Engine};
use crate::netsim::NodeId;
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaftConfig {
    pub election_timeout_min_ms: u64,
    pub election_timeout_max_ms: u64,
    pub heartbeat_ms: u64,
    pub max_block_txs: usize,
    /// Upper bound on entries shipped in one AppendEntries message.
    pub max_entries_per_message: usize,
}

impl Default for RaftConfig {
    fn default() -> Self {
        RaftConfig {
            election_timeout_min_ms: 150,
            election_timeout_max_ms: 300,
            heartbeat_ms: 50,
            max_block_txs: 10,
            max_entries_per_message: 64,
        }
    }
}

impl RaftConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.election_timeout_min_ms == 0 || self.election_timeout_min_ms > self.election_timeout_max_ms {
            return Err("raft election timeout range is empty".into());
        }
        if self.heartbeat_ms == 0 || self.heartbeat_ms >= self.election_timeout_min_ms {
            return Err("raft heartbeat must be positive and below the election timeout".into());
        }
        if self.max_block_txs == 0 || self.max_entries_per_message == 0 {
            return Err("raft batch sizes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub term: u64,
    /// `None` for the no-op a leader appends when its term starts.
    pub block: Option<Block>,
}

#[derive(Debug, Clone)]
pub enum RaftMessage {
    RequestVote { term: u64, last_log_index: u64, last_log_term: u64 },
    Vote { term: u64, granted: bool },
    AppendEntries { term: u64, prev_log_index: u64, prev_log_term: u64, entries: Vec<LogEntry>, leader_commit: u64 },
    /// On success `index` is the follower's last matching index; on failure
    /// it is the next index the leader should try.
    AppendResponse { term: u64, success: bool, index: u64 },
    Forward(Transaction),
}

impl fmt::Display for RaftMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RaftMessage::RequestVote { term, last_log_index, .. } => {
                write!(f, "RequestVote(t={term},last={last_log_index})")
            }
            RaftMessage::Vote { term, granted } => write!(f, "Vote(t={term},{granted})"),
            RaftMessage::AppendEntries { term, prev_log_index, entries, leader_commit, .. } => write!(
                f,
                "AppendEntries(t={term},prev={prev_log_index},n={},commit={leader_commit})",
                entries.len()
            ),
            RaftMessage::AppendResponse { term, success, index } => {
                write!(f, "AppendResponse(t={term},{success},{index})")
            }
            RaftMessage::Forward(tx) => write!(f, "Forward(tx{})", tx.id),
        }
    }
}

#[derive(Debug, Clone)]
pub enum RaftTimer {
    Election(u64),
    Heartbeat(u64),
    MintDone { term: u64, block: Block },
    ApplyDone(u64),
    RetryForward,
}

impl fmt::Display for RaftTimer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RaftTimer::Election(g) => write!(f, "Election({g})"),
            RaftTimer::Heartbeat(t) => write!(f, "Heartbeat(t={t})"),
            RaftTimer::MintDone { term, block } => write!(f, "MintDone(t={term},h={})", block.height),
            RaftTimer::ApplyDone(i) => write!(f, "ApplyDone({i})"),
            RaftTimer::RetryForward => f.write_str("RetryForward"),
        }
    }
}

pub struct RaftNode {
    id: NodeId,
    n: usize,
    config: RaftConfig,
    role: Role,
    current_term: u64,
    voted_for: Option<NodeId>,
    /// `log[0]` is a sentinel so that log indices start at 1.
    log: Vec<LogEntry>,
    commit_index: u64,
    last_applied: u64,
    next_index: Vec<u64>,
    match_index: Vec<u64>,
    votes: BTreeSet<NodeId>,
    leader_hint: Option<NodeId>,
    election_gen: u64,
    mempool: VecDeque<Transaction>,
    queued: HashSet<TxId>,
    in_log: HashSet<TxId>,
    /// Transactions submitted here and not yet applied.
    own_pending: BTreeMap<TxId, Transaction>,
    retry_armed: bool,
    minting: bool,
    applying: bool,
    halted: bool,
    ledger: Ledger,
    leaders: Vec<(u64, SimTime)>,
}

impl RaftNode {
    pub fn new(id: NodeId, n: usize, config: RaftConfig, ledger: Ledger) -> Self {
        RaftNode {
            id,
            n,
            config,
            role: Role::Follower,
            current_term: 0,
            voted_for: None,
            log: vec![LogEntry { term: 0, block: None }],
            commit_index: 0,
            last_applied: 0,
            next_index: vec![1; n],
            match_index: vec![0; n],
            votes: BTreeSet::new(),
            leader_hint: None,
            election_gen: 0,
            mempool: VecDeque::new(),
            queued: HashSet::new(),
            in_log: HashSet::new(),
            own_pending: BTreeMap::new(),
            retry_armed: false,
            minting: false,
            applying: false,
            halted: false,
            ledger,
            leaders: Vec::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn term(&self) -> u64 {
        self.current_term
    }

    pub fn commit_index(&self) -> u64 {
        self.commit_index
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log[1..]
    }

    pub fn leader_hint(&self) -> Option<NodeId> {
        self.leader_hint
    }

    /// Terms in which this node became leader, with the time it happened.
    pub fn leaderships(&self) -> &[(u64, SimTime)] {
        &self.leaders
    }

    fn majority(&self) -> usize {
        self.n / 2 + 1
    }

    fn last_index(&self) -> u64 {
        (self.log.len() - 1) as u64
    }

    fn last_term(&self) -> u64 {
        self.log.last().map_or(0, |e| e.term)
    }

    fn term_at(&self, index: u64) -> Option<u64> {
        self.log.get(index as usize).map(|e| e.term)
    }

    fn reset_election_timer(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        self.election_gen += 1;
        let ms = cx
            .rng()
            .random_range(self.config.election_timeout_min_ms..=self.config.election_timeout_max_ms);
        cx.set_timer(SimTime::from_millis(ms), RaftTimer::Election(self.election_gen));
    }

    fn become_follower(&mut self, term: u64, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        if term > self.current_term {
            self.current_term = term;
            self.voted_for = None;
            self.leader_hint = None;
        }
        if self.role != Role::Follower {
            self.role = Role::Follower;
            self.votes.clear();
            self.mempool.clear();
            self.queued.clear();
            self.leader_hint = None;
            self.reset_election_timer(cx);
        }
    }

    fn start_election(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        self.current_term += 1;
        self.role = Role::Candidate;
        self.voted_for = Some(self.id);
        self.votes = BTreeSet::from([self.id]);
        self.leader_hint = None;
        self.reset_election_timer(cx);
        cx.broadcast(RaftMessage::RequestVote {
            term: self.current_term,
            last_log_index: self.last_index(),
            last_log_term: self.last_term(),
        });
        if self.votes.len() >= self.majority() {
            self.become_leader(cx);
        }
    }

    fn become_leader(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        self.role = Role::Leader;
        self.leader_hint = Some(self.id);
        self.leaders.push((self.current_term, cx.now()));
        self.log.push(LogEntry { term: self.current_term, block: None });
        let last = self.last_index();
        self.next_index = vec![last; self.n];
        self.match_index = vec![0; self.n];
        self.match_index[self.id] = last;
        for peer in 0..self.n {
            if peer != self.id {
                self.send_append(peer, cx);
            }
        }
        cx.set_timer(SimTime::from_millis(self.config.heartbeat_ms), RaftTimer::Heartbeat(self.current_term));
        let own: Vec<Transaction> = self.own_pending.values().cloned().collect();
        for tx in own {
            self.enqueue(tx);
        }
        self.advance_commit(cx);
        self.maybe_mint(cx);
    }

    fn send_append(&mut self, peer: NodeId, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        let next = self.next_index[peer].clamp(1, self.last_index() + 1);
        let prev = next - 1;
        let end = (self.last_index() + 1).min(next + self.config.max_entries_per_message as u64);
        let entries = self.log[next as usize..end as usize].to_vec();
        self.next_index[peer] = end;
        cx.send(
            peer,
            RaftMessage::AppendEntries {
                term: self.current_term,
                prev_log_index: prev,
                prev_log_term: self.log[prev as usize].term,
                entries,
                leader_commit: self.commit_index,
            },
        );
    }

    fn enqueue(&mut self, tx: Transaction) {
        if self.ledger.contains_tx(tx.id) || self.in_log.contains(&tx.id) || !self.queued.insert(tx.id) {
            return;
        }
        self.mempool.push_back(tx);
    }

    fn maybe_mint(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        if self.role != Role::Leader || self.minting || self.halted {
            return;
        }
        let mut txs = Vec::new();
        while txs.len() < self.config.max_block_txs {
            let Some(tx) = self.mempool.pop_front() else { break };
            self.queued.remove(&tx.id);
            if !self.ledger.contains_tx(tx.id) && !self.in_log.contains(&tx.id) {
                txs.push(tx);
            }
        }
        if txs.is_empty() {
            return;
        }
        let (parent_height, parent_hash) = self
            .log
            .iter()
            .rev()
            .find_map(|e| e.block.as_ref().map(|b| (b.height, b.hash)))
            .unwrap_or_else(|| {
                let g = &self.ledger.blocks()[0];
                (g.height, g.hash)
            });
        let cost = cx.cost().block_cost(&txs, self.ledger.state().registry_size());
        for tx in &txs {
            self.in_log.insert(tx.id);
        }
        let block = Block::new(parent_height + 1, parent_hash, self.id, cx.now().as_millis(), txs);
        self.minting = true;
        cx.run_on_cpu(cost, RaftTimer::MintDone { term: self.current_term, block });
    }

    fn on_mint_done(&mut self, term: u64, block: Block, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        self.minting = false;
        if self.role == Role::Leader && term == self.current_term {
            self.log.push(LogEntry { term, block: Some(block) });
            self.match_index[self.id] = self.last_index();
            for peer in 0..self.n {
                if peer != self.id {
                    self.send_append(peer, cx);
                }
            }
            self.advance_commit(cx);
        } else {
            for tx in &block.txs {
                self.in_log.remove(&tx.id);
            }
        }
        self.maybe_mint(cx);
    }

    fn advance_commit(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        if self.role != Role::Leader {
            return;
        }
        let mut idx = self.last_index();
        while idx > self.commit_index {
            if self.log[idx as usize].term == self.current_term
                && self.match_index.iter().filter(|&&m| m >= idx).count() >= self.majority()
            {
                self.commit_index = idx;
                for peer in 0..self.n {
                    if peer != self.id {
                        self.send_append(peer, cx);
                    }
                }
                break;
            }
            idx -= 1;
        }
        self.maybe_apply(cx);
    }

    fn maybe_apply(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        while !self.applying && self.last_applied < self.commit_index {
            let idx = self.last_applied + 1;
            let Some(block) = self.log[idx as usize].block.clone() else {
                self.last_applied = idx;
                continue;
            };
            if block.proposer == self.id && block.height == self.ledger.height() + 1 {
                self.apply(idx, block, cx.now());
                continue;
            }
            let cost = cx.cost().block_cost(&block.txs, self.ledger.state().registry_size());
            self.applying = true;
            cx.run_on_cpu(cost, RaftTimer::ApplyDone(idx));
        }
    }

    fn apply(&mut self, idx: u64, block: Block, now: SimTime) {
        for tx in &block.txs {
            self.own_pending.remove(&tx.id);
        }
        if let Err(e) = self.ledger.append_block(block, now) {
            log::error!("node {} failed to apply committed entry {idx}: {e}", self.id);
        }
        self.last_applied = idx;
    }

    fn forward_own(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        match self.leader_hint {
            Some(leader) if leader == self.id => {
                let own: Vec<Transaction> = self.own_pending.values().cloned().collect();
                for tx in own {
                    self.enqueue(tx);
                }
                self.maybe_mint(cx);
            }
            Some(leader) => {
                for tx in self.own_pending.values() {
                    cx.send(leader, RaftMessage::Forward(tx.clone()));
                }
            }
            None => self.arm_retry(cx),
        }
    }

    fn arm_retry(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        if !self.retry_armed && !self.own_pending.is_empty() {
            self.retry_armed = true;
            cx.set_timer(SimTime::from_millis(self.config.heartbeat_ms), RaftTimer::RetryForward);
        }
    }

    fn set_leader(&mut self, leader: NodeId, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        if self.leader_hint != Some(leader) {
            self.leader_hint = Some(leader);
            self.forward_own(cx);
        }
    }

    fn on_request_vote(
        &mut self,
        cx: &mut Ctx<'_, RaftMessage, RaftTimer>,
        from: NodeId,
        term: u64,
        last_log_index: u64,
        last_log_term: u64,
    ) {
        if term > self.current_term {
            self.become_follower(term, cx);
        }
        let up_to_date = last_log_term > self.last_term()
            || (last_log_term == self.last_term() && last_log_index >= self.last_index());
        let granted = term == self.current_term
            && self.voted_for.is_none_or(|v| v == from)
            && up_to_date
            && self.role == Role::Follower;
        if granted {
            self.voted_for = Some(from);
            self.reset_election_timer(cx);
        }
        cx.send(from, RaftMessage::Vote { term: self.current_term, granted });
    }

    fn on_append_entries(
        &mut self,
        cx: &mut Ctx<'_, RaftMessage, RaftTimer>,
        from: NodeId,
        term: u64,
        prev_log_index: u64,
        prev_log_term: u64,
        entries: Vec<LogEntry>,
        leader_commit: u64,
    ) {
        if term < self.current_term {
            cx.send(from, RaftMessage::AppendResponse { term: self.current_term, success: false, index: 0 });
            return;
        }
        if term > self.current_term || self.role != Role::Follower {
            self.become_follower(term, cx);
        }
        self.reset_election_timer(cx);
        self.set_leader(from, cx);

        if prev_log_index > self.last_index() {
            let hint = self.last_index() + 1;
            cx.send(from, RaftMessage::AppendResponse { term, success: false, index: hint });
            return;
        }
        let local = self.term_at(prev_log_index).expect("checked above");
        if local != prev_log_term {
            let mut first = prev_log_index;
            while first > 1 && self.log[first as usize - 1].term == local {
                first -= 1;
            }
            cx.send(from, RaftMessage::AppendResponse { term, success: false, index: first.max(1) });
            return;
        }
        let count = entries.len() as u64;
        for (k, entry) in entries.into_iter().enumerate() {
            let idx = prev_log_index + 1 + k as u64;
            match self.term_at(idx) {
                Some(t) if t == entry.term => {}
                Some(_) => {
                    assert!(idx > self.commit_index, "raft would truncate a committed entry");
                    for gone in self.log.drain(idx as usize..) {
                        if let Some(b) = gone.block {
                            for tx in &b.txs {
                                self.in_log.remove(&tx.id);
                            }
                        }
                    }
                    self.push_entry(entry);
                }
                None => self.push_entry(entry),
            }
        }
        let matched = prev_log_index + count;
        if leader_commit > self.commit_index {
            self.commit_index = leader_commit.min(matched).max(self.commit_index);
        }
        cx.send(from, RaftMessage::AppendResponse { term, success: true, index: matched });
        self.maybe_apply(cx);
    }

    fn push_entry(&mut self, entry: LogEntry) {
        if let Some(b) = &entry.block {
            for tx in &b.txs {
                self.in_log.insert(tx.id);
            }
        }
        self.log.push(entry);
    }

    fn on_append_response(
        &mut self,
        cx: &mut Ctx<'_, RaftMessage, RaftTimer>,
        from: NodeId,
        term: u64,
        success: bool,
        index: u64,
    ) {
        if term > self.current_term {
            self.become_follower(term, cx);
            return;
        }
        if self.role != Role::Leader || term != self.current_term {
            return;
        }
        if success {
            if index > self.match_index[from] {
                self.match_index[from] = index;
            }
            if self.next_index[from] <= index {
                self.next_index[from] = index + 1;
            }
            self.advance_commit(cx);
            if self.next_index[from] <= self.last_index() && self.next_index[from] == index + 1 {
                self.send_append(from, cx);
            }
        } else if index > 0 {
            self.next_index[from] = index.clamp(self.match_index[from] + 1, self.last_index() + 1);
            self.send_append(from, cx);
        }
    }
}

impl Engine for RaftNode {
    type Msg = RaftMessage;
    type Timer = RaftTimer;

    fn start(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        self.reset_election_timer(cx);
    }

    fn on_message(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>, from: NodeId, msg: RaftMessage) {
        match msg {
            RaftMessage::RequestVote { term, last_log_index, last_log_term } => {
                self.on_request_vote(cx, from, term, last_log_index, last_log_term)
            }
            RaftMessage::Vote { term, granted } => {
                if term > self.current_term {
                    self.become_follower(term, cx);
                } else if self.role == Role::Candidate && term == self.current_term && granted {
                    self.votes.insert(from);
                    if self.votes.len() >= self.majority() {
                        self.become_leader(cx);
                    }
                }
            }
            RaftMessage::AppendEntries { term, prev_log_index, prev_log_term, entries, leader_commit } => {
                self.on_append_entries(cx, from, term, prev_log_index, prev_log_term, entries, leader_commit)
            }
            RaftMessage::AppendResponse { term, success, index } => {
                self.on_append_response(cx, from, term, success, index)
            }
            RaftMessage::Forward(tx) => {
                if self.role == Role::Leader {
                    self.enqueue(tx);
                    self.maybe_mint(cx);
                } else if let Some(leader) = self.leader_hint.filter(|&l| l != from && l != self.id) {
                    cx.send(leader, RaftMessage::Forward(tx));
                }
            }
        }
    }

    fn on_timer(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>, timer: RaftTimer) {
        match timer {
            RaftTimer::Election(gen) => {
                if gen == self.election_gen && self.role != Role::Leader {
                    self.start_election(cx);
                }
            }
            RaftTimer::Heartbeat(term) => {
                if self.role == Role::Leader && term == self.current_term {
                    for peer in 0..self.n {
                        if peer != self.id {
                            self.send_append(peer, cx);
                        }
                    }
                    cx.set_timer(SimTime::from_millis(self.config.heartbeat_ms), RaftTimer::Heartbeat(term));
                }
            }
            RaftTimer::MintDone { term, block } => self.on_mint_done(term, block, cx),
            RaftTimer::ApplyDone(idx) => {
                self.applying = false;
                if idx == self.last_applied + 1 && idx <= self.commit_index {
                    if let Some(block) = self.log[idx as usize].block.clone() {
                        self.apply(idx, block, cx.now());
                    }
                }
                self.maybe_apply(cx);
            }
            RaftTimer::RetryForward => {
                self.retry_armed = false;
                self.forward_own(cx);
            }
        }
    }

    fn on_client_tx(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>, tx: Transaction) {
        if self.ledger.contains_tx(tx.id) {
            return;
        }
        self.own_pending.insert(tx.id, tx.clone());
        match self.leader_hint {
            Some(l) if l == self.id && self.role == Role::Leader => {
                self.enqueue(tx);
                self.maybe_mint(cx);
            }
            Some(l) if l != self.id => cx.send(l, RaftMessage::Forward(tx)),
            _ => self.arm_retry(cx),
        }
    }

    fn on_recover(&mut self, cx: &mut Ctx<'_, RaftMessage, RaftTimer>) {
        self.role = Role::Follower;
        self.votes.clear();
        self.leader_hint = None;
        self.mempool.clear();
        self.queued.clear();
        self.minting = false;
        self.applying = false;
        self.retry_armed = false;
        self.commit_index = self.last_applied;
        self.in_log = self
            .log
            .iter()
            .filter_map(|e| e.block.as_ref())
            .flat_map(|b| b.txs.iter().map(|t| t.id))
            .collect();
        self.reset_election_timer(cx);
        self.arm_retry(cx);
    }

    fn halt(&mut self) {
        self.halted = true;
    }

    fn is_quiescent(&self) -> bool {
        !self.minting && !self.applying && self.last_applied == self.last_index()
    }

    fn ledger(&self) -> &Ledger {
        &self.ledger
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::bench::{default_genesis, ADMIN};
    use crate::cluster::{Cluster, CostModel};
    use crate::contract::{Address, Call};
    use crate::netsim::{FaultAction, Topology};

    fn cluster(seed: u64) -> Cluster<RaftNode> {
        let ledger = Ledger::new(default_genesis(5, 5).build().unwrap());
        let engines = (0..5).map(|i| RaftNode::new(i, 5, RaftConfig::default(), ledger.clone())).collect();
        Cluster::new(engines, Topology::default(), CostModel::default(), seed).unwrap()
    }

    fn add_tx(id: u64) -> Transaction {
        let mut spec = default_genesis(5, 1).providers.remove(0);
        spec.name = format!("extra-{id}");
        Transaction { id, sender: Address::from(ADMIN), call: Call::AddNetworkProvider(spec), submitted_at: SimTime::ZERO }
    }

    fn leaders(c: &Cluster<RaftNode>) -> Vec<NodeId> {
        (0..c.nodes()).filter(|&n| !c.is_crashed(n) && c.engine(n).role() == Role::Leader).collect()
    }

    /// Every term has at most one leader, across all nodes' histories.
    fn assert_election_safety(c: &Cluster<RaftNode>) {
        let mut by_term: BTreeMap<u64, NodeId> = BTreeMap::new();
        for n in 0..c.nodes() {
            for &(term, _) in c.engine(n).leaderships() {
                if let Some(other) = by_term.insert(term, n) {
                    panic!("term {term} has leaders {other} and {n}");
                }
            }
        }
    }

    #[test]
    fn elects_exactly_one_leader() {
        for seed in 0..20 {
            let mut c = cluster(seed);
            c.run_until(SimTime::from_secs(3));
            assert_eq!(leaders(&c).len(), 1, "seed {seed}");
            assert_election_safety(&c);
            let leader = leaders(&c)[0];
            let term = c.engine(leader).term();
            assert!((0..5).all(|n| c.engine(n).term() == term && c.engine(n).leader_hint() == Some(leader)));
        }
    }

    #[test]
    fn idle_cluster_mints_no_blocks() {
        let mut c = cluster(1);
        c.run_until(SimTime::from_secs(30));
        for n in 0..5 {
            assert_eq!(c.ledger(n).height(), 0);
        }
    }

    #[test]
    fn blocks_hold_at_most_max_block_txs() {
        let mut c = cluster(2);
        c.run_until(SimTime::from_secs(2));
        let leader = leaders(&c)[0];
        // 25 transactions arrive at once while the leader is idle.
        for id in 1..=25 {
            c.submit(SimTime::from_secs(2), leader, add_tx(id)).unwrap();
        }
        c.run_until(SimTime::from_secs(5));
        let sizes: Vec<usize> = c.ledger(leader).blocks()[1..].iter().map(|b| b.txs.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 25);
        assert!(sizes.iter().all(|&s| (1..=10).contains(&s)), "{sizes:?}");
        assert_eq!(sizes[0], 1, "the first tx is minted as soon as it arrives");
        for n in 0..5 {
            assert_eq!(c.ledger(n).tip().hash, c.ledger(leader).tip().hash);
        }
    }

    #[test]
    fn follower_submissions_are_forwarded() {
        let mut c = cluster(3);
        c.run_until(SimTime::from_secs(2));
        let follower = (0..5).find(|n| !leaders(&c).contains(n)).unwrap();
        c.submit(SimTime::from_secs(2), follower, add_tx(1)).unwrap();
        c.run_until(SimTime::from_secs(4));
        let conf = c.confirmations();
        assert_eq!(conf.len(), 1);
        assert_eq!((conf[0].tx_id, conf[0].node), (1, follower));
    }

    #[test]
    fn two_crashes_are_tolerated() {
        let mut c = cluster(4);
        c.run_until(SimTime::from_secs(2));
        let leader = leaders(&c)[0];
        let victims = [leader, (leader + 1) % 5];
        for v in victims {
            c.inject_fault(SimTime::from_secs(2), FaultAction::Crash(v)).unwrap();
        }
        let live: Vec<NodeId> = (0..5).filter(|n| !victims.contains(n)).collect();
        for (k, id) in (1..=9).enumerate() {
            c.submit(SimTime::from_millis(2_500 + 100 * id), live[k % 3], add_tx(id)).unwrap();
        }
        c.run_until(SimTime::from_secs(10));
        assert_election_safety(&c);
        for &n in &live {
            assert_eq!(c.ledger(n).state().registry_size(), 5 + 9);
            assert!(c.ledger(n).verify());
        }
        assert_eq!(c.confirmations().len(), 9);
    }

    #[test]
    fn three_crashes_stop_commits() {
        let mut c = cluster(5);
        c.run_until(SimTime::from_secs(2));
        for v in 0..3 {
            c.inject_fault(SimTime::from_secs(2), FaultAction::Crash(v)).unwrap();
        }
        c.submit(SimTime::from_millis(2_100), 3, add_tx(1)).unwrap();
        c.run_until(SimTime::from_secs(10));
        assert!(c.confirmations().is_empty());
        assert_eq!(c.ledger(3).height(), 0);
        assert_eq!(c.ledger(4).height(), 0);
        // A majority again: the pending transaction commits.
        c.inject_fault(SimTime::from_secs(10), FaultAction::Recover(0)).unwrap();
        c.run_until(SimTime::from_secs(15));
        assert_eq!(c.confirmations().len(), 1);
        assert_election_safety(&c);
    }

    #[test]
    fn recovered_node_catches_up() {
        let mut c = cluster(6);
        c.run_until(SimTime::from_secs(2));
        c.inject_fault(SimTime::from_secs(2), FaultAction::Crash(4)).unwrap();
        for id in 1..=30 {
            c.submit(SimTime::from_millis(2_000 + 50 * id), (id % 4) as NodeId, add_tx(id)).unwrap();
        }
        c.inject_fault(SimTime::from_secs(6), FaultAction::Recover(4)).unwrap();
        c.run_until(SimTime::from_secs(10));
        assert_eq!(c.ledger(4).tip().hash, c.ledger(0).tip().hash);
        assert_eq!(c.ledger(4).state().digest(), c.ledger(0).state().digest());
        assert!(c.ledger(0).blocks()[1..].iter().all(|b| !b.txs.is_empty()));
    }
}
