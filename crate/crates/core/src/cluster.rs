// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Runs one consensus engine per node on top of the [`netsim`] scheduler.
//!
//! Engines are event-driven state machines: they react to messages, timers
//! and client submissions through a [`Ctx`], which lets them send messages,
//! arm timers and occupy their node's CPU for a simulated duration. The
//! cluster turns crashes into dropped events and records when each
//! transaction's block is applied on the node it was submitted to.
//!
//! [`netsim`]: crate::netsim

use std::collections::HashMap;
use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{Ledger, Transaction, TxId, TxStatus};
use crate::contract::Call;
use crate::netsim::{
    ByzantinePolicy, EventKind, FaultAction, NetStats, NetsimError, NodeId, Simulator, Topology,
};
use crate::SimTime;

/// Simulated execution time of contract calls.
///
/// `add_network_provider` and `return_resources` cost `base_ms`;
/// `request_resources` additionally costs `scan_ms` per registered provider,
/// because it walks the whole registry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub base_ms: f64,
    pub scan_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { base_ms: 1.0, scan_ms: 50.0 }
    }
}

impl CostModel {
    pub fn tx_cost(&self, call: &Call, registry_size: usize) -> SimTime {
        let ms = match call {
            Call::RequestResources { .. } => self.base_ms + self.scan_ms * registry_size as f64,
            Call::AddNetworkProvider(_) | Call::ReturnResources { .. } => self.base_ms,
        };
        SimTime::from_millis_f64(ms)
    }

    pub fn block_cost(&self, txs: &[Transaction], registry_size: usize) -> SimTime {
        txs.iter().fold(SimTime::ZERO, |acc, tx| acc + self.tx_cost(&tx.call, registry_size))
    }

    /// Sustained transactions per second of one CPU executing only
    /// `request_resources` against a registry of `registry_size` providers.
    pub fn request_capacity_tps(&self, registry_size: usize) -> f64 {
        1_000.0 / (self.base_ms + self.scan_ms * registry_size as f64)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.base_ms.is_finite() && self.scan_ms.is_finite() && self.base_ms > 0.0 && self.scan_ms >= 0.0 {
            Ok(())
        } else {
            Err(format!("invalid cost model {self:?}"))
        }
    }
}

/// Timer tagged with the incarnation of the node that armed it, so timers
/// armed before a crash never fire after recovery.
#[derive(Debug, Clone)]
pub struct Stamped<T> {
    pub incarnation: u64,
    pub timer: T,
}

impl<T: fmt::Display> fmt::Display for Stamped<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.timer)
    }
}

/// A node's view of the simulator while handling one event.
pub struct Ctx<'a, M, T> {
    id: NodeId,
    incarnation: u64,
    sim: &'a mut Simulator<M, Stamped<T>>,
    cpu_free_at: &'a mut SimTime,
    cost: &'a CostModel,
}

impl<M: Clone + fmt::Display, T: fmt::Display> Ctx<'_, M, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn nodes(&self) -> usize {
        self.sim.nodes()
    }

    pub fn now(&self) -> SimTime {
        self.sim.now()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.sim.rng()
    }

    pub fn cost(&self) -> &CostModel {
        self.cost
    }

    pub fn send(&mut self, to: NodeId, msg: M) {
        self.sim.send(self.id, to, msg);
    }

    /// Sends to every node except this one.
    pub fn broadcast(&mut self, msg: M) {
        for to in 0..self.nodes() {
            if to != self.id {
                self.sim.send(self.id, to, msg.clone());
            }
        }
    }

    pub fn set_timer(&mut self, after: SimTime, timer: T) {
        let stamped = Stamped { incarnation: self.incarnation, timer };
        self.sim.set_timer(self.id, after, stamped);
    }

    pub fn set_timer_at(&mut self, at: SimTime, timer: T) {
        let after = at.saturating_sub(self.now());
        self.set_timer(after, timer);
    }

    /// Occupies the CPU for `work` after whatever is already queued on it;
    /// `done` fires when the work completes. Returns the completion time.
    pub fn run_on_cpu(&mut self, work: SimTime, done: T) -> SimTime {
        let start = (*self.cpu_free_at).max(self.now());
        let end = start + work;
        *self.cpu_free_at = end;
        self.set_timer_at(end, done);
        end
    }

    pub fn cpu_busy_until(&self) -> SimTime {
        *self.cpu_free_at
    }
}

/// A consensus protocol instance running on one node.
pub trait Engine {
    type Msg: Clone + fmt::Display;
    type Timer: Clone + fmt::Display;

    fn start(&mut self, cx: &mut Ctx<'_, Self::Msg, Self::Timer>);
    fn on_message(&mut self, cx: &mut Ctx<'_, Self::Msg, Self::Timer>, from: NodeId, msg: Self::Msg);
    fn on_timer(&mut self, cx: &mut Ctx<'_, Self::Msg, Self::Timer>, timer: Self::Timer);
    /// A client submitted `tx` to this node.
    fn on_client_tx(&mut self, cx: &mut Ctx<'_, Self::Msg, Self::Timer>, tx: Transaction);
    /// The node restarts after a crash. Persistent state survives; pending
    /// timers and CPU work do not.
    fn on_recover(&mut self, cx: &mut Ctx<'_, Self::Msg, Self::Timer>);
    fn set_byzantine(&mut self, _policy: ByzantinePolicy) {}
    /// Stop producing new blocks; in-flight work may still complete.
    fn halt(&mut self);
    /// No block work is queued or in flight on this node.
    fn is_quiescent(&self) -> bool {
        true
    }
    fn ledger(&self) -> &Ledger;
}

/// A transaction's block was applied on the node it was submitted to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Confirmation {
    pub tx_id: TxId,
    pub node: NodeId,
    pub at: SimTime,
    pub height: u64,
    pub status: TxStatus,
}

struct Slot<E> {
    engine: E,
    cpu_free_at: SimTime,
    incarnation: u64,
    seen_height: u64,
}

pub struct Cluster<E: Engine> {
    sim: Simulator<E::Msg, Stamped<E::Timer>>,
    slots: Vec<Slot<E>>,
    cost: CostModel,
    submitted_to: HashMap<TxId, NodeId>,
    confirmations: Vec<Confirmation>,
}

impl<E: Engine> Cluster<E> {
    /// Builds the cluster and starts every engine at time zero.
    pub fn new(engines: Vec<E>, topology: Topology, cost: CostModel, seed: u64) -> Result<Self, NetsimError> {
        assert_eq!(engines.len(), topology.len(), "one engine per topology node");
        let sim = Simulator::new(topology, seed)?;
        let slots = engines
            .into_iter()
            .map(|engine| {
                let seen_height = engine.ledger().height();
                Slot { engine, cpu_free_at: SimTime::ZERO, incarnation: 0, seen_height }
            })
            .collect();
        let mut cluster = Cluster { sim, slots, cost, submitted_to: HashMap::new(), confirmations: Vec::new() };
        for node in 0..cluster.slots.len() {
            cluster.with_engine(node, |engine, cx| engine.start(cx));
        }
        Ok(cluster)
    }

    pub fn enable_trace(&mut self) {
        self.sim.enable_trace();
    }

    pub fn trace(&self) -> Option<&[String]> {
        self.sim.trace()
    }

    pub fn now(&self) -> SimTime {
        self.sim.now()
    }

    pub fn nodes(&self) -> usize {
        self.slots.len()
    }

    pub fn engine(&self, node: NodeId) -> &E {
        &self.slots[node].engine
    }

    pub fn engines(&self) -> impl Iterator<Item = &E> {
        self.slots.iter().map(|s| &s.engine)
    }

    pub fn ledger(&self, node: NodeId) -> &Ledger {
        self.slots[node].engine.ledger()
    }

    pub fn is_crashed(&self, node: NodeId) -> bool {
        self.sim.is_crashed(node)
    }

    pub fn net_stats(&self) -> NetStats {
        self.sim.stats()
    }

    pub fn confirmations(&self) -> &[Confirmation] {
        &self.confirmations
    }

    pub fn submit(&mut self, at: SimTime, node: NodeId, tx: Transaction) -> Result<(), NetsimError> {
        self.sim.schedule(at, EventKind::InjectTx { node, tx }).map(|_| ())
    }

    pub fn inject_fault(&mut self, at: SimTime, action: FaultAction) -> Result<(), NetsimError> {
        self.sim.inject_fault(at, action).map(|_| ())
    }

    /// Delivers `msg` to `to` as if `from` had sent it, bypassing the link
    /// model. Intended for tests that play an adversary.
    pub fn inject_message(&mut self, at: SimTime, from: NodeId, to: NodeId, msg: E::Msg) -> Result<(), NetsimError> {
        self.sim
            .schedule(at, EventKind::Deliver { from, to, msg, sent_at: at })
            .map(|_| ())
    }

    pub fn halt_all(&mut self) {
        for slot in &mut self.slots {
            slot.engine.halt();
        }
    }

    /// Processes events due by `t_end`; the clock then rests at `t_end`.
    pub fn run_until(&mut self, t_end: SimTime) -> usize {
        let mut handled = 0;
        while self.step(t_end) {
            handled += 1;
        }
        handled
    }

    /// Handles the next event due by `t_end`. Returns false when none is due.
    pub fn step(&mut self, t_end: SimTime) -> bool {
        let Some(ev) = self.sim.next_event(t_end) else {
            return false;
        };
        match ev.kind {
            EventKind::Deliver { from, to, msg, .. } => {
                self.with_engine(to, |engine, cx| engine.on_message(cx, from, msg));
            }
            EventKind::Timer { node, timer } => {
                if timer.incarnation == self.slots[node].incarnation {
                    self.with_engine(node, |engine, cx| engine.on_timer(cx, timer.timer));
                }
            }
            EventKind::InjectTx { node, tx } => {
                self.submitted_to.entry(tx.id).or_insert(node);
                self.with_engine(node, |engine, cx| engine.on_client_tx(cx, tx));
            }
            EventKind::Fault(action) => self.apply_fault(action),
        }
        true
    }

    fn apply_fault(&mut self, action: FaultAction) {
        let was_crashed = self.sim.is_crashed(action.node());
        self.sim.apply_fault(action);
        match action {
            FaultAction::Crash(node) if !was_crashed => {
                self.slots[node].incarnation += 1;
            }
            FaultAction::Recover(node) if was_crashed => {
                let now = self.sim.now();
                let slot = &mut self.slots[node];
                slot.incarnation += 1;
                slot.cpu_free_at = now;
                self.with_engine(node, |engine, cx| engine.on_recover(cx));
            }
            FaultAction::Byzantine(node, policy) => self.slots[node].engine.set_byzantine(policy),
            _ => {}
        }
    }

    fn with_engine<F>(&mut self, node: NodeId, f: F)
    where
        F: FnOnce(&mut E, &mut Ctx<'_, E::Msg, E::Timer>),
    {
        let slot = &mut self.slots[node];
        let mut cx = Ctx {
            id: node,
            incarnation: slot.incarnation,
            sim: &mut self.sim,
            cpu_free_at: &mut slot.cpu_free_at,
            cost: &self.cost,
        };
        f(&mut slot.engine, &mut cx);
        self.record_confirmations(node);
    }

    fn record_confirmations(&mut self, node: NodeId) {
        let slot = &mut self.slots[node];
        let ledger = slot.engine.ledger();
        if ledger.height() == slot.seen_height {
            return;
        }
        let now = self.sim.now();
        for height in slot.seen_height + 1..=ledger.height() {
            let block = ledger.block(height).expect("height within ledger");
            for tx in &block.txs {
                if self.submitted_to.get(&tx.id) == Some(&node) {
                    let status = ledger.receipt(tx.id).map(|r| r.status.clone()).unwrap_or(TxStatus::TimedOut);
                    self.confirmations.push(Confirmation { tx_id: tx.id, node, at: now, height, status });
                }
            }
        }
        slot.seen_height = ledger.height();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::{Address, LeaseId};

    #[test]
    fn request_cost_scales_with_registry() {
        let cost = CostModel { base_ms: 1.0, scan_ms: 5.0 };
        let req = Call::ReturnResources { lease_id: LeaseId(1) };
        assert_eq!(cost.tx_cost(&req, 100), SimTime::from_millis(1));
        let tx = |call| Transaction { id: 1, sender: Address::from("a"), call, submitted_at: SimTime::ZERO };
        let request = Call::RequestResources {
            request: crate::contract::ResourceRequest {
                resources: crate::contract::Resources::new(1, 0, 0),
                domain: "d".into(),
                sla: Default::default(),
                vnf_image: "v".into(),
                lend_time_s: 1,
            },
            payment: 0,
        };
        assert_eq!(cost.tx_cost(&request, 5), SimTime::from_millis(26));
        assert_eq!(cost.block_cost(&[tx(request.clone()), tx(req)], 5), SimTime::from_millis(27));
        assert!((cost.request_capacity_tps(5) - 1000.0 / 26.0).abs() < 1e-12);
    }

    #[test]
    fn cost_model_validation() {
        assert!(CostModel::default().validate().is_ok());
        assert!(CostModel { base_ms: 0.0, scan_ms: 1.0 }.validate().is_err());
        assert!(CostModel { base_ms: 1.0, scan_ms: f64::NAN }.validate().is_err());
    }
}
