// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Discrete-event scheduler and WAN model.
//!
//! Events fire in `(time, sequence)` order, where the sequence number is
//! assigned at scheduling time, so two events at the same instant run in
//! insertion order. Every random draw (link delays, loss) comes from the one
//! seeded generator owned by [`Simulator`]; a run is a pure function of its
//! configuration and seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::Transaction;
use crate::SimTime;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetsimError {
    #[error("cannot schedule at {at}, simulation is already at {now}")]
    SchedulePast { at: SimTime, now: SimTime },
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("invalid link profile: {0}")]
    InvalidLink(String),
    #[error("loss rate {0} outside [0, 1)")]
    InvalidLoss(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    CloudA,
    Remote,
}

/// One-way delay distribution: `max(min_ms, Normal(mean_ms, stddev_ms))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub min_ms: f64,
}

impl LinkProfile {
    pub const INTRA_CLOUD: LinkProfile = LinkProfile { mean_ms: 2.0, stddev_ms: 0.5, min_ms: 0.1 };
    pub const CLOUD_REMOTE: LinkProfile = LinkProfile { mean_ms: 25.0, stddev_ms: 5.0, min_ms: 5.0 };

    fn validate(&self) -> Result<(), NetsimError> {
        let ok = self.mean_ms.is_finite()
            && self.stddev_ms.is_finite()
            && self.min_ms.is_finite()
            && self.min_ms >= 0.0
            && self.stddev_ms >= 0.0
            && self.mean_ms >= self.min_ms;
        if ok {
            Ok(())
        } else {
            Err(NetsimError::InvalidLink(format!("{self:?}")))
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> SimTime {
        let draw = if self.stddev_ms > 0.0 {
            Normal::new(self.mean_ms, self.stddev_ms).expect("validated").sample(rng)
        } else {
            self.mean_ms
        };
        SimTime::from_millis_f64(draw.max(self.min_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkOverride {
    pub from: NodeId,
    pub to: NodeId,
    pub profile: LinkProfile,
    #[serde(default)]
    pub loss_rate: Option<f64>,
}

/// Node placement and link characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Topology {
    pub sites: Vec<Site>,
    pub intra_site: LinkProfile,
    pub inter_site: LinkProfile,
    pub loss_rate: f64,
    /// Per ordered pair replacements for the site-derived profile.
    pub overrides: Vec<LinkOverride>,
}

impl Default for Topology {
    /// Four co-located cloud nodes and one remote node.
    fn default() -> Self {
        Topology {
            sites: vec![Site::CloudA, Site::CloudA, Site::CloudA, Site::CloudA, Site::Remote],
            intra_site: LinkProfile::INTRA_CLOUD,
            inter_site: LinkProfile::CLOUD_REMOTE,
            loss_rate: 0.0,
            overrides: Vec::new(),
        }
    }
}

impl Topology {
    pub fn uniform(n: usize, profile: LinkProfile) -> Self {
        Topology {
            sites: vec![Site::CloudA; n],
            intra_site: profile,
            inter_site: profile,
            loss_rate: 0.0,
            overrides: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn validate(&self) -> Result<(), NetsimError> {
        self.intra_site.validate()?;
        self.inter_site.validate()?;
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(NetsimError::InvalidLoss(self.loss_rate));
        }
        for o in &self.overrides {
            o.profile.validate()?;
            for node in [o.from, o.to] {
                if node >= self.len() {
                    return Err(NetsimError::UnknownNode(node));
                }
            }
            if let Some(l) = o.loss_rate {
                if !(0.0..1.0).contains(&l) {
                    return Err(NetsimError::InvalidLoss(l));
                }
            }
        }
        Ok(())
    }

    /// Delay profile and loss rate for messages from `from` to `to`.
    pub fn link(&self, from: NodeId, to: NodeId) -> (LinkProfile, f64) {
        if let Some(o) = self.overrides.iter().rev().find(|o| o.from == from && o.to == to) {
            return (o.profile, o.loss_rate.unwrap_or(self.loss_rate));
        }
        let profile = if self.sites[from] == self.sites[to] { self.intra_site } else { self.inter_site };
        (profile, self.loss_rate)
    }

    /// Smallest one-way delay any message can experience.
    pub fn min_delay(&self) -> SimTime {
        let mut min = self.intra_site.min_ms.min(self.inter_site.min_ms);
        for o in &self.overrides {
            min = min.min(o.profile.min_ms);
        }
        SimTime::from_millis_f64(min)
    }
}

/// Misbehaviour injected into a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantinePolicy {
    /// Every outgoing message is dropped.
    Silence,
    /// Conflicting proposals and votes are sent to different peers.
    Equivocate,
    /// Proposals carry blocks honest validators must reject.
    InvalidProposal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultAction {
    Crash(NodeId),
    Recover(NodeId),
    Byzantine(NodeId, ByzantinePolicy),
}

impl FaultAction {
    pub fn node(&self) -> NodeId {
        match *self {
            FaultAction::Crash(n) | FaultAction::Recover(n) | FaultAction::Byzantine(n, _) => n,
        }
    }
}

#[derive(Debug, Clone)]
pub enum EventKind<M, T> {
    Deliver { from: NodeId, to: NodeId, msg: M, sent_at: SimTime },
    Timer { node: NodeId, timer: T },
    InjectTx { node: NodeId, tx: Transaction },
    Fault(FaultAction),
}

impl<M: fmt::Display, T: fmt::Display> fmt::Display for EventKind<M, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Deliver { from, to, msg, .. } => write!(f, "deliver {from}->{to} {msg}"),
            EventKind::Timer { node, timer } => write!(f, "timer n{node} {timer}"),
            EventKind::InjectTx { node, tx } => write!(f, "inject n{node} tx{} {}", tx.id, tx.call.function()),
            EventKind::Fault(a) => write!(f, "fault {a:?}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Event<M, T> {
    pub at: SimTime,
    pub seq: u64,
    pub kind: EventKind<M, T>,
}

struct Queued<M, T>(Event<M, T>);

impl<M, T> PartialEq for Queued<M, T> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}

impl<M, T> Eq for Queued<M, T> {}

impl<M, T> PartialOrd for Queued<M, T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M, T> Ord for Queued<M, T> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.at, other.0.seq).cmp(&(self.0.at, self.0.seq))
    }
}

/// Priority queue of pending events and the simulation clock.
pub struct Scheduler<M, T> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<M, T>>,
}

impl<M, T> Default for Scheduler<M, T> {
    fn default() -> Self {
        Scheduler { now: SimTime::ZERO, next_seq: 0, queue: BinaryHeap::new() }
    }
}

impl<M, T> Scheduler<M, T> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, at: SimTime, kind: EventKind<M, T>) -> Result<u64, NetsimError> {
        if at < self.now {
            return Err(NetsimError::SchedulePast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event { at, seq, kind }));
        Ok(seq)
    }

    /// Pops the next event if it fires no later than `t_end`, advancing the
    /// clock to its fire time. Otherwise the clock moves to `t_end`.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<M, T>> {
        match self.queue.peek() {
            Some(q) if q.0.at <= t_end => {
                let ev = self.queue.pop().expect("peeked").0;
                self.now = ev.at;
                Some(ev)
            }
            _ => {
                self.now = self.now.max(t_end);
                None
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub dropped_faulty: u64,
}

/// Scheduler, link model, fault state and the run's random generator.
pub struct Simulator<M, T> {
    sched: Scheduler<M, T>,
    topology: Topology,
    rng: ChaCha8Rng,
    crashed: Vec<bool>,
    byzantine: Vec<Option<ByzantinePolicy>>,
    stats: NetStats,
    trace: Option<Vec<String>>,
}

impl<M: Clone + fmt::Display, T: fmt::Display> Simulator<M, T> {
    pub fn new(topology: Topology, seed: u64) -> Result<Self, NetsimError> {
        topology.validate()?;
        let n = topology.len();
        Ok(Simulator {
            sched: Scheduler::default(),
            topology,
            rng: ChaCha8Rng::seed_from_u64(seed),
            crashed: vec![false; n],
            byzantine: vec![None; n],
            stats: NetStats::default(),
            trace: None,
        })
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> Option<&[String]> {
        self.trace.as_deref()
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn nodes(&self) -> usize {
        self.topology.len()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.sched.pending()
    }

    pub fn is_crashed(&self, node: NodeId) -> bool {
        self.crashed[node]
    }

    pub fn byzantine(&self, node: NodeId) -> Option<ByzantinePolicy> {
        self.byzantine[node]
    }

    pub fn schedule(&mut self, at: SimTime, kind: EventKind<M, T>) -> Result<u64, NetsimError> {
        if let EventKind::Deliver { to: node, .. }
        | EventKind::Timer { node, .. }
        | EventKind::InjectTx { node, .. } = &kind
        {
            if *node >= self.nodes() {
                return Err(NetsimError::UnknownNode(*node));
            }
        }
        if let EventKind::Fault(a) = &kind {
            if a.node() >= self.nodes() {
                return Err(NetsimError::UnknownNode(a.node()));
            }
        }
        self.sched.schedule(at, kind)
    }

    pub fn set_timer(&mut self, node: NodeId, after: SimTime, timer: T) {
        let at = self.now() + after;
        self.sched.schedule(at, EventKind::Timer { node, timer }).expect("timer in the future");
    }

    pub fn inject_fault(&mut self, at: SimTime, action: FaultAction) -> Result<u64, NetsimError> {
        self.schedule(at, EventKind::Fault(action))
    }

    /// Sends `msg`. Self-addressed messages are delivered at the current
    /// instant; otherwise the link may drop it or delay it by an independent
    /// sample, so messages on one link can overtake each other.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: M) {
        self.stats.sent += 1;
        if self.crashed[from] || self.byzantine[from] == Some(ByzantinePolicy::Silence) {
            self.stats.dropped_faulty += 1;
            return;
        }
        let now = self.now();
        let delay = if from == to {
            SimTime::ZERO
        } else {
            let (profile, loss) = self.topology.link(from, to);
            if loss > 0.0 && self.rng.random_bool(loss) {
                self.stats.lost += 1;
                return;
            }
            profile.sample(&mut self.rng)
        };
        self.sched
            .schedule(now + delay, EventKind::Deliver { from, to, msg, sent_at: now })
            .expect("delivery in the future");
    }

    /// Applies the network-level part of a fault.
    pub fn apply_fault(&mut self, action: FaultAction) {
        match action {
            FaultAction::Crash(n) => self.crashed[n] = true,
            FaultAction::Recover(n) => self.crashed[n] = false,
            FaultAction::Byzantine(n, p) => self.byzantine[n] = Some(p),
        }
    }

    /// Next event due by `t_end`, with crash filtering: deliveries, timers
    /// and injections addressed to a crashed node are discarded here.
    pub fn next_event(&mut self, t_end: SimTime) -> Option<Event<M, T>> {
        loop {
            let ev = self.sched.pop_until(t_end)?;
            let target = match &ev.kind {
                EventKind::Deliver { to, .. } => Some(*to),
                EventKind::Timer { node, .. } | EventKind::InjectTx { node, .. } => Some(*node),
                EventKind::Fault(_) => None,
            };
            let dropped = target.is_some_and(|n| self.crashed[n]);
            if let Some(trace) = &mut self.trace {
                let mark = if dropped { " (dropped: crashed)" } else { "" };
                trace.push(format!("{} {} {}{}", ev.at.as_micros(), ev.seq, ev.kind, mark));
            }
            if dropped {
                if matches!(ev.kind, EventKind::Deliver { .. }) {
                    self.stats.dropped_faulty += 1;
                }
                continue;
            }
            if matches!(ev.kind, EventKind::Deliver { .. }) {
                self.stats.delivered += 1;
            }
            return Some(ev);
        }
    }

    /// Processes events through `handler` until the queue is empty or the
    /// next event lies beyond `t_end`; the clock then rests at `t_end`.
    /// Returns the number of events handled.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> usize
    where
        F: FnMut(&mut Self, Event<M, T>),
    {
        let mut handled = 0;
        while let Some(ev) = self.next_event(t_end) {
            handled += 1;
            handler(self, ev);
        }
        handled
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Ping(u32);

    impl fmt::Display for Ping {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write!(f, "ping{}", self.0)
        }
    }

    type Sim = Simulator<Ping, u32>;

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut sim = Sim::new(Topology::default(), 1).unwrap();
        for i in 0..5 {
            sim.schedule(SimTime::from_millis(10), EventKind::Timer { node: 0, timer: i }).unwrap();
        }
        let mut order = Vec::new();
        sim.run_until(SimTime::from_secs(1), |_, ev| {
            if let EventKind::Timer { timer, .. } = ev.kind {
                order.push(timer);
            }
        });
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut sim = Sim::new(Topology::default(), 1).unwrap();
        sim.run_until(SimTime::from_secs(1), |_, _| {});
        let err = sim.schedule(SimTime::from_millis(5), EventKind::Timer { node: 0, timer: 0 });
        assert!(matches!(err, Err(NetsimError::SchedulePast { .. })));
    }

    #[test]
    fn empty_queue_returns_at_end_time() {
        let mut sim = Sim::new(Topology::default(), 1).unwrap();
        assert_eq!(sim.run_until(SimTime::from_secs(3), |_, _| {}), 0);
        assert_eq!(sim.now(), SimTime::from_secs(3));
    }

    fn mean_delay(from: NodeId, to: NodeId) -> f64 {
        let mut sim = Sim::new(Topology::default(), 7).unwrap();
        let n = 10_000;
        for i in 0..n {
            sim.send(from, to, Ping(i));
        }
        let mut total = 0.0;
        sim.run_until(SimTime::from_secs(10), |_, ev| {
            if let EventKind::Deliver { sent_at, .. } = ev.kind {
                assert!(ev.at >= sent_at);
                total += (ev.at - sent_at).as_micros() as f64 / 1_000.0;
            }
        });
        assert_eq!(sim.stats().delivered, n as u64);
        total / n as f64
    }

    #[test]
    fn intra_cloud_delay_statistics() {
        let mean = mean_delay(0, 1);
        assert!((mean - 2.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn cloud_remote_delay_statistics() {
        let mean = mean_delay(1, 4);
        assert!((mean - 25.0).abs() < 1.25, "mean {mean}");
    }

    #[test]
    fn lossless_links_deliver_everything() {
        let mut sim = Sim::new(Topology::default(), 3).unwrap();
        for i in 0..500 {
            sim.send((i % 5) as usize, ((i + 1) % 5) as usize, Ping(i));
        }
        let mut count = 0;
        sim.run_until(SimTime::from_secs(1), |_, _| count += 1);
        assert_eq!(count, 500);
    }

    #[test]
    fn lossy_links_drop_roughly_their_rate() {
        let mut topo = Topology::default();
        topo.loss_rate = 0.2;
        let mut sim = Sim::new(topo, 3).unwrap();
        for i in 0..5_000 {
            sim.send(0, 1, Ping(i));
        }
        let lost = sim.stats().lost as f64 / 5_000.0;
        assert!((lost - 0.2).abs() < 0.03, "{lost}");
    }

    #[test]
    fn crashed_nodes_neither_send_nor_receive() {
        let mut sim = Sim::new(Topology::default(), 3).unwrap();
        sim.apply_fault(FaultAction::Crash(2));
        sim.send(2, 0, Ping(1));
        sim.send(0, 2, Ping(2));
        sim.schedule(SimTime::from_millis(1), EventKind::Timer { node: 2, timer: 9 }).unwrap();
        let mut count = 0;
        sim.run_until(SimTime::from_secs(1), |_, _| count += 1);
        assert_eq!(count, 0);
    }

    #[test]
    fn silent_byzantine_sends_nothing() {
        let mut sim = Sim::new(Topology::default(), 3).unwrap();
        sim.apply_fault(FaultAction::Byzantine(1, ByzantinePolicy::Silence));
        sim.send(1, 0, Ping(1));
        assert_eq!(sim.pending(), 0);
    }

    #[test]
    fn self_delivery_is_immediate() {
        let mut sim = Sim::new(Topology::default(), 3).unwrap();
        sim.send(3, 3, Ping(0));
        let ev = sim.next_event(SimTime::from_secs(1)).unwrap();
        assert_eq!(ev.at, SimTime::ZERO);
    }

    #[test]
    fn same_seed_same_trace() {
        let run = |seed| {
            let mut sim = Sim::new(Topology::default(), seed).unwrap();
            sim.enable_trace();
            for i in 0..200 {
                sim.send((i % 5) as usize, ((i * 3 + 1) % 5) as usize, Ping(i));
            }
            sim.run_until(SimTime::from_secs(1), |_, _| {});
            sim.trace().unwrap().join("\n")
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn topology_validation() {
        let mut t = Topology::default();
        t.loss_rate = 1.0;
        assert!(t.validate().is_err());
        let mut t = Topology::default();
        t.intra_site.min_ms = -1.0;
        assert!(t.validate().is_err());
        assert_eq!(Topology::default().min_delay(), SimTime::from_micros(100));
    }
}
