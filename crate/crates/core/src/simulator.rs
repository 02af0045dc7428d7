//! Slotted discrete-event engine for Direct-Link CSMA and the cooperative
//! fairMACi variants.
//!
//! Time is measured in packet durations. A contention slot that nobody uses
//! costs `sigma`; a busy event (success or collision) costs one packet plus
//! the idle slot that always follows it, `1 + sigma`. The clock is derived
//! from the idle and busy tallies so that
//! `elapsed = sigma * idle + (1 + sigma) * busy` holds exactly.
//!
//! ACKs are instantaneous, collision-free and heard by every node. A node
//! transmits the head of its relay queue (as a joint packet carrying `d` of
//! its own data) whenever the queue is non-empty, otherwise a fresh packet
//! of its own.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::validate_tau_sigma;
use crate::error::{Error, Result};
use crate::schemes::{helper_set, SchemeKind, TargetRate};
use crate::topology::{NodeId, RateTable, Topology};

pub const DEFAULT_TAU: f64 = 0.001;
pub const DEFAULT_SIGMA: f64 = 0.002;
pub const DEFAULT_Q_LIMIT: u32 = 100;
pub const DEFAULT_DELIVERIES: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopCondition {
    /// Stop once this many packets (units of `d`) have been credited at the AP.
    Deliveries(u64),
    /// Stop once the clock reaches this many packet durations.
    Time(f64),
}

/// How contention slots are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContentionMode {
    /// One Bernoulli draw per eligible node per slot, in `NodeId` order.
    PerSlot,
    /// Jump straight to the next busy slot. The number of idle slots is
    /// geometric and the transmitter count binomial conditioned on being
    /// non-zero, which has the same law as per-slot drawing because the
    /// eligible set only changes at busy events.
    #[default]
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scheme: SchemeKind,
    pub d: TargetRate,
    pub q_limit: u32,
    pub tau: f64,
    pub sigma: f64,
    pub seed: u64,
    pub stop: StopCondition,
    #[serde(default)]
    pub contention: ContentionMode,
    #[serde(default)]
    pub trace: bool,
}

impl SimConfig {
    pub fn new(scheme: SchemeKind, d: TargetRate) -> Self {
        SimConfig {
            scheme,
            d,
            q_limit: DEFAULT_Q_LIMIT,
            tau: DEFAULT_TAU,
            sigma: DEFAULT_SIGMA,
            seed: 0,
            stop: StopCondition::Deliveries(DEFAULT_DELIVERIES),
            contention: ContentionMode::Skip,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_limit == 0 {
            return Err(Error::Config("q_limit must be at least 1".into()));
        }
        validate_tau_sigma(self.tau, self.sigma)?;
        match self.stop {
            StopCondition::Deliveries(0) => Err(Error::Config("delivery stop must be positive".into())),
            StopCondition::Time(t) if !(t > 0.0 && t.is_finite()) => {
                Err(Error::Config(format!("time stop must be positive, got {t}")))
            }
            _ => Ok(()),
        }
    }
}

/// A packet as identified in headers: origin, sequence number, and the
/// origin's direct rate carried in the header flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRef {
    pub origin: NodeId,
    pub seq: u64,
    pub flagged_rate: f64,
}

impl PacketRef {
    pub fn key(&self) -> (NodeId, u64) {
        (self.origin, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayObligation {
    pub packet: PacketRef,
    /// `d` for two-hop, `d - R_k` for decode-and-forward.
    pub forward_amount: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeState {
    pub queue: VecDeque<RelayObligation>,
    /// Own packets broadcast but not yet delivered.
    pub outstanding: u32,
    pub next_seq: u64,
    pub delivered_packets: u64,
    pub tx_count: u64,
    pub silenced: bool,
    pub stall_time: f64,
}

impl NodeState {
    pub fn delivered_info(&self, d: TargetRate) -> f64 {
        self.delivered_packets as f64 * d.get()
    }
}

/// Whether a node may contend in the next slot.
pub fn eligibility(node: &NodeState, scheme: SchemeKind, q_limit: u32) -> bool {
    match scheme {
        SchemeKind::DirectLink => !node.silenced,
        _ => !node.queue.is_empty() || node.outstanding < q_limit,
    }
}

/// Sequence numbers of one origin that the AP has delivered.
#[derive(Debug, Clone, Default, PartialEq)]
struct DeliveredSeqs {
    /// Every sequence number below this one is delivered.
    below: u64,
    above: BTreeSet<u64>,
}

impl DeliveredSeqs {
    fn contains(&self, seq: u64) -> bool {
        seq < self.below || self.above.contains(&seq)
    }

    fn insert(&mut self, seq: u64) -> bool {
        if self.contains(seq) {
            return false;
        }
        if seq == self.below {
            self.below += 1;
            while self.above.remove(&self.below) {
                self.below += 1;
            }
        } else {
            self.above.insert(seq);
        }
        true
    }

    fn count(&self) -> u64 {
        self.below + self.above.len() as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApState {
    /// Information overheard from broadcasts the AP could not decode
    /// (decode-and-forward only).
    partial_store: HashMap<(NodeId, u64), f64>,
    delivered: Vec<DeliveredSeqs>,
}

impl ApState {
    fn new(n: usize) -> Self {
        ApState { partial_store: HashMap::new(), delivered: vec![DeliveredSeqs::default(); n] }
    }

    pub fn is_delivered(&self, origin: NodeId, seq: u64) -> bool {
        self.delivered[origin.0].contains(seq)
    }

    pub fn delivered_count(&self, origin: NodeId) -> u64 {
        self.delivered[origin.0].count()
    }

    pub fn partial(&self, origin: NodeId, seq: u64) -> Option<f64> {
        self.partial_store.get(&(origin, seq)).copied()
    }

    pub fn partial_entries(&self) -> impl Iterator<Item = ((NodeId, u64), f64)> + '_ {
        self.partial_store.iter().map(|(k, v)| (*k, *v))
    }
}

/// Result of one contention slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotOutcome {
    Idle,
    Success(NodeId),
    Collision(Vec<NodeId>),
}

/// Every eligible node transmits independently with probability `tau`;
/// draws are made in the order of `eligible`.
pub fn contend<R: Rng + ?Sized>(eligible: &[NodeId], tau: f64, rng: &mut R) -> SlotOutcome {
    let mut transmitters = Vec::new();
    for &k in eligible {
        if rng.random::<f64>() < tau {
            transmitters.push(k);
        }
    }
    match transmitters.len() {
        0 => SlotOutcome::Idle,
        1 => SlotOutcome::Success(transmitters[0]),
        _ => SlotOutcome::Collision(transmitters),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxKind {
    /// Direct-Link packet to the AP.
    Direct,
    /// Fresh own packet broadcast by a cooperative node.
    Broadcast,
    /// Relay obligation packed with the relay's own data.
    Joint,
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxKind::Direct => "direct",
            TxKind::Broadcast => "broadcast",
            TxKind::Joint => "joint",
        })
    }
}

/// One line of the run log, emitted per busy event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceRecord {
    Success { time: f64, transmitter: NodeId, kind: TxKind, packet: (NodeId, u64), delivered: bool },
    Collision { time: f64, transmitters: Vec<NodeId> },
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceRecord::Success { time, transmitter, kind, packet, delivered } => write!(
                f,
                "{time:.6} success tx={transmitter} kind={kind} packet={}:{} delivered={delivered}",
                packet.0, packet.1
            ),
            TraceRecord::Collision { time, transmitters } => {
                let ids: Vec<String> = transmitters.iter().map(|k| k.to_string()).collect();
                write!(f, "{time:.6} collision tx={}", ids.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub delivered_packets: u64,
    pub delivered_info: f64,
    pub throughput: f64,
    pub tx_count: u64,
    pub stall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: SchemeKind,
    pub d: f64,
    pub q_limit: u32,
    pub nodes: Vec<NodeMetrics>,
    pub elapsed_time: f64,
    pub idle_slots: u64,
    pub successes: u64,
    pub collisions: u64,
    pub deliveries: u64,
    pub min_throughput: f64,
    /// Largest relay queue seen at any node.
    pub peak_obligation_memory: usize,
    /// The run ended early because no node could contend any more.
    pub deadlocked: bool,
}

impl MetricsReport {
    pub fn busy_events(&self) -> u64 {
        self.successes + self.collisions
    }
}

/// What a call to [`Simulator::step`] did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Idle,
    Busy(SlotOutcome),
    Finished,
}

pub struct Simulator<'a> {
    config: SimConfig,
    rates: &'a RateTable,
    direct_ok: Vec<bool>,
    helpers: Vec<Vec<NodeId>>,
    nodes: Vec<NodeState>,
    ap: ApState,
    rng: ChaCha8Rng,
    eligible: Vec<NodeId>,
    ineligible: Vec<NodeId>,
    idle_slots: u64,
    successes: u64,
    collisions: u64,
    deliveries: u64,
    peak_queue: usize,
    deadlocked: bool,
    finished: bool,
    trace: Option<Vec<TraceRecord>>,
}

impl<'a> Simulator<'a> {
    pub fn new(config: SimConfig, rates: &'a RateTable) -> Result<Self> {
        config.validate()?;
        if rates.is_empty() {
            return Err(Error::Config("rate table is empty".into()));
        }
        let d = config.d;
        let direct_ok: Vec<bool> = rates.nodes().map(|k| rates.direct(k) >= d.get()).collect();
        let helpers = rates
            .nodes()
            .map(|k| {
                if direct_ok[k.0] || !config.scheme.is_cooperative() {
                    Vec::new()
                } else {
                    helper_set(k, rates, d, config.scheme).into_iter().collect()
                }
            })
            .collect();
        let nodes = rates
            .nodes()
            .map(|k| NodeState {
                silenced: config.scheme == SchemeKind::DirectLink && !direct_ok[k.0],
                ..NodeState::default()
            })
            .collect();
        let mut sim = Simulator {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            trace: config.trace.then(Vec::new),
            ap: ApState::new(rates.len()),
            config,
            rates,
            direct_ok,
            helpers,
            nodes,
            eligible: Vec::new(),
            ineligible: Vec::new(),
            idle_slots: 0,
            successes: 0,
            collisions: 0,
            deliveries: 0,
            peak_queue: 0,
            deadlocked: false,
            finished: false,
        };
        sim.refresh_eligible();
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn ap(&self) -> &ApState {
        &self.ap
    }

    pub fn eligible(&self) -> &[NodeId] {
        &self.eligible
    }

    /// Helper set the simulator uses for `k` (empty when `k` needs no help).
    pub fn helpers_of(&self, k: NodeId) -> &[NodeId] {
        &self.helpers[k.0]
    }

    pub fn idle_slots(&self) -> u64 {
        self.idle_slots
    }

    pub fn busy_events(&self) -> u64 {
        self.successes + self.collisions
    }

    pub fn deliveries(&self) -> u64 {
        self.deliveries
    }

    pub fn elapsed(&self) -> f64 {
        let sigma = self.config.sigma;
        sigma * self.idle_slots as f64 + (1.0 + sigma) * self.busy_events() as f64
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn stop_reached(&self) -> bool {
        match self.config.stop {
            StopCondition::Deliveries(n) => self.deliveries >= n,
            StopCondition::Time(t) => self.elapsed() >= t,
        }
    }

    fn refresh_eligible(&mut self) {
        self.eligible.clear();
        self.ineligible.clear();
        for (k, node) in self.nodes.iter().enumerate() {
            if eligibility(node, self.config.scheme, self.config.q_limit) {
                self.eligible.push(NodeId(k));
            } else {
                self.ineligible.push(NodeId(k));
            }
        }
    }

    fn charge_stall(&mut self, duration: f64) {
        for &k in &self.ineligible {
            self.nodes[k.0].stall_time += duration;
        }
    }

    /// Idle slots needed to bring the clock to a time stop.
    fn idle_slots_until(&self, t: f64) -> u64 {
        ((t - self.elapsed()) / self.config.sigma).ceil().max(0.0) as u64
    }

    fn finish_deadlocked(&mut self) {
        self.deadlocked = true;
        if let StopCondition::Time(t) = self.config.stop {
            let slots = self.idle_slots_until(t);
            self.idle_slots += slots;
            self.charge_stall(slots as f64 * self.config.sigma);
        }
        self.finished = true;
    }

    /// Advances the simulation: one slot in per-slot mode, one idle run plus
    /// the busy event that ends it in skip mode.
    pub fn step(&mut self) -> Result<Step> {
        if self.finished {
            return Ok(Step::Finished);
        }
        if self.eligible.is_empty() {
            self.finish_deadlocked();
            return Ok(Step::Finished);
        }
        let step = match self.config.contention {
            ContentionMode::PerSlot => match contend(&self.eligible, self.config.tau, &mut self.rng) {
                SlotOutcome::Idle => {
                    self.idle_slots += 1;
                    self.charge_stall(self.config.sigma);
                    Step::Idle
                }
                busy => {
                    let transmitters = match &busy {
                        SlotOutcome::Success(k) => vec![*k],
                        SlotOutcome::Collision(v) => v.clone(),
                        SlotOutcome::Idle => unreachable!(),
                    };
                    self.charge_stall(1.0 + self.config.sigma);
                    self.apply_busy(&transmitters)?;
                    Step::Busy(busy)
                }
            },
            ContentionMode::Skip => {
                let m = self.eligible.len();
                let log_idle = m as f64 * (-self.config.tau).ln_1p();
                let u: f64 = 1.0 - self.rng.random::<f64>();
                let gap = (u.ln() / log_idle).floor();
                let gap = if gap >= u64::MAX as f64 { u64::MAX } else { gap as u64 };
                if let StopCondition::Time(t) = self.config.stop {
                    let to_stop = self.idle_slots_until(t);
                    if gap >= to_stop {
                        self.idle_slots += to_stop;
                        self.charge_stall(to_stop as f64 * self.config.sigma);
                        self.finished = true;
                        return Ok(Step::Finished);
                    }
                }
                self.idle_slots += gap;
                let count = self.sample_transmitter_count(m, -log_idle.exp_m1());
                let transmitters: Vec<NodeId> = if count == 1 {
                    vec![self.eligible[self.rng.random_range(0..m)]]
                } else {
                    let mut picked: Vec<usize> = index::sample(&mut self.rng, m, count).into_vec();
                    picked.sort_unstable();
                    picked.into_iter().map(|i| self.eligible[i]).collect()
                };
                self.charge_stall(gap as f64 * self.config.sigma + 1.0 + self.config.sigma);
                self.apply_busy(&transmitters)?;
                Step::Busy(if count == 1 {
                    SlotOutcome::Success(transmitters[0])
                } else {
                    SlotOutcome::Collision(transmitters)
                })
            }
        };
        if self.stop_reached() {
            self.finished = true;
        }
        Ok(step)
    }

    /// Binomial(m, tau) conditioned on at least one transmitter, by inversion.
    fn sample_transmitter_count(&mut self, m: usize, p_busy: f64) -> usize {
        let tau = self.config.tau;
        let target = self.rng.random::<f64>() * p_busy;
        let ratio = tau / (1.0 - tau);
        let mut pmf = m as f64 * tau * ((m - 1) as f64 * (-tau).ln_1p()).exp();
        let mut cum = pmf;
        let mut j = 1;
        while cum < target && j < m {
            pmf *= (m - j) as f64 / (j + 1) as f64 * ratio;
            j += 1;
            cum += pmf;
        }
        j
    }

    fn apply_busy(&mut self, transmitters: &[NodeId]) -> Result<()> {
        let time = self.elapsed();
        for &k in transmitters {
            self.nodes[k.0].tx_count += 1;
        }
        if transmitters.len() > 1 {
            self.collisions += 1;
            if let Some(trace) = &mut self.trace {
                trace.push(TraceRecord::Collision { time, transmitters: transmitters.to_vec() });
            }
            return Ok(());
        }
        self.successes += 1;
        let k = transmitters[0];
        let (kind, packet, delivered) = match self.config.scheme {
            SchemeKind::DirectLink => {
                if self.nodes[k.0].silenced {
                    return Err(Error::Internal(format!("silenced node {k} transmitted")));
                }
                self.on_success_direct(k)?
            }
            _ => match self.nodes[k.0].queue.pop_front() {
                Some(ob) => self.on_relay_success(k, ob)?,
                None => self.on_broadcast_success(k)?,
            },
        };
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord::Success { time, transmitter: k, kind, packet, delivered });
        }
        self.refresh_eligible();
        Ok(())
    }

    /// Credits `k` with one fresh packet of its own data.
    fn credit_own(&mut self, k: NodeId) -> Result<u64> {
        let node = &mut self.nodes[k.0];
        let seq = node.next_seq;
        node.next_seq += 1;
        node.delivered_packets += 1;
        self.deliveries += 1;
        if !self.ap.delivered[k.0].insert(seq) {
            return Err(Error::Internal(format!("packet {k}:{seq} delivered twice")));
        }
        Ok(seq)
    }

    fn on_success_direct(&mut self, k: NodeId) -> Result<(TxKind, (NodeId, u64), bool)> {
        let seq = self.credit_own(k)?;
        Ok((TxKind::Direct, (k, seq), true))
    }

    fn on_broadcast_success(&mut self, k: NodeId) -> Result<(TxKind, (NodeId, u64), bool)> {
        if self.direct_ok[k.0] {
            let seq = self.credit_own(k)?;
            return Ok((TxKind::Broadcast, (k, seq), true));
        }
        let d = self.config.d.get();
        let r_k = self.rates.direct(k);
        let node = &mut self.nodes[k.0];
        let packet = PacketRef { origin: k, seq: node.next_seq, flagged_rate: r_k };
        node.next_seq += 1;
        node.outstanding += 1;
        if node.outstanding > self.config.q_limit {
            return Err(Error::Internal(format!("node {k} exceeded the Q limit")));
        }
        let forward_amount = match self.config.scheme {
            SchemeKind::DecodeForward => {
                self.ap.partial_store.insert(packet.key(), packet.flagged_rate);
                d - packet.flagged_rate
            }
            _ => d,
        };
        let obligation = RelayObligation { packet, forward_amount };
        for &l in &self.helpers[k.0] {
            let queue = &mut self.nodes[l.0].queue;
            queue.push_back(obligation);
            self.peak_queue = self.peak_queue.max(queue.len());
        }
        Ok((TxKind::Broadcast, packet.key(), false))
    }

    fn on_relay_success(&mut self, l: NodeId, ob: RelayObligation) -> Result<(TxKind, (NodeId, u64), bool)> {
        let key = ob.packet.key();
        let origin = ob.packet.origin;
        if !self.ap.delivered[origin.0].insert(ob.packet.seq) {
            return Err(Error::Internal(format!("packet {}:{} delivered twice", key.0, key.1)));
        }
        if self.config.scheme == SchemeKind::DecodeForward {
            let heard = self
                .ap
                .partial_store
                .remove(&key)
                .ok_or_else(|| Error::Internal(format!("no overheard information for {}:{}", key.0, key.1)))?;
            let d = self.config.d.get();
            if heard + ob.forward_amount < d * (1.0 - 1e-12) {
                return Err(Error::Internal(format!("packet {}:{} short of the target rate", key.0, key.1)));
            }
        }
        let src = &mut self.nodes[origin.0];
        src.outstanding = src
            .outstanding
            .checked_sub(1)
            .ok_or_else(|| Error::Internal(format!("node {origin} had no outstanding packet")))?;
        src.delivered_packets += 1;
        self.deliveries += 1;
        self.credit_own(l)?;

        for i in 0..self.helpers[origin.0].len() {
            let h = self.helpers[origin.0][i];
            if h == l {
                continue;
            }
            let queue = &mut self.nodes[h.0].queue;
            if let Some(pos) = queue.iter().position(|o| o.packet.key() == key) {
                queue.remove(pos);
            }
        }
        Ok((TxKind::Joint, key, true))
    }

    /// Runs until the stop condition or until no node can contend.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.step()? != Step::Finished {}
        Ok(())
    }

    pub fn report(&self) -> MetricsReport {
        let elapsed = self.elapsed();
        let d = self.config.d;
        let nodes: Vec<NodeMetrics> = self
            .nodes
            .iter()
            .map(|n| {
                let info = n.delivered_info(d);
                NodeMetrics {
                    delivered_packets: n.delivered_packets,
                    delivered_info: info,
                    throughput: if elapsed > 0.0 { info / elapsed } else { 0.0 },
                    tx_count: n.tx_count,
                    stall_time: n.stall_time,
                }
            })
            .collect();
        let min_throughput = nodes.iter().map(|m| m.throughput).fold(f64::INFINITY, f64::min);
        MetricsReport {
            scheme: self.config.scheme,
            d: d.get(),
            q_limit: self.config.q_limit,
            nodes,
            elapsed_time: elapsed,
            idle_slots: self.idle_slots,
            successes: self.successes,
            collisions: self.collisions,
            deliveries: self.deliveries,
            min_throughput,
            peak_obligation_memory: self.peak_queue,
            deadlocked: self.deadlocked,
        }
    }

    pub fn into_trace(self) -> Vec<TraceRecord> {
        self.trace.unwrap_or_default()
    }
}

/// Simulates one configuration to completion.
pub fn run(config: &SimConfig, topology: &Topology, rates: &RateTable) -> Result<MetricsReport> {
    if topology.len() != rates.len() {
        return Err(Error::Config(format!("topology has {} nodes but rate table has {}", topology.len(), rates.len())));
    }
    run_rates(config, rates)
}

/// Like [`run`], for callers that only hold a rate table.
pub fn run_rates(config: &SimConfig, rates: &RateTable) -> Result<MetricsReport> {
    let mut sim = Simulator::new(config.clone(), rates)?;
    sim.run_to_end()?;
    Ok(sim.report())
}
