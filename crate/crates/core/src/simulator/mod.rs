//! Deterministic discrete-event network connecting the node and base
//! station state machines.
//!
//! Every link hop takes one tick. Events are delivered in `(tick, from, to)`
//! order, ties broken by send order, so a scenario and its seed fix every
//! byte of output. Attestation traffic is addressed to a single node and
//! routed hop by hop along the tree.

mod message;
mod metrics;
mod scaling;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

use crate::adversary::AttackPlan;
use crate::basestation::{
    format_report_line, BaseStation, BaseStationConfig, ProbeError, ProbeTransport, QueryResult,
};
use crate::crypto::{Domain, DomainValue};
use crate::node::{AggFunction, AttestationReply, NodeSetup, SensorNode, WirePacket};
use crate::scenario::{Scenario, ScenarioError};
use crate::topology::{provision, NodeId, Tree};

pub use message::{Message, MessageError};
pub use metrics::{Metrics, RoundMetrics, METRICS_HEADER};
pub use scaling::{measure_scaling, scaling_trial, ScalingFamily, ScalingRow, ScalingTrial, SCALING_HEADER};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub tick: u64,
    pub from: NodeId,
    pub to: NodeId,
    seq: u64,
    pub payload: Vec<u8>,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.tick, self.from, self.to, self.seq).cmp(&(other.tick, other.from, other.to, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// The reading sensor `node` takes in `round`: uniform over the domain and
/// a pure function of `(seed, node, round)`.
pub fn sensor_reading(seed: u64, node: NodeId, round: u64, domain: &Domain) -> DomainValue {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_be_bytes());
    bytes[8..12].copy_from_slice(&node.0.to_be_bytes());
    bytes[12..20].copy_from_slice(&round.to_be_bytes());
    bytes[20..].copy_from_slice(b"readings/v1\0");
    let mut rng = ChaCha8Rng::from_seed(bytes);
    DomainValue::new(rng.gen_range(0..=domain.max_raw()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub function: AggFunction,
    pub force_attest: bool,
    pub audit_prob: f64,
    /// Node id and the first round it stays silent from.
    pub offline: BTreeMap<NodeId, u64>,
    pub timeout_factor: u64,
    pub unreachable_after: u32,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            function: AggFunction::Sum,
            force_attest: false,
            audit_prob: 0.0,
            offline: BTreeMap::new(),
            timeout_factor: 10,
            unreachable_after: 3,
        }
    }
}

/// Links, nodes and the pending event queue; everything but the base
/// station's own state.
struct Network {
    tree: Tree,
    domain: Domain,
    seed: u64,
    timeout_factor: u64,
    nodes: BTreeMap<NodeId, SensorNode>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    tick: u64,
    offline: BTreeSet<NodeId>,
    messages: u64,
    bytes: u64,
    /// Messages that reached the base station, in delivery order.
    inbox: Vec<Message>,
}

impl Network {
    fn push(&mut self, tick: u64, from: NodeId, to: NodeId, msg: &Message) -> usize {
        let payload = msg.encode();
        let len = payload.len();
        self.seq += 1;
        self.queue.push(Reverse(Event {
            tick,
            from,
            to,
            seq: self.seq,
            payload,
        }));
        len
    }

    fn send(&mut self, from: NodeId, to: NodeId, msg: &Message) {
        let len = self.push(self.tick + 1, from, to, msg);
        self.messages += 1;
        self.bytes += len as u64;
    }

    /// Children get `factor` ticks per level still below this node, so a
    /// node never gives up on a child that is itself still waiting.
    fn timeout(&self, node: NodeId) -> u64 {
        let depth = self.tree.depth(node).unwrap_or(0);
        self.timeout_factor * u64::from(self.tree.height() - depth + 1)
    }

    /// Next hop from `at` towards `target`, which lies in `at`'s subtree.
    fn hop_down(&self, at: NodeId, target: NodeId) -> Option<NodeId> {
        let mut cur = target;
        loop {
            let parent = self.tree.parent(cur)?;
            if parent == at {
                return Some(cur);
            }
            cur = parent;
        }
    }

    fn run(&mut self) {
        while let Some(Reverse(ev)) = self.queue.pop() {
            self.tick = ev.tick;
            // Payloads are produced by `Message::encode` above, so decoding
            // cannot fail short of a codec bug.
            let msg = Message::decode(&ev.payload).expect("simulator produced an undecodable message");
            if ev.to.is_base_station() {
                self.inbox.push(msg);
            } else if !self.offline.contains(&ev.to) {
                self.deliver(ev.to, msg);
            }
        }
    }

    fn emit(&mut self, id: NodeId) {
        let node = self.nodes.get_mut(&id).unwrap();
        if let Ok(wire) = node.emit() {
            let parent = node.parent();
            self.send(id, parent, &Message::Packet(wire));
        }
    }

    fn deliver(&mut self, id: NodeId, msg: Message) {
        match msg {
            Message::Query(q) => {
                let reading = sensor_reading(self.seed, id, q.round, &self.domain);
                let node = self.nodes.get_mut(&id).unwrap();
                let Ok(forwards) = node.handle_query(q, reading) else {
                    return;
                };
                if node.ready() {
                    self.emit(id);
                    return;
                }
                for (child, q) in forwards {
                    self.send(id, child, &Message::Query(q));
                }
                let at = self.tick + self.timeout(id);
                self.push(at, id, id, &Message::Timer { round: q.round });
            }
            Message::Packet(wire) => {
                let node = self.nodes.get_mut(&id).unwrap();
                // Rejected packets are recorded as incidents by the node.
                let _ = node.aggregate_child(&wire);
                if node.ready() {
                    self.emit(id);
                }
            }
            Message::Timer { round } => {
                let node = &self.nodes[&id];
                let current = node.round_state().is_some_and(|s| s.round == round);
                if current && !node.has_emitted() {
                    self.emit(id);
                }
            }
            Message::Probe { target, round } if target == id => {
                let reply = self.nodes.get_mut(&id).unwrap().respond_attestation(round);
                self.answer(id, reply);
            }
            Message::Reaggregate {
                target,
                round,
                exclusions,
            } if target == id => {
                let reply = self
                    .nodes
                    .get_mut(&id)
                    .unwrap()
                    .reaggregate_excluding(&exclusions, round);
                self.answer(id, reply);
            }
            Message::Probe { target, .. } | Message::Reaggregate { target, .. } => {
                if let Some(next) = self.hop_down(id, target) {
                    self.send(id, next, &msg);
                }
            }
            Message::Reply(_) | Message::Refusal { .. } => {
                let parent = self.nodes[&id].parent();
                self.send(id, parent, &msg);
            }
        }
    }

    fn answer(&mut self, id: NodeId, reply: Result<AttestationReply, crate::node::NodeError>) {
        let msg = match reply {
            Ok(r) => Message::Reply(r),
            Err(error) => Message::Refusal { node: id, error },
        };
        let parent = self.nodes[&id].parent();
        self.send(id, parent, &msg);
    }

    /// Sends `msg` from the base station towards `target` and runs the
    /// network until it goes quiet.
    fn request(&mut self, target: NodeId, msg: Message) -> Result<AttestationReply, ProbeError> {
        self.inbox.clear();
        let Some(first) = self.hop_down(NodeId::BASE_STATION, target) else {
            return Err(ProbeError::Timeout(target));
        };
        self.send(NodeId::BASE_STATION, first, &msg);
        self.run();
        for m in self.inbox.drain(..) {
            match m {
                Message::Reply(r) if r.packet.sender == target => return Ok(r),
                Message::Refusal { node, error } if node == target => {
                    return Err(ProbeError::Refused { node, source: error })
                }
                _ => {}
            }
        }
        Err(ProbeError::Timeout(target))
    }
}

impl ProbeTransport for Network {
    fn probe(&mut self, node: NodeId, round: u64) -> Result<AttestationReply, ProbeError> {
        self.request(node, Message::Probe { target: node, round })
    }

    fn reaggregate(
        &mut self,
        node: NodeId,
        round: u64,
        exclusions: &BTreeSet<NodeId>,
    ) -> Result<AttestationReply, ProbeError> {
        self.request(
            node,
            Message::Reaggregate {
                target: node,
                round,
                exclusions: exclusions.clone(),
            },
        )
    }
}

/// One simulated deployment: tree, provisioned nodes, base station and the
/// event fabric between them.
pub struct Simulation {
    bs: BaseStation,
    net: Network,
    options: SimOptions,
    audit_rng: ChaCha20Rng,
    round: u64,
    plan: AttackPlan,
}

impl Simulation {
    pub fn new(tree: Tree, domain: Domain, plan: AttackPlan, seed: u64, options: SimOptions) -> Self {
        let prov = provision(&tree, &domain, seed);
        let nodes = tree
            .sensors()
            .map(|id| {
                let setup = NodeSetup::from_provisioning(&tree, &prov, domain, id, plan.compromise_for(id));
                (id, SensorNode::new(setup))
            })
            .collect();
        let config = BaseStationConfig {
            unreachable_after: options.unreachable_after,
        };
        let bs = BaseStation::new(&tree, &prov, domain, config);
        let net = Network {
            tree,
            domain,
            seed,
            timeout_factor: options.timeout_factor,
            nodes,
            queue: BinaryHeap::new(),
            seq: 0,
            tick: 0,
            offline: BTreeSet::new(),
            messages: 0,
            bytes: 0,
            inbox: Vec::new(),
        };
        Self {
            bs,
            net,
            audit_rng: ChaCha20Rng::seed_from_u64(seed ^ 0x0061_7564_6974),
            options,
            round: 0,
            plan,
        }
    }

    pub fn from_scenario(scenario: &Scenario) -> Result<Self, ScenarioError> {
        let tree = scenario.tree()?;
        let options = SimOptions {
            function: scenario.function,
            force_attest: scenario.force_attest,
            audit_prob: scenario.audit_prob,
            offline: scenario.offline.clone(),
            timeout_factor: scenario.timeout_factor,
            unreachable_after: scenario.unreachable_after,
        };
        Ok(Self::new(tree, scenario.domain, scenario.plan(), scenario.seed, options))
    }

    pub fn base_station(&self) -> &BaseStation {
        &self.bs
    }

    pub fn tree(&self) -> &Tree {
        &self.net.tree
    }

    pub fn node(&self, id: NodeId) -> Option<&SensorNode> {
        self.net.nodes.get(&id)
    }

    pub fn plan(&self) -> &AttackPlan {
        &self.plan
    }

    pub fn seed(&self) -> u64 {
        self.net.seed
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Honest reading of `node` in `round`.
    pub fn reading(&self, node: NodeId, round: u64) -> DomainValue {
        sensor_reading(self.net.seed, node, round, &self.net.domain)
    }

    /// Sum of honest readings over `participants` in `round`.
    pub fn honest_sum<'a>(&self, round: u64, participants: impl IntoIterator<Item = &'a NodeId>) -> DomainValue {
        participants.into_iter().map(|&id| self.reading(id, round)).sum()
    }

    /// Runs the next round to completion, attestation included.
    pub fn step(&mut self) -> (QueryResult, RoundMetrics) {
        let started = Instant::now();
        self.round += 1;
        let round = self.round;
        let (messages, bytes) = (self.net.messages, self.net.bytes);
        let regens = self.bs.seed_regenerations();
        self.net.offline = self
            .options
            .offline
            .iter()
            .filter(|(_, &from)| from <= round)
            .map(|(&id, _)| id)
            .collect();

        let function = self.options.function;
        let queries = self
            .bs
            .disseminate(function, round)
            .expect("rounds advance monotonically");
        for (child, q) in queries {
            self.net.send(NodeId::BASE_STATION, child, &Message::Query(q));
        }
        self.net.inbox.clear();
        self.net.run();
        let wires: Vec<WirePacket> = self
            .net
            .inbox
            .drain(..)
            .filter_map(|m| match m {
                Message::Packet(w) => Some(w),
                _ => None,
            })
            .collect();
        let packets: Vec<_> = wires.iter().filter_map(|w| self.bs.receive(w).ok()).collect();

        // Drawn every round so the audit schedule does not depend on flags.
        let audit = self.audit_rng.gen::<f64>() < self.options.audit_prob;
        let force = self.options.force_attest || audit;
        let (result, work) = self.bs.conclude_round(function, &packets, force, &mut self.net);

        let metrics = RoundMetrics {
            round,
            messages: self.net.messages - messages,
            bytes: self.net.bytes - bytes,
            seed_regens: self.bs.seed_regenerations() - regens,
            probes: result.probes() as u64,
            reaggregations: result.report.as_ref().map_or(0, |r| r.reaggregations as u64),
            verification: work,
            wall_time: started.elapsed(),
        };
        (result, metrics)
    }

    pub fn run(&mut self, rounds: u64) -> RunOutput {
        let mut out = RunOutput {
            domain: self.net.domain,
            results: Vec::new(),
            metrics: Metrics::default(),
        };
        for _ in 0..rounds {
            let (r, m) = self.step();
            out.results.push(r);
            out.metrics.rounds.push(m);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub domain: Domain,
    pub results: Vec<QueryResult>,
    pub metrics: Metrics,
}

impl RunOutput {
    /// One report line per round.
    pub fn report(&self) -> String {
        self.results
            .iter()
            .map(|r| format_report_line(r, &self.domain) + "\n")
            .collect()
    }
}

/// Runs every round of `scenario`.
pub fn run(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    Ok(Simulation::from_scenario(scenario)?.run(scenario.rounds))
}
