//! The sensor/aggregator state machine.
//!
//! One [`SensorNode`] per sensor. Per round it senses and diffuses its own
//! reading under both seed chains, folds in its children's packets, emits a
//! single packet to its parent and keeps that packet as commitment evidence
//! for later attestation probes.

mod packet;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::adversary::Compromise;
use crate::crypto::{
    diffuse, mac_pair, ChannelError, ChannelReceiver, ChannelSender, DiffusedPair, Domain,
    DomainValue, Key, MacTag, SeedState,
};
use crate::topology::{NodeId, NodeKeys, Provisioning, Tree};

pub use packet::{AggPacket, AttestationReply, PacketError, WirePacket, SEALED_PAIR_LEN};
pub(crate) use packet::Reader;

const DIRECT_CHANNEL_LABEL: &[u8] = b"concealed-agg/bs-direct/v1";

/// Channel key a node uses to answer the base station directly.
pub fn direct_channel_key(keys: &NodeKeys) -> Key {
    keys.key.derive(DIRECT_CHANNEL_LABEL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggFunction {
    Sum,
    Mean,
}

impl fmt::Display for AggFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggFunction::Sum => "sum",
            AggFunction::Mean => "mean",
        })
    }
}

impl FromStr for AggFunction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(AggFunction::Sum),
            "mean" => Ok(AggFunction::Mean),
            other => Err(format!("unknown aggregation function `{other}` (expected sum or mean)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub round: u64,
    pub function: AggFunction,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NodeError {
    #[error("round {round} is not newer than last handled round {last}")]
    StaleRound { round: u64, last: u64 },
    #[error("packet from {0}, which is not a pending child")]
    UnknownChild(NodeId),
    #[error("channel from child {child}: {source}")]
    Channel {
        child: NodeId,
        #[source]
        source: ChannelError,
    },
    #[error("already emitted for round {0}")]
    AlreadyEmitted(u64),
    #[error("no emitted aggregation for round {0}")]
    NoSuchRound(u64),
    #[error("no active round")]
    NoActiveRound,
    #[error("cannot separate excluded node {excluded} from the subtree of child {via}")]
    ExclusionNotResolvable { excluded: NodeId, via: NodeId },
}

/// Notable things a node observed, kept for metrics and debugging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Incident {
    ChildRejected { round: u64, child: NodeId, error: ChannelError },
    ChildTimedOut { round: u64, child: NodeId },
    ForgeryRefused { round: u64 },
}

/// Static wiring of one node.
#[derive(Debug, Clone)]
pub struct NodeSetup {
    pub id: NodeId,
    pub parent: NodeId,
    pub children: Vec<NodeId>,
    pub keys: NodeKeys,
    pub origin: DomainValue,
    /// Key of the edge to the parent.
    pub uplink_key: Key,
    /// Keys of the edges to each child.
    pub child_keys: BTreeMap<NodeId, Key>,
    pub domain: Domain,
    pub compromise: Option<Compromise>,
}

impl NodeSetup {
    pub fn from_provisioning(
        tree: &Tree,
        prov: &Provisioning,
        domain: Domain,
        id: NodeId,
        compromise: Option<Compromise>,
    ) -> Self {
        let children = tree.children(id).to_vec();
        Self {
            id,
            parent: tree.parent(id).expect("sensor has a parent"),
            child_keys: children.iter().map(|c| (*c, prov.edge_keys[c])).collect(),
            children,
            keys: prov.node_keys[&id],
            origin: prov.origins[&id],
            uplink_key: prov.edge_keys[&id],
            domain,
            compromise,
        }
    }
}

/// Per-round working state.
#[derive(Debug, Clone)]
pub struct RoundState {
    pub round: u64,
    pub function: AggFunction,
    /// Encoded reading actually diffused this round.
    pub own_reading: DomainValue,
    pub own_pair: DiffusedPair,
    pub pending: BTreeSet<NodeId>,
    pub accumulated: DiffusedPair,
    /// XOR of the tags received from aggregated children.
    pub children_tag: MacTag,
    pub participants: BTreeSet<NodeId>,
    pub child_packets: BTreeMap<NodeId, AggPacket>,
    pub unresponsive: BTreeSet<NodeId>,
    pub last_emitted: Option<AggPacket>,
}

#[derive(Debug, Clone)]
pub struct SensorNode {
    id: NodeId,
    parent: NodeId,
    children: Vec<NodeId>,
    keys: NodeKeys,
    domain: Domain,
    chain: SeedState,
    chain_prime: SeedState,
    uplink: ChannelSender,
    downlinks: BTreeMap<NodeId, ChannelReceiver>,
    direct: ChannelSender,
    last_round: u64,
    state: Option<RoundState>,
    previous_wire: Option<WirePacket>,
    compromise: Option<Compromise>,
    incidents: Vec<Incident>,
}

impl SensorNode {
    pub fn new(setup: NodeSetup) -> Self {
        Self {
            id: setup.id,
            parent: setup.parent,
            downlinks: setup
                .child_keys
                .iter()
                .map(|(&c, &k)| (c, ChannelReceiver::new(k)))
                .collect(),
            children: setup.children,
            chain: SeedState::new(setup.origin),
            chain_prime: SeedState::new(setup.origin),
            uplink: ChannelSender::new(setup.uplink_key),
            direct: ChannelSender::new(direct_channel_key(&setup.keys)),
            keys: setup.keys,
            domain: setup.domain,
            last_round: 0,
            state: None,
            previous_wire: None,
            compromise: setup.compromise,
            incidents: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn parent(&self) -> NodeId {
        self.parent
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn round_state(&self) -> Option<&RoundState> {
        self.state.as_ref()
    }

    pub fn incidents(&self) -> &[Incident] {
        &self.incidents
    }

    pub fn is_compromised(&self) -> bool {
        self.compromise.is_some()
    }

    /// Starts a round: advances both seed chains, senses `reading` and
    /// returns the query copies to relay to each child.
    pub fn handle_query(
        &mut self,
        query: Query,
        reading: DomainValue,
    ) -> Result<Vec<(NodeId, Query)>, NodeError> {
        if query.round <= self.last_round {
            return Err(NodeError::StaleRound {
                round: query.round,
                last: self.last_round,
            });
        }
        self.last_round = query.round;
        self.chain.advance_to(&self.keys.key, query.round);
        self.chain_prime.advance_to(&self.keys.key_prime, query.round);

        let reading = match &self.compromise {
            Some(c) => c
                .sensed_reading(query.round, reading, &self.domain)
                .unwrap_or_else(|_| {
                    self.incidents.push(Incident::ForgeryRefused { round: query.round });
                    reading
                }),
            None => reading,
        };
        let mut state = RoundState {
            round: query.round,
            function: query.function,
            own_reading: reading,
            own_pair: DiffusedPair::ZERO,
            pending: self.children.iter().copied().collect(),
            accumulated: DiffusedPair::ZERO,
            children_tag: MacTag::ZERO,
            participants: BTreeSet::from([self.id]),
            child_packets: BTreeMap::new(),
            unresponsive: BTreeSet::new(),
            last_emitted: None,
        };
        self.state = None;
        let (d, d_prime, _) = self.diffuse_reading(reading);
        state.own_pair = DiffusedPair::new(d, d_prime);
        state.accumulated = state.own_pair;
        self.state = Some(state);
        Ok(self.children.iter().map(|&c| (c, query)).collect())
    }

    fn diffuse_reading(&self, reading: DomainValue) -> (DomainValue, DomainValue, MacTag) {
        let pair = DiffusedPair::new(
            diffuse(self.chain.seed(), reading),
            diffuse(self.chain_prime.seed(), reading),
        );
        (pair.first, pair.second, mac_pair(&self.keys.key, &pair))
    }

    /// The node's own reading diffused under both chains, with the MAC of
    /// that pair under K.
    pub fn sense_and_diffuse(&self, round: u64) -> Result<(DomainValue, DomainValue, MacTag), NodeError> {
        let state = self.state.as_ref().ok_or(NodeError::NoActiveRound)?;
        if state.round != round {
            return Err(NodeError::NoSuchRound(round));
        }
        Ok(self.diffuse_reading(state.own_reading))
    }

    /// Opens and folds one child packet into the running sums.
    pub fn aggregate_child(&mut self, wire: &WirePacket) -> Result<(), NodeError> {
        let state = self.state.as_mut().ok_or(NodeError::NoActiveRound)?;
        let child = wire.sender;
        let Some(rx) = self.downlinks.get_mut(&child) else {
            return Err(NodeError::UnknownChild(child));
        };
        if !state.pending.contains(&child) {
            return Err(NodeError::UnknownChild(child));
        }
        let packet = match wire.open(rx) {
            Ok(p) => p,
            Err(error) => {
                state.pending.remove(&child);
                state.unresponsive.insert(child);
                self.incidents.push(Incident::ChildRejected {
                    round: state.round,
                    child,
                    error,
                });
                return Err(NodeError::Channel { child, source: error });
            }
        };
        if let Some(c) = &self.compromise {
            if c.drops_child(state.round, child) {
                // Stays pending; it will be reported as timed out.
                return Ok(());
            }
        }
        state.pending.remove(&child);
        state.accumulated += packet.pair;
        state.children_tag ^= packet.tag;
        state.participants.extend(packet.participants.iter().copied());
        state.child_packets.insert(child, packet);
        Ok(())
    }

    /// True once every child has reported (or been given up on).
    pub fn ready(&self) -> bool {
        self.state
            .as_ref()
            .is_some_and(|s| s.pending.is_empty() && s.last_emitted.is_none())
    }

    pub fn has_emitted(&self) -> bool {
        self.state.as_ref().is_some_and(|s| s.last_emitted.is_some())
    }

    /// Gives up on children that have not reported yet.
    pub fn expire_pending(&mut self) {
        if let Some(state) = self.state.as_mut() {
            for child in std::mem::take(&mut state.pending) {
                state.unresponsive.insert(child);
                self.incidents.push(Incident::ChildTimedOut {
                    round: state.round,
                    child,
                });
            }
        }
    }

    /// Seals this round's aggregate to the parent. Children still pending are
    /// dropped from the aggregate.
    pub fn emit(&mut self) -> Result<WirePacket, NodeError> {
        self.expire_pending();
        let state = self.state.as_mut().ok_or(NodeError::NoActiveRound)?;
        if state.last_emitted.is_some() {
            return Err(NodeError::AlreadyEmitted(state.round));
        }
        let mut pair = state.accumulated;
        if let Some(c) = &self.compromise {
            pair += c.emission_offset(state.round);
        }
        let packet = AggPacket {
            sender: self.id,
            participants: state.participants.clone(),
            counter: 0,
            pair,
            tag: mac_pair(&self.keys.key, &pair) ^ state.children_tag,
        };
        let fresh = packet.seal(&mut self.uplink);
        state.last_emitted = Some(AggPacket {
            counter: fresh.counter,
            ..packet
        });
        let replay = self
            .compromise
            .as_ref()
            .is_some_and(|c| c.replays(state.round));
        let previous = self.previous_wire.replace(fresh.clone());
        match previous {
            Some(old) if replay => Ok(old),
            _ => Ok(fresh),
        }
    }

    fn emitted_state(&self, round: u64) -> Result<(&RoundState, &AggPacket), NodeError> {
        let state = self
            .state
            .as_ref()
            .filter(|s| s.round == round)
            .ok_or(NodeError::NoSuchRound(round))?;
        let emitted = state.last_emitted.as_ref().ok_or(NodeError::NoSuchRound(round))?;
        Ok((state, emitted))
    }

    /// Resends the packet emitted in `round` on the direct channel, together
    /// with the tags received from each aggregated child.
    pub fn respond_attestation(&mut self, round: u64) -> Result<AttestationReply, NodeError> {
        let (state, emitted) = self.emitted_state(round)?;
        let mut packet = emitted.clone();
        if let Some(c) = &self.compromise {
            packet.pair = c.probed_pair(round, emitted.pair);
        }
        let child_tags = state.child_packets.iter().map(|(&c, p)| (c, p.tag)).collect();
        Ok(AttestationReply {
            packet: packet.seal(&mut self.direct),
            child_tags,
        })
    }

    /// Recomputes the round's aggregate over itself and every child whose
    /// subtree contains no excluded node. An excluded direct child is dropped
    /// with its whole subtree; an excluded deeper descendant reachable only
    /// through a non-excluded child cannot be separated here.
    pub fn reaggregate_excluding(
        &mut self,
        exclusions: &BTreeSet<NodeId>,
        round: u64,
    ) -> Result<AttestationReply, NodeError> {
        let (state, _) = self.emitted_state(round)?;
        let mut pair = state.own_pair;
        let mut participants = BTreeSet::from([self.id]);
        let mut children_tag = MacTag::ZERO;
        let mut child_tags = Vec::new();
        for (&child, p) in &state.child_packets {
            if exclusions.contains(&child) {
                continue;
            }
            if let Some(&excluded) = p.participants.intersection(exclusions).next() {
                return Err(NodeError::ExclusionNotResolvable { excluded, via: child });
            }
            pair += p.pair;
            participants.extend(p.participants.iter().copied());
            children_tag ^= p.tag;
            child_tags.push((child, p.tag));
        }
        if let Some(c) = &self.compromise {
            pair += c.emission_offset(round);
        }
        let packet = AggPacket {
            sender: self.id,
            participants,
            counter: 0,
            pair,
            tag: mac_pair(&self.keys.key, &pair) ^ children_tag,
        };
        Ok(AttestationReply {
            packet: packet.seal(&mut self.direct),
            child_tags,
        })
    }
}
