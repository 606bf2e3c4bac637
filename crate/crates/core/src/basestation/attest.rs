//! Commitment and attestation (ComAtt).
//!
//! Probing starts at the base station's contributing children and only
//! descends below nodes whose resent packet fails the commitment check or
//! its own IPET. Committed nodes that failed IPET then get one chance to
//! re-aggregate without the suspects and clear themselves.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use super::{BaseStation, NodeStatus};
use crate::crypto::{mac_pair, MacTag};
use crate::node::{AggPacket, AttestationReply, NodeError};
use crate::topology::NodeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProbeError {
    #[error("node {0} did not answer")]
    Timeout(NodeId),
    #[error("node {node} refused: {source}")]
    Refused {
        node: NodeId,
        #[source]
        source: NodeError,
    },
}

/// How the base station reaches a node during attestation.
pub trait ProbeTransport {
    /// Ask `node` to resend the packet it emitted in `round`.
    fn probe(&mut self, node: NodeId, round: u64) -> Result<AttestationReply, ProbeError>;

    /// Ask `node` to re-aggregate `round` without `exclusions`.
    fn reaggregate(
        &mut self,
        node: NodeId,
        round: u64,
        exclusions: &BTreeSet<NodeId>,
    ) -> Result<AttestationReply, ProbeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeRecord {
    pub node: NodeId,
    pub committed: bool,
    pub ipet_ok: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttestationReport {
    /// Final outlier list.
    pub outliers: BTreeSet<NodeId>,
    /// Nodes that failed the commitment check (always also outliers).
    pub non_committed: BTreeSet<NodeId>,
    pub probes: usize,
    pub transcript: Vec<ProbeRecord>,
    /// Nodes cleared by re-aggregation, with the packet that cleared them.
    pub exonerated: BTreeMap<NodeId, AggPacket>,
    pub reaggregations: usize,
}

impl AttestationReport {
    pub fn is_consistent(&self) -> bool {
        self.non_committed.is_subset(&self.outliers) && self.probes == self.transcript.len()
    }
}

impl BaseStation {
    /// Runs ComAtt for `round`. `packets` are the packets received from the
    /// immediate children; `list_star` is the union of their participants.
    pub fn com_att(
        &mut self,
        round: u64,
        packets: &[AggPacket],
        list_star: &BTreeSet<NodeId>,
        transport: &mut dyn ProbeTransport,
    ) -> AttestationReport {
        let mut report = AttestationReport::default();
        let mut suspects = BTreeSet::new();
        let mut timed_out = BTreeSet::new();
        // Tags each node originally contributed, as far as they are known
        // from a committed parent (or received directly at depth one).
        let mut known_tags: BTreeMap<NodeId, MacTag> =
            packets.iter().map(|p| (p.sender, p.tag)).collect();

        let mut queue: VecDeque<NodeId> = packets
            .iter()
            .map(|p| p.sender)
            .filter(|id| list_star.contains(id))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut seen: BTreeSet<NodeId> = queue.iter().copied().collect();

        while let Some(node) = queue.pop_front() {
            let (committed, ipet_ok) = match transport.probe(node, round) {
                Ok(reply) => self.check_probe(node, round, &reply, &mut known_tags),
                Err(ProbeError::Timeout(_)) => {
                    self.mark(node, NodeStatus::Unreachable);
                    timed_out.insert(node);
                    (false, false)
                }
                Err(ProbeError::Refused { .. }) => (false, false),
            };
            report.transcript.push(ProbeRecord {
                node,
                committed,
                ipet_ok,
            });
            if committed && ipet_ok {
                continue;
            }
            if !committed {
                report.non_committed.insert(node);
            }
            suspects.insert(node);
            for &child in self.tree.children(node) {
                if list_star.contains(&child) && seen.insert(child) {
                    queue.push_back(child);
                }
            }
        }
        report.probes = report.transcript.len();

        let mut outliers = suspects.clone();
        for &node in suspects.difference(&report.non_committed) {
            report.reaggregations += 1;
            if let Some(packet) = self.reaggregate(node, round, &suspects, transport) {
                outliers.remove(&node);
                report.exonerated.insert(node, packet);
            }
        }
        // Silence alone is reported but not treated as proof of compromise.
        for &node in outliers.difference(&timed_out) {
            self.mark(node, NodeStatus::Outlier);
        }
        report.outliers = outliers;
        report
    }

    /// Commitment check and per-node IPET on one probe reply.
    fn check_probe(
        &mut self,
        node: NodeId,
        round: u64,
        reply: &AttestationReply,
        known_tags: &mut BTreeMap<NodeId, MacTag>,
    ) -> (bool, bool) {
        if reply.packet.sender != node {
            return (false, false);
        }
        let Ok(packet) = self.open_direct(&reply.packet) else {
            return (false, false);
        };
        let key = self.registry[&node].key;
        let children = self.tree.children(node);
        let children_ok = reply.child_tags.iter().all(|(c, _)| children.contains(c));
        let recomputed = reply
            .child_tags
            .iter()
            .fold(mac_pair(&key, &packet.pair), |acc, (_, t)| acc ^ *t);
        let expected_ok = known_tags.get(&node).map_or(true, |t| *t == packet.tag);
        let committed = children_ok && expected_ok && recomputed == packet.tag;
        if committed {
            known_tags.extend(reply.child_tags.iter().copied());
        }
        let ipet_ok = self
            .ipet_check(packet.pair, &packet.participants, round)
            .is_ok_and(|v| v.equal);
        (committed, ipet_ok)
    }

    /// Gives a committed suspect its chance to re-aggregate without the
    /// other suspects. A descendant suspect hidden behind a non-suspect child
    /// widens the exclusion to that child instead of condemning `node`.
    fn reaggregate(
        &mut self,
        node: NodeId,
        round: u64,
        suspects: &BTreeSet<NodeId>,
        transport: &mut dyn ProbeTransport,
    ) -> Option<AggPacket> {
        let mut exclusions = suspects.clone();
        // Each retry adds one of node's children, so this terminates.
        for _ in 0..=self.tree.children(node).len() {
            match transport.reaggregate(node, round, &exclusions) {
                Ok(reply) => {
                    if reply.packet.sender != node {
                        return None;
                    }
                    let packet = self.open_direct(&reply.packet).ok()?;
                    if packet.participants.iter().any(|p| exclusions.contains(p) && *p != node) {
                        return None;
                    }
                    let verdict = self.ipet_check(packet.pair, &packet.participants, round).ok()?;
                    return verdict.equal.then_some(packet);
                }
                Err(ProbeError::Refused {
                    source: NodeError::ExclusionNotResolvable { via, .. },
                    ..
                }) => {
                    if !exclusions.insert(via) {
                        return None;
                    }
                }
                Err(_) => return None,
            }
        }
        None
    }
}
