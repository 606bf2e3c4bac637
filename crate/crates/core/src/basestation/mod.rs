//! The base station: query dissemination, final aggregation, the identical
//! pair equality test (IPET), commitment/attestation and liveness tracking.
//!
//! The base station keeps every node's two seed chains in step with the
//! current round together with their running totals, so the verdict on a
//! full-participation round costs two subtractions and one comparison.

mod attest;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::crypto::{
    undiffuse, ChannelError, ChannelReceiver, DiffusedPair, Domain, DomainValue, Key, SeedState,
};
use crate::node::{direct_channel_key, AggFunction, AggPacket, Query, WirePacket};
use crate::topology::{NodeId, Provisioning, Tree};

pub use attest::{AttestationReport, ProbeError, ProbeRecord, ProbeTransport};
pub use report::{format_report_line, parse_report_line, ReportLineError, REPORT_FIELDS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BaseStationError {
    #[error("round {round} is not newer than current round {current}")]
    StaleRound { round: u64, current: u64 },
    #[error("node {0} appears in more than one sibling participant list")]
    DuplicateParticipant(NodeId),
    #[error("participant {0} has no registry record")]
    UnknownParticipant(NodeId),
    #[error("no participants")]
    EmptyParticipants,
    #[error("result was rejected; no value to derive")]
    Rejected,
    #[error("packet from {0}, which is not an immediate child")]
    UnknownSender(NodeId),
    #[error("channel from {node}: {source}")]
    Channel {
        node: NodeId,
        #[source]
        source: ChannelError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeStatus {
    Alive,
    Unreachable,
    Outlier,
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeStatus::Alive => "alive",
            NodeStatus::Unreachable => "unreachable",
            NodeStatus::Outlier => "outlier",
        })
    }
}

/// Registry entry for one provisioned node.
#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub id: NodeId,
    pub key: Key,
    pub key_prime: Key,
    pub origin: DomainValue,
    pub status: NodeStatus,
    chain: SeedState,
    chain_prime: SeedState,
    absent_rounds: u32,
}

impl NodeRecord {
    pub fn seeds(&self) -> DiffusedPair {
        DiffusedPair::new(self.chain.seed(), self.chain_prime.seed())
    }

    pub fn absent_rounds(&self) -> u32 {
        self.absent_rounds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Integrity {
    /// IPET held on the first check.
    Passed,
    /// IPET failed; attestation isolated the outliers and the remaining
    /// aggregate verified.
    Attested,
    Rejected,
}

impl fmt::Display for Integrity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Integrity::Passed => "passed",
            Integrity::Attested => "attested",
            Integrity::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IpetVerdict {
    pub equal: bool,
    /// The reverted K-chain sum.
    pub sum: DomainValue,
}

/// Ring operations and comparisons spent on one verdict, excluding seed
/// chain maintenance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerificationWork {
    pub ring_ops: u64,
    pub comparisons: u64,
}

impl VerificationWork {
    pub fn total(&self) -> u64 {
        self.ring_ops + self.comparisons
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub round: u64,
    pub function: AggFunction,
    /// Decoded value in real units (sum or mean); absent when rejected.
    pub value: Option<f64>,
    /// Reverted fixed-point sum; absent when rejected.
    pub sum: Option<DomainValue>,
    pub participants: BTreeSet<NodeId>,
    pub integrity: Integrity,
    pub report: Option<AttestationReport>,
}

impl QueryResult {
    pub fn probes(&self) -> usize {
        self.report.as_ref().map_or(0, |r| r.probes)
    }

    pub fn outliers(&self) -> BTreeSet<NodeId> {
        self.report.as_ref().map(|r| r.outliers.clone()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaseStationConfig {
    /// Consecutive absent rounds before a node is marked unreachable.
    pub unreachable_after: u32,
}

impl Default for BaseStationConfig {
    fn default() -> Self {
        Self {
            unreachable_after: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaseStation {
    domain: Domain,
    tree: Tree,
    config: BaseStationConfig,
    registry: BTreeMap<NodeId, NodeRecord>,
    round: u64,
    /// Sum of every registered node's current seeds.
    seed_total: DiffusedPair,
    downlinks: BTreeMap<NodeId, ChannelReceiver>,
    direct: BTreeMap<NodeId, ChannelReceiver>,
    seed_regenerations: u64,
    attestation_ring_ops: u64,
    last_final: Option<(DiffusedPair, BTreeSet<NodeId>)>,
}

impl BaseStation {
    pub fn new(tree: &Tree, prov: &Provisioning, domain: Domain, config: BaseStationConfig) -> Self {
        let registry: BTreeMap<NodeId, NodeRecord> = prov
            .node_keys
            .iter()
            .map(|(&id, keys)| {
                let origin = prov.origins[&id];
                let record = NodeRecord {
                    id,
                    key: keys.key,
                    key_prime: keys.key_prime,
                    origin,
                    status: NodeStatus::Alive,
                    chain: SeedState::new(origin),
                    chain_prime: SeedState::new(origin),
                    absent_rounds: 0,
                };
                (id, record)
            })
            .collect();
        let seed_total = registry.values().map(NodeRecord::seeds).sum();
        let downlinks = tree
            .children(tree.root())
            .iter()
            .map(|c| (*c, ChannelReceiver::new(prov.edge_keys[c])))
            .collect();
        let direct = prov
            .node_keys
            .iter()
            .map(|(&id, keys)| (id, ChannelReceiver::new(direct_channel_key(keys))))
            .collect();
        Self {
            domain,
            tree: tree.clone(),
            config,
            registry,
            round: 0,
            seed_total,
            downlinks,
            direct,
            seed_regenerations: 0,
            attestation_ring_ops: 0,
            last_final: None,
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn registry(&self) -> &BTreeMap<NodeId, NodeRecord> {
        &self.registry
    }

    pub fn record(&self, id: NodeId) -> Option<&NodeRecord> {
        self.registry.get(&id)
    }

    /// Total seed generator evaluations spent so far.
    pub fn seed_regenerations(&self) -> u64 {
        self.seed_regenerations
    }

    /// Final pair and participant list of the last concluded round, as
    /// received before any attestation.
    pub fn last_final(&self) -> Option<&(DiffusedPair, BTreeSet<NodeId>)> {
        self.last_final.as_ref()
    }

    /// Ring operations spent on per-node IPETs during attestation.
    pub fn attestation_ring_ops(&self) -> u64 {
        self.attestation_ring_ops
    }

    /// Starts `round`: steps every registered seed chain and returns the
    /// query for each immediate child.
    pub fn disseminate(
        &mut self,
        function: AggFunction,
        round: u64,
    ) -> Result<Vec<(NodeId, Query)>, BaseStationError> {
        if round <= self.round {
            return Err(BaseStationError::StaleRound {
                round,
                current: self.round,
            });
        }
        let mut total = DiffusedPair::ZERO;
        for rec in self.registry.values_mut() {
            self.seed_regenerations += rec.chain.advance_to(&rec.key, round).unwrap_or(0);
            self.seed_regenerations += rec.chain_prime.advance_to(&rec.key_prime, round).unwrap_or(0);
            total += rec.seeds();
        }
        self.seed_total = total;
        self.round = round;
        let query = Query { round, function };
        Ok(self
            .tree
            .children(self.tree.root())
            .iter()
            .map(|&c| (c, query))
            .collect())
    }

    /// Opens a packet from an immediate child.
    pub fn receive(&mut self, wire: &WirePacket) -> Result<AggPacket, BaseStationError> {
        let rx = self
            .downlinks
            .get_mut(&wire.sender)
            .ok_or(BaseStationError::UnknownSender(wire.sender))?;
        wire.open(rx).map_err(|source| BaseStationError::Channel {
            node: wire.sender,
            source,
        })
    }

    /// Opens a reply on a node's direct channel.
    pub(crate) fn open_direct(&mut self, wire: &WirePacket) -> Result<AggPacket, BaseStationError> {
        let rx = self
            .direct
            .get_mut(&wire.sender)
            .ok_or(BaseStationError::UnknownParticipant(wire.sender))?;
        wire.open(rx).map_err(|source| BaseStationError::Channel {
            node: wire.sender,
            source,
        })
    }

    /// Sums the children's pairs component-wise and unions their participant
    /// lists, which must be disjoint.
    pub fn finalize(
        packets: &[AggPacket],
    ) -> Result<(DiffusedPair, BTreeSet<NodeId>), BaseStationError> {
        let mut pair = DiffusedPair::ZERO;
        let mut all = BTreeSet::new();
        for p in packets {
            pair += p.pair;
            for &id in &p.participants {
                if !all.insert(id) {
                    return Err(BaseStationError::DuplicateParticipant(id));
                }
            }
        }
        Ok((pair, all))
    }

    /// Seeds of `id` for `round`, from the maintained chain when possible.
    fn seeds_at(&mut self, id: NodeId, round: u64) -> Result<DiffusedPair, BaseStationError> {
        let rec = self
            .registry
            .get(&id)
            .ok_or(BaseStationError::UnknownParticipant(id))?;
        if round == self.round {
            return Ok(rec.seeds());
        }
        self.seed_regenerations += 2 * round;
        Ok(DiffusedPair::new(
            SeedState::regenerate(&rec.key, rec.origin, round),
            SeedState::regenerate(&rec.key_prime, rec.origin, round),
        ))
    }

    /// Reverts both components of `pair` with the seed sums of
    /// `participants` and compares them.
    pub fn ipet_check(
        &mut self,
        pair: DiffusedPair,
        participants: &BTreeSet<NodeId>,
        round: u64,
    ) -> Result<IpetVerdict, BaseStationError> {
        let mut seeds = DiffusedPair::ZERO;
        for &id in participants {
            seeds += self.seeds_at(id, round)?;
        }
        self.attestation_ring_ops += 2 * participants.len() as u64 + 2;
        Ok(verdict(pair, seeds))
    }

    /// IPET on the final pair of the current round using the maintained seed
    /// totals: only absent nodes cost ring operations.
    pub fn verify_final(
        &mut self,
        pair: DiffusedPair,
        participants: &BTreeSet<NodeId>,
    ) -> Result<(IpetVerdict, VerificationWork), BaseStationError> {
        if let Some(&unknown) = participants.iter().find(|id| !self.registry.contains_key(id)) {
            return Err(BaseStationError::UnknownParticipant(unknown));
        }
        let mut seeds = self.seed_total;
        let mut work = VerificationWork::default();
        if participants.len() != self.registry.len() {
            for rec in self.registry.values().filter(|r| !participants.contains(&r.id)) {
                seeds -= rec.seeds();
                work.ring_ops += 2;
            }
        }
        work.ring_ops += 2;
        work.comparisons += 1;
        Ok((verdict(pair, seeds), work))
    }

    /// Registry nodes missing from `list_star`. Nodes missing for
    /// `unreachable_after` consecutive rounds are marked unreachable;
    /// outliers keep their status.
    pub fn monitor(&mut self, list_star: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
        let threshold = self.config.unreachable_after;
        let mut absent = BTreeSet::new();
        for rec in self.registry.values_mut() {
            if list_star.contains(&rec.id) {
                rec.absent_rounds = 0;
                if rec.status == NodeStatus::Unreachable {
                    rec.status = NodeStatus::Alive;
                }
                continue;
            }
            absent.insert(rec.id);
            rec.absent_rounds += 1;
            if rec.absent_rounds >= threshold && rec.status == NodeStatus::Alive {
                rec.status = NodeStatus::Unreachable;
            }
        }
        absent
    }

    pub(crate) fn mark(&mut self, id: NodeId, status: NodeStatus) {
        if let Some(rec) = self.registry.get_mut(&id) {
            if rec.status != NodeStatus::Outlier {
                rec.status = status;
            }
        }
    }

    /// Everything after the children's packets are in: final pair, IPET,
    /// attestation when the test fails (or when `force_attest` is set) and
    /// liveness bookkeeping.
    pub fn conclude_round(
        &mut self,
        function: AggFunction,
        packets: &[AggPacket],
        force_attest: bool,
        transport: &mut dyn ProbeTransport,
    ) -> (QueryResult, VerificationWork) {
        let round = self.round;
        let finalized = Self::finalize(packets);
        self.last_final = finalized.clone().ok();
        let first_check = match &finalized {
            Ok((pair, participants)) => self.verify_final(*pair, participants).ok(),
            Err(_) => None,
        };
        let list_star: BTreeSet<NodeId> = match &finalized {
            Ok((_, p)) => p.clone(),
            Err(_) => packets.iter().flat_map(|p| p.participants.iter().copied()).collect(),
        };
        let work = first_check.map(|(_, w)| w).unwrap_or_default();
        let passed = first_check.is_some_and(|(v, _)| v.equal);

        let result = if passed && !force_attest {
            let (verdict, _) = first_check.unwrap();
            self.result(round, function, Integrity::Passed, verdict.sum, list_star.clone(), None)
        } else {
            let report = self.com_att(round, packets, &list_star, transport);
            if passed {
                let (verdict, _) = first_check.unwrap();
                self.result(round, function, Integrity::Passed, verdict.sum, list_star.clone(), Some(report))
            } else {
                self.recover(round, function, packets, report)
            }
        };
        self.monitor(&list_star);
        (result, work)
    }

    /// Rebuilds the final aggregate from the attestation outcome: children
    /// that passed keep their packet, exonerated children contribute their
    /// re-aggregation and outlier children are dropped.
    fn recover(
        &mut self,
        round: u64,
        function: AggFunction,
        packets: &[AggPacket],
        report: AttestationReport,
    ) -> QueryResult {
        let mut kept = Vec::new();
        for p in packets {
            if report.outliers.contains(&p.sender) {
                continue;
            }
            kept.push(report.exonerated.get(&p.sender).cloned().unwrap_or_else(|| p.clone()));
        }
        let checked = Self::finalize(&kept).ok().and_then(|(pair, participants)| {
            self.ipet_check(pair, &participants, round)
                .ok()
                .filter(|v| v.equal)
                .map(|v| (v.sum, participants))
        });
        match checked {
            Some((sum, participants)) if !participants.is_empty() => {
                self.result(round, function, Integrity::Attested, sum, participants, Some(report))
            }
            _ => QueryResult {
                round,
                function,
                value: None,
                sum: None,
                participants: BTreeSet::new(),
                integrity: Integrity::Rejected,
                report: Some(report),
            },
        }
    }

    fn result(
        &self,
        round: u64,
        function: AggFunction,
        integrity: Integrity,
        sum: DomainValue,
        participants: BTreeSet<NodeId>,
        report: Option<AttestationReport>,
    ) -> QueryResult {
        let mut result = QueryResult {
            round,
            function,
            value: None,
            sum: Some(sum),
            participants,
            integrity,
            report,
        };
        result.value = match function {
            AggFunction::Sum => Some(self.domain.decode_sum(sum, result.participants.len())),
            AggFunction::Mean => mean(&self.domain, &result).ok(),
        };
        result
    }
}

fn verdict(pair: DiffusedPair, seeds: DiffusedPair) -> IpetVerdict {
    let sum = undiffuse(pair.first, seeds.first);
    let sum_prime = undiffuse(pair.second, seeds.second);
    IpetVerdict {
        equal: sum == sum_prime,
        sum,
    }
}

/// Mean reading of a verified result, in real units.
pub fn mean(domain: &Domain, result: &QueryResult) -> Result<f64, BaseStationError> {
    if result.integrity == Integrity::Rejected {
        return Err(BaseStationError::Rejected);
    }
    let sum = result.sum.ok_or(BaseStationError::Rejected)?;
    let n = result.participants.len();
    if n == 0 {
        return Err(BaseStationError::EmptyParticipants);
    }
    Ok(domain.decode_sum(sum, n) / n as f64)
}

#[cfg(test)]
mod tests;
