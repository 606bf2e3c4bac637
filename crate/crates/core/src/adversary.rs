//! Attack plans: which nodes are compromised and how they misbehave.
//!
//! A compromised node runs the honest state machine with hooks from
//! [`Compromise`] applied at sensing, emission, child aggregation and probe
//! time. All behaviors are deterministic functions of the plan.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::crypto::{DiffusedPair, Domain, DomainError, DomainValue};
use crate::topology::{NodeId, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    /// Replace the sensed reading by `reading + delta` (raw fixed-point
    /// units), diffused consistently under both chains.
    ForgeOwn { delta: i64 },
    /// Add `delta` to the emitted K-chain sum. With `dual` set the same
    /// offset is also added to the K'-chain sum.
    ForgeChildren { delta: DomainValue, dual: bool },
    /// Answer attestation probes with a pair other than the one emitted.
    NonCommit,
    /// Resend the previous round's sealed packet instead of a fresh one.
    Replay,
    /// Silently discard the packet of one child.
    DropChild(NodeId),
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Behavior::ForgeOwn { delta } => write!(f, "forge-own {delta}"),
            Behavior::ForgeChildren { delta, dual: false } => write!(f, "forge-children {delta}"),
            Behavior::ForgeChildren { delta, dual: true } => write!(f, "forge-children-dual {delta}"),
            Behavior::NonCommit => write!(f, "noncommit"),
            Behavior::Replay => write!(f, "replay"),
            Behavior::DropChild(c) => write!(f, "drop-child {c}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdversaryError {
    #[error("cannot compromise node {0}: not a provisioned sensor")]
    UnknownNode(NodeId),
    #[error("node {node} cannot drop {child}: not its child")]
    NotAChild { node: NodeId, child: NodeId },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttackPlan {
    trigger_round: u64,
    nodes: BTreeMap<NodeId, Vec<Behavior>>,
}

impl AttackPlan {
    pub fn new() -> Self {
        Self::default()
    }

    /// Behaviors stay dormant before `round`.
    pub fn with_trigger_round(mut self, round: u64) -> Self {
        self.trigger_round = round;
        self
    }

    pub fn trigger_round(&self) -> u64 {
        self.trigger_round
    }

    pub fn add(&mut self, node: NodeId, behavior: Behavior) -> &mut Self {
        self.nodes.entry(node).or_default().push(behavior);
        self
    }

    pub fn forge_children(&mut self, node: NodeId, delta: DomainValue) -> &mut Self {
        self.add(node, Behavior::ForgeChildren { delta, dual: false })
    }

    pub fn forge_children_dual(&mut self, node: NodeId, delta: DomainValue) -> &mut Self {
        self.add(node, Behavior::ForgeChildren { delta, dual: true })
    }

    pub fn forge_own(&mut self, node: NodeId, delta: i64) -> &mut Self {
        self.add(node, Behavior::ForgeOwn { delta })
    }

    pub fn noncommit(&mut self, node: NodeId) -> &mut Self {
        self.add(node, Behavior::NonCommit)
    }

    pub fn replay(&mut self, node: NodeId) -> &mut Self {
        self.add(node, Behavior::Replay)
    }

    pub fn drop_child(&mut self, node: NodeId, child: NodeId) -> &mut Self {
        self.add(node, Behavior::DropChild(child))
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn compromised(&self) -> BTreeSet<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn behaviors(&self, node: NodeId) -> &[Behavior] {
        self.nodes.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Behavior)> {
        self.nodes.iter().flat_map(|(&n, bs)| bs.iter().map(move |b| (n, b)))
    }

    pub fn compromise_for(&self, node: NodeId) -> Option<Compromise> {
        self.nodes.get(&node).map(|behaviors| Compromise {
            trigger_round: self.trigger_round,
            behaviors: behaviors.clone(),
        })
    }

    pub fn validate(&self, tree: &Tree) -> Result<(), AdversaryError> {
        for (&node, behaviors) in &self.nodes {
            if node.is_base_station() || !tree.contains(node) {
                return Err(AdversaryError::UnknownNode(node));
            }
            for b in behaviors {
                if let Behavior::DropChild(child) = *b {
                    if tree.parent(child) != Some(node) {
                        return Err(AdversaryError::NotAChild { node, child });
                    }
                }
            }
        }
        Ok(())
    }
}

/// The behavior overrides installed on one compromised node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Compromise {
    trigger_round: u64,
    behaviors: Vec<Behavior>,
}

impl Compromise {
    pub fn behaviors(&self) -> &[Behavior] {
        &self.behaviors
    }

    fn active(&self, round: u64) -> impl Iterator<Item = &Behavior> {
        let on = round >= self.trigger_round;
        self.behaviors.iter().filter(move |_| on)
    }

    /// Reading the node actually diffuses. A forged reading outside the
    /// domain is refused.
    pub fn sensed_reading(
        &self,
        round: u64,
        honest: DomainValue,
        domain: &Domain,
    ) -> Result<DomainValue, DomainError> {
        let delta: i64 = self
            .active(round)
            .filter_map(|b| match b {
                Behavior::ForgeOwn { delta } => Some(*delta),
                _ => None,
            })
            .sum();
        if delta == 0 {
            return Ok(honest);
        }
        let forged = honest.raw() as i128 + delta as i128;
        if forged < 0 || forged > domain.max_raw() as i128 {
            return Err(DomainError::OutOfRange {
                reading: domain.lower() + forged as f64 / domain.scale() as f64,
                lower: domain.lower(),
                upper: domain.upper(),
            });
        }
        Ok(DomainValue::new(forged as u64))
    }

    /// Offset added to every aggregate pair the node reports upward.
    pub fn emission_offset(&self, round: u64) -> DiffusedPair {
        self.active(round)
            .filter_map(|b| match *b {
                Behavior::ForgeChildren { delta, dual } => Some(DiffusedPair::new(
                    delta,
                    if dual { delta } else { DomainValue::ZERO },
                )),
                _ => None,
            })
            .sum()
    }

    pub fn drops_child(&self, round: u64, child: NodeId) -> bool {
        self.active(round).any(|b| *b == Behavior::DropChild(child))
    }

    pub fn replays(&self, round: u64) -> bool {
        self.active(round).any(|b| *b == Behavior::Replay)
    }

    pub fn noncommitting(&self, round: u64) -> bool {
        self.active(round).any(|b| *b == Behavior::NonCommit)
    }

    /// The pair reported when probed about an emitted pair. A non-committing
    /// forger retracts its forgery; a non-committing node with nothing to
    /// hide shifts both sums by one.
    pub fn probed_pair(&self, round: u64, emitted: DiffusedPair) -> DiffusedPair {
        if !self.noncommitting(round) {
            return emitted;
        }
        let offset = self.emission_offset(round);
        if offset != DiffusedPair::ZERO {
            emitted - offset
        } else {
            emitted + DiffusedPair::new(DomainValue::new(1), DomainValue::new(1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_tree, Graph};

    #[test]
    fn dormant_before_trigger() {
        let mut plan = AttackPlan::new().with_trigger_round(3);
        plan.forge_children(NodeId(1), DomainValue::new(5)).noncommit(NodeId(1));
        let c = plan.compromise_for(NodeId(1)).unwrap();
        assert_eq!(c.emission_offset(2), DiffusedPair::ZERO);
        assert!(!c.noncommitting(2));
        assert_eq!(c.emission_offset(3).first, DomainValue::new(5));
        assert_eq!(c.emission_offset(3).second, DomainValue::ZERO);
    }

    #[test]
    fn zero_delta_is_honest() {
        let mut plan = AttackPlan::new();
        plan.forge_children(NodeId(1), DomainValue::ZERO).forge_own(NodeId(1), 0);
        let c = plan.compromise_for(NodeId(1)).unwrap();
        assert_eq!(c.emission_offset(1), DiffusedPair::ZERO);
        let dom = Domain::default();
        assert_eq!(c.sensed_reading(1, DomainValue::new(42), &dom), Ok(DomainValue::new(42)));
    }

    #[test]
    fn forge_own_guard() {
        let mut plan = AttackPlan::new();
        plan.forge_own(NodeId(1), 500);
        let c = plan.compromise_for(NodeId(1)).unwrap();
        let dom = Domain::default();
        assert_eq!(c.sensed_reading(1, DomainValue::new(10), &dom), Ok(DomainValue::new(510)));
        assert!(c.sensed_reading(1, DomainValue::new(99_600), &dom).is_err());
        let mut neg = AttackPlan::new();
        neg.forge_own(NodeId(1), -11);
        let c = neg.compromise_for(NodeId(1)).unwrap();
        assert!(c.sensed_reading(1, DomainValue::new(10), &dom).is_err());
    }

    #[test]
    fn noncommit_pairs_differ_from_emitted() {
        let emitted = DiffusedPair::new(DomainValue::new(100), DomainValue::new(200));
        let mut plan = AttackPlan::new();
        plan.noncommit(NodeId(1));
        let c = plan.compromise_for(NodeId(1)).unwrap();
        assert_ne!(c.probed_pair(1, emitted), emitted);

        let mut plan = AttackPlan::new();
        plan.forge_children(NodeId(2), DomainValue::new(7)).noncommit(NodeId(2));
        let c = plan.compromise_for(NodeId(2)).unwrap();
        assert_eq!(c.probed_pair(1, emitted).first, DomainValue::new(93));
    }

    #[test]
    fn validation() {
        let tree = build_tree(&Graph::path(3), NodeId(0)).unwrap();
        let mut plan = AttackPlan::new();
        plan.drop_child(NodeId(1), NodeId(2));
        assert!(plan.validate(&tree).is_ok());
        plan.drop_child(NodeId(1), NodeId(3));
        assert_eq!(
            plan.validate(&tree),
            Err(AdversaryError::NotAChild { node: NodeId(1), child: NodeId(3) })
        );
        let mut plan = AttackPlan::new();
        plan.noncommit(NodeId(0));
        assert!(plan.validate(&tree).is_err());
        let mut plan = AttackPlan::new();
        plan.noncommit(NodeId(9));
        assert_eq!(plan.validate(&tree), Err(AdversaryError::UnknownNode(NodeId(9))));
    }
}
