use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::adversary::AttackPlan;
use crate::node::{AttestationReply, NodeSetup, SensorNode};
use crate::topology::{build_tree, provision, Graph};

/// Calls straight into node state machines; `silent` nodes never answer.
struct Direct<'a> {
    nodes: &'a mut BTreeMap<NodeId, SensorNode>,
    silent: BTreeSet<NodeId>,
    reaggregation_calls: Vec<NodeId>,
}

impl ProbeTransport for Direct<'_> {
    fn probe(&mut self, node: NodeId, round: u64) -> Result<AttestationReply, ProbeError> {
        if self.silent.contains(&node) {
            return Err(ProbeError::Timeout(node));
        }
        self.nodes
            .get_mut(&node)
            .ok_or(ProbeError::Timeout(node))?
            .respond_attestation(round)
            .map_err(|source| ProbeError::Refused { node, source })
    }

    fn reaggregate(
        &mut self,
        node: NodeId,
        round: u64,
        exclusions: &BTreeSet<NodeId>,
    ) -> Result<AttestationReply, ProbeError> {
        self.reaggregation_calls.push(node);
        self.nodes
            .get_mut(&node)
            .ok_or(ProbeError::Timeout(node))?
            .reaggregate_excluding(exclusions, round)
            .map_err(|source| ProbeError::Refused { node, source })
    }
}

struct World {
    tree: Tree,
    bs: BaseStation,
    nodes: BTreeMap<NodeId, SensorNode>,
    readings: BTreeMap<NodeId, DomainValue>,
}

fn world(graph: Graph, plan: &AttackPlan, seed: u64) -> World {
    let tree = build_tree(&graph, NodeId(0)).unwrap();
    let domain = Domain::default();
    let prov = provision(&tree, &domain, seed);
    let nodes = tree
        .sensors()
        .map(|id| {
            let setup = NodeSetup::from_provisioning(&tree, &prov, domain, id, plan.compromise_for(id));
            (id, SensorNode::new(setup))
        })
        .collect();
    let bs = BaseStation::new(&tree, &prov, domain, BaseStationConfig::default());
    World {
        tree,
        bs,
        nodes,
        readings: BTreeMap::new(),
    }
}

impl World {
    /// Runs aggregation for `round` and returns what reached the base station.
    fn aggregate(&mut self, round: u64, offline: &BTreeSet<NodeId>) -> Vec<AggPacket> {
        let mut rng = ChaCha8Rng::seed_from_u64(round);
        let queries = self.bs.disseminate(AggFunction::Sum, round).unwrap();
        let mut frontier: Vec<(NodeId, Query)> = queries;
        while let Some((id, q)) = frontier.pop() {
            if offline.contains(&id) {
                continue;
            }
            let m = DomainValue::new(rng.gen_range(0..=self.bs.domain().max_raw()));
            self.readings.insert(id, m);
            frontier.extend(self.nodes.get_mut(&id).unwrap().handle_query(q, m).unwrap());
        }
        let mut order: Vec<NodeId> = self.tree.sensors().filter(|s| !offline.contains(s)).collect();
        order.sort_by_key(|id| std::cmp::Reverse(self.tree.depth(*id).unwrap()));
        let mut at_bs = Vec::new();
        for id in order {
            let wire = self.nodes.get_mut(&id).unwrap().emit().unwrap();
            let parent = self.tree.parent(id).unwrap();
            if parent.is_base_station() {
                if let Ok(p) = self.bs.receive(&wire) {
                    at_bs.push(p);
                }
            } else {
                let _ = self.nodes.get_mut(&parent).unwrap().aggregate_child(&wire);
            }
        }
        at_bs
    }

    fn plaintext_sum(&self, ids: impl IntoIterator<Item = NodeId>) -> DomainValue {
        ids.into_iter().map(|id| self.readings[&id]).sum()
    }

    fn conclude(&mut self, packets: &[AggPacket], force: bool) -> (QueryResult, Vec<NodeId>) {
        let mut t = Direct {
            nodes: &mut self.nodes,
            silent: BTreeSet::new(),
            reaggregation_calls: Vec::new(),
        };
        let (r, _) = self.bs.conclude_round(AggFunction::Sum, packets, force, &mut t);
        (r, t.reaggregation_calls)
    }
}

/// Fig. 2 shape: W=1 with leaves X=2, Y=3, Z=4; G=5 above W; H=6 and Q=7
/// are further children of the base station.
fn fig2() -> Graph {
    let mut g = Graph::with_sensors(7);
    for (a, b) in [(0, 5), (5, 1), (1, 2), (1, 3), (1, 4), (0, 6), (0, 7)] {
        g.add_edge(NodeId(a), NodeId(b)).unwrap();
    }
    g
}

fn ids(v: &[u32]) -> BTreeSet<NodeId> {
    v.iter().copied().map(NodeId).collect()
}

#[test]
fn finalize_single_child_and_disjoint_union() {
    let mut w = world(fig2(), &AttackPlan::new(), 1);
    let packets = w.aggregate(1, &BTreeSet::new());
    assert_eq!(packets.len(), 3);
    let (pair, list) = BaseStation::finalize(&packets[..1]).unwrap();
    assert_eq!(pair, packets[0].pair);
    let (_, list_star) = BaseStation::finalize(&packets).unwrap();
    assert_eq!(list_star, ids(&[1, 2, 3, 4, 5, 6, 7]));
    assert!(list.is_subset(&list_star));

    let mut dup = packets.clone();
    dup[1].participants.insert(NodeId(2));
    assert_eq!(
        BaseStation::finalize(&dup),
        Err(BaseStationError::DuplicateParticipant(NodeId(2)))
    );
}

#[test]
fn ipet_honest_and_forged_pairs() {
    let mut w = world(fig2(), &AttackPlan::new(), 2);
    let packets = w.aggregate(1, &BTreeSet::new());
    let (pair, list) = BaseStation::finalize(&packets).unwrap();
    let honest = w.bs.ipet_check(pair, &list, 1).unwrap();
    assert!(honest.equal);
    assert_eq!(honest.sum, w.plaintext_sum(list.iter().copied()));

    let delta = DomainValue::new(12345);
    let one_sided = DiffusedPair::new(pair.first + delta, pair.second);
    assert!(!w.bs.ipet_check(one_sided, &list, 1).unwrap().equal);

    // Shifting both components by the same amount is invisible to IPET.
    let both = DiffusedPair::new(pair.first + delta, pair.second + delta);
    let v = w.bs.ipet_check(both, &list, 1).unwrap();
    assert!(v.equal);
    assert_eq!(v.sum, honest.sum + delta);

    assert_eq!(
        w.bs.ipet_check(pair, &ids(&[99]), 1),
        Err(BaseStationError::UnknownParticipant(NodeId(99)))
    );
}

#[test]
fn ipet_for_an_older_round_regenerates_seeds() {
    let mut w = world(fig2(), &AttackPlan::new(), 3);
    let packets = w.aggregate(1, &BTreeSet::new());
    let (pair, list) = BaseStation::finalize(&packets).unwrap();
    w.aggregate(2, &BTreeSet::new());
    let before = w.bs.seed_regenerations();
    assert!(w.bs.ipet_check(pair, &list, 1).unwrap().equal);
    assert!(w.bs.seed_regenerations() > before);
}

#[test]
fn verify_final_work_is_constant_with_full_participation() {
    for n in [8u32, 64, 512] {
        let mut w = world(Graph::random_recursive(n, &mut ChaCha8Rng::seed_from_u64(n as u64)), &AttackPlan::new(), 4);
        let packets = w.aggregate(1, &BTreeSet::new());
        let (pair, list) = BaseStation::finalize(&packets).unwrap();
        let (v, work) = w.bs.verify_final(pair, &list).unwrap();
        assert!(v.equal);
        assert_eq!(work, VerificationWork { ring_ops: 2, comparisons: 1 });
    }
}

#[test]
fn verify_final_subtracts_absent_nodes() {
    let mut w = world(fig2(), &AttackPlan::new(), 5);
    let packets = w.aggregate(1, &ids(&[6]));
    let (pair, list) = BaseStation::finalize(&packets).unwrap();
    assert_eq!(list, ids(&[1, 2, 3, 4, 5, 7]));
    let (v, work) = w.bs.verify_final(pair, &list).unwrap();
    assert!(v.equal);
    assert_eq!(v.sum, w.plaintext_sum(list));
    assert_eq!(work.ring_ops, 4);
}

#[test]
fn stale_dissemination_rejected() {
    let mut w = world(fig2(), &AttackPlan::new(), 6);
    assert_eq!(w.bs.disseminate(AggFunction::Sum, 1).unwrap().len(), 3);
    assert_eq!(
        w.bs.disseminate(AggFunction::Sum, 1),
        Err(BaseStationError::StaleRound { round: 1, current: 1 })
    );
}

#[test]
fn forced_attestation_on_honest_network_probes_depth_one_only() {
    let mut w = world(fig2(), &AttackPlan::new(), 7);
    let packets = w.aggregate(1, &BTreeSet::new());
    let (r, reagg) = w.conclude(&packets, true);
    assert_eq!(r.integrity, Integrity::Passed);
    let report = r.report.unwrap();
    assert!(report.outliers.is_empty());
    assert_eq!(report.probes, 3);
    assert!(reagg.is_empty());
    assert!(report.is_consistent());
}

#[test]
fn non_committed_interior_forger_is_isolated() {
    // G=5 forges the sum of its subtree and lies when probed.
    let mut plan = AttackPlan::new();
    plan.forge_children(NodeId(5), DomainValue::new(900)).noncommit(NodeId(5));
    let mut w = world(fig2(), &plan, 8);
    let packets = w.aggregate(1, &BTreeSet::new());
    let (r, reagg) = w.conclude(&packets, false);
    let report = r.report.clone().unwrap();
    assert_eq!(report.outliers, ids(&[5]));
    assert_eq!(report.non_committed, ids(&[5]));
    // Honest siblings H and Q are probed but nothing below them.
    let probed: BTreeSet<NodeId> = report.transcript.iter().map(|p| p.node).collect();
    assert_eq!(probed, ids(&[1, 5, 6, 7]));
    // Never given a re-aggregation chance.
    assert!(!reagg.contains(&NodeId(5)));
    assert_eq!(r.integrity, Integrity::Attested);
    assert_eq!(r.participants, ids(&[6, 7]));
    assert_eq!(r.sum, Some(w.plaintext_sum(ids(&[6, 7]))));
    assert_eq!(w.bs.record(NodeId(5)).unwrap().status, NodeStatus::Outlier);
}

#[test]
fn forging_leaf_clears_its_honest_ancestors() {
    let mut plan = AttackPlan::new();
    plan.forge_children(NodeId(3), DomainValue::new(77));
    let mut w = world(fig2(), &plan, 9);
    let packets = w.aggregate(1, &BTreeSet::new());
    let (r, reagg) = w.conclude(&packets, false);
    let report = r.report.clone().unwrap();
    assert_eq!(report.outliers, ids(&[3]));
    assert!(report.non_committed.is_empty());
    assert_eq!(reagg, vec![NodeId(1), NodeId(3), NodeId(5)]);
    assert_eq!(report.exonerated.keys().copied().collect::<BTreeSet<_>>(), ids(&[1, 5]));
    assert_eq!(r.integrity, Integrity::Attested);
    // G's re-aggregation dropped W's whole subtree.
    assert_eq!(r.participants, ids(&[5, 6, 7]));
    assert_eq!(r.sum, Some(w.plaintext_sum(ids(&[5, 6, 7]))));
}

#[test]
fn noncommit_alone_is_caught_only_when_probed() {
    let mut plan = AttackPlan::new();
    plan.noncommit(NodeId(6));
    let mut w = world(fig2(), &plan, 10);
    let packets = w.aggregate(1, &BTreeSet::new());
    let (r, reagg) = w.conclude(&packets, true);
    assert_eq!(r.integrity, Integrity::Passed);
    let report = r.report.unwrap();
    assert_eq!(report.outliers, ids(&[6]));
    assert_eq!(report.non_committed, ids(&[6]));
    assert!(reagg.is_empty());
}

#[test]
fn silent_probe_target_is_outlier_and_unreachable() {
    let mut w = world(fig2(), &AttackPlan::new(), 11);
    let packets = w.aggregate(1, &BTreeSet::new());
    let (pair, list) = BaseStation::finalize(&packets).unwrap();
    let _ = pair;
    let mut t = Direct {
        nodes: &mut w.nodes,
        silent: ids(&[7]),
        reaggregation_calls: Vec::new(),
    };
    let report = w.bs.com_att(1, &packets, &list, &mut t);
    assert_eq!(report.outliers, ids(&[7]));
    assert_eq!(report.non_committed, ids(&[7]));
    assert_eq!(w.bs.record(NodeId(7)).unwrap().status, NodeStatus::Unreachable);
}

#[test]
fn monitor_thresholds_and_precedence() {
    let mut w = world(fig2(), &AttackPlan::new(), 12);
    let all = ids(&[1, 2, 3, 4, 5, 6, 7]);
    assert!(w.bs.monitor(&all).is_empty());
    let without_2 = ids(&[1, 3, 4, 5, 6, 7]);
    for round in 1..=3 {
        assert_eq!(w.bs.monitor(&without_2), ids(&[2]));
        let status = w.bs.record(NodeId(2)).unwrap().status;
        if round < 3 {
            assert_eq!(status, NodeStatus::Alive);
        } else {
            assert_eq!(status, NodeStatus::Unreachable);
        }
    }
    w.bs.mark(NodeId(4), NodeStatus::Outlier);
    for _ in 0..3 {
        w.bs.monitor(&ids(&[1, 3, 5, 6, 7]));
    }
    assert_eq!(w.bs.record(NodeId(4)).unwrap().status, NodeStatus::Outlier);
    w.bs.monitor(&all);
    assert_eq!(w.bs.record(NodeId(2)).unwrap().status, NodeStatus::Alive);
}

#[test]
fn mean_examples() {
    let dom = Domain::default();
    let base = QueryResult {
        round: 1,
        function: AggFunction::Mean,
        value: None,
        sum: Some(dom.encode(42.5).unwrap()),
        participants: ids(&[3]),
        integrity: Integrity::Passed,
        report: None,
    };
    assert!((mean(&dom, &base).unwrap() - 42.5).abs() < 1e-12);
    let n = 17;
    let equal = QueryResult {
        sum: Some((0..n).map(|_| dom.encode(12.34).unwrap()).sum()),
        participants: (1..=n).map(NodeId).collect(),
        ..base.clone()
    };
    assert!((mean(&dom, &equal).unwrap() - 12.34).abs() < 1e-9);
    let empty = QueryResult { participants: BTreeSet::new(), ..base.clone() };
    assert_eq!(mean(&dom, &empty), Err(BaseStationError::EmptyParticipants));
    let rejected = QueryResult { integrity: Integrity::Rejected, ..base };
    assert_eq!(mean(&dom, &rejected), Err(BaseStationError::Rejected));
}

#[test]
fn mean_matches_plaintext_oracle() {
    let dom = Domain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let readings: Vec<f64> = (0..rng.gen_range(1..50)).map(|_| rng.gen_range(0.0..=1000.0)).collect();
        let oracle = readings.iter().sum::<f64>() / readings.len() as f64;
        let r = QueryResult {
            round: 1,
            function: AggFunction::Mean,
            value: None,
            sum: Some(readings.iter().map(|&m| dom.encode(m).unwrap()).sum()),
            participants: (1..=readings.len() as u32).map(NodeId).collect(),
            integrity: Integrity::Passed,
            report: None,
        };
        assert!((mean(&dom, &r).unwrap() - oracle).abs() <= 0.5 / dom.scale() as f64 + 1e-9);
    }
}
