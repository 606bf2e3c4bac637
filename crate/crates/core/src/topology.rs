//! Connectivity graphs, the aggregation tree and key provisioning.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::{Domain, DomainValue, Key};

/// Identifier of a sensor node. Id 0 is the base station.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const BASE_STATION: NodeId = NodeId(0);

    pub fn is_base_station(self) -> bool {
        self == Self::BASE_STATION
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for NodeId {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(NodeId)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("node {0} is unreachable from the root")]
    DisconnectedGraph(NodeId),
    #[error("node {0} is not part of the graph")]
    UnknownNode(NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Undirected graph over the base station (id 0) and sensors `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Graph {
    /// A graph with `sensors` isolated sensors plus the base station.
    pub fn with_sensors(sensors: u32) -> Self {
        let adjacency = (0..=sensors).map(|i| (NodeId(i), BTreeSet::new())).collect();
        Self { adjacency }
    }

    pub fn sensor_count(&self) -> usize {
        self.adjacency.len() - 1
    }

    pub fn add_edge(&mut self, a: NodeId, b: NodeId) -> Result<(), TopologyError> {
        if a == b {
            return Err(TopologyError::SelfLoop(a));
        }
        for id in [a, b] {
            if !self.adjacency.contains_key(&id) {
                return Err(TopologyError::UnknownNode(id));
            }
        }
        self.adjacency.get_mut(&a).unwrap().insert(b);
        self.adjacency.get_mut(&b).unwrap().insert(a);
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.adjacency.contains_key(&id)
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency
            .iter()
            .flat_map(|(&a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Line-oriented text form: `nodes <n>` followed by `edge <a> <b>` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("nodes {}\n", self.sensor_count());
        for (a, b) in self.edges() {
            out.push_str(&format!("edge {a} {b}\n"));
        }
        out
    }

    /// Parses the text form. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut graph: Option<Graph> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            let err = |message: String| TopologyError::Parse { line, message };
            match words.as_slice() {
                ["nodes", n] => {
                    if graph.is_some() {
                        return Err(err("duplicate `nodes` header".into()));
                    }
                    let n: u32 = n.parse().map_err(|_| err(format!("bad node count `{n}`")))?;
                    if n == 0 {
                        return Err(err("node count must be positive".into()));
                    }
                    graph = Some(Graph::with_sensors(n));
                }
                ["edge", a, b] => {
                    let g = graph
                        .as_mut()
                        .ok_or_else(|| err("`edge` before `nodes` header".into()))?;
                    let a: NodeId = a.parse().map_err(|_| err(format!("bad node id `{a}`")))?;
                    let b: NodeId = b.parse().map_err(|_| err(format!("bad node id `{b}`")))?;
                    g.add_edge(a, b).map_err(|e| err(e.to_string()))?;
                }
                _ => return Err(err(format!("unrecognized line `{content}`"))),
            }
        }
        graph.ok_or(TopologyError::Parse {
            line: 0,
            message: "missing `nodes` header".into(),
        })
    }

    /// Base station followed by a chain `0 - 1 - 2 - ... - n`.
    pub fn path(sensors: u32) -> Self {
        let mut g = Self::with_sensors(sensors);
        for i in 1..=sensors {
            g.add_edge(NodeId(i - 1), NodeId(i)).unwrap();
        }
        g
    }

    /// Every sensor adjacent to the base station only.
    pub fn star(sensors: u32) -> Self {
        let mut g = Self::with_sensors(sensors);
        for i in 1..=sensors {
            g.add_edge(NodeId::BASE_STATION, NodeId(i)).unwrap();
        }
        g
    }

    /// Random recursive tree: sensor `i` attaches to a uniformly chosen node
    /// among `0..i`.
    pub fn random_recursive<R: Rng + ?Sized>(sensors: u32, rng: &mut R) -> Self {
        let mut g = Self::with_sensors(sensors);
        for i in 1..=sensors {
            let parent = rng.gen_range(0..i);
            g.add_edge(NodeId(parent), NodeId(i)).unwrap();
        }
        g
    }

    /// Random geometric graph on the unit square with the base station at the
    /// centre. Positions are redrawn until the graph is connected; after 32
    /// failed draws the radius grows by 10%.
    pub fn random_geometric<R: Rng + ?Sized>(sensors: u32, radius: f64, rng: &mut R) -> Self {
        let mut radius = radius.max(1e-3);
        loop {
            for _ in 0..32 {
                let mut pos = vec![(0.5, 0.5)];
                pos.extend((0..sensors).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())));
                let mut g = Self::with_sensors(sensors);
                for a in 0..pos.len() {
                    for b in a + 1..pos.len() {
                        let (dx, dy) = (pos[a].0 - pos[b].0, pos[a].1 - pos[b].1);
                        if dx * dx + dy * dy <= radius * radius {
                            g.add_edge(NodeId(a as u32), NodeId(b as u32)).unwrap();
                        }
                    }
                }
                if build_tree(&g, NodeId::BASE_STATION).is_ok() {
                    return g;
                }
            }
            radius *= 1.1;
        }
    }
}

/// Spanning tree rooted at the base station. Children lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    root: NodeId,
    parent: BTreeMap<NodeId, NodeId>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
    depth: BTreeMap<NodeId, u32>,
}

impl Tree {
    pub fn root(&self) -> NodeId {
        self.root
    }

    /// All nodes including the root, ascending.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.depth.keys().copied()
    }

    /// All nodes except the root, ascending.
    pub fn sensors(&self) -> impl Iterator<Item = NodeId> + '_ {
        let root = self.root;
        self.nodes().filter(move |&id| id != root)
    }

    pub fn sensor_count(&self) -> usize {
        self.depth.len() - 1
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.depth.contains_key(&id)
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent.get(&id).copied()
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn depth(&self, id: NodeId) -> Option<u32> {
        self.depth.get(&id).copied()
    }

    pub fn height(&self) -> u32 {
        self.depth.values().copied().max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.parent.len()
    }

    /// `id` and all its descendants, in breadth-first order.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(self.children(out[i]));
            i += 1;
        }
        out
    }

    /// Nodes from `id` (inclusive) up to the root (inclusive).
    pub fn path_to_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn mean_sensor_depth(&self) -> f64 {
        let n = self.sensor_count();
        if n == 0 {
            return 0.0;
        }
        self.sensors().map(|s| self.depth[&s] as f64).sum::<f64>() / n as f64
    }
}

/// Breadth-first spanning tree from `root`. Each node's parent is its
/// smallest-id neighbour on the previous BFS level.
pub fn build_tree(graph: &Graph, root: NodeId) -> Result<Tree, TopologyError> {
    if !graph.contains(root) {
        return Err(TopologyError::UnknownNode(root));
    }
    let mut parent = BTreeMap::new();
    let mut depth = BTreeMap::from([(root, 0u32)]);
    let mut level = vec![root];
    let mut d = 0;
    while !level.is_empty() {
        d += 1;
        let mut next = BTreeSet::new();
        // `level` is ascending, so the first claim on a node is by its
        // smallest-id candidate parent.
        for &p in &level {
            for n in graph.neighbors(p) {
                if !depth.contains_key(&n) && !parent.contains_key(&n) {
                    parent.insert(n, p);
                    next.insert(n);
                }
            }
        }
        for &n in &next {
            depth.insert(n, d);
        }
        level = next.into_iter().collect();
    }
    if let Some(missing) = graph.nodes().find(|id| !depth.contains_key(id)) {
        return Err(TopologyError::DisconnectedGraph(missing));
    }
    let mut children: BTreeMap<NodeId, Vec<NodeId>> =
        depth.keys().map(|&id| (id, Vec::new())).collect();
    for (&c, &p) in &parent {
        children.get_mut(&p).unwrap().push(c);
    }
    for list in children.values_mut() {
        list.sort_unstable();
    }
    Ok(Tree {
        root,
        parent,
        children,
        depth,
    })
}

/// The two long-term keys a sensor shares with the base station.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeKeys {
    pub key: Key,
    pub key_prime: Key,
}

/// Pre-deployed secrets for one network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provisioning {
    pub node_keys: BTreeMap<NodeId, NodeKeys>,
    /// Channel key of the edge between a sensor and its parent, keyed by the
    /// sensor.
    pub edge_keys: BTreeMap<NodeId, Key>,
    /// Initial random reading m⁰ of each sensor (seed chain origin).
    pub origins: BTreeMap<NodeId, DomainValue>,
}

/// Deterministically draws node keys, edge keys and initial readings.
pub fn provision(tree: &Tree, domain: &Domain, seed: u64) -> Provisioning {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut fresh_key = |rng: &mut ChaCha20Rng| loop {
        let k = Key::random(rng);
        if seen.insert(k) {
            return k;
        }
    };
    let mut prov = Provisioning {
        node_keys: BTreeMap::new(),
        edge_keys: BTreeMap::new(),
        origins: BTreeMap::new(),
    };
    for id in tree.sensors() {
        let key = fresh_key(&mut rng);
        let key_prime = fresh_key(&mut rng);
        let edge = fresh_key(&mut rng);
        let origin = DomainValue::new(rng.gen_range(0..=domain.max_raw()));
        prov.node_keys.insert(id, NodeKeys { key, key_prime });
        prov.edge_keys.insert(id, edge);
        prov.origins.insert(id, origin);
    }
    prov
}
