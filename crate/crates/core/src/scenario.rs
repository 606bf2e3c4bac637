//! Scenario files: topology, domain, round count, attack plan and flags in
//! a line-oriented text format.
//!
//! ```text
//! # comment
//! seed 7
//! generator random-recursive 50      # or: path <n>, star <n>, geometric <n> <radius>
//! domain 0 1000 100                  # lower upper scale
//! rounds 3
//! function sum                       # or mean
//! compromise 4 forge-children 250    # deltas are raw fixed-point units
//! compromise 9 noncommit
//! force-attest
//! ```
//!
//! Instead of `generator`, a topology may be given inline with `nodes <n>`
//! and `edge <a> <b>` lines. Further keywords: `audit-prob <p>`,
//! `trigger-round <r>`, `offline <id> [from-round]`, `timeout-factor <k>`,
//! `unreachable-after <rounds>`, and the behaviors `forge-own <delta>`,
//! `forge-children-dual <delta>`, `replay`, `drop-child <id>`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::adversary::{AttackPlan, Behavior};
use crate::crypto::{Domain, DomainValue};
use crate::node::AggFunction;
use crate::topology::{build_tree, Graph, NodeId, Tree};

/// A scenario problem, with the 1-based line it was found on (0 when it
/// concerns the file as a whole).
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

impl ScenarioError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    RandomRecursive(u32),
    Geometric { sensors: u32, radius: f64 },
    Path(u32),
    Star(u32),
}

impl Generator {
    pub fn generate(&self, seed: u64) -> Graph {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x746f_706f_6c6f_6779);
        match *self {
            Generator::RandomRecursive(n) => Graph::random_recursive(n, &mut rng),
            Generator::Geometric { sensors, radius } => Graph::random_geometric(sensors, radius, &mut rng),
            Generator::Path(n) => Graph::path(n),
            Generator::Star(n) => Graph::star(n),
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::RandomRecursive(n) => write!(f, "random-recursive {n}"),
            Generator::Geometric { sensors, radius } => write!(f, "geometric {sensors} {radius}"),
            Generator::Path(n) => write!(f, "path {n}"),
            Generator::Star(n) => write!(f, "star {n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologySource {
    Inline(Graph),
    Generated(Generator),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub topology: Option<TopologySource>,
    pub domain: Domain,
    pub rounds: u64,
    pub function: AggFunction,
    pub seed: u64,
    pub force_attest: bool,
    pub audit_prob: f64,
    pub trigger_round: u64,
    /// Node id and the first round it is offline from.
    pub offline: BTreeMap<NodeId, u64>,
    /// Child timeout multiplier, in ticks per remaining tree level.
    pub timeout_factor: u64,
    pub unreachable_after: u32,
    compromises: Vec<(usize, NodeId, Behavior)>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            topology: None,
            domain: Domain::default(),
            rounds: 1,
            function: AggFunction::Sum,
            seed: 0,
            force_attest: false,
            audit_prob: 0.0,
            trigger_round: 1,
            offline: BTreeMap::new(),
            timeout_factor: 10,
            unreachable_after: 3,
            compromises: Vec::new(),
        }
    }
}

fn number<T: FromStr>(line: usize, what: &str, word: &str) -> Result<T, ScenarioError> {
    word.parse()
        .map_err(|_| ScenarioError::at(line, format!("bad {what} `{word}`")))
}

fn positive<T: FromStr + PartialOrd + Default>(line: usize, what: &str, word: &str) -> Result<T, ScenarioError> {
    let v: T = number(line, what, word)?;
    if v <= T::default() {
        return Err(ScenarioError::at(line, format!("{what} must be positive")));
    }
    Ok(v)
}

fn behavior(line: usize, words: &[&str]) -> Result<Behavior, ScenarioError> {
    let delta = |w: &str| -> Result<i64, ScenarioError> {
        let d: i64 = number(line, "delta", w)?;
        if d == 0 {
            return Err(ScenarioError::at(line, "delta must be nonzero"));
        }
        Ok(d)
    };
    Ok(match words {
        ["forge-own", d] => Behavior::ForgeOwn { delta: delta(d)? },
        ["forge-children", d] => Behavior::ForgeChildren {
            delta: DomainValue::ZERO.offset(delta(d)?),
            dual: false,
        },
        ["forge-children-dual", d] => Behavior::ForgeChildren {
            delta: DomainValue::ZERO.offset(delta(d)?),
            dual: true,
        },
        ["noncommit"] => Behavior::NonCommit,
        ["replay"] => Behavior::Replay,
        ["drop-child", c] => Behavior::DropChild(number(line, "node id", c)?),
        [] => return Err(ScenarioError::at(line, "missing behavior")),
        [b, ..] => return Err(ScenarioError::at(line, format!("unknown behavior or arguments for `{b}`"))),
    })
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut s = Scenario::default();
        let mut inline: Option<(usize, Graph)> = None;
        let mut generator_line = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            match words.as_slice() {
                ["nodes", n] => {
                    if inline.is_some() {
                        return Err(ScenarioError::at(line, "duplicate `nodes` line"));
                    }
                    inline = Some((line, Graph::with_sensors(positive(line, "node count", n)?)));
                }
                ["edge", a, b] => {
                    let (_, g) = inline
                        .as_mut()
                        .ok_or_else(|| ScenarioError::at(line, "`edge` before `nodes`"))?;
                    let a: NodeId = number(line, "node id", a)?;
                    let b: NodeId = number(line, "node id", b)?;
                    g.add_edge(a, b).map_err(|e| ScenarioError::at(line, e.to_string()))?;
                }
                ["generator", family, rest @ ..] => {
                    if generator_line.is_some() {
                        return Err(ScenarioError::at(line, "duplicate `generator` line"));
                    }
                    generator_line = Some(line);
                    let g = match (*family, rest) {
                        ("random-recursive", [n]) => Generator::RandomRecursive(positive(line, "node count", n)?),
                        ("path", [n]) => Generator::Path(positive(line, "node count", n)?),
                        ("star", [n]) => Generator::Star(positive(line, "node count", n)?),
                        ("geometric", [n, r]) => Generator::Geometric {
                            sensors: positive(line, "node count", n)?,
                            radius: positive(line, "radius", r)?,
                        },
                        _ => {
                            return Err(ScenarioError::at(
                                line,
                                format!("unknown generator `{}`", words[1..].join(" ")),
                            ))
                        }
                    };
                    s.topology = Some(TopologySource::Generated(g));
                }
                ["domain", u, v, scale] => {
                    let u: f64 = number(line, "lower bound", u)?;
                    let v: f64 = number(line, "upper bound", v)?;
                    let scale: u64 = positive(line, "scale", scale)?;
                    s.domain = Domain::new(u, v, scale).map_err(|e| ScenarioError::at(line, e.to_string()))?;
                }
                ["rounds", r] => s.rounds = positive(line, "round count", r)?,
                ["function", f] => {
                    s.function = f
                        .parse()
                        .map_err(|_| ScenarioError::at(line, format!("unknown function `{f}`")))?
                }
                ["seed", v] => s.seed = number(line, "seed", v)?,
                ["force-attest"] => s.force_attest = true,
                ["audit-prob", p] => {
                    let p: f64 = number(line, "probability", p)?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(ScenarioError::at(line, "probability must be within [0, 1]"));
                    }
                    s.audit_prob = p;
                }
                ["trigger-round", r] => s.trigger_round = positive(line, "round", r)?,
                ["offline", id] => {
                    s.offline.insert(number(line, "node id", id)?, 1);
                }
                ["offline", id, from] => {
                    s.offline.insert(number(line, "node id", id)?, positive(line, "round", from)?);
                }
                ["timeout-factor", k] => {
                    let k: u64 = positive(line, "timeout factor", k)?;
                    if k < 2 {
                        return Err(ScenarioError::at(line, "timeout factor must be at least 2"));
                    }
                    s.timeout_factor = k;
                }
                ["unreachable-after", k] => s.unreachable_after = positive(line, "round count", k)?,
                ["compromise", id, rest @ ..] => {
                    let id: NodeId = number(line, "node id", id)?;
                    s.compromises.push((line, id, behavior(line, rest)?));
                }
                _ => return Err(ScenarioError::at(line, format!("unrecognized line `{content}`"))),
            }
        }
        if let Some((line, g)) = inline {
            if let Some(gl) = generator_line {
                return Err(ScenarioError::at(
                    gl.max(line),
                    "both an inline topology and a generator are given",
                ));
            }
            s.topology = Some(TopologySource::Inline(g));
        }
        Ok(s)
    }

    pub fn add_compromise(&mut self, node: NodeId, behavior: Behavior) {
        self.compromises.push((0, node, behavior));
    }

    pub fn compromises(&self) -> impl Iterator<Item = (NodeId, &Behavior)> {
        self.compromises.iter().map(|(_, id, b)| (*id, b))
    }

    pub fn graph(&self) -> Result<Graph, ScenarioError> {
        match &self.topology {
            Some(TopologySource::Inline(g)) => Ok(g.clone()),
            Some(TopologySource::Generated(g)) => Ok(g.generate(self.seed)),
            None => Err(ScenarioError::at(0, "no topology: give `nodes`/`edge` lines, a `generator`, or a topology file")),
        }
    }

    /// Builds the routing tree and checks the attack plan and offline list
    /// against it.
    pub fn tree(&self) -> Result<Tree, ScenarioError> {
        let tree = build_tree(&self.graph()?, NodeId::BASE_STATION)
            .map_err(|e| ScenarioError::at(0, format!("topology: {e}")))?;
        for (line, id, b) in &self.compromises {
            let mut one = AttackPlan::new();
            one.add(*id, *b);
            one.validate(&tree).map_err(|e| ScenarioError::at(*line, e.to_string()))?;
        }
        for id in self.offline.keys() {
            if id.is_base_station() || !tree.contains(*id) {
                return Err(ScenarioError::at(0, format!("offline node {id} is not a sensor")));
            }
        }
        Ok(tree)
    }

    pub fn plan(&self) -> AttackPlan {
        let mut plan = AttackPlan::new().with_trigger_round(self.trigger_round);
        for (_, id, b) in &self.compromises {
            plan.add(*id, *b);
        }
        plan
    }
}
