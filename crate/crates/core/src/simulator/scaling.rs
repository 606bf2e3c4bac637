//! Attestation cost versus network size: one forging node per trial,
//! counting how many nodes the base station has to probe to isolate it.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::{SimOptions, Simulation};
use crate::adversary::AttackPlan;
use crate::crypto::{Domain, DomainValue};
use crate::topology::{build_tree, Graph, NodeId};

pub const SCALING_HEADER: &str = "n,trials,mean_probes,max_probes,mean_depth,mean_messages";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingFamily {
    RandomRecursive,
    Path,
    Star,
}

impl fmt::Display for ScalingFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalingFamily::RandomRecursive => "random-recursive",
            ScalingFamily::Path => "path",
            ScalingFamily::Star => "star",
        })
    }
}

impl FromStr for ScalingFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random-recursive" => Ok(ScalingFamily::RandomRecursive),
            "path" => Ok(ScalingFamily::Path),
            "star" => Ok(ScalingFamily::Star),
            _ => Err(format!("unknown topology family `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalingTrial {
    pub n: u32,
    pub compromised: NodeId,
    pub depth: u32,
    pub probes: u64,
    pub messages: u64,
    /// Whether attestation isolated exactly the forging node.
    pub isolated: bool,
}

/// One trial: build a `family` network of `n` sensors, let one uniformly
/// chosen node forge its children's sum, and run a round.
pub fn scaling_trial(family: ScalingFamily, n: u32, seed: u64, trial: u32) -> ScalingTrial {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(n) << 32) | u64::from(trial));
    let graph = match family {
        ScalingFamily::RandomRecursive => Graph::random_recursive(n, &mut rng),
        ScalingFamily::Path => Graph::path(n),
        ScalingFamily::Star => Graph::star(n),
    };
    let tree = build_tree(&graph, NodeId::BASE_STATION).expect("generated graphs are connected");
    let compromised = NodeId(rng.gen_range(1..=n));
    let delta = DomainValue::new(rng.gen_range(1..=u64::MAX));
    let mut plan = AttackPlan::new();
    plan.forge_children(compromised, delta);
    let depth = tree.depth(compromised).unwrap();
    let mut sim = Simulation::new(tree, Domain::default(), plan, rng.gen(), SimOptions::default());
    let (result, metrics) = sim.step();
    ScalingTrial {
        n,
        compromised,
        depth,
        probes: metrics.probes,
        messages: metrics.messages,
        isolated: result.outliers().into_iter().eq([compromised]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub n: u32,
    pub trials: u32,
    pub mean_probes: f64,
    pub max_probes: u64,
    /// Mean depth of the forging node.
    pub mean_depth: f64,
    pub mean_messages: f64,
    /// Trials where attestation isolated exactly the forging node.
    pub isolated: u32,
}

impl ScalingRow {
    pub fn from_trials(n: u32, trials: &[ScalingTrial]) -> Self {
        let k = trials.len().max(1) as f64;
        Self {
            n,
            trials: trials.len() as u32,
            mean_probes: trials.iter().map(|t| t.probes as f64).sum::<f64>() / k,
            max_probes: trials.iter().map(|t| t.probes).max().unwrap_or(0),
            mean_depth: trials.iter().map(|t| t.depth as f64).sum::<f64>() / k,
            mean_messages: trials.iter().map(|t| t.messages as f64).sum::<f64>() / k,
            isolated: trials.iter().filter(|t| t.isolated).count() as u32,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.3},{},{:.3},{:.1}",
            self.n, self.trials, self.mean_probes, self.max_probes, self.mean_depth, self.mean_messages
        )
    }
}

/// Runs `trials` independent trials per size, in parallel. Results depend
/// only on the arguments.
pub fn measure_scaling(family: ScalingFamily, sizes: &[u32], trials: u32, seed: u64) -> Vec<ScalingRow> {
    sizes
        .iter()
        .map(|&n| {
            let results: Vec<ScalingTrial> = (0..trials)
                .into_par_iter()
                .map(|t| scaling_trial(family, n, seed, t))
                .collect();
            ScalingRow::from_trials(n, &results)
        })
        .collect()
}
