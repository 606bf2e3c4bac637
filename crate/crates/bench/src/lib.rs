//! Fixtures shared by the benchmarks.

use concealed_agg::scenario::Scenario;
use concealed_agg::Simulation;

/// A random recursive tree of `n` sensors, optionally with one node
/// forging the sum it forwards.
pub fn simulation(n: u32, forger: Option<u32>) -> Simulation {
    let mut text = format!("seed 1\ngenerator random-recursive {n}\n");
    if let Some(id) = forger {
        text.push_str(&format!("compromise {id} forge-children 1000\n"));
    }
    let scenario = Scenario::parse(&text).expect("fixture scenario is valid");
    Simulation::from_scenario(&scenario).expect("fixture scenario builds")
}
