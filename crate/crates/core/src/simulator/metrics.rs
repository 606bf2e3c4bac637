use std::fmt::Write as _;
use std::time::Duration;

use crate::basestation::VerificationWork;

pub const METRICS_HEADER: &str = "round,messages,bytes,seed_regens,probes";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundMetrics {
    pub round: u64,
    /// Link-level transmissions, one per hop.
    pub messages: u64,
    pub bytes: u64,
    /// Seed generator evaluations at the base station.
    pub seed_regens: u64,
    pub probes: u64,
    pub reaggregations: u64,
    /// Base station work on the first verdict of the round.
    pub verification: VerificationWork,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    pub rounds: Vec<RoundMetrics>,
}

impl Metrics {
    pub fn total(&self) -> RoundMetrics {
        let mut t = RoundMetrics::default();
        for r in &self.rounds {
            t.round = t.round.max(r.round);
            t.messages += r.messages;
            t.bytes += r.bytes;
            t.seed_regens += r.seed_regens;
            t.probes += r.probes;
            t.reaggregations += r.reaggregations;
            t.verification.ring_ops += r.verification.ring_ops;
            t.verification.comparisons += r.verification.comparisons;
            t.wall_time += r.wall_time;
        }
        t
    }

    /// CSV with one row per round and a `total` footer row. Wall time is
    /// left out so the file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        let mut row = |label: &str, r: &RoundMetrics| {
            let _ = writeln!(out, "{label},{},{},{},{}", r.messages, r.bytes, r.seed_regens, r.probes);
        };
        for r in &self.rounds {
            row(&r.round.to_string(), r);
        }
        row("total", &self.total());
        out
    }
}
