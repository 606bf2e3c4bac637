//! Quick property checks run by the `selftest` command: additive
//! homomorphism of diffusion, the pair equality test, and the XOR group
//! structure of combined MACs.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::crypto::{combine_macs, diffuse, mac_pair, next_seed, undiffuse, DiffusedPair, DomainValue, Key, MacTag};

/// A deliberate bug to check that the self-test notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Recovery subtracts a seed that is off by one.
    SeedArithmetic,
    /// Combining tags drops the last one.
    MacCombine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyFailure {
    pub property: &'static str,
    pub trial: u32,
}

impl fmt::Display for PropertyFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "property `{}` failed on trial {}", self.property, self.trial)
    }
}

pub const PROPERTIES: [&str; 4] = [
    "diffusion-homomorphism",
    "ipet-honest-equal",
    "ipet-detects-forgery",
    "mac-xor-group",
];

struct Arith {
    fault: Option<Fault>,
}

impl Arith {
    fn undiffuse(&self, d: DomainValue, seed: DomainValue) -> DomainValue {
        match self.fault {
            Some(Fault::SeedArithmetic) => undiffuse(d, seed.offset(1)),
            _ => undiffuse(d, seed),
        }
    }

    fn combine(&self, tags: &[MacTag]) -> MacTag {
        match self.fault {
            Some(Fault::MacCombine) if tags.len() > 1 => combine_macs(tags[0], &tags[1..tags.len() - 1]),
            _ => combine_macs(MacTag::ZERO, tags),
        }
    }
}

struct Sample {
    readings: Vec<DomainValue>,
    seeds: Vec<DiffusedPair>,
}

fn sample(rng: &mut ChaCha20Rng) -> Sample {
    let n = rng.gen_range(1..64);
    let round = rng.gen_range(1..1000);
    let readings = (0..n).map(|_| DomainValue::new(rng.gen_range(0..100_000))).collect();
    let seeds = (0..n)
        .map(|_| {
            let (k, kp) = (Key::random(rng), Key::random(rng));
            let origin = DomainValue::new(rng.gen());
            DiffusedPair::new(next_seed(&k, origin, round), next_seed(&kp, origin, round))
        })
        .collect();
    Sample { readings, seeds }
}

fn aggregate(s: &Sample) -> (DiffusedPair, DiffusedPair) {
    let pair = s
        .readings
        .iter()
        .zip(&s.seeds)
        .map(|(&m, sd)| DiffusedPair::new(diffuse(sd.first, m), diffuse(sd.second, m)))
        .sum();
    (pair, s.seeds.iter().copied().sum())
}

/// Runs every property for `trials` random instances; stops at the first
/// failing one.
pub fn run(trials: u32, seed: u64, fault: Option<Fault>) -> Result<(), PropertyFailure> {
    let arith = Arith { fault };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let fail = |property, trial| Err(PropertyFailure { property, trial });

    for t in 0..trials {
        let s = sample(&mut rng);
        let (pair, seeds) = aggregate(&s);
        let plain: DomainValue = s.readings.iter().sum();
        if arith.undiffuse(pair.first, seeds.first) != plain {
            return fail(PROPERTIES[0], t);
        }
    }
    for t in 0..trials {
        let s = sample(&mut rng);
        let (pair, seeds) = aggregate(&s);
        if arith.undiffuse(pair.first, seeds.first) != arith.undiffuse(pair.second, seeds.second) {
            return fail(PROPERTIES[1], t);
        }
    }
    for t in 0..trials {
        let s = sample(&mut rng);
        let (mut pair, seeds) = aggregate(&s);
        pair.first += DomainValue::new(rng.gen_range(1..=u64::MAX));
        if arith.undiffuse(pair.first, seeds.first) == arith.undiffuse(pair.second, seeds.second) {
            return fail(PROPERTIES[2], t);
        }
    }
    for t in 0..trials {
        let key = Key::random(&mut rng);
        let tags: Vec<MacTag> = (0..rng.gen_range(2..16))
            .map(|_| {
                let p = DiffusedPair::new(DomainValue::new(rng.gen()), DomainValue::new(rng.gen()));
                mac_pair(&key, &p)
            })
            .collect();
        let all = arith.combine(&tags);
        let mut shuffled = tags.clone();
        shuffled.reverse();
        let folded = tags.iter().fold(MacTag::ZERO, |a, &b| a ^ b);
        let ok = all == arith.combine(&shuffled)
            && all == folded
            && (all ^ arith.combine(&tags)).is_zero()
            && (all ^ MacTag::ZERO) == all;
        if !ok {
            return fail(PROPERTIES[3], t);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        assert_eq!(run(200, 1, None), Ok(()));
    }

    #[test]
    fn injected_faults_are_named() {
        assert_eq!(run(50, 1, Some(Fault::SeedArithmetic)).unwrap_err().property, PROPERTIES[0]);
        assert_eq!(run(50, 1, Some(Fault::MacCombine)).unwrap_err().property, PROPERTIES[3]);
    }
}
