use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use thiserror::Error;

use super::key::Key;

const SEED_LABEL: &[u8] = b"concealed-agg/seed-chain/v1";

/// Largest raw encoding a domain may produce. Keeping readings below 2^32
/// keeps sums over fewer than 2^32 nodes free of wraparound.
const MAX_RAW_SPAN: u64 = u32::MAX as u64;

/// A residue in the ring of integers modulo 2^64.
///
/// Used both for fixed-point encoded readings and for diffused values; all
/// arithmetic wraps.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainValue(u64);

impl DomainValue {
    pub const ZERO: DomainValue = DomainValue(0);

    pub const fn new(raw: u64) -> Self {
        Self(raw)
    }

    pub const fn raw(self) -> u64 {
        self.0
    }

    pub const fn to_be_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }

    pub const fn from_be_bytes(bytes: [u8; 8]) -> Self {
        Self(u64::from_be_bytes(bytes))
    }

    /// Adds a signed offset, wrapping.
    pub const fn offset(self, delta: i64) -> Self {
        Self(self.0.wrapping_add(delta as u64))
    }
}

impl fmt::Debug for DomainValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DomainValue({})", self.0)
    }
}

impl fmt::Display for DomainValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Add for DomainValue {
    type Output = DomainValue;
    fn add(self, rhs: Self) -> Self {
        Self(self.0.wrapping_add(rhs.0))
    }
}

impl Sub for DomainValue {
    type Output = DomainValue;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0.wrapping_sub(rhs.0))
    }
}

impl Neg for DomainValue {
    type Output = DomainValue;
    fn neg(self) -> Self {
        Self(self.0.wrapping_neg())
    }
}

impl AddAssign for DomainValue {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for DomainValue {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl Sum for DomainValue {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(DomainValue::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a DomainValue> for DomainValue {
    fn sum<I: Iterator<Item = &'a DomainValue>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("reading {reading} outside the sensible range [{lower}, {upper}]")]
    OutOfRange { reading: f64, lower: f64, upper: f64 },
    #[error("invalid domain: {0}")]
    Invalid(String),
}

/// The bounded reading range `[lower, upper]` and its fixed-point scale.
///
/// A reading `m` encodes to `round((m - lower) * scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    lower: f64,
    upper: f64,
    scale: u64,
}

impl Default for Domain {
    fn default() -> Self {
        Self {
            lower: 0.0,
            upper: 1000.0,
            scale: 100,
        }
    }
}

impl Domain {
    pub fn new(lower: f64, upper: f64, scale: u64) -> Result<Self, DomainError> {
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(DomainError::Invalid(format!(
                "need finite lower < upper, got [{lower}, {upper}]"
            )));
        }
        if scale == 0 {
            return Err(DomainError::Invalid("scale must be positive".into()));
        }
        let span = ((upper - lower) * scale as f64).round();
        if span > MAX_RAW_SPAN as f64 {
            return Err(DomainError::Invalid(format!(
                "encoded span {span} exceeds 2^32 - 1"
            )));
        }
        Ok(Self {
            lower,
            upper,
            scale,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    /// Raw encoding of `upper`.
    pub fn max_raw(&self) -> u64 {
        ((self.upper - self.lower) * self.scale as f64).round() as u64
    }

    pub fn encode(&self, reading: f64) -> Result<DomainValue, DomainError> {
        if !(self.lower..=self.upper).contains(&reading) {
            return Err(DomainError::OutOfRange {
                reading,
                lower: self.lower,
                upper: self.upper,
            });
        }
        let raw = ((reading - self.lower) * self.scale as f64).round() as u64;
        Ok(DomainValue(raw.min(self.max_raw())))
    }

    /// Accepts a raw encoding only if it lies in `[0, max_raw]`.
    pub fn check_raw(&self, raw: DomainValue) -> Result<DomainValue, DomainError> {
        if raw.0 <= self.max_raw() {
            Ok(raw)
        } else {
            Err(DomainError::OutOfRange {
                reading: self.decode(raw),
                lower: self.lower,
                upper: self.upper,
            })
        }
    }

    pub fn decode(&self, value: DomainValue) -> f64 {
        self.lower + value.0 as f64 / self.scale as f64
    }

    /// Decodes the sum of `count` encoded readings back to real units.
    pub fn decode_sum(&self, sum: DomainValue, count: usize) -> f64 {
        sum.0 as f64 / self.scale as f64 + count as f64 * self.lower
    }

    /// Number of decimal places needed to print values at this scale.
    pub fn decimals(&self) -> usize {
        let mut digits = 0;
        let mut s = self.scale;
        while s > 1 {
            s = s.div_ceil(10);
            digits += 1;
        }
        digits
    }
}

/// The keyed generator map: derives the next seed of a chain.
///
/// HMAC-SHA256 over `prev || round || label`, truncated to 64 bits.
pub fn next_seed(key: &Key, prev: DomainValue, round: u64) -> DomainValue {
    let digest = key.hmac(&[&prev.to_be_bytes(), &round.to_be_bytes(), SEED_LABEL]);
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    DomainValue::from_be_bytes(word)
}

/// Conceals `reading` under `seed`.
pub fn diffuse(seed: DomainValue, reading: DomainValue) -> DomainValue {
    seed + reading
}

/// Reverts a (sum of) diffused value(s) given the matching (sum of) seed(s).
pub fn undiffuse(diffused_sum: DomainValue, seed_sum: DomainValue) -> DomainValue {
    diffused_sum - seed_sum
}

/// Position in a node's seed chain. `seed` is the value used to diffuse the
/// reading of round `round`; round 0 is the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedState {
    seed: DomainValue,
    round: u64,
    origin: DomainValue,
}

impl SeedState {
    pub fn new(origin: DomainValue) -> Self {
        Self {
            seed: origin,
            round: 0,
            origin,
        }
    }

    pub fn seed(&self) -> DomainValue {
        self.seed
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn origin(&self) -> DomainValue {
        self.origin
    }

    /// Steps the chain forward by one round.
    pub fn advance(&mut self, key: &Key) -> DomainValue {
        self.round += 1;
        self.seed = next_seed(key, self.seed, self.round);
        self.seed
    }

    /// Steps forward until `round`, returning the number of generator
    /// evaluations spent. The chain never moves backwards; asking for an
    /// earlier round returns `None`.
    pub fn advance_to(&mut self, key: &Key, round: u64) -> Option<u64> {
        if round < self.round {
            return None;
        }
        let steps = round - self.round;
        for _ in 0..steps {
            self.advance(key);
        }
        Some(steps)
    }

    /// Recomputes the seed of `round` from scratch.
    pub fn regenerate(key: &Key, origin: DomainValue, round: u64) -> DomainValue {
        let mut state = SeedState::new(origin);
        state.advance_to(key, round);
        state.seed
    }
}

/// The (K-chain, K'-chain) pair of diffused values that travels through the
/// aggregation tree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct DiffusedPair {
    pub first: DomainValue,
    pub second: DomainValue,
}

impl DiffusedPair {
    pub const ZERO: DiffusedPair = DiffusedPair {
        first: DomainValue::ZERO,
        second: DomainValue::ZERO,
    };

    pub const fn new(first: DomainValue, second: DomainValue) -> Self {
        Self { first, second }
    }
}

impl Add for DiffusedPair {
    type Output = DiffusedPair;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.first + rhs.first, self.second + rhs.second)
    }
}

impl Sub for DiffusedPair {
    type Output = DiffusedPair;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.first - rhs.first, self.second - rhs.second)
    }
}

impl AddAssign for DiffusedPair {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for DiffusedPair {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl Sum for DiffusedPair {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(DiffusedPair::ZERO, Add::add)
    }
}
