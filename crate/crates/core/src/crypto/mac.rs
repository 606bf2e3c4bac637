use std::fmt;
use std::ops::{BitXor, BitXorAssign};

use super::diffusion::DiffusedPair;
use super::key::Key;

pub const MAC_LEN: usize = 8;

/// A truncated authentication tag. Tags compose by XOR.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacTag([u8; MAC_LEN]);

impl MacTag {
    pub const ZERO: MacTag = MacTag([0; MAC_LEN]);

    pub const fn from_bytes(bytes: [u8; MAC_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; MAC_LEN] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; MAC_LEN]
    }
}

impl fmt::Debug for MacTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacTag(")?;
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

impl BitXor for MacTag {
    type Output = MacTag;
    fn bitxor(self, rhs: Self) -> Self {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o ^= r;
        }
        MacTag(out)
    }
}

impl BitXorAssign for MacTag {
    fn bitxor_assign(&mut self, rhs: Self) {
        *self = *self ^ rhs;
    }
}

/// Serializes a diffused pair as two big-endian 64-bit words, K-chain first.
pub fn pair_payload(pair: &DiffusedPair) -> [u8; 16] {
    let mut out = [0u8; 16];
    out[..8].copy_from_slice(&pair.first.to_be_bytes());
    out[8..].copy_from_slice(&pair.second.to_be_bytes());
    out
}

/// HMAC-SHA256 of `payload` under `key`, truncated to 8 bytes.
pub fn mac(key: &Key, payload: &[u8]) -> MacTag {
    let digest = key.hmac(&[payload]);
    let mut tag = [0u8; MAC_LEN];
    tag.copy_from_slice(&digest[..MAC_LEN]);
    MacTag(tag)
}

pub fn mac_pair(key: &Key, pair: &DiffusedPair) -> MacTag {
    mac(key, &pair_payload(pair))
}

/// XOR-folds child tags into `own`.
pub fn combine_macs(own: MacTag, children: &[MacTag]) -> MacTag {
    children.iter().fold(own, |acc, &t| acc ^ t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::DomainValue;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tag(r: &mut impl Rng) -> MacTag {
        MacTag::from_bytes(r.gen())
    }

    #[test]
    fn payload_layout_is_big_endian_first_chain_first() {
        let pair = DiffusedPair::new(DomainValue::new(0x0102030405060708), DomainValue::new(0xff));
        assert_eq!(
            pair_payload(&pair),
            [1, 2, 3, 4, 5, 6, 7, 8, 0, 0, 0, 0, 0, 0, 0, 0xff]
        );
    }

    #[test]
    fn mac_is_deterministic() {
        let k = Key::from_bytes([1; 16]);
        assert_eq!(mac(&k, b"payload"), mac(&k, b"payload"));
    }

    #[test]
    fn mac_separates_payloads_and_keys() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let mut payload_collisions = 0;
        let mut key_collisions = 0;
        for _ in 0..10_000 {
            let k1 = Key::random(&mut r);
            let k2 = Key::random(&mut r);
            let p: [u8; 16] = r.gen();
            let mut q = p;
            let i = r.gen_range(0..16);
            q[i] ^= r.gen_range(1..=255u8);
            if mac(&k1, &p) == mac(&k1, &q) {
                payload_collisions += 1;
            }
            if mac(&k1, &p) == mac(&k2, &p) {
                key_collisions += 1;
            }
        }
        assert_eq!(payload_collisions, 0);
        assert_eq!(key_collisions, 0);
    }

    #[test]
    fn combine_examples() {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let t = random_tag(&mut r);
        let a = random_tag(&mut r);
        let b = random_tag(&mut r);
        assert_eq!(combine_macs(t, &[]), t);
        assert_eq!(combine_macs(t, &[t]), MacTag::ZERO);
        assert_eq!(combine_macs(t, &[a, b]), combine_macs(t, &[b, a]));
    }

    #[test]
    fn xor_is_an_abelian_group_of_exponent_two() {
        let mut r = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let (a, b, c) = (random_tag(&mut r), random_tag(&mut r), random_tag(&mut r));
            assert_eq!((a ^ b) ^ c, a ^ (b ^ c));
            assert_eq!(a ^ b, b ^ a);
            assert_eq!(a ^ MacTag::ZERO, a);
            assert!((a ^ a).is_zero());
        }
    }
}
