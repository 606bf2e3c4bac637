use std::fmt;

use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::Sha256;

pub const KEY_LEN: usize = 16;

/// A 128-bit symmetric secret.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key([u8; KEY_LEN]);

impl Key {
    pub const fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    /// Derives an independent subkey bound to `label`.
    pub fn derive(&self, label: &[u8]) -> Key {
        let digest = self.hmac(&[label]);
        let mut bytes = [0u8; KEY_LEN];
        bytes.copy_from_slice(&digest[..KEY_LEN]);
        Key(bytes)
    }

    /// HMAC-SHA256 over the concatenation of `parts`.
    pub(crate) fn hmac(&self, parts: &[&[u8]]) -> [u8; 32] {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.0).expect("HMAC accepts any key length");
        for part in parts {
            mac.update(part);
        }
        mac.finalize().into_bytes().into()
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Only a short fingerprint, never the secret itself.
        let fp = self.hmac(&[b"fingerprint"]);
        write!(f, "Key({:02x}{:02x}{:02x}{:02x})", fp[0], fp[1], fp[2], fp[3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_keys_are_label_separated() {
        let k = Key::from_bytes([7; KEY_LEN]);
        assert_ne!(k.derive(b"a"), k.derive(b"b"));
        assert_eq!(k.derive(b"a"), k.derive(b"a"));
        assert_ne!(k.derive(b"a"), k);
    }

    #[test]
    fn debug_does_not_leak_bytes() {
        let k = Key::from_bytes([0xab; KEY_LEN]);
        assert!(!format!("{k:?}").contains("abab"));
    }
}
