//! Authenticated pairwise channels with a strictly increasing counter.
//!
//! The counter doubles as the AEAD nonce and is bound as associated data, so
//! a ciphertext only opens under the counter it was sealed with.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use thiserror::Error;

use super::key::Key;

const CHANNEL_LABEL: &[u8] = b"concealed-agg/channel/v1";

/// Bytes a sealed message adds on top of its plaintext.
pub const SEAL_OVERHEAD: usize = 16;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ChannelError {
    #[error("replayed counter {counter} (last accepted {last})")]
    ReplayDetected { counter: u64, last: u64 },
    #[error("sealed payload failed authentication")]
    AuthFailure,
}

fn cipher(channel_key: &Key) -> ChaCha20Poly1305 {
    let wide = channel_key.hmac(&[CHANNEL_LABEL]);
    ChaCha20Poly1305::new(&wide.into())
}

fn nonce(counter: u64) -> Nonce {
    let mut n = [0u8; 12];
    n[4..].copy_from_slice(&counter.to_be_bytes());
    n.into()
}

pub fn seal(channel_key: &Key, counter: u64, plaintext: &[u8]) -> Vec<u8> {
    let aad = counter.to_be_bytes();
    cipher(channel_key)
        .encrypt(&nonce(counter), Payload { msg: plaintext, aad: &aad })
        .expect("in-memory encryption cannot fail")
}

/// Stateless open; replay protection lives in [`ChannelReceiver`].
pub fn open(channel_key: &Key, counter: u64, ciphertext: &[u8]) -> Result<Vec<u8>, ChannelError> {
    let aad = counter.to_be_bytes();
    cipher(channel_key)
        .decrypt(&nonce(counter), Payload { msg: ciphertext, aad: &aad })
        .map_err(|_| ChannelError::AuthFailure)
}

/// Sending half: hands out counters 1, 2, 3, ...
#[derive(Debug, Clone)]
pub struct ChannelSender {
    key: Key,
    last_sent: u64,
}

impl ChannelSender {
    pub fn new(key: Key) -> Self {
        Self { key, last_sent: 0 }
    }

    pub fn seal_next(&mut self, plaintext: &[u8]) -> (u64, Vec<u8>) {
        self.last_sent += 1;
        (self.last_sent, seal(&self.key, self.last_sent, plaintext))
    }

    pub fn last_sent(&self) -> u64 {
        self.last_sent
    }
}

/// Receiving half: rejects any counter not above the last accepted one.
#[derive(Debug, Clone)]
pub struct ChannelReceiver {
    key: Key,
    last_accepted: u64,
}

impl ChannelReceiver {
    pub fn new(key: Key) -> Self {
        Self {
            key,
            last_accepted: 0,
        }
    }

    pub fn open(&mut self, counter: u64, ciphertext: &[u8]) -> Result<Vec<u8>, ChannelError> {
        if counter <= self.last_accepted {
            return Err(ChannelError::ReplayDetected {
                counter,
                last: self.last_accepted,
            });
        }
        let plain = open(&self.key, counter, ciphertext)?;
        self.last_accepted = counter;
        Ok(plain)
    }

    pub fn last_accepted(&self) -> u64 {
        self.last_accepted
    }
}
