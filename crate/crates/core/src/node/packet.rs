//! Aggregation packets and their wire encoding.
//!
//! Layout (big-endian): `sender (4) || counter (8) || participant count (4)
//! || sorted participant ids (4 each) || sealed pair || tag (8)`.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::crypto::{
    pair_payload, ChannelError, ChannelReceiver, ChannelSender, DiffusedPair, DomainValue, MacTag,
    MAC_LEN, SEAL_OVERHEAD,
};
use crate::topology::NodeId;

/// Length of the sealed (dsum, dsum') payload.
pub const SEALED_PAIR_LEN: usize = 16 + SEAL_OVERHEAD;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PacketError {
    #[error("packet truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("participant list is not strictly ascending")]
    UnsortedParticipants,
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

/// An aggregation packet as seen by its receiver after opening the seal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggPacket {
    pub sender: NodeId,
    pub participants: BTreeSet<NodeId>,
    pub counter: u64,
    pub pair: DiffusedPair,
    pub tag: MacTag,
}

impl AggPacket {
    pub fn dsum(&self) -> DomainValue {
        self.pair.first
    }

    pub fn dsum_prime(&self) -> DomainValue {
        self.pair.second
    }

    /// Seals the pair with the next counter of `channel`. The packet's own
    /// `counter` field is replaced by the one used.
    pub fn seal(&self, channel: &mut ChannelSender) -> WirePacket {
        let (counter, sealed) = channel.seal_next(&pair_payload(&self.pair));
        WirePacket {
            sender: self.sender,
            counter,
            participants: self.participants.iter().copied().collect(),
            sealed,
            tag: self.tag,
        }
    }
}

/// An aggregation packet in transit: the pair is sealed under the channel
/// key and only the receiver can open it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WirePacket {
    pub sender: NodeId,
    pub counter: u64,
    pub participants: Vec<NodeId>,
    pub sealed: Vec<u8>,
    pub tag: MacTag,
}

impl WirePacket {
    pub fn encoded_len(&self) -> usize {
        16 + 4 * self.participants.len() + self.sealed.len() + MAC_LEN
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.sender.0.to_be_bytes());
        out.extend_from_slice(&self.counter.to_be_bytes());
        out.extend_from_slice(&(self.participants.len() as u32).to_be_bytes());
        for p in &self.participants {
            out.extend_from_slice(&p.0.to_be_bytes());
        }
        out.extend_from_slice(&self.sealed);
        out.extend_from_slice(self.tag.as_bytes());
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PacketError> {
        let mut r = Reader::new(bytes);
        let packet = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(packet)
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self, PacketError> {
        let sender = NodeId(r.u32()?);
        let counter = r.u64()?;
        let count = r.u32()? as usize;
        let mut participants = Vec::with_capacity(count.min(r.remaining() / 4));
        for _ in 0..count {
            participants.push(NodeId(r.u32()?));
        }
        if !participants.windows(2).all(|w| w[0] < w[1]) {
            return Err(PacketError::UnsortedParticipants);
        }
        let sealed = r.take(SEALED_PAIR_LEN)?.to_vec();
        let tag = MacTag::from_bytes(r.take(MAC_LEN)?.try_into().unwrap());
        Ok(Self {
            sender,
            counter,
            participants,
            sealed,
            tag,
        })
    }

    /// Opens the sealed pair through `channel`, enforcing counter freshness.
    pub fn open(&self, channel: &mut ChannelReceiver) -> Result<AggPacket, ChannelError> {
        let plain = channel.open(self.counter, &self.sealed)?;
        if plain.len() != 16 {
            return Err(ChannelError::AuthFailure);
        }
        let first = DomainValue::from_be_bytes(plain[..8].try_into().unwrap());
        let second = DomainValue::from_be_bytes(plain[8..].try_into().unwrap());
        Ok(AggPacket {
            sender: self.sender,
            participants: self.participants.iter().copied().collect(),
            counter: self.counter,
            pair: DiffusedPair::new(first, second),
            tag: self.tag,
        })
    }
}

/// What a probed node sends back to the base station: its packet, re-sealed
/// on the direct channel, and the tags it received from each contributing
/// child.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationReply {
    pub packet: WirePacket,
    pub child_tags: Vec<(NodeId, MacTag)>,
}

impl AttestationReply {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        self.packet.encode_into(out);
        out.extend_from_slice(&(self.child_tags.len() as u32).to_be_bytes());
        for (id, tag) in &self.child_tags {
            out.extend_from_slice(&id.0.to_be_bytes());
            out.extend_from_slice(tag.as_bytes());
        }
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self, PacketError> {
        let packet = WirePacket::decode_from(r)?;
        let count = r.u32()? as usize;
        let mut child_tags = Vec::with_capacity(count.min(r.remaining() / 12));
        for _ in 0..count {
            let id = NodeId(r.u32()?);
            let tag = MacTag::from_bytes(r.take(MAC_LEN)?.try_into().unwrap());
            child_tags.push((id, tag));
        }
        Ok(Self { packet, child_tags })
    }
}

/// Minimal big-endian cursor.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], PacketError> {
        if self.remaining() < n {
            return Err(PacketError::Truncated {
                need: self.pos + n,
                have: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, PacketError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, PacketError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, PacketError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(self) -> Result<(), PacketError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(PacketError::Trailing(n)),
        }
    }
}
