//! Byte encoding of everything that travels between simulated nodes.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::node::{AggFunction, AttestationReply, NodeError, PacketError, Query, Reader, WirePacket};
use crate::topology::NodeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("unknown aggregation function code {0}")]
    UnknownFunction(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Query(Query),
    Packet(WirePacket),
    /// Base station asks `target` to resend its packet; routed down the tree.
    Probe { target: NodeId, round: u64 },
    Reaggregate {
        target: NodeId,
        round: u64,
        exclusions: BTreeSet<NodeId>,
    },
    /// Answer to a probe or re-aggregation; routed up to the base station.
    Reply(AttestationReply),
    Refusal { node: NodeId, error: NodeError },
    /// Local child timeout; never crosses a link.
    Timer { round: u64 },
}

const QUERY: u8 = 1;
const PACKET: u8 = 2;
const PROBE: u8 = 3;
const REAGGREGATE: u8 = 4;
const REPLY: u8 = 5;
const REFUSAL: u8 = 6;
const TIMER: u8 = 7;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

// Refusals carry (kind, a, b); only the re-aggregation conflict needs its
// fields back on the base station side.
fn refusal_fields(error: &NodeError) -> (u8, u64, u32) {
    match *error {
        NodeError::ExclusionNotResolvable { excluded, via } => (1, excluded.0 as u64, via.0),
        NodeError::NoSuchRound(r) => (2, r, 0),
        NodeError::NoActiveRound => (3, 0, 0),
        _ => (0, 0, 0),
    }
}

fn refusal_error(kind: u8, a: u64, b: u32) -> NodeError {
    match kind {
        1 => NodeError::ExclusionNotResolvable {
            excluded: NodeId(a as u32),
            via: NodeId(b),
        },
        2 => NodeError::NoSuchRound(a),
        _ => NodeError::NoActiveRound,
    }
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::Query(q) => {
                out.push(QUERY);
                put_u64(&mut out, q.round);
                out.push(match q.function {
                    AggFunction::Sum => 0,
                    AggFunction::Mean => 1,
                });
            }
            Message::Packet(w) => {
                out.push(PACKET);
                w.encode_into(&mut out);
            }
            Message::Probe { target, round } => {
                out.push(PROBE);
                put_u32(&mut out, target.0);
                put_u64(&mut out, *round);
            }
            Message::Reaggregate {
                target,
                round,
                exclusions,
            } => {
                out.push(REAGGREGATE);
                put_u32(&mut out, target.0);
                put_u64(&mut out, *round);
                put_u32(&mut out, exclusions.len() as u32);
                for id in exclusions {
                    put_u32(&mut out, id.0);
                }
            }
            Message::Reply(r) => {
                out.push(REPLY);
                r.encode_into(&mut out);
            }
            Message::Refusal { node, error } => {
                let (kind, a, b) = refusal_fields(error);
                out.push(REFUSAL);
                put_u32(&mut out, node.0);
                out.push(kind);
                put_u64(&mut out, a);
                put_u32(&mut out, b);
            }
            Message::Timer { round } => {
                out.push(TIMER);
                put_u64(&mut out, *round);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MessageError> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            QUERY => {
                let round = r.u64()?;
                let function = match r.u8()? {
                    0 => AggFunction::Sum,
                    1 => AggFunction::Mean,
                    f => return Err(MessageError::UnknownFunction(f)),
                };
                Message::Query(Query { round, function })
            }
            PACKET => Message::Packet(WirePacket::decode_from(&mut r)?),
            PROBE => Message::Probe {
                target: NodeId(r.u32()?),
                round: r.u64()?,
            },
            REAGGREGATE => {
                let target = NodeId(r.u32()?);
                let round = r.u64()?;
                let count = r.u32()? as usize;
                if count.saturating_mul(4) > r.remaining() {
                    return Err(PacketError::Truncated {
                        need: count.saturating_mul(4),
                        have: r.remaining(),
                    }
                    .into());
                }
                let exclusions = (0..count).map(|_| r.u32().map(NodeId)).collect::<Result<_, _>>()?;
                Message::Reaggregate {
                    target,
                    round,
                    exclusions,
                }
            }
            REPLY => Message::Reply(AttestationReply::decode_from(&mut r)?),
            REFUSAL => {
                let node = NodeId(r.u32()?);
                let kind = r.u8()?;
                let error = refusal_error(kind, r.u64()?, r.u32()?);
                Message::Refusal { node, error }
            }
            TIMER => Message::Timer { round: r.u64()? },
            tag => return Err(MessageError::UnknownTag(tag)),
        };
        r.finish()?;
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{ChannelSender, DiffusedPair, DomainValue, Key, MacTag};
    use crate::node::AggPacket;

    fn wire() -> WirePacket {
        let p = AggPacket {
            sender: NodeId(4),
            participants: [NodeId(4), NodeId(9)].into(),
            counter: 0,
            pair: DiffusedPair::new(DomainValue::new(1), DomainValue::new(2)),
            tag: MacTag::from_bytes([3; 8]),
        };
        p.seal(&mut ChannelSender::new(Key::from_bytes([1; 16])))
    }

    #[test]
    fn every_variant_round_trips() {
        let msgs = [
            Message::Query(Query {
                round: 7,
                function: AggFunction::Mean,
            }),
            Message::Packet(wire()),
            Message::Probe {
                target: NodeId(12),
                round: 3,
            },
            Message::Reaggregate {
                target: NodeId(2),
                round: 3,
                exclusions: [NodeId(5), NodeId(8)].into(),
            },
            Message::Reply(AttestationReply {
                packet: wire(),
                child_tags: vec![(NodeId(9), MacTag::from_bytes([7; 8]))],
            }),
            Message::Refusal {
                node: NodeId(2),
                error: NodeError::ExclusionNotResolvable {
                    excluded: NodeId(8),
                    via: NodeId(6),
                },
            },
            Message::Refusal {
                node: NodeId(2),
                error: NodeError::NoSuchRound(4),
            },
            Message::Timer { round: 9 },
        ];
        for m in msgs {
            assert_eq!(Message::decode(&m.encode()).unwrap(), m);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert_eq!(Message::decode(&[99]), Err(MessageError::UnknownTag(99)));
        assert!(matches!(
            Message::decode(&[]),
            Err(MessageError::Packet(PacketError::Truncated { need: 1, have: 0 }))
        ));
        let mut q = Message::Timer { round: 1 }.encode();
        q.push(0);
        assert_eq!(Message::decode(&q), Err(MessageError::Packet(PacketError::Trailing(1))));
        let mut r = Message::Reaggregate {
            target: NodeId(1),
            round: 1,
            exclusions: BTreeSet::new(),
        }
        .encode();
        r[13..17].copy_from_slice(&u32::MAX.to_be_bytes());
        assert!(Message::decode(&r).is_err());
    }
}
