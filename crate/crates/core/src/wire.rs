//! Length-framed protocol messages.
//!
//! ```text
//! frame := len:u32le | tag:u8 | count:u32le | body
//! ```
//!
//! `len` counts every byte after the length field (`5 + body.len()`). The body
//! is `count` concatenated 32-byte group elements for the three set messages,
//! `count` little-endian `u32` indices for the index set, and empty for abort.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::group::{decode_batch, Encoding, GroupElement, GroupError, ELEMENT_BYTES};
use crate::par::Parallelism;

/// Bytes preceding the body: length, tag and count.
pub const HEADER_BYTES: usize = 9;
const LEN_BYTES: usize = 4;
const INDEX_BYTES: usize = 4;

/// Frames above this size are refused before allocating.
pub const MAX_FRAME_BYTES: usize = 1 << 31;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("declared length {declared} does not match {expected} implied by the count")]
    LengthMismatch { declared: usize, expected: usize },
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("malformed group element at index {index}")]
    InvalidElement { index: usize },
    #[error("indices not strictly increasing at position {position}")]
    NotIncreasing { position: usize },
    #[error("abort message must be empty")]
    NonEmptyAbort,
    #[error("peer closed the connection")]
    Disconnected,
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for WireError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe => WireError::Disconnected,
            _ => WireError::Io(e),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    XA = 0x01,
    YBSub = 0x02,
    XAbPi = 0x03,
    IndexSet = 0x04,
    Abort = 0x0F,
}

impl MessageType {
    pub fn from_tag(tag: u8) -> Result<Self, WireError> {
        Ok(match tag {
            0x01 => MessageType::XA,
            0x02 => MessageType::YBSub,
            0x03 => MessageType::XAbPi,
            0x04 => MessageType::IndexSet,
            0x0F => MessageType::Abort,
            other => return Err(WireError::UnknownTag(other)),
        })
    }

    fn item_width(self) -> usize {
        match self {
            MessageType::XA | MessageType::YBSub | MessageType::XAbPi => ELEMENT_BYTES,
            MessageType::IndexSet => INDEX_BYTES,
            MessageType::Abort => 0,
        }
    }
}

/// Strictly increasing positions into the receiver's transmitted subsample.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<u32>,
}

impl IndexSet {
    pub fn new(indices: Vec<u32>) -> Result<Self, WireError> {
        if let Some(position) = indices.windows(2).position(|w| w[0] >= w[1]) {
            return Err(WireError::NotIncreasing {
                position: position + 1,
            });
        }
        Ok(IndexSet { indices })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProtocolMessage {
    /// Sender's hashed set under `a`.
    XA(Vec<GroupElement>),
    /// Receiver's subsampled hashed set under `b`.
    YBSub(Vec<GroupElement>),
    /// Sender's set under `ab`, shuffled by the receiver.
    XAbPi(Vec<GroupElement>),
    IndexSet(IndexSet),
    Abort,
}

impl ProtocolMessage {
    pub fn message_type(&self) -> MessageType {
        match self {
            ProtocolMessage::XA(_) => MessageType::XA,
            ProtocolMessage::YBSub(_) => MessageType::YBSub,
            ProtocolMessage::XAbPi(_) => MessageType::XAbPi,
            ProtocolMessage::IndexSet(_) => MessageType::IndexSet,
            ProtocolMessage::Abort => MessageType::Abort,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            ProtocolMessage::XA(v) | ProtocolMessage::YBSub(v) | ProtocolMessage::XAbPi(v) => {
                v.len()
            }
            ProtocolMessage::IndexSet(idx) => idx.len(),
            ProtocolMessage::Abort => 0,
        }
    }

    /// Size of the full frame, length prefix included.
    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + self.count() * self.message_type().item_width()
    }

    pub fn encode(&self) -> Vec<u8> {
        let total = self.encoded_len();
        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(&((total - LEN_BYTES) as u32).to_le_bytes());
        out.push(self.message_type() as u8);
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        match self {
            ProtocolMessage::XA(v) | ProtocolMessage::YBSub(v) | ProtocolMessage::XAbPi(v) => {
                for e in v {
                    out.extend_from_slice(e.as_bytes());
                }
            }
            ProtocolMessage::IndexSet(idx) => {
                for i in idx.indices() {
                    out.extend_from_slice(&i.to_le_bytes());
                }
            }
            ProtocolMessage::Abort => {}
        }
        debug_assert_eq!(out.len(), total);
        out
    }

    /// Decodes one complete frame, validating every element and index.
    pub fn decode(frame: &[u8]) -> Result<Self, WireError> {
        if frame.len() < HEADER_BYTES {
            return Err(WireError::Truncated);
        }
        let declared = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
        if declared + LEN_BYTES != frame.len() {
            return Err(WireError::LengthMismatch {
                declared,
                expected: frame.len() - LEN_BYTES,
            });
        }
        Self::decode_payload(&frame[LEN_BYTES..])
    }

    /// `payload` is everything after the length prefix.
    fn decode_payload(payload: &[u8]) -> Result<Self, WireError> {
        if payload.len() < HEADER_BYTES - LEN_BYTES {
            return Err(WireError::Truncated);
        }
        let ty = MessageType::from_tag(payload[0])?;
        let count = u32::from_le_bytes(payload[1..5].try_into().unwrap()) as usize;
        let body = &payload[5..];
        let expected = count
            .checked_mul(ty.item_width())
            .ok_or(WireError::FrameTooLarge(usize::MAX))?;
        if body.len() != expected {
            return Err(WireError::LengthMismatch {
                declared: payload.len(),
                expected: expected + 5,
            });
        }
        match ty {
            MessageType::XA | MessageType::YBSub | MessageType::XAbPi => {
                let raw: Vec<Encoding> = body
                    .chunks_exact(ELEMENT_BYTES)
                    .map(|c| c.try_into().unwrap())
                    .collect();
                let elements = decode_batch(&raw, Parallelism::default()).map_err(|e| match e {
                    GroupError::InvalidElement { index } => WireError::InvalidElement { index },
                    _ => WireError::InvalidElement { index: 0 },
                })?;
                Ok(match ty {
                    MessageType::XA => ProtocolMessage::XA(elements),
                    MessageType::YBSub => ProtocolMessage::YBSub(elements),
                    _ => ProtocolMessage::XAbPi(elements),
                })
            }
            MessageType::IndexSet => {
                let indices = body
                    .chunks_exact(INDEX_BYTES)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Ok(ProtocolMessage::IndexSet(IndexSet::new(indices)?))
            }
            MessageType::Abort => {
                if count != 0 {
                    return Err(WireError::NonEmptyAbort);
                }
                Ok(ProtocolMessage::Abort)
            }
        }
    }

    /// Writes the frame; returns the number of bytes written.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<usize, WireError> {
        let bytes = self.encode();
        w.write_all(&bytes)?;
        Ok(bytes.len())
    }

    /// Reads exactly one frame; returns the message and its size on the wire.
    pub fn read_from<R: Read>(r: &mut R) -> Result<(Self, usize), WireError> {
        let mut len = [0u8; LEN_BYTES];
        r.read_exact(&mut len)?;
        let declared = u32::from_le_bytes(len) as usize;
        if declared > MAX_FRAME_BYTES {
            return Err(WireError::FrameTooLarge(declared));
        }
        let mut payload = vec![0u8; declared];
        r.read_exact(&mut payload)?;
        Ok((Self::decode_payload(&payload)?, declared + LEN_BYTES))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::hash_to_group;
    use proptest::prelude::*;

    fn elems(n: usize) -> Vec<GroupElement> {
        (0..n)
            .map(|i| hash_to_group(format!("w{i}").as_bytes()).unwrap())
            .collect()
    }

    #[test]
    fn header_layout_is_exact() {
        let e = elems(2);
        let bytes = ProtocolMessage::XA(e.clone()).encode();
        assert_eq!(bytes.len(), 9 + 64);
        assert_eq!(&bytes[..4], &(69u32).to_le_bytes());
        assert_eq!(bytes[4], 0x01);
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[9..41], e[0].as_bytes());

        let idx = ProtocolMessage::IndexSet(IndexSet::new(vec![1, 258]).unwrap()).encode();
        assert_eq!(
            idx,
            vec![13, 0, 0, 0, 0x04, 2, 0, 0, 0, 1, 0, 0, 0, 2, 1, 0, 0]
        );
        assert_eq!(
            ProtocolMessage::Abort.encode(),
            vec![5, 0, 0, 0, 0x0F, 0, 0, 0, 0]
        );
        assert_eq!(
            ProtocolMessage::YBSub(vec![]).encode(),
            vec![5, 0, 0, 0, 0x02, 0, 0, 0, 0]
        );
    }

    #[test]
    fn rejects_malformed_frames() {
        assert!(matches!(
            ProtocolMessage::decode(&[1, 2]),
            Err(WireError::Truncated)
        ));
        let mut f = ProtocolMessage::Abort.encode();
        f[4] = 0x07;
        assert!(matches!(
            ProtocolMessage::decode(&f),
            Err(WireError::UnknownTag(0x07))
        ));
        let mut f = ProtocolMessage::XAbPi(elems(3)).encode();
        f[9 + 32..9 + 64].copy_from_slice(&[0xff; 32]);
        assert!(matches!(
            ProtocolMessage::decode(&f),
            Err(WireError::InvalidElement { index: 1 })
        ));
        let mut f = ProtocolMessage::XA(elems(2)).encode();
        f[5] = 3;
        assert!(matches!(
            ProtocolMessage::decode(&f),
            Err(WireError::LengthMismatch { .. })
        ));
        let f = [13, 0, 0, 0, 0x04, 2, 0, 0, 0, 5, 0, 0, 0, 5, 0, 0, 0];
        assert!(matches!(
            ProtocolMessage::decode(&f),
            Err(WireError::NotIncreasing { position: 1 })
        ));
        let f = [9, 0, 0, 0, 0x0F, 1, 0, 0, 0, 0, 0, 0, 0];
        assert!(ProtocolMessage::decode(&f).is_err());
    }

    #[test]
    fn stream_read_handles_eof() {
        let mut bytes = ProtocolMessage::XA(elems(4)).encode();
        bytes.truncate(50);
        let err = ProtocolMessage::read_from(&mut &bytes[..]).unwrap_err();
        assert!(matches!(err, WireError::Disconnected));
        let huge = [0xff, 0xff, 0xff, 0xff];
        assert!(matches!(
            ProtocolMessage::read_from(&mut &huge[..]),
            Err(WireError::FrameTooLarge(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn frames_round_trip(n in 0usize..20, raw_idx in proptest::collection::btree_set(any::<u32>(), 0..40), tag in 0u8..5) {
            let msg = match tag {
                0 => ProtocolMessage::XA(elems(n)),
                1 => ProtocolMessage::YBSub(elems(n)),
                2 => ProtocolMessage::XAbPi(elems(n)),
                3 => ProtocolMessage::IndexSet(IndexSet::new(raw_idx.into_iter().collect()).unwrap()),
                _ => ProtocolMessage::Abort,
            };
            let bytes = msg.encode();
            prop_assert_eq!(bytes.len(), msg.encoded_len());
            prop_assert_eq!(&ProtocolMessage::decode(&bytes).unwrap(), &msg);
            let (streamed, used) = ProtocolMessage::read_from(&mut &bytes[..]).unwrap();
            prop_assert_eq!(streamed, msg);
            prop_assert_eq!(used, bytes.len());
        }
    }
}
