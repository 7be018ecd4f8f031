//! Wire formats: the fixed 32-byte pointer datagram carried on the
//! unreliable channel and length-prefixed frames on the reliable channel.
//! Byte layouts are documented in `PROTOCOL.md` at the repository root.

mod codec;
mod pointer;
mod reliable;

pub use pointer::{decode_pointer, encode_pointer, seq_is_newer, PointerDatagram, POINTER_FRAME_LEN, SEQ_WINDOW};
pub use reliable::{
    decode_reliable, encode_reliable, Envelope, FrameDecoder, ObjectKind, ObjectProperties, ReliableMessage,
    WireMesh, WireTransform, MAX_FRAME_LEN,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("frame is {actual} bytes, expected {expected}")]
    BadLength { expected: usize, actual: usize },
    #[error("checksum mismatch: frame says {stored:#04x}, computed {computed:#04x}")]
    BadChecksum { stored: u8, computed: u8 },
    #[error("ray direction norm {0} is not unit length")]
    NonUnitDirection(f32),
    #[error("drawing flag must be 0 or 1, got {0}")]
    InvalidFlag(u8),
    #[error("need {needed} more bytes")]
    Truncated { needed: usize },
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("frame declares {declared} bytes but its payload spans {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("frame length {0} exceeds the maximum")]
    FrameTooLarge(usize),
    #[error("invalid field: {0}")]
    InvalidValue(String),
}
