use serde::{Deserialize, Serialize};

use super::codec::{Reader, Writer};
use super::ProtocolError;

pub const POINTER_FRAME_LEN: usize = 32;

/// Sequence numbers within this distance behind the last accepted one are
/// stale; anything farther away is treated as a sender restart.
pub const SEQ_WINDOW: u16 = 1024;

/// Ray pointer state plus the two annotation bytes, sent continuously on
/// the unreliable channel. The freshest datagram wins; nothing is resent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointerDatagram {
    pub peer_id: u8,
    pub send_seq: u16,
    pub ray_origin: [f32; 3],
    pub ray_direction: [f32; 3],
    pub drawing: bool,
    /// Number of annotations the sender currently has, modulo 256.
    pub annotation_count: u8,
    /// 0 when no cutout is active.
    pub active_cutout_id: u16,
}

fn checksum(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0, |acc, b| acc ^ b)
}

/// `true` if `candidate` should replace `last` under mod-2^16 arithmetic.
pub fn seq_is_newer(candidate: u16, last: u16) -> bool {
    let behind = last.wrapping_sub(candidate);
    !(behind <= SEQ_WINDOW)
}

pub fn encode_pointer(d: &PointerDatagram) -> [u8; POINTER_FRAME_LEN] {
    let mut w = Writer::new();
    w.u8(d.peer_id);
    w.u16(d.send_seq);
    w.f32s(&d.ray_origin);
    w.f32s(&d.ray_direction);
    w.u8(d.drawing as u8);
    w.u8(d.annotation_count);
    w.u16(d.active_cutout_id);
    let sum = checksum(&w.buf);
    w.u8(sum);
    w.buf.try_into().expect("fixed layout is 32 bytes")
}

pub fn decode_pointer(bytes: &[u8]) -> Result<PointerDatagram, ProtocolError> {
    if bytes.len() != POINTER_FRAME_LEN {
        return Err(ProtocolError::BadLength { expected: POINTER_FRAME_LEN, actual: bytes.len() });
    }
    let computed = checksum(&bytes[..POINTER_FRAME_LEN - 1]);
    let stored = bytes[POINTER_FRAME_LEN - 1];
    if computed != stored {
        return Err(ProtocolError::BadChecksum { stored, computed });
    }
    let mut r = Reader::new(bytes);
    let peer_id = r.u8()?;
    let send_seq = r.u16()?;
    let ray_origin = r.f32x3()?;
    let mut ray_direction = r.f32x3()?;
    let drawing = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(ProtocolError::InvalidFlag(b)),
    };
    let annotation_count = r.u8()?;
    let active_cutout_id = r.u16()?;

    if ray_origin.iter().any(|v| !v.is_finite()) {
        return Err(ProtocolError::InvalidValue("ray origin is not finite".into()));
    }
    let norm = ray_direction.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 {
        return Err(ProtocolError::NonUnitDirection(norm as f32));
    }
    // Directions already unit at f32 precision pass through bit-exact.
    if (norm - 1.0).abs() > 1e-6 {
        ray_direction = ray_direction.map(|v| (v as f64 / norm) as f32);
    }
    Ok(PointerDatagram { peer_id, send_seq, ray_origin, ray_direction, drawing, annotation_count, active_cutout_id })
}
