use serde::{Deserialize, Serialize};

use super::codec::{Reader, Writer};
use super::ProtocolError;
use crate::geometry::{SimTransform, UnitQuat, Vec3};
use crate::mesh::{quantize_channel, MeshError, TriangleMesh, Vertex};

/// Upper bound on a single reliable frame (tag + sender + payload).
pub const MAX_FRAME_LEN: usize = 64 << 20;

const HEADER_LEN: usize = 4;

/// Pose as it crosses the wire: f32 position, `(w, x, y, z)` quaternion,
/// f32 uniform scale. 32 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireTransform {
    pub position: [f32; 3],
    pub rotation: [f32; 4],
    pub scale: f32,
}

impl WireTransform {
    pub fn from_transform(t: &SimTransform) -> Self {
        let q = t.rotation.quaternion();
        Self {
            position: [t.translation.x as f32, t.translation.y as f32, t.translation.z as f32],
            rotation: [q.w as f32, q.i as f32, q.j as f32, q.k as f32],
            scale: t.scale as f32,
        }
    }

    /// Fails on non-finite values, a zero quaternion or non-positive scale.
    pub fn to_transform(&self) -> Result<SimTransform, ProtocolError> {
        let finite = self.position.iter().chain(&self.rotation).chain([&self.scale]).all(|v| v.is_finite());
        let [w, x, y, z] = self.rotation.map(f64::from);
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if !finite || q.norm() < 1e-6 || !(self.scale > 0.0) {
            return Err(ProtocolError::InvalidValue(format!("transform {self:?}")));
        }
        Ok(SimTransform {
            rotation: UnitQuat::from_quaternion(q),
            translation: Vec3::from(self.position.map(f64::from)),
            scale: self.scale as f64,
        })
    }

    fn write(&self, w: &mut Writer) {
        w.f32s(&self.position);
        w.f32s(&self.rotation);
        w.f32(self.scale);
    }

    fn read(r: &mut Reader) -> Result<Self, ProtocolError> {
        Ok(Self {
            position: r.f32x3()?,
            rotation: [r.f32()?, r.f32()?, r.f32()?, r.f32()?],
            scale: r.f32()?,
        })
    }
}

/// Mesh chunk payload: f32 positions, optional 8-bit colors for every
/// vertex, u32 triangle indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMesh {
    pub chunk_id: u32,
    pub positions: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub triangles: Vec<[u32; 3]>,
}

impl WireMesh {
    /// Colors are sent only when every vertex has one.
    pub fn from_mesh(mesh: &TriangleMesh) -> Self {
        let vertices = mesh.vertices();
        let all_colored = !vertices.is_empty() && vertices.iter().all(|v| v.color.is_some());
        WireMesh {
            chunk_id: mesh.chunk_id,
            positions: vertices.iter().map(|v| v.position.map(|c| c as f32).into()).collect(),
            colors: all_colored
                .then(|| vertices.iter().map(|v| v.color.unwrap_or_default().map(quantize_channel)).collect()),
            triangles: mesh.triangles().to_vec(),
        }
    }

    pub fn to_mesh(&self) -> Result<TriangleMesh, MeshError> {
        let vertices = self
            .positions
            .iter()
            .enumerate()
            .map(|(i, p)| Vertex {
                position: Vec3::from(p.map(f64::from)),
                color: self.colors.as_ref().and_then(|c| c.get(i)).map(|c| c.map(|x| x as f32 / 255.0)),
            })
            .collect();
        TriangleMesh::new(self.chunk_id, vertices, self.triangles.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    Cube,
    Sphere,
    Cylinder,
    Capsule,
    Plane,
    /// A scanned replica, referring to a previously announced mesh.
    Replica(u32),
}

impl ObjectKind {
    pub fn name(&self) -> String {
        match self {
            ObjectKind::Cube => "cube".into(),
            ObjectKind::Sphere => "sphere".into(),
            ObjectKind::Cylinder => "cylinder".into(),
            ObjectKind::Capsule => "capsule".into(),
            ObjectKind::Plane => "plane".into(),
            ObjectKind::Replica(id) => format!("replica:{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectProperties {
    pub gravity_enabled: bool,
    pub material_color: [f32; 3],
    pub uniform_scale: f32,
}

impl Default for ObjectProperties {
    fn default() -> Self {
        Self { gravity_enabled: false, material_color: [0.8, 0.8, 0.8], uniform_scale: 1.0 }
    }
}

impl ObjectProperties {
    fn write(&self, w: &mut Writer) {
        w.u8(self.gravity_enabled as u8);
        w.f32s(&self.material_color);
        w.f32(self.uniform_scale);
    }

    fn read(r: &mut Reader) -> Result<Self, ProtocolError> {
        Ok(Self { gravity_enabled: r.bool()?, material_color: r.f32x3()?, uniform_scale: r.f32()? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ReliableMessage {
    MeshChunkUpsert(WireMesh),
    MeshChunkRemove { chunk_id: u32 },
    ObjectSpawn { object_id: u32, kind: ObjectKind, transform: WireTransform, properties: ObjectProperties },
    ObjectTransform { object_id: u32, object_seq: u32, transform: WireTransform },
    ObjectPropertyEdit { object_id: u32, object_seq: u32, properties: ObjectProperties },
    ObjectGrab { object_id: u32, peer_id: u8 },
    ObjectRelease { object_id: u32, peer_id: u8 },
    ObjectDespawn { object_id: u32 },
    CutoutCreate { cutout_id: u16, apex: [f32; 3], points: [[f32; 3]; 4], source_frame: WireTransform },
    CutoutTransform { cutout_id: u16, copy_frame: WireTransform },
    CutoutActivate { cutout_id: u16 },
    CutoutDeactivate { cutout_id: u16 },
    /// Carries the replica's OBJ text inline after its length.
    ReplicaMeshAnnounce { replica_id: u32, obj: Vec<u8> },
}

impl ReliableMessage {
    pub fn tag(&self) -> u8 {
        match self {
            ReliableMessage::MeshChunkUpsert(_) => 1,
            ReliableMessage::MeshChunkRemove { .. } => 2,
            ReliableMessage::ObjectSpawn { .. } => 3,
            ReliableMessage::ObjectTransform { .. } => 4,
            ReliableMessage::ObjectPropertyEdit { .. } => 5,
            ReliableMessage::ObjectGrab { .. } => 6,
            ReliableMessage::ObjectRelease { .. } => 7,
            ReliableMessage::ObjectDespawn { .. } => 8,
            ReliableMessage::CutoutCreate { .. } => 9,
            ReliableMessage::CutoutTransform { .. } => 10,
            ReliableMessage::CutoutActivate { .. } => 11,
            ReliableMessage::CutoutDeactivate { .. } => 12,
            ReliableMessage::ReplicaMeshAnnounce { .. } => 13,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReliableMessage::MeshChunkUpsert(_) => "mesh-chunk-upsert",
            ReliableMessage::MeshChunkRemove { .. } => "mesh-chunk-remove",
            ReliableMessage::ObjectSpawn { .. } => "object-spawn",
            ReliableMessage::ObjectTransform { .. } => "object-transform",
            ReliableMessage::ObjectPropertyEdit { .. } => "object-property-edit",
            ReliableMessage::ObjectGrab { .. } => "object-grab",
            ReliableMessage::ObjectRelease { .. } => "object-release",
            ReliableMessage::ObjectDespawn { .. } => "object-despawn",
            ReliableMessage::CutoutCreate { .. } => "cutout-create",
            ReliableMessage::CutoutTransform { .. } => "cutout-transform",
            ReliableMessage::CutoutActivate { .. } => "cutout-activate",
            ReliableMessage::CutoutDeactivate { .. } => "cutout-deactivate",
            ReliableMessage::ReplicaMeshAnnounce { .. } => "replica-mesh-announce",
        }
    }

    fn write_payload(&self, w: &mut Writer) {
        match self {
            ReliableMessage::MeshChunkUpsert(m) => {
                w.u32(m.chunk_id);
                w.u8(m.colors.is_some() as u8);
                w.u32(m.positions.len() as u32);
                for p in &m.positions {
                    w.f32s(p);
                }
                if let Some(colors) = &m.colors {
                    for c in colors {
                        w.bytes(c);
                    }
                }
                w.u32(m.triangles.len() as u32);
                for t in &m.triangles {
                    t.iter().for_each(|&i| w.u32(i));
                }
            }
            ReliableMessage::MeshChunkRemove { chunk_id } => w.u32(*chunk_id),
            ReliableMessage::ObjectSpawn { object_id, kind, transform, properties } => {
                w.u32(*object_id);
                match kind {
                    ObjectKind::Cube => w.u8(0),
                    ObjectKind::Sphere => w.u8(1),
                    ObjectKind::Cylinder => w.u8(2),
                    ObjectKind::Capsule => w.u8(3),
                    ObjectKind::Plane => w.u8(4),
                    ObjectKind::Replica(id) => {
                        w.u8(0x80);
                        w.u32(*id);
                    }
                }
                transform.write(w);
                properties.write(w);
            }
            ReliableMessage::ObjectTransform { object_id, object_seq, transform } => {
                w.u32(*object_id);
                w.u32(*object_seq);
                transform.write(w);
            }
            ReliableMessage::ObjectPropertyEdit { object_id, object_seq, properties } => {
                w.u32(*object_id);
                w.u32(*object_seq);
                properties.write(w);
            }
            ReliableMessage::ObjectGrab { object_id, peer_id } | ReliableMessage::ObjectRelease { object_id, peer_id } => {
                w.u32(*object_id);
                w.u8(*peer_id);
            }
            ReliableMessage::ObjectDespawn { object_id } => w.u32(*object_id),
            ReliableMessage::CutoutCreate { cutout_id, apex, points, source_frame } => {
                w.u16(*cutout_id);
                w.f32s(apex);
                for p in points {
                    w.f32s(p);
                }
                source_frame.write(w);
            }
            ReliableMessage::CutoutTransform { cutout_id, copy_frame } => {
                w.u16(*cutout_id);
                copy_frame.write(w);
            }
            ReliableMessage::CutoutActivate { cutout_id } | ReliableMessage::CutoutDeactivate { cutout_id } => {
                w.u16(*cutout_id)
            }
            ReliableMessage::ReplicaMeshAnnounce { replica_id, obj } => {
                w.u32(*replica_id);
                w.u32(obj.len() as u32);
                w.bytes(obj);
            }
        }
    }

    fn read_payload(tag: u8, r: &mut Reader) -> Result<Self, ProtocolError> {
        Ok(match tag {
            1 => {
                let chunk_id = r.u32()?;
                let colored = r.bool()?;
                let n = r.count(12)?;
                let positions = (0..n).map(|_| r.f32x3()).collect::<Result<Vec<_>, _>>()?;
                let colors = if colored {
                    let bytes = r.take(n * 3)?;
                    Some(bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
                } else {
                    None
                };
                let t = r.count(12)?;
                let triangles = (0..t)
                    .map(|_| Ok([r.u32()?, r.u32()?, r.u32()?]))
                    .collect::<Result<Vec<_>, ProtocolError>>()?;
                if let Some(bad) = triangles.iter().flatten().find(|&&i| i as usize >= n) {
                    return Err(ProtocolError::InvalidValue(format!("triangle index {bad} ≥ vertex count {n}")));
                }
                ReliableMessage::MeshChunkUpsert(WireMesh { chunk_id, positions, colors, triangles })
            }
            2 => ReliableMessage::MeshChunkRemove { chunk_id: r.u32()? },
            3 => {
                let object_id = r.u32()?;
                let kind = match r.u8()? {
                    0 => ObjectKind::Cube,
                    1 => ObjectKind::Sphere,
                    2 => ObjectKind::Cylinder,
                    3 => ObjectKind::Capsule,
                    4 => ObjectKind::Plane,
                    0x80 => ObjectKind::Replica(r.u32()?),
                    k => return Err(ProtocolError::InvalidValue(format!("object kind {k}"))),
                };
                ReliableMessage::ObjectSpawn {
                    object_id,
                    kind,
                    transform: WireTransform::read(r)?,
                    properties: ObjectProperties::read(r)?,
                }
            }
            4 => ReliableMessage::ObjectTransform {
                object_id: r.u32()?,
                object_seq: r.u32()?,
                transform: WireTransform::read(r)?,
            },
            5 => ReliableMessage::ObjectPropertyEdit {
                object_id: r.u32()?,
                object_seq: r.u32()?,
                properties: ObjectProperties::read(r)?,
            },
            6 => ReliableMessage::ObjectGrab { object_id: r.u32()?, peer_id: r.u8()? },
            7 => ReliableMessage::ObjectRelease { object_id: r.u32()?, peer_id: r.u8()? },
            8 => ReliableMessage::ObjectDespawn { object_id: r.u32()? },
            9 => ReliableMessage::CutoutCreate {
                cutout_id: r.u16()?,
                apex: r.f32x3()?,
                points: [r.f32x3()?, r.f32x3()?, r.f32x3()?, r.f32x3()?],
                source_frame: WireTransform::read(r)?,
            },
            10 => ReliableMessage::CutoutTransform { cutout_id: r.u16()?, copy_frame: WireTransform::read(r)? },
            11 => ReliableMessage::CutoutActivate { cutout_id: r.u16()? },
            12 => ReliableMessage::CutoutDeactivate { cutout_id: r.u16()? },
            13 => {
                let replica_id = r.u32()?;
                let len = r.count(1)?;
                ReliableMessage::ReplicaMeshAnnounce { replica_id, obj: r.take(len)?.to_vec() }
            }
            t => return Err(ProtocolError::UnknownTag(t)),
        })
    }
}

/// A reliable message together with the peer that sent it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub sender: u8,
    #[serde(flatten)]
    pub message: ReliableMessage,
}

/// `[len: u32][tag: u8][sender: u8][payload]`, where `len` counts every
/// byte after the length prefix.
pub fn encode_reliable(env: &Envelope) -> Vec<u8> {
    let mut body = Writer::new();
    body.u8(env.message.tag());
    body.u8(env.sender);
    env.message.write_payload(&mut body);
    let mut out = Vec::with_capacity(HEADER_LEN + body.buf.len());
    out.extend_from_slice(&(body.buf.len() as u32).to_le_bytes());
    out.extend_from_slice(&body.buf);
    out
}

/// Decodes the first frame in `buf`, returning it and the number of bytes
/// consumed. `Truncated` means the frame is incomplete and decoding can be
/// retried once more bytes arrive.
pub fn decode_reliable(buf: &[u8]) -> Result<(Envelope, usize), ProtocolError> {
    let declared = frame_len(buf)?;
    let total = HEADER_LEN + declared;
    if buf.len() < total {
        return Err(ProtocolError::Truncated { needed: total - buf.len() });
    }
    Ok((decode_body(&buf[HEADER_LEN..total])?, total))
}

fn frame_len(buf: &[u8]) -> Result<usize, ProtocolError> {
    if buf.len() < HEADER_LEN {
        return Err(ProtocolError::Truncated { needed: HEADER_LEN - buf.len() });
    }
    let declared = u32::from_le_bytes(buf[..HEADER_LEN].try_into().unwrap()) as usize;
    if declared > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(declared));
    }
    if declared < 2 {
        return Err(ProtocolError::LengthMismatch { declared, actual: 2 });
    }
    Ok(declared)
}

fn decode_body(body: &[u8]) -> Result<Envelope, ProtocolError> {
    let mut r = Reader::new(body);
    let tag = r.u8()?;
    let sender = r.u8()?;
    let message = ReliableMessage::read_payload(tag, &mut r).map_err(|e| match e {
        ProtocolError::Truncated { needed } => {
            ProtocolError::LengthMismatch { declared: body.len(), actual: body.len() + needed }
        }
        e => e,
    })?;
    if r.remaining() != 0 {
        return Err(ProtocolError::LengthMismatch { declared: body.len(), actual: body.len() - r.remaining() });
    }
    Ok(Envelope { sender, message })
}

/// Incremental decoder for the reliable byte stream. Feed bytes as they
/// arrive; poll until it yields `Ok(None)`.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// A malformed but well-delimited frame is skipped and reported; an
    /// oversized length prefix discards everything buffered.
    pub fn poll(&mut self) -> Result<Option<Envelope>, ProtocolError> {
        let declared = match frame_len(&self.buf) {
            Ok(n) => n,
            Err(ProtocolError::Truncated { .. }) => return Ok(None),
            Err(e @ ProtocolError::FrameTooLarge(_)) => {
                self.buf.clear();
                return Err(e);
            }
            Err(e) => {
                self.buf.drain(..HEADER_LEN.min(self.buf.len()));
                return Err(e);
            }
        };
        let total = HEADER_LEN + declared;
        if self.buf.len() < total {
            return Ok(None);
        }
        let result = decode_body(&self.buf[HEADER_LEN..total]);
        self.buf.drain(..total);
        result.map(Some)
    }
}
