//! Per-peer replicated session state.
//!
//! Each [`Peer`] owns a full copy of the shared state: the spatial mesh,
//! both users' annotations, shared objects, cutouts and announced replicas.
//! Peers only talk through encoded bytes. Every local action is encoded,
//! decoded and applied through the same path as a remote message, so both
//! peers apply bit-identical values and converge exactly.
//!
//! All shared state lives in the 360° camera's frame ("world"). The VR
//! user's space is the camera frame; the AR peer maps its local inputs into
//! world with its alignment transform.

pub mod annotation;
pub mod cutout;
pub mod dump;
mod objects;

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

pub use annotation::{
    classify, count_delta, Annotation, AnnotationChange, AnnotationId, Attachment, OwnerTrack, ResolvedPoint,
    StrokeEvent, COUNT_WINDOW,
};
pub use cutout::{copy_to_world, select_region, Cutout};
pub use objects::SharedObject;

use crate::geometry::{SimTransform, Vec3};
use crate::mesh::{parse_obj, raycast, MeshError, MeshSet, ObjError, Selection, TriangleMesh};
use crate::protocol::{
    decode_pointer, decode_reliable, encode_pointer, encode_reliable, seq_is_newer, Envelope, FrameDecoder,
    ObjectKind, ObjectProperties, PointerDatagram, ProtocolError, ReliableMessage, WireMesh, WireTransform,
    POINTER_FRAME_LEN,
};

pub const AR_PEER: u8 = 0;
pub const VR_PEER: u8 = 1;

/// Bound on datagrams held back while waiting for a cutout to be created.
const MAX_HELD_DATAGRAMS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    /// The HoloLens user in the physical room.
    Ar,
    /// The remote user inside the 360° video.
    Vr,
}

impl Role {
    pub fn peer_id(self) -> u8 {
        match self {
            Role::Ar => AR_PEER,
            Role::Vr => VR_PEER,
        }
    }

    pub fn from_peer_id(id: u8) -> Option<Role> {
        match id {
            AR_PEER => Some(Role::Ar),
            VR_PEER => Some(Role::Vr),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Ar => "ar",
            Role::Vr => "vr",
        }
    }

    pub fn other(self) -> Role {
        match self {
            Role::Ar => Role::Vr,
            Role::Vr => Role::Ar,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("the {role} peer may not {action}")]
    RoleViolation { role: &'static str, action: &'static str },
    #[error("unknown object {0}")]
    UnknownObject(u32),
    #[error("unknown cutout {0}")]
    UnknownCutout(u16),
    #[error("object {0} already exists")]
    DuplicateObject(u32),
    #[error("object id {object_id} is not in peer {peer}'s id range")]
    ForeignObjectId { object_id: u32, peer: u8 },
    #[error("stale update for object {object_id}: seq {seq} ≤ {current}")]
    StaleSeq { object_id: u32, seq: u32, current: u32 },
    #[error("object {object_id} is grabbed by peer {holder}")]
    GrabConflict { object_id: u32, holder: u8 },
    #[error("no annotation to delete")]
    NoAnnotation,
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Obj(#[from] ObjError),
}

/// Bytes a peer wants delivered to the other peer.
#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing {
    Datagram([u8; POINTER_FRAME_LEN]),
    Frame(Vec<u8>),
}

/// Observable state changes, used for the simulator's event log.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    PointerAccepted { from: u8, seq: u16 },
    PointerDropped { reason: String },
    Stroke { owner: u8, event: StrokeEvent },
    Annotation(AnnotationChange),
    Applied { message: &'static str, sender: u8 },
    Rejected { message: &'static str, sender: u8, reason: String },
    FrameDropped { reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeerStats {
    pub datagrams_accepted: u64,
    pub datagrams_invalid: u64,
    pub datagrams_stale: u64,
    pub frames_applied: u64,
    pub frames_invalid: u64,
    pub updates_stale: u64,
    pub updates_conflicted: u64,
    pub updates_rejected: u64,
    pub count_desyncs: u64,
    pub echoes_sent: u64,
}

/// The local user's pointer, in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPointer {
    pub origin: Vec3,
    pub direction: Vec3,
    pub drawing: bool,
    /// Unwrapped number of annotations this peer currently has.
    pub count: u32,
    pub next_seq: u16,
}

impl Default for LocalPointer {
    fn default() -> Self {
        Self { origin: Vec3::zeros(), direction: Vec3::z(), drawing: false, count: 0, next_seq: 0 }
    }
}

#[derive(Debug)]
pub struct Peer {
    role: Role,
    alignment: SimTransform,
    meshes: MeshSet,
    tracks: BTreeMap<u8, OwnerTrack>,
    objects: BTreeMap<u32, SharedObject>,
    cutouts: BTreeMap<u16, Cutout>,
    replicas: BTreeMap<u32, TriangleMesh>,
    remote_pointer: Option<PointerDatagram>,
    /// Accepted datagrams whose annotation bytes wait for a cutout this
    /// peer has not heard of yet, in arrival order.
    held: VecDeque<PointerDatagram>,
    /// Highest sequence number this VR peer has requested per object.
    requested_seq: BTreeMap<u32, u32>,
    pointer: LocalPointer,
    last_sent_pointer: Option<PointerDatagram>,
    next_object_id: u32,
    next_cutout_id: u16,
    decoder: FrameDecoder,
    outbox: Vec<Outgoing>,
    stats: PeerStats,
}

fn to_f32(v: &Vec3) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

fn from_f32(v: [f32; 3]) -> Vec3 {
    Vec3::from(v.map(f64::from))
}

impl Peer {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            alignment: SimTransform::identity(),
            meshes: MeshSet::new(),
            tracks: BTreeMap::new(),
            objects: BTreeMap::new(),
            cutouts: BTreeMap::new(),
            replicas: BTreeMap::new(),
            remote_pointer: None,
            held: VecDeque::new(),
            requested_seq: BTreeMap::new(),
            pointer: LocalPointer::default(),
            last_sent_pointer: None,
            next_object_id: role.peer_id() as u32,
            next_cutout_id: 1,
            decoder: FrameDecoder::new(),
            outbox: Vec::new(),
            stats: PeerStats::default(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn id(&self) -> u8 {
        self.role.peer_id()
    }

    /// Transform from this peer's local tracking space into world.
    pub fn alignment(&self) -> &SimTransform {
        &self.alignment
    }

    pub fn set_alignment(&mut self, local_to_world: SimTransform) {
        self.alignment = local_to_world;
    }

    pub fn meshes(&self) -> &MeshSet {
        &self.meshes
    }

    pub fn objects(&self) -> &BTreeMap<u32, SharedObject> {
        &self.objects
    }

    pub fn object(&self, id: u32) -> Option<&SharedObject> {
        self.objects.get(&id)
    }

    pub fn cutouts(&self) -> &BTreeMap<u16, Cutout> {
        &self.cutouts
    }

    pub fn cutout(&self, id: u16) -> Result<&Cutout, SessionError> {
        self.cutouts.get(&id).ok_or(SessionError::UnknownCutout(id))
    }

    pub fn active_cutout(&self) -> Option<&Cutout> {
        self.cutouts.values().find(|c| c.active)
    }

    pub fn replicas(&self) -> &BTreeMap<u32, TriangleMesh> {
        &self.replicas
    }

    pub fn remote_pointer(&self) -> Option<&PointerDatagram> {
        self.remote_pointer.as_ref()
    }

    pub fn last_sent_pointer(&self) -> Option<&PointerDatagram> {
        self.last_sent_pointer.as_ref()
    }

    pub fn local_pointer(&self) -> &LocalPointer {
        &self.pointer
    }

    pub fn stats(&self) -> &PeerStats {
        &self.stats
    }

    /// Annotations of every owner, ordered by (owner, ordinal).
    pub fn annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.tracks.values().flat_map(|t| t.strokes.values())
    }

    pub fn annotation_count(&self) -> usize {
        self.tracks.values().map(|t| t.strokes.len()).sum()
    }

    /// Drains everything queued for the other peer, in send order.
    pub fn take_outgoing(&mut self) -> Vec<Outgoing> {
        std::mem::take(&mut self.outbox)
    }

    fn require(&self, role: Role, action: &'static str) -> Result<(), SessionError> {
        if self.role == role {
            Ok(())
        } else {
            Err(SessionError::RoleViolation { role: self.role.name(), action })
        }
    }

    // ---- pointer and annotations -------------------------------------

    /// Moves the local pointer ray (local coordinates) and sends a datagram.
    pub fn point(&mut self, origin: Vec3, direction: Vec3) -> Vec<SessionEvent> {
        self.set_ray(origin, direction);
        self.send_pointer()
    }

    fn set_ray(&mut self, origin: Vec3, direction: Vec3) {
        self.pointer.origin = self.alignment.transform_point(&origin);
        let d = self.alignment.rotation * direction;
        if d.norm() > 0.0 {
            self.pointer.direction = d.normalize();
        }
    }

    /// Starts a new annotation under the current ray.
    pub fn begin_stroke(&mut self) -> Vec<SessionEvent> {
        self.pointer.count += 1;
        self.pointer.drawing = true;
        self.send_pointer()
    }

    pub fn end_stroke(&mut self) -> Vec<SessionEvent> {
        self.pointer.drawing = false;
        self.send_pointer()
    }

    /// Deletes this peer's latest annotation.
    pub fn undo_annotation(&mut self) -> Result<Vec<SessionEvent>, SessionError> {
        if self.pointer.count == 0 {
            return Err(SessionError::NoAnnotation);
        }
        self.pointer.count -= 1;
        self.pointer.drawing = false;
        Ok(self.send_pointer())
    }

    /// Emits a datagram describing the current pointer state. The owner
    /// applies its own datagram through the receiver's reconciliation so
    /// both sides derive the same geometry.
    pub fn send_pointer(&mut self) -> Vec<SessionEvent> {
        let datagram = PointerDatagram {
            peer_id: self.id(),
            send_seq: self.pointer.next_seq,
            ray_origin: to_f32(&self.pointer.origin),
            ray_direction: to_f32(&self.pointer.direction),
            drawing: self.pointer.drawing,
            annotation_count: self.pointer.count as u8,
            active_cutout_id: if self.role == Role::Vr { self.active_cutout().map_or(0, |c| c.id) } else { 0 },
        };
        self.pointer.next_seq = self.pointer.next_seq.wrapping_add(1);
        let bytes = encode_pointer(&datagram);
        let decoded = decode_pointer(&bytes).expect("locally encoded datagram decodes");
        self.last_sent_pointer = Some(decoded);
        self.outbox.push(Outgoing::Datagram(bytes));
        self.apply_annotation_bytes(&decoded)
    }

    /// Handles a datagram from the unreliable channel.
    pub fn receive_datagram(&mut self, bytes: &[u8]) -> Vec<SessionEvent> {
        let d = match decode_pointer(bytes) {
            Ok(d) => d,
            Err(e) => {
                self.stats.datagrams_invalid += 1;
                return vec![SessionEvent::PointerDropped { reason: e.to_string() }];
            }
        };
        if d.peer_id == self.id() {
            self.stats.datagrams_invalid += 1;
            return vec![SessionEvent::PointerDropped { reason: "own peer id".into() }];
        }
        if let Some(last) = self.remote_pointer.filter(|last| last.peer_id == d.peer_id) {
            if !seq_is_newer(d.send_seq, last.send_seq) {
                self.stats.datagrams_stale += 1;
                return vec![SessionEvent::PointerDropped { reason: format!("stale seq {}", d.send_seq) }];
            }
        }
        self.stats.datagrams_accepted += 1;
        self.remote_pointer = Some(d);
        let mut events = vec![SessionEvent::PointerAccepted { from: d.peer_id, seq: d.send_seq }];
        self.held.push_back(d);
        if self.held.len() > MAX_HELD_DATAGRAMS {
            // The cutout is overdue; resolve the oldest against the mesh.
            let oldest = self.held.pop_front().expect("queue is non-empty");
            events.extend(self.apply_annotation_bytes(&oldest));
        }
        events.extend(self.release_held());
        events
    }

    /// Applies held datagrams in order. A datagram drawn on a cutout waits
    /// until that cutout exists and is active here, so the copy frame it was
    /// drawn against has arrived too. It stops waiting once a later datagram
    /// shows the sender has moved to another cutout or none.
    fn release_held(&mut self) -> Vec<SessionEvent> {
        let mut events = Vec::new();
        while let Some(d) = self.held.front().copied() {
            let c = d.active_cutout_id;
            let waiting = c != 0
                && match self.cutouts.get(&c) {
                    None => true,
                    Some(cutout) => !cutout.active && self.held.iter().all(|h| h.active_cutout_id == c),
                };
            if waiting {
                break;
            }
            self.held.pop_front();
            events.extend(self.apply_annotation_bytes(&d));
        }
        events
    }

    fn apply_annotation_bytes(&mut self, d: &PointerDatagram) -> Vec<SessionEvent> {
        let resolved = self.resolve_point(d);
        let track = self.tracks.entry(d.peer_id).or_default();
        let (event, changes) = track.apply(d.peer_id, d.annotation_count, d.drawing, || resolved);
        if event == StrokeEvent::Desync {
            self.stats.count_desyncs += 1;
        }
        let mut events = Vec::with_capacity(changes.len() + 1);
        if event != StrokeEvent::NoOp {
            events.push(SessionEvent::Stroke { owner: d.peer_id, event });
        }
        events.extend(changes.into_iter().map(SessionEvent::Annotation));
        events
    }

    /// Re-raycasts a datagram's ray against this peer's geometry: the copy
    /// of the sender's active cutout when this peer knows that cutout, the
    /// world mesh otherwise. A miss leaves a floating point at
    /// the ray origin.
    pub fn resolve_point(&self, d: &PointerDatagram) -> ResolvedPoint {
        let origin = from_f32(d.ray_origin);
        let dir = from_f32(d.ray_direction);
        let mesh_version = self.meshes.version();
        if d.active_cutout_id != 0 {
            if let Some(c) = self.cutouts.get(&d.active_cutout_id) {
                let m = c.copy_to_world();
                let o = m.transform_point(&origin);
                let v = (m.rotation * dir).normalize();
                let attachment = Attachment::CutoutCopy(c.id);
                return match raycast([&c.selection.mesh], &o, &v) {
                    Some(hit) => ResolvedPoint { point: hit.point, attachment, mesh_version },
                    None => ResolvedPoint { point: o, attachment: Attachment::Floating, mesh_version },
                };
            }
        }
        match raycast(&self.meshes, &origin, &dir) {
            Some(hit) => ResolvedPoint { point: hit.point, attachment: Attachment::MeshSurface, mesh_version },
            None => ResolvedPoint { point: origin, attachment: Attachment::Floating, mesh_version },
        }
    }

    // ---- reliable messages ----------------------------------------------

    /// Encodes, applies locally from the decoded bytes, then queues.
    fn commit(&mut self, message: ReliableMessage) -> Result<Vec<SessionEvent>, SessionError> {
        let bytes = encode_reliable(&Envelope { sender: self.id(), message });
        let (env, _) = decode_reliable(&bytes)?;
        let events = self.apply_envelope(&env)?;
        self.outbox.push(Outgoing::Frame(bytes));
        Ok(events)
    }

    /// Handles bytes from the reliable stream; frames may be split or
    /// coalesced arbitrarily.
    pub fn receive_stream(&mut self, bytes: &[u8]) -> Vec<SessionEvent> {
        self.decoder.feed(bytes);
        let mut events = Vec::new();
        loop {
            match self.decoder.poll() {
                Ok(None) => break,
                Ok(Some(env)) => events.extend(self.receive_envelope(env)),
                Err(e) => {
                    self.stats.frames_invalid += 1;
                    events.push(SessionEvent::FrameDropped { reason: e.to_string() });
                }
            }
        }
        events
    }

    fn receive_envelope(&mut self, env: Envelope) -> Vec<SessionEvent> {
        let name = env.message.name();
        if env.sender == self.id() {
            self.stats.frames_invalid += 1;
            return vec![SessionEvent::FrameDropped { reason: "own peer id".into() }];
        }
        match self.apply_envelope(&env) {
            Ok(events) => {
                if self.role == Role::Ar {
                    self.echo(&env.message);
                }
                events
            }
            Err(e) => {
                match e {
                    SessionError::StaleSeq { .. } => self.stats.updates_stale += 1,
                    SessionError::GrabConflict { .. } => self.stats.updates_conflicted += 1,
                    _ => self.stats.updates_rejected += 1,
                }
                vec![SessionEvent::Rejected { message: name, sender: env.sender, reason: e.to_string() }]
            }
        }
    }

    /// Queues a message from this peer without applying it locally.
    fn send_only(&mut self, message: ReliableMessage) {
        let bytes = encode_reliable(&Envelope { sender: self.id(), message });
        self.outbox.push(Outgoing::Frame(bytes));
    }

    fn lock_state(&self, object_id: u32) -> ReliableMessage {
        match self.objects[&object_id].grabbed_by {
            Some(peer_id) => ReliableMessage::ObjectGrab { object_id, peer_id },
            None => ReliableMessage::ObjectRelease { object_id, peer_id: self.id() },
        }
    }

    /// Answers an accepted VR object request: updates and despawns are sent
    /// back as they are, lock changes as the resulting lock state.
    fn echo(&mut self, message: &ReliableMessage) {
        let reply = match message {
            ReliableMessage::ObjectTransform { .. }
            | ReliableMessage::ObjectPropertyEdit { .. }
            | ReliableMessage::ObjectDespawn { .. } => message.clone(),
            ReliableMessage::ObjectGrab { object_id, .. } | ReliableMessage::ObjectRelease { object_id, .. } => {
                self.lock_state(*object_id)
            }
            _ => return,
        };
        self.stats.echoes_sent += 1;
        self.send_only(reply);
    }

    fn apply_envelope(&mut self, env: &Envelope) -> Result<Vec<SessionEvent>, SessionError> {
        let sender = env.sender;
        let authoritative = self.role == Role::Vr && sender == AR_PEER;
        match &env.message {
            ReliableMessage::MeshChunkUpsert(_) | ReliableMessage::MeshChunkRemove { .. } if sender != AR_PEER => {
                return Err(SessionError::RoleViolation { role: Role::Vr.name(), action: "publish meshes" });
            }
            ReliableMessage::CutoutTransform { .. }
            | ReliableMessage::CutoutActivate { .. }
            | ReliableMessage::CutoutDeactivate { .. }
                if sender != VR_PEER =>
            {
                return Err(SessionError::RoleViolation { role: Role::Ar.name(), action: "manipulate cutouts" });
            }
            _ => {}
        }
        match &env.message {
            ReliableMessage::MeshChunkUpsert(wire) => {
                self.meshes.upsert(wire.to_mesh()?);
            }
            ReliableMessage::MeshChunkRemove { chunk_id } => {
                self.meshes.remove(*chunk_id);
            }
            ReliableMessage::ObjectSpawn { object_id, kind, transform, properties } => {
                if self.objects.contains_key(object_id) {
                    return Err(SessionError::DuplicateObject(*object_id));
                }
                if object_id % 2 != sender as u32 % 2 {
                    return Err(SessionError::ForeignObjectId { object_id: *object_id, peer: sender });
                }
                let transform = transform.to_transform()?;
                self.objects.insert(
                    *object_id,
                    SharedObject {
                        id: *object_id,
                        kind: *kind,
                        transform,
                        properties: *properties,
                        seq: 0,
                        last_writer: sender,
                        grabbed_by: None,
                    },
                );
            }
            ReliableMessage::ObjectTransform { object_id, object_seq, transform } => {
                let t = transform.to_transform()?;
                let o = self.objects.get_mut(object_id).ok_or(SessionError::UnknownObject(*object_id))?;
                if !authoritative {
                    o.check_update(sender, *object_seq)?;
                }
                o.transform = t;
                o.seq = *object_seq;
                o.last_writer = sender;
            }
            ReliableMessage::ObjectPropertyEdit { object_id, object_seq, properties } => {
                let o = self.objects.get_mut(object_id).ok_or(SessionError::UnknownObject(*object_id))?;
                if !authoritative {
                    o.check_update(sender, *object_seq)?;
                }
                o.properties = *properties;
                o.seq = *object_seq;
                o.last_writer = sender;
            }
            ReliableMessage::ObjectGrab { object_id, peer_id } => {
                let o = self.objects.get_mut(object_id).ok_or(SessionError::UnknownObject(*object_id))?;
                if authoritative {
                    o.grabbed_by = Some(*peer_id);
                } else {
                    o.grab(*peer_id);
                }
            }
            ReliableMessage::ObjectRelease { object_id, peer_id } => {
                let o = self.objects.get_mut(object_id).ok_or(SessionError::UnknownObject(*object_id))?;
                if authoritative {
                    o.grabbed_by = None;
                } else {
                    o.release(*peer_id);
                }
            }
            ReliableMessage::ObjectDespawn { object_id } => {
                let o = self.objects.get(object_id).ok_or(SessionError::UnknownObject(*object_id))?;
                if let Some(holder) = o.grabbed_by.filter(|&h| h != sender && !authoritative) {
                    return Err(SessionError::GrabConflict { object_id: *object_id, holder });
                }
                self.objects.remove(object_id);
            }
            ReliableMessage::CutoutCreate { cutout_id, apex, points, source_frame } => {
                if sender != VR_PEER {
                    return Err(SessionError::RoleViolation { role: Role::Ar.name(), action: "create cutouts" });
                }
                let source_frame = source_frame.to_transform()?;
                let apex = from_f32(*apex);
                let points = points.map(from_f32);
                let selection = match select_region(&self.meshes, apex, points) {
                    Ok((selection, _)) => selection,
                    Err(e) if sender == self.id() => return Err(e.into()),
                    // A receiver whose mesh differs keeps the cutout so later
                    // transforms and activations still apply.
                    Err(_) => Selection { mesh: TriangleMesh::empty(0), sources: Vec::new() },
                };
                self.cutouts.insert(
                    *cutout_id,
                    Cutout {
                        id: *cutout_id,
                        apex,
                        points,
                        selection,
                        source_frame,
                        copy_frame: source_frame,
                        active: false,
                    },
                );
            }
            ReliableMessage::CutoutTransform { cutout_id, copy_frame } => {
                let frame = copy_frame.to_transform()?;
                self.cutouts.get_mut(cutout_id).ok_or(SessionError::UnknownCutout(*cutout_id))?.copy_frame = frame;
            }
            ReliableMessage::CutoutActivate { cutout_id } => {
                if !self.cutouts.contains_key(cutout_id) {
                    return Err(SessionError::UnknownCutout(*cutout_id));
                }
                for c in self.cutouts.values_mut() {
                    c.active = c.id == *cutout_id;
                }
            }
            ReliableMessage::CutoutDeactivate { cutout_id } => {
                self.cutouts.get_mut(cutout_id).ok_or(SessionError::UnknownCutout(*cutout_id))?.active = false;
            }
            ReliableMessage::ReplicaMeshAnnounce { replica_id, obj } => {
                let doc = parse_obj(obj)?;
                self.replicas.insert(*replica_id, TriangleMesh::from_obj(*replica_id, &doc)?);
            }
        }
        self.stats.frames_applied += 1;
        let mut events = vec![SessionEvent::Applied { message: env.message.name(), sender }];
        if matches!(env.message, ReliableMessage::CutoutCreate { .. } | ReliableMessage::CutoutActivate { .. }) {
            events.extend(self.release_held());
        }
        Ok(events)
    }

    // ---- mesh streaming (AR) -----------------------------------------------

    /// Streams a mesh chunk given in this peer's local space.
    pub fn publish_mesh(&mut self, local_mesh: &TriangleMesh) -> Result<Vec<SessionEvent>, SessionError> {
        self.require(Role::Ar, "stream spatial meshes")?;
        let world = local_mesh.transformed(&self.alignment);
        self.commit(ReliableMessage::MeshChunkUpsert(WireMesh::from_mesh(&world)))
    }

    pub fn remove_mesh(&mut self, chunk_id: u32) -> Result<Vec<SessionEvent>, SessionError> {
        self.require(Role::Ar, "stream spatial meshes")?;
        self.commit(ReliableMessage::MeshChunkRemove { chunk_id })
    }

    // ---- shared objects ---------------------------------------------------

    /// Spawns an object at a local-space pose and returns its id. AR ids
    /// are even and VR ids odd.
    pub fn spawn_object(
        &mut self,
        kind: ObjectKind,
        local_pose: &SimTransform,
        properties: ObjectProperties,
    ) -> Result<u32, SessionError> {
        while self.objects.contains_key(&self.next_object_id) {
            self.next_object_id += 2;
        }
        let object_id = self.next_object_id;
        self.next_object_id += 2;
        let world = self.alignment.compose(local_pose);
        self.commit(ReliableMessage::ObjectSpawn {
            object_id,
            kind,
            transform: WireTransform::from_transform(&world),
            properties,
        })?;
        Ok(object_id)
    }

    fn writable(&self, object_id: u32) -> Result<&SharedObject, SessionError> {
        let o = self.objects.get(&object_id).ok_or(SessionError::UnknownObject(object_id))?;
        if let Some(holder) = o.grabbed_by.filter(|&h| h != self.id()) {
            return Err(SessionError::GrabConflict { object_id, holder });
        }
        Ok(o)
    }

    /// Object updates are applied by the AR peer at once and sent on. The VR
    /// peer only sends a request; its view changes when the AR peer's answer
    /// arrives.
    fn submit(&mut self, message: ReliableMessage) -> Result<Vec<SessionEvent>, SessionError> {
        if self.role == Role::Ar {
            return self.commit(message);
        }
        if let ReliableMessage::ObjectTransform { object_id, object_seq, .. }
        | ReliableMessage::ObjectPropertyEdit { object_id, object_seq, .. } = message
        {
            self.requested_seq.insert(object_id, object_seq);
        }
        self.send_only(message);
        Ok(Vec::new())
    }

    /// Sequence number for this peer's next update of an object, above both
    /// the accepted state and any request still in flight.
    fn next_seq(&self, object_id: u32) -> Result<u32, SessionError> {
        let current = self.writable(object_id)?.seq;
        Ok(current.max(self.requested_seq.get(&object_id).copied().unwrap_or(0)) + 1)
    }

    pub fn grab(&mut self, object_id: u32) -> Result<Vec<SessionEvent>, SessionError> {
        self.writable(object_id)?;
        self.submit(ReliableMessage::ObjectGrab { object_id, peer_id: self.id() })
    }

    /// Releases this peer's lock. On the AR peer, releasing a lock it does
    /// not hold is a no-op.
    pub fn release(&mut self, object_id: u32) -> Result<Vec<SessionEvent>, SessionError> {
        let o = self.objects.get(&object_id).ok_or(SessionError::UnknownObject(object_id))?;
        if self.role == Role::Ar && o.grabbed_by != Some(self.id()) {
            return Ok(Vec::new());
        }
        self.submit(ReliableMessage::ObjectRelease { object_id, peer_id: self.id() })
    }

    /// Moves an object to a pose given in this peer's local space.
    pub fn move_object(&mut self, object_id: u32, local_pose: &SimTransform) -> Result<Vec<SessionEvent>, SessionError> {
        let world = self.alignment.compose(local_pose);
        self.move_object_world(object_id, &world)
    }

    fn move_object_world(&mut self, object_id: u32, world: &SimTransform) -> Result<Vec<SessionEvent>, SessionError> {
        if !(world.scale > 0.0) || !world.translation.iter().all(|v| v.is_finite()) {
            return Err(SessionError::InvalidTransform(format!("{world:?}")));
        }
        let seq = self.next_seq(object_id)?;
        self.submit(ReliableMessage::ObjectTransform {
            object_id,
            object_seq: seq,
            transform: WireTransform::from_transform(world),
        })
    }

    /// Moves an object by placing its copy inside a cutout. Only world
    /// state is sent; the original lands at `F_src ∘ F_copy⁻¹ ∘ pose`.
    pub fn move_object_in_cutout(
        &mut self,
        object_id: u32,
        cutout_id: u16,
        pose_in_copy: &SimTransform,
    ) -> Result<Vec<SessionEvent>, SessionError> {
        self.require(Role::Vr, "manipulate cutout copies")?;
        let world = self.map_cutout_to_world(cutout_id, pose_in_copy)?;
        self.move_object_world(object_id, &world)
    }

    pub fn edit_object(&mut self, object_id: u32, properties: ObjectProperties) -> Result<Vec<SessionEvent>, SessionError> {
        let seq = self.next_seq(object_id)?;
        self.submit(ReliableMessage::ObjectPropertyEdit { object_id, object_seq: seq, properties })
    }

    pub fn despawn(&mut self, object_id: u32) -> Result<Vec<SessionEvent>, SessionError> {
        self.writable(object_id)?;
        self.submit(ReliableMessage::ObjectDespawn { object_id })
    }

    /// Announces a replica mesh (colored OBJ bytes) so it can be spawned as
    /// [`ObjectKind::Replica`].
    pub fn announce_replica(&mut self, replica_id: u32, obj: Vec<u8>) -> Result<Vec<SessionEvent>, SessionError> {
        self.commit(ReliableMessage::ReplicaMeshAnnounce { replica_id, obj })
    }

    // ---- cutouts ------------------------------------------------------------

    /// Selects the mesh region seen through four points from `apex` (world
    /// coordinates) and broadcasts the new cutout. Returns its id.
    pub fn create_cutout(&mut self, apex: Vec3, points: [Vec3; 4]) -> Result<u16, SessionError> {
        self.require(Role::Vr, "create cutouts")?;
        let apex = to_f32(&apex);
        let points = points.map(|p| to_f32(&p));
        let (_, source_frame) = select_region(&self.meshes, from_f32(apex), points.map(from_f32))?;
        let cutout_id = self.next_cutout_id;
        self.next_cutout_id = self.next_cutout_id.checked_add(1).unwrap_or(1);
        self.commit(ReliableMessage::CutoutCreate {
            cutout_id,
            apex,
            points,
            source_frame: WireTransform::from_transform(&source_frame),
        })?;
        Ok(cutout_id)
    }

    pub fn transform_cutout(&mut self, cutout_id: u16, copy_frame: &SimTransform) -> Result<Vec<SessionEvent>, SessionError> {
        self.require(Role::Vr, "transform cutouts")?;
        self.cutout(cutout_id)?;
        if !(copy_frame.scale > 0.0) {
            return Err(SessionError::InvalidTransform("copy scale must be positive".into()));
        }
        self.commit(ReliableMessage::CutoutTransform { cutout_id, copy_frame: WireTransform::from_transform(copy_frame) })
    }

    pub fn activate_cutout(&mut self, cutout_id: u16) -> Result<Vec<SessionEvent>, SessionError> {
        self.require(Role::Vr, "activate cutouts")?;
        self.cutout(cutout_id)?;
        self.commit(ReliableMessage::CutoutActivate { cutout_id })
    }

    pub fn deactivate_cutout(&mut self, cutout_id: u16) -> Result<Vec<SessionEvent>, SessionError> {
        self.require(Role::Vr, "deactivate cutouts")?;
        self.cutout(cutout_id)?;
        self.commit(ReliableMessage::CutoutDeactivate { cutout_id })
    }

    pub fn map_cutout_to_world(&self, cutout_id: u16, pose_in_copy: &SimTransform) -> Result<SimTransform, SessionError> {
        Ok(self.cutout(cutout_id)?.map_to_world(pose_in_copy))
    }

    pub fn map_world_to_cutout(&self, cutout_id: u16, world_pose: &SimTransform) -> Result<SimTransform, SessionError> {
        Ok(self.cutout(cutout_id)?.map_to_copy(world_pose))
    }

    /// Pose of an object's copy inside a cutout, derived from its world pose.
    pub fn copy_pose(&self, object_id: u32, cutout_id: u16) -> Result<SimTransform, SessionError> {
        let o = self.objects.get(&object_id).ok_or(SessionError::UnknownObject(object_id))?;
        self.map_world_to_cutout(cutout_id, &o.transform)
    }

    /// Where the VR user's avatar is shown, in world coordinates, given the
    /// VR head pose in world. Without an active cutout the avatar sits at
    /// the camera and only turns its head; with one it is carried from the
    /// copy onto the original region, at unit display scale.
    pub fn avatar_pose(&self, vr_head: &SimTransform) -> SimTransform {
        match self.active_cutout() {
            Some(c) => SimTransform { scale: 1.0, ..c.map_to_world(vr_head) },
            None => SimTransform::rigid(vr_head.rotation, Vec3::zeros()),
        }
    }
}
