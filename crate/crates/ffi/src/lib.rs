//! C ABI for `nexus-core`.
//!
//! Every fallible function returns a [`NexusStatus`]. On failure the
//! message is available from [`nexus_last_error`] on the same thread until
//! the next failing call. Meshes and peers are opaque handles created by a
//! `*_new`/`*_from_*` function and released with the matching `*_free`.
//! Byte results are returned in a [`NexusBuffer`] that the caller releases
//! with [`nexus_buffer_free`]. Panics never cross the boundary; they are
//! reported as [`NexusStatus::Panic`].

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr, CString};
use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nexus_core::geometry::{FisheyeModel, Vec3};
use nexus_core::mesh::{parse_obj, select_triangles, write_obj, SelectionFrustum, TriangleMesh};
use nexus_core::protocol::{decode_pointer, encode_pointer, PointerDatagram, POINTER_FRAME_LEN};
use nexus_core::replica::{run_pipeline, PipelineConfig, StageSet};
use nexus_core::session::dump::canonical_json;
use nexus_core::session::{Outgoing, Peer, Role, SessionEvent};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NexusStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Decode = 3,
    Session = 4,
    Pipeline = 5,
    /// Nothing to return, such as an empty outgoing queue.
    Empty = 6,
    Panic = 7,
}

/// Size of an encoded pointer datagram.
pub const NEXUS_POINTER_FRAME_LEN: usize = 32;
const _: () = assert!(NEXUS_POINTER_FRAME_LEN == POINTER_FRAME_LEN);
pub const NEXUS_ROLE_AR: u8 = 0;
pub const NEXUS_ROLE_VR: u8 = 1;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (NexusStatus, String);

fn fail(status: NexusStatus, e: impl Display) -> Failure {
    (status, e.to_string())
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NexusStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NexusStatus::Ok,
        Ok(Err((status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            NexusStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(NexusStatus::NullPointer, format!("{name} is NULL")))
}

unsafe fn non_null_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(NexusStatus::NullPointer, format!("{name} is NULL")))
}

unsafe fn bytes<'a>(data: *const u8, len: usize, name: &str) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(non_null(data, name)?, len))
}

unsafe fn vec3(p: *const f64, name: &str) -> Result<Vec3, Failure> {
    let v = Vec3::from_column_slice(std::slice::from_raw_parts(non_null(p, name)?, 3));
    if !v.iter().all(|c| c.is_finite()) {
        return Err(fail(NexusStatus::InvalidArgument, format!("{name} is not finite")));
    }
    Ok(v)
}

/// Message describing the last failure on this thread, or NULL if none.
/// The string stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn nexus_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nexus_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- buffers ---------------------------------------------------------------

/// Bytes owned by the library.
#[repr(C)]
#[derive(Debug)]
pub struct NexusBuffer {
    pub data: *mut u8,
    pub len: usize,
}

impl NexusBuffer {
    fn from_vec(v: Vec<u8>) -> Self {
        let boxed = v.into_boxed_slice();
        let len = boxed.len();
        Self { data: Box::into_raw(boxed).cast(), len }
    }
}

unsafe fn fill(out: *mut NexusBuffer, v: Vec<u8>) -> Result<(), Failure> {
    let out = non_null_mut(out, "out")?;
    *out = NexusBuffer::from_vec(v);
    Ok(())
}

/// Releases a buffer's bytes and resets it to empty. Safe to call on an
/// already empty buffer.
///
/// # Safety
/// `buffer` is NULL or points to a buffer filled by this library.
#[no_mangle]
pub unsafe extern "C" fn nexus_buffer_free(buffer: *mut NexusBuffer) {
    let Some(b) = buffer.as_mut() else { return };
    if !b.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
    }
    b.data = ptr::null_mut();
    b.len = 0;
}

// ---- pointer datagrams -------------------------------------------------------

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NexusPointerDatagram {
    pub peer_id: u8,
    pub send_seq: u16,
    pub ray_origin: [f32; 3],
    pub ray_direction: [f32; 3],
    pub drawing: bool,
    pub annotation_count: u8,
    /// 0 when no cutout is active.
    pub active_cutout_id: u16,
}

impl From<PointerDatagram> for NexusPointerDatagram {
    fn from(d: PointerDatagram) -> Self {
        Self {
            peer_id: d.peer_id,
            send_seq: d.send_seq,
            ray_origin: d.ray_origin,
            ray_direction: d.ray_direction,
            drawing: d.drawing,
            annotation_count: d.annotation_count,
            active_cutout_id: d.active_cutout_id,
        }
    }
}

impl From<NexusPointerDatagram> for PointerDatagram {
    fn from(d: NexusPointerDatagram) -> Self {
        Self {
            peer_id: d.peer_id,
            send_seq: d.send_seq,
            ray_origin: d.ray_origin,
            ray_direction: d.ray_direction,
            drawing: d.drawing,
            annotation_count: d.annotation_count,
            active_cutout_id: d.active_cutout_id,
        }
    }
}

/// Encodes a datagram into `out`, which must hold
/// `NEXUS_POINTER_FRAME_LEN` bytes.
///
/// # Safety
/// `datagram` is NULL or valid; `out` is NULL or writable for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn nexus_pointer_encode(datagram: *const NexusPointerDatagram, out: *mut u8) -> NexusStatus {
    guard(|| {
        let d = PointerDatagram::from(*non_null(datagram, "datagram")?);
        let encoded = encode_pointer(&d);
        decode_pointer(&encoded).map_err(|e| fail(NexusStatus::InvalidArgument, e))?;
        let out = non_null_mut(out, "out")?;
        ptr::copy_nonoverlapping(encoded.as_ptr(), out, POINTER_FRAME_LEN);
        Ok(())
    })
}

/// Decodes and validates a datagram.
///
/// # Safety
/// `data` is readable for `len` bytes; `out` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn nexus_pointer_decode(data: *const u8, len: usize, out: *mut NexusPointerDatagram) -> NexusStatus {
    guard(|| {
        let d = decode_pointer(bytes(data, len, "data")?).map_err(|e| fail(NexusStatus::Decode, e))?;
        *non_null_mut(out, "out")? = d.into();
        Ok(())
    })
}

// ---- fisheye -----------------------------------------------------------------

fn fisheye(image_size: u32) -> Result<FisheyeModel, Failure> {
    if image_size == 0 {
        return Err(fail(NexusStatus::InvalidArgument, "image size must be positive"));
    }
    Ok(FisheyeModel::dual_hemisphere(image_size))
}

/// Projects a camera-frame direction into the dual-hemisphere fisheye
/// frame of side `image_size`.
///
/// # Safety
/// `direction` points to 3 doubles; the outputs are NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn nexus_fisheye_project(
    image_size: u32,
    direction: *const f64,
    lens: *mut u32,
    u: *mut f64,
    v: *mut f64,
) -> NexusStatus {
    guard(|| {
        let model = fisheye(image_size)?;
        let dir = vec3(direction, "direction")?;
        if dir.norm() == 0.0 {
            return Err(fail(NexusStatus::InvalidArgument, "direction is zero"));
        }
        let sample = model.project(&dir.normalize());
        *non_null_mut(lens, "lens")? = sample.lens as u32;
        *non_null_mut(u, "u")? = sample.u;
        *non_null_mut(v, "v")? = sample.v;
        Ok(())
    })
}

/// Unit direction seen by `lens` (0 or 1) at pixel `(u, v)`.
///
/// # Safety
/// `direction_out` is NULL or writable for 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn nexus_fisheye_unproject(
    image_size: u32,
    lens: u32,
    u: f64,
    v: f64,
    direction_out: *mut f64,
) -> NexusStatus {
    guard(|| {
        let model = fisheye(image_size)?;
        if lens > 1 {
            return Err(fail(NexusStatus::InvalidArgument, format!("lens {lens} is not 0 or 1")));
        }
        let dir = model.unproject(lens as usize, u, v).map_err(|e| fail(NexusStatus::InvalidArgument, e))?;
        let out = std::slice::from_raw_parts_mut(non_null_mut(direction_out, "direction_out")?, 3);
        out.copy_from_slice(dir.as_slice());
        Ok(())
    })
}

// ---- meshes ------------------------------------------------------------------

/// A triangle mesh with optional per-vertex colors.
pub struct NexusMesh {
    mesh: TriangleMesh,
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    *non_null_mut(out, "out")? = Box::into_raw(Box::new(value));
    Ok(())
}

/// Parses colored OBJ text into a new mesh.
///
/// # Safety
/// `data` is readable for `len` bytes; `out` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn nexus_mesh_from_obj(data: *const u8, len: usize, out: *mut *mut NexusMesh) -> NexusStatus {
    guard(|| {
        let doc = parse_obj(bytes(data, len, "data")?).map_err(|e| fail(NexusStatus::Decode, e))?;
        let mesh = TriangleMesh::from_obj(0, &doc).map_err(|e| fail(NexusStatus::Decode, e))?;
        put_handle(out, NexusMesh { mesh })
    })
}

/// Writes a mesh as colored OBJ text.
///
/// # Safety
/// `mesh` is NULL or a live handle; `out` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn nexus_mesh_to_obj(mesh: *const NexusMesh, out: *mut NexusBuffer) -> NexusStatus {
    guard(|| {
        let m = non_null(mesh, "mesh")?;
        fill(out, write_obj(&m.mesh.to_obj()))
    })
}

/// Number of vertices, or 0 for NULL.
///
/// # Safety
/// `mesh` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nexus_mesh_vertex_count(mesh: *const NexusMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.vertices().len())
}

/// Number of triangles, or 0 for NULL.
///
/// # Safety
/// `mesh` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nexus_mesh_triangle_count(mesh: *const NexusMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.triangles().len())
}

/// Selects the triangles seen from `apex` through the quadrilateral
/// `points` (4 points, 12 doubles) into a new mesh.
///
/// # Safety
/// `mesh` is a live handle; `apex` points to 3 doubles and `points` to 12;
/// `out` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn nexus_mesh_cutout(
    mesh: *const NexusMesh,
    apex: *const f64,
    points: *const f64,
    out: *mut *mut NexusMesh,
) -> NexusStatus {
    guard(|| {
        let m = non_null(mesh, "mesh")?;
        let apex = vec3(apex, "apex")?;
        let points = non_null(points, "points")? as *const f64;
        let mut quad = [Vec3::zeros(); 4];
        for (i, q) in quad.iter_mut().enumerate() {
            *q = vec3(points.add(3 * i), "points")?;
        }
        let frustum = SelectionFrustum::build(apex, quad).map_err(|e| fail(NexusStatus::InvalidArgument, e))?;
        let selection = select_triangles([&m.mesh], &frustum).map_err(|e| fail(NexusStatus::InvalidArgument, e))?;
        put_handle(out, NexusMesh { mesh: selection.mesh })
    })
}

/// # Safety
/// `mesh` is NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nexus_mesh_free(mesh: *mut NexusMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

// ---- session peers -----------------------------------------------------------

/// Kind of bytes returned by [`nexus_peer_next_outgoing`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NexusOutgoingKind {
    /// A pointer datagram for the unreliable channel.
    Datagram = 0,
    /// A framed message for the reliable stream.
    Frame = 1,
}

/// One collaborator's replicated session state.
pub struct NexusPeer {
    peer: Peer,
    queue: VecDeque<Outgoing>,
}

impl NexusPeer {
    fn collect(&mut self) {
        self.queue.extend(self.peer.take_outgoing());
    }
}

unsafe fn peer_mut<'a>(peer: *mut NexusPeer) -> Result<&'a mut NexusPeer, Failure> {
    non_null_mut(peer, "peer")
}

fn session_failure(e: impl Display) -> Failure {
    fail(NexusStatus::Session, e)
}

/// Creates a peer for `NEXUS_ROLE_AR` or `NEXUS_ROLE_VR`.
///
/// # Safety
/// `out` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_new(role: u8, out: *mut *mut NexusPeer) -> NexusStatus {
    guard(|| {
        let role = match role {
            NEXUS_ROLE_AR => Role::Ar,
            NEXUS_ROLE_VR => Role::Vr,
            other => return Err(fail(NexusStatus::InvalidArgument, format!("unknown role {other}"))),
        };
        put_handle(out, NexusPeer { peer: Peer::new(role), queue: VecDeque::new() })
    })
}

/// # Safety
/// `peer` is NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_free(peer: *mut NexusPeer) {
    if !peer.is_null() {
        drop(Box::from_raw(peer));
    }
}

/// Moves the local pointer ray and queues a datagram.
///
/// # Safety
/// `peer` is a live handle; `origin` and `direction` point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_point(peer: *mut NexusPeer, origin: *const f64, direction: *const f64) -> NexusStatus {
    guard(|| {
        let p = peer_mut(peer)?;
        let (o, d) = (vec3(origin, "origin")?, vec3(direction, "direction")?);
        if d.norm() == 0.0 {
            return Err(fail(NexusStatus::InvalidArgument, "direction is zero"));
        }
        p.peer.point(o, d);
        p.collect();
        Ok(())
    })
}

/// Starts a new annotation under the current ray.
///
/// # Safety
/// `peer` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_begin_stroke(peer: *mut NexusPeer) -> NexusStatus {
    guard(|| {
        let p = peer_mut(peer)?;
        p.peer.begin_stroke();
        p.collect();
        Ok(())
    })
}

/// # Safety
/// `peer` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_end_stroke(peer: *mut NexusPeer) -> NexusStatus {
    guard(|| {
        let p = peer_mut(peer)?;
        p.peer.end_stroke();
        p.collect();
        Ok(())
    })
}

/// Deletes this peer's latest annotation.
///
/// # Safety
/// `peer` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_undo(peer: *mut NexusPeer) -> NexusStatus {
    guard(|| {
        let p = peer_mut(peer)?;
        p.peer.undo_annotation().map_err(session_failure)?;
        p.collect();
        Ok(())
    })
}

/// Streams a mesh chunk given in the peer's local space (AR peers only).
///
/// # Safety
/// `peer` and `mesh` are NULL or live handles.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_publish_mesh(peer: *mut NexusPeer, mesh: *const NexusMesh) -> NexusStatus {
    guard(|| {
        let p = peer_mut(peer)?;
        let m = non_null(mesh, "mesh")?;
        p.peer.publish_mesh(&m.mesh).map_err(session_failure)?;
        p.collect();
        Ok(())
    })
}

/// Pops the oldest bytes the peer wants delivered to the other peer.
/// Returns `NEXUS_STATUS_EMPTY` when nothing is queued.
///
/// # Safety
/// `peer` is a live handle; `kind` and `out` are NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_next_outgoing(
    peer: *mut NexusPeer,
    kind: *mut NexusOutgoingKind,
    out: *mut NexusBuffer,
) -> NexusStatus {
    guard(|| {
        let p = peer_mut(peer)?;
        let kind = non_null_mut(kind, "kind")?;
        non_null_mut(out, "out")?;
        let Some(next) = p.queue.pop_front() else {
            return Err(fail(NexusStatus::Empty, "no outgoing bytes"));
        };
        let bytes = match next {
            Outgoing::Datagram(b) => {
                *kind = NexusOutgoingKind::Datagram;
                b.to_vec()
            }
            Outgoing::Frame(b) => {
                *kind = NexusOutgoingKind::Frame;
                b
            }
        };
        fill(out, bytes)
    })
}

/// Hands a datagram from the other peer to this one. Stale datagrams are
/// ignored without error.
///
/// # Safety
/// `peer` is a live handle; `data` is readable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_receive_datagram(peer: *mut NexusPeer, data: *const u8, len: usize) -> NexusStatus {
    guard(|| {
        let p = peer_mut(peer)?;
        let data = bytes(data, len, "data")?;
        decode_pointer(data).map_err(|e| fail(NexusStatus::Decode, e))?;
        p.peer.receive_datagram(data);
        p.collect();
        Ok(())
    })
}

/// Hands reliable stream bytes to this peer. Frames may be split or
/// coalesced arbitrarily. Messages the session rejects are not errors;
/// malformed frames are.
///
/// # Safety
/// `peer` is a live handle; `data` is readable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_receive_stream(peer: *mut NexusPeer, data: *const u8, len: usize) -> NexusStatus {
    guard(|| {
        let p = peer_mut(peer)?;
        let events = p.peer.receive_stream(bytes(data, len, "data")?);
        p.collect();
        match events.into_iter().find_map(|e| match e {
            SessionEvent::FrameDropped { reason } => Some(reason),
            _ => None,
        }) {
            Some(reason) => Err(fail(NexusStatus::Decode, reason)),
            None => Ok(()),
        }
    })
}

/// Number of annotations this peer knows of, or 0 for NULL.
///
/// # Safety
/// `peer` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_annotation_count(peer: *const NexusPeer) -> usize {
    peer.as_ref().map_or(0, |p| p.peer.annotation_count())
}

/// Canonical JSON dump of the peer's shared and local state.
///
/// # Safety
/// `peer` is a live handle; `out` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn nexus_peer_state_json(peer: *const NexusPeer, out: *mut NexusBuffer) -> NexusStatus {
    guard(|| {
        let p = non_null(peer, "peer")?;
        fill(out, canonical_json(&p.peer.dump()).into_bytes())
    })
}

// ---- replica pipeline ----------------------------------------------------------

/// Reconstructs a colored mesh from a capture directory with the default
/// stages and returns it as OBJ text.
///
/// # Safety
/// `capture_dir` is a NUL-terminated UTF-8 path; `out` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn nexus_replica_run(capture_dir: *const c_char, voxel_mm: f64, out: *mut NexusBuffer) -> NexusStatus {
    guard(|| {
        let dir = CStr::from_ptr(non_null(capture_dir, "capture_dir")?)
            .to_str()
            .map_err(|e| fail(NexusStatus::InvalidArgument, e))?;
        if !(voxel_mm > 0.0) || !voxel_mm.is_finite() {
            return Err(fail(NexusStatus::InvalidArgument, format!("voxel size {voxel_mm} mm")));
        }
        non_null_mut(out, "out")?;
        let config = PipelineConfig { voxel_size: voxel_mm / 1000.0, ..PipelineConfig::default() };
        let output = run_pipeline(Path::new(dir), &StageSet::default(), &config).map_err(|e| fail(NexusStatus::Pipeline, e))?;
        fill(out, output.obj)
    })
}
