#ifndef NEXUS_H
#define NEXUS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Size of an encoded pointer datagram.
 */
#define NEXUS_POINTER_FRAME_LEN 32

#define NEXUS_ROLE_AR 0

#define NEXUS_ROLE_VR 1

typedef enum NexusStatus {
  NEXUS_STATUS_OK = 0,
  NEXUS_STATUS_NULL_POINTER = 1,
  NEXUS_STATUS_INVALID_ARGUMENT = 2,
  NEXUS_STATUS_DECODE = 3,
  NEXUS_STATUS_SESSION = 4,
  NEXUS_STATUS_PIPELINE = 5,
  /**
   * Nothing to return, such as an empty outgoing queue.
   */
  NEXUS_STATUS_EMPTY = 6,
  NEXUS_STATUS_PANIC = 7,
} NexusStatus;

/**
 * Kind of bytes returned by [`nexus_peer_next_outgoing`].
 */
typedef enum NexusOutgoingKind {
  /**
   * A pointer datagram for the unreliable channel.
   */
  NEXUS_OUTGOING_KIND_DATAGRAM = 0,
  /**
   * A framed message for the reliable stream.
   */
  NEXUS_OUTGOING_KIND_FRAME = 1,
} NexusOutgoingKind;

/**
 * A triangle mesh with optional per-vertex colors.
 */
typedef struct NexusMesh NexusMesh;

/**
 * One collaborator's replicated session state.
 */
typedef struct NexusPeer NexusPeer;

/**
 * Bytes owned by the library.
 */
typedef struct NexusBuffer {
  uint8_t *data;
  size_t len;
} NexusBuffer;

typedef struct NexusPointerDatagram {
  uint8_t peer_id;
  uint16_t send_seq;
  float ray_origin[3];
  float ray_direction[3];
  bool drawing;
  uint8_t annotation_count;
  /**
   * 0 when no cutout is active.
   */
  uint16_t active_cutout_id;
} NexusPointerDatagram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or NULL if none.
 * The string stays valid until the next failing call on this thread.
 */
const char *nexus_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nexus_version(void);

/**
 * Releases a buffer's bytes and resets it to empty. Safe to call on an
 * already empty buffer.
 *
 * # Safety
 * `buffer` is NULL or points to a buffer filled by this library.
 */
void nexus_buffer_free(struct NexusBuffer *buffer);

/**
 * Encodes a datagram into `out`, which must hold
 * `NEXUS_POINTER_FRAME_LEN` bytes.
 *
 * # Safety
 * `datagram` is NULL or valid; `out` is NULL or writable for 32 bytes.
 */
enum NexusStatus nexus_pointer_encode(const struct NexusPointerDatagram *datagram, uint8_t *out);

/**
 * Decodes and validates a datagram.
 *
 * # Safety
 * `data` is readable for `len` bytes; `out` is NULL or writable.
 */
enum NexusStatus nexus_pointer_decode(const uint8_t *data,
                                      size_t len,
                                      struct NexusPointerDatagram *out);

/**
 * Projects a camera-frame direction into the dual-hemisphere fisheye
 * frame of side `image_size`.
 *
 * # Safety
 * `direction` points to 3 doubles; the outputs are NULL or writable.
 */
enum NexusStatus nexus_fisheye_project(uint32_t image_size,
                                       const double *direction,
                                       uint32_t *lens,
                                       double *u,
                                       double *v);

/**
 * Unit direction seen by `lens` (0 or 1) at pixel `(u, v)`.
 *
 * # Safety
 * `direction_out` is NULL or writable for 3 doubles.
 */
enum NexusStatus nexus_fisheye_unproject(uint32_t image_size,
                                         uint32_t lens,
                                         double u,
                                         double v,
                                         double *direction_out);

/**
 * Parses colored OBJ text into a new mesh.
 *
 * # Safety
 * `data` is readable for `len` bytes; `out` is NULL or writable.
 */
enum NexusStatus nexus_mesh_from_obj(const uint8_t *data, size_t len, struct NexusMesh **out);

/**
 * Writes a mesh as colored OBJ text.
 *
 * # Safety
 * `mesh` is NULL or a live handle; `out` is NULL or writable.
 */
enum NexusStatus nexus_mesh_to_obj(const struct NexusMesh *mesh, struct NexusBuffer *out);

/**
 * Number of vertices, or 0 for NULL.
 *
 * # Safety
 * `mesh` is NULL or a live handle.
 */
size_t nexus_mesh_vertex_count(const struct NexusMesh *mesh);

/**
 * Number of triangles, or 0 for NULL.
 *
 * # Safety
 * `mesh` is NULL or a live handle.
 */
size_t nexus_mesh_triangle_count(const struct NexusMesh *mesh);

/**
 * Selects the triangles seen from `apex` through the quadrilateral
 * `points` (4 points, 12 doubles) into a new mesh.
 *
 * # Safety
 * `mesh` is a live handle; `apex` points to 3 doubles and `points` to 12;
 * `out` is NULL or writable.
 */
enum NexusStatus nexus_mesh_cutout(const struct NexusMesh *mesh,
                                   const double *apex,
                                   const double *points,
                                   struct NexusMesh **out);

/**
 * # Safety
 * `mesh` is NULL or a live handle that is not used afterwards.
 */
void nexus_mesh_free(struct NexusMesh *mesh);

/**
 * Creates a peer for `NEXUS_ROLE_AR` or `NEXUS_ROLE_VR`.
 *
 * # Safety
 * `out` is NULL or writable.
 */
enum NexusStatus nexus_peer_new(uint8_t role, struct NexusPeer **out);

/**
 * # Safety
 * `peer` is NULL or a live handle that is not used afterwards.
 */
void nexus_peer_free(struct NexusPeer *peer);

/**
 * Moves the local pointer ray and queues a datagram.
 *
 * # Safety
 * `peer` is a live handle; `origin` and `direction` point to 3 doubles.
 */
enum NexusStatus nexus_peer_point(struct NexusPeer *peer,
                                  const double *origin,
                                  const double *direction);

/**
 * Starts a new annotation under the current ray.
 *
 * # Safety
 * `peer` is NULL or a live handle.
 */
enum NexusStatus nexus_peer_begin_stroke(struct NexusPeer *peer);

/**
 * # Safety
 * `peer` is NULL or a live handle.
 */
enum NexusStatus nexus_peer_end_stroke(struct NexusPeer *peer);

/**
 * Deletes this peer's latest annotation.
 *
 * # Safety
 * `peer` is NULL or a live handle.
 */
enum NexusStatus nexus_peer_undo(struct NexusPeer *peer);

/**
 * Streams a mesh chunk given in the peer's local space (AR peers only).
 *
 * # Safety
 * `peer` and `mesh` are NULL or live handles.
 */
enum NexusStatus nexus_peer_publish_mesh(struct NexusPeer *peer, const struct NexusMesh *mesh);

/**
 * Pops the oldest bytes the peer wants delivered to the other peer.
 * Returns `NEXUS_STATUS_EMPTY` when nothing is queued.
 *
 * # Safety
 * `peer` is a live handle; `kind` and `out` are NULL or writable.
 */
enum NexusStatus nexus_peer_next_outgoing(struct NexusPeer *peer,
                                          enum NexusOutgoingKind *kind,
                                          struct NexusBuffer *out);

/**
 * Hands a datagram from the other peer to this one. Stale datagrams are
 * ignored without error.
 *
 * # Safety
 * `peer` is a live handle; `data` is readable for `len` bytes.
 */
enum NexusStatus nexus_peer_receive_datagram(struct NexusPeer *peer,
                                             const uint8_t *data,
                                             size_t len);

/**
 * Hands reliable stream bytes to this peer. Frames may be split or
 * coalesced arbitrarily. Messages the session rejects are not errors;
 * malformed frames are.
 *
 * # Safety
 * `peer` is a live handle; `data` is readable for `len` bytes.
 */
enum NexusStatus nexus_peer_receive_stream(struct NexusPeer *peer, const uint8_t *data, size_t len);

/**
 * Number of annotations this peer knows of, or 0 for NULL.
 *
 * # Safety
 * `peer` is NULL or a live handle.
 */
size_t nexus_peer_annotation_count(const struct NexusPeer *peer);

/**
 * Canonical JSON dump of the peer's shared and local state.
 *
 * # Safety
 * `peer` is a live handle; `out` is NULL or writable.
 */
enum NexusStatus nexus_peer_state_json(const struct NexusPeer *peer, struct NexusBuffer *out);

/**
 * Reconstructs a colored mesh from a capture directory with the default
 * stages and returns it as OBJ text.
 *
 * # Safety
 * `capture_dir` is a NUL-terminated UTF-8 path; `out` is NULL or writable.
 */
enum NexusStatus nexus_replica_run(const char *capture_dir,
                                   double voxel_mm,
                                   struct NexusBuffer *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEXUS_H */
