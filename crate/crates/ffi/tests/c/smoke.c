#include <math.h>
#include <stdio.h>
#include <string.h>

#include "nexus.h"

#define CHECK(cond)                                                        \
  do {                                                                     \
    if (!(cond)) {                                                         \
      const char *err = nexus_last_error();                                \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,       \
              err ? err : "no error");                                     \
      return 1;                                                            \
    }                                                                      \
  } while (0)

static int pump(NexusPeer *from, NexusPeer *to) {
  for (;;) {
    NexusOutgoingKind kind;
    NexusBuffer buf = {0, 0};
    NexusStatus s = nexus_peer_next_outgoing(from, &kind, &buf);
    if (s == NEXUS_STATUS_EMPTY) return 0;
    CHECK(s == NEXUS_STATUS_OK);
    if (kind == NEXUS_OUTGOING_KIND_DATAGRAM)
      s = nexus_peer_receive_datagram(to, buf.data, buf.len);
    else
      s = nexus_peer_receive_stream(to, buf.data, buf.len);
    nexus_buffer_free(&buf);
    CHECK(s == NEXUS_STATUS_OK);
  }
}

int main(void) {
  CHECK(strlen(nexus_version()) > 0);

  NexusPointerDatagram d = {1, 42, {0, 1, 2}, {0, 0, 1}, true, 3, 0};
  uint8_t wire[NEXUS_POINTER_FRAME_LEN];
  CHECK(nexus_pointer_encode(&d, wire) == NEXUS_STATUS_OK);
  NexusPointerDatagram back;
  CHECK(nexus_pointer_decode(wire, sizeof wire, &back) == NEXUS_STATUS_OK);
  CHECK(back.send_seq == 42 && back.annotation_count == 3 && back.drawing);
  CHECK(nexus_pointer_decode(wire, 3, &back) == NEXUS_STATUS_DECODE);
  CHECK(nexus_last_error() != NULL);

  double dir[3] = {0.0, 0.6, 0.8}, out[3];
  uint32_t lens;
  double u, v;
  CHECK(nexus_fisheye_project(512, dir, &lens, &u, &v) == NEXUS_STATUS_OK);
  CHECK(nexus_fisheye_unproject(512, lens, u, v, out) == NEXUS_STATUS_OK);
  CHECK(fabs(out[0] - dir[0]) + fabs(out[1] - dir[1]) + fabs(out[2] - dir[2]) < 1e-9);

  const char *obj =
      "v -1 -1 2 1 0 0\nv 1 -1 2 1 0 0\nv 1 1 2 1 0 0\nv -1 1 2 1 0 0\n"
      "f 1 2 3\nf 1 3 4\n";
  NexusMesh *mesh = NULL;
  CHECK(nexus_mesh_from_obj((const uint8_t *)obj, strlen(obj), &mesh) == NEXUS_STATUS_OK);
  CHECK(nexus_mesh_triangle_count(mesh) == 2);

  NexusPeer *ar = NULL, *vr = NULL;
  CHECK(nexus_peer_new(NEXUS_ROLE_AR, &ar) == NEXUS_STATUS_OK);
  CHECK(nexus_peer_new(NEXUS_ROLE_VR, &vr) == NEXUS_STATUS_OK);
  CHECK(nexus_peer_publish_mesh(ar, mesh) == NEXUS_STATUS_OK);
  CHECK(pump(ar, vr) == 0);

  double origin[3] = {0, 0, 0}, ray[3] = {0.1, 0.1, 1.0};
  CHECK(nexus_peer_point(vr, origin, ray) == NEXUS_STATUS_OK);
  CHECK(nexus_peer_begin_stroke(vr) == NEXUS_STATUS_OK);
  CHECK(nexus_peer_end_stroke(vr) == NEXUS_STATUS_OK);
  CHECK(pump(vr, ar) == 0);
  CHECK(nexus_peer_annotation_count(ar) == 1);

  NexusBuffer state = {0, 0};
  CHECK(nexus_peer_state_json(ar, &state) == NEXUS_STATUS_OK);
  CHECK(state.len > 0 && state.data[0] == '{');
  nexus_buffer_free(&state);

  nexus_peer_free(ar);
  nexus_peer_free(vr);
  nexus_mesh_free(mesh);
  printf("ok\n");
  return 0;
}
