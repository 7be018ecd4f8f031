//! Canonical JSON state dumps: object keys sorted, floats printed with six
//! decimals, two-space indentation. Suitable for golden-file diffs.

use serde_json::{json, Map, Value};

use super::{Annotation, Peer};
use crate::geometry::{SimTransform, Vec3};
use crate::protocol::{ObjectProperties, PointerDatagram};

fn fixed(x: f64) -> String {
    let s = format!("{x:.6}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Serializes with sorted keys; floating-point numbers use six decimals.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(value: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize, out: &mut String| out.extend(std::iter::repeat_n(' ', n));
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&value.to_string()),
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) if !n.is_f64() => out.push_str(&i.to_string()),
            (_, Some(u), _) if !n.is_f64() => out.push_str(&u.to_string()),
            (_, _, Some(f)) => out.push_str(&fixed(f)),
            _ => out.push_str(&n.to_string()),
        },
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            // Short arrays of scalars stay on one line.
            if items.len() <= 8 && items.iter().all(|v| !v.is_array() && !v.is_object()) {
                out.push('[');
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(v, indent, out);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (i, v) in items.iter().enumerate() {
                pad(indent + 2, out);
                write_value(v, indent + 2, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(indent, out);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                pad(indent + 2, out);
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push_str(": ");
                write_value(&map[*k], indent + 2, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(indent, out);
            out.push('}');
        }
    }
}

/// Paths at which two JSON documents differ; numbers compare within `tol`.
pub fn diff_json(a: &Value, b: &Value, tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    diff_into(a, b, tol, "$", &mut out);
    out
}

fn diff_into(a: &Value, b: &Value, tol: f64, path: &str, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            if !((x - y).abs() <= tol) {
                out.push(format!("{path}: {x} != {y}"));
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                out.push(format!("{path}: length {} != {}", x.len(), y.len()));
            }
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                diff_into(u, v, tol, &format!("{path}[{i}]"), out);
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            for (k, u) in x {
                match y.get(k) {
                    Some(v) => diff_into(u, v, tol, &format!("{path}.{k}"), out),
                    None => out.push(format!("{path}.{k}: missing on the right")),
                }
            }
            for k in y.keys().filter(|k| !x.contains_key(*k)) {
                out.push(format!("{path}.{k}: missing on the left"));
            }
        }
        _ if a == b => {}
        _ => out.push(format!("{path}: {a} != {b}")),
    }
}

pub fn vec3_json(v: &Vec3) -> Value {
    json!([v.x, v.y, v.z])
}

pub fn transform_json(t: &SimTransform) -> Value {
    let q = t.rotation.quaternion();
    json!({
        "position": vec3_json(&t.translation),
        "rotation_wxyz": [q.w, q.i, q.j, q.k],
        "scale": t.scale,
    })
}

fn properties_json(p: &ObjectProperties) -> Value {
    json!({
        "gravity": p.gravity_enabled,
        "color": p.material_color.map(f64::from),
        "scale": p.uniform_scale as f64,
    })
}

fn pointer_json(d: &PointerDatagram) -> Value {
    json!({
        "peer_id": d.peer_id,
        "seq": d.send_seq,
        "origin": d.ray_origin.map(f64::from),
        "direction": d.ray_direction.map(f64::from),
        "drawing": d.drawing,
        "annotation_count": d.annotation_count,
        "active_cutout_id": d.active_cutout_id,
    })
}

fn annotation_json(a: &Annotation) -> Value {
    json!({
        "owner": a.id.owner,
        "ordinal": a.id.ordinal,
        "attachment": a.attachment.label(),
        "points": a.points.iter().map(vec3_json).collect::<Vec<_>>(),
    })
}

impl Peer {
    /// State that must be identical on both peers once all messages are
    /// delivered.
    pub fn shared_state(&self) -> Value {
        let meshes: Vec<Value> = self
            .meshes()
            .iter()
            .map(|m| {
                json!({
                    "chunk_id": m.chunk_id,
                    "vertices": m.vertices().len(),
                    "triangles": m.triangles().len(),
                    "centroid": m.vertex_centroid().map(|c| vec3_json(&c)),
                })
            })
            .collect();
        let objects: Vec<Value> = self
            .objects()
            .values()
            .map(|o| {
                json!({
                    "id": o.id,
                    "kind": o.kind.name(),
                    "transform": transform_json(&o.transform),
                    "properties": properties_json(&o.properties),
                    "seq": o.seq,
                    "grabbed_by": o.grabbed_by,
                })
            })
            .collect();
        let cutouts: Vec<Value> = self
            .cutouts()
            .values()
            .map(|c| {
                json!({
                    "id": c.id,
                    "active": c.active,
                    "triangles": c.triangle_count(),
                    "source_frame": transform_json(&c.source_frame),
                    "copy_frame": transform_json(&c.copy_frame),
                })
            })
            .collect();
        let replicas: Vec<Value> = self
            .replicas()
            .iter()
            .map(|(id, m)| json!({ "id": id, "vertices": m.vertices().len(), "triangles": m.triangles().len() }))
            .collect();
        json!({
            "mesh": { "version": self.meshes().version(), "chunks": meshes },
            "annotations": self.annotations().map(annotation_json).collect::<Vec<_>>(),
            "objects": objects,
            "cutouts": cutouts,
            "replicas": replicas,
        })
    }

    /// Local view: role, own pointer, latest remote pointer, counters and
    /// how each annotation is displayed (own in green, other in red).
    pub fn local_state(&self) -> Value {
        let s = self.stats();
        let display: Map<String, Value> = self
            .annotations()
            .map(|a| {
                let class = if a.id.owner == self.id() { "own" } else { "other" };
                (format!("{}:{}", a.id.owner, a.id.ordinal), Value::from(class))
            })
            .collect();
        json!({
            "role": self.role().name(),
            "peer_id": self.id(),
            "alignment": transform_json(self.alignment()),
            "last_sent_pointer": self.last_sent_pointer().map(pointer_json),
            "remote_pointer": self.remote_pointer().map(pointer_json),
            "annotation_display": display,
            "stats": {
                "datagrams_accepted": s.datagrams_accepted,
                "datagrams_invalid": s.datagrams_invalid,
                "datagrams_stale": s.datagrams_stale,
                "frames_applied": s.frames_applied,
                "frames_invalid": s.frames_invalid,
                "updates_stale": s.updates_stale,
                "updates_conflicted": s.updates_conflicted,
                "updates_rejected": s.updates_rejected,
                "count_desyncs": s.count_desyncs,
                "echoes_sent": s.echoes_sent,
            },
        })
    }

    pub fn dump(&self) -> Value {
        json!({ "shared": self.shared_state(), "local": self.local_state() })
    }
}
