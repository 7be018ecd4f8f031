//! Wavefront OBJ subset with per-vertex colors:
//! `v x y z [r g b]`, `f i j k` (1-based), `#` comments.

use std::fmt::Write as _;

use thiserror::Error;

use super::{MeshError, TriangleMesh, Vertex};
use crate::geometry::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: face index {index} is out of range (1..={vertex_count})")]
    FaceIndexOutOfRange { line: usize, index: i64, vertex_count: usize },
    #[error("OBJ input is not valid UTF-8")]
    NotUtf8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjVertex {
    pub position: [f64; 3],
    pub color: Option<[f64; 3]>,
}

/// Parsed colored OBJ. Face indices are stored 0-based.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredObjDocument {
    pub vertices: Vec<ObjVertex>,
    pub faces: Vec<[u32; 3]>,
}

// Directives we accept and ignore.
const IGNORED: &[&str] = &["vn", "vt", "o", "g", "s", "mtllib", "usemtl", "l", "p"];

pub fn parse_obj(bytes: &[u8]) -> Result<ColoredObjDocument, ObjError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ObjError::NotUtf8)?;
    let mut doc = ColoredObjDocument::default();
    let mut face_lines = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_ascii_whitespace();
        let keyword = tokens.next().unwrap_or_default();
        let err = |message: String| ObjError::Parse { line: line_no, message };
        match keyword {
            "v" => {
                let values = tokens
                    .map(|t| match t.parse::<f64>() {
                        Ok(x) if x.is_finite() => Ok(x),
                        _ => Err(err(format!("bad number {t:?}"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let vertex = match values.as_slice() {
                    [x, y, z] => ObjVertex { position: [*x, *y, *z], color: None },
                    [x, y, z, r, g, b] => ObjVertex { position: [*x, *y, *z], color: Some([*r, *g, *b]) },
                    _ => return Err(err(format!("vertex needs 3 or 6 numbers, found {}", values.len()))),
                };
                doc.vertices.push(vertex);
            }
            "f" => {
                let indices = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or_default();
                        head.parse::<i64>().map_err(|_| err(format!("bad face index {t:?}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let [a, b, c] = indices[..] else {
                    return Err(err(format!("only triangles are supported, found {} indices", indices.len())));
                };
                face_lines.push((line_no, [a, b, c]));
            }
            k if IGNORED.contains(&k) => {}
            k => return Err(err(format!("unknown directive {k:?}"))),
        }
    }

    let n = doc.vertices.len();
    for (line, face) in face_lines {
        let mut out = [0u32; 3];
        for (slot, &index) in out.iter_mut().zip(&face) {
            if index < 1 || index as usize > n {
                return Err(ObjError::FaceIndexOutOfRange { line, index, vertex_count: n });
            }
            *slot = (index - 1) as u32;
        }
        doc.faces.push(out);
    }
    Ok(doc)
}

fn push_fixed(out: &mut String, x: f64) {
    let s = format!("{x:.6}");
    // "-0.000000" and "0.000000" denote the same value; emit one spelling.
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        out.push_str(&s[1..]);
    } else {
        out.push_str(&s);
    }
}

/// Canonical text: six digits after the decimal point, LF line endings,
/// no header.
pub fn write_obj(doc: &ColoredObjDocument) -> Vec<u8> {
    let mut out = String::with_capacity(doc.vertices.len() * 64 + doc.faces.len() * 24);
    for v in &doc.vertices {
        out.push('v');
        for &x in v.position.iter().chain(v.color.iter().flatten()) {
            out.push(' ');
            push_fixed(&mut out, x);
        }
        out.push('\n');
    }
    for f in &doc.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out.into_bytes()
}

impl TriangleMesh {
    pub fn to_obj(&self) -> ColoredObjDocument {
        ColoredObjDocument {
            vertices: self
                .vertices()
                .iter()
                .map(|v| ObjVertex { position: v.position.into(), color: v.color.map(|c| c.map(f64::from)) })
                .collect(),
            faces: self.triangles().to_vec(),
        }
    }

    pub fn from_obj(chunk_id: u32, doc: &ColoredObjDocument) -> Result<TriangleMesh, MeshError> {
        let vertices = doc
            .vertices
            .iter()
            .map(|v| Vertex {
                position: Vec3::from(v.position),
                color: v.color.map(|c| c.map(|x| x as f32)),
            })
            .collect();
        TriangleMesh::new(chunk_id, vertices, doc.faces.clone())
    }
}
