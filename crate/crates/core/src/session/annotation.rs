//! Annotation lifecycle driven by the two annotation bytes of the pointer
//! datagram: a drawing flag and a per-owner annotation count (mod 256).

use std::collections::BTreeMap;

use crate::geometry::Vec3;

/// Largest count change, in either direction, interpreted as real edits.
pub const COUNT_WINDOW: i32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnnotationId {
    pub owner: u8,
    /// Position in the owner's creation order, starting at 0.
    pub ordinal: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attachment {
    Floating,
    MeshSurface,
    CutoutCopy(u16),
}

impl Attachment {
    pub fn label(&self) -> String {
        match self {
            Attachment::Floating => "floating".into(),
            Attachment::MeshSurface => "mesh".into(),
            Attachment::CutoutCopy(id) => format!("cutout:{id}"),
        }
    }
}

/// A polyline in world (camera) space.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: AnnotationId,
    pub points: Vec<Vec3>,
    pub attachment: Attachment,
    /// Mesh-set version the first point was resolved against.
    pub mesh_version: u64,
}

/// What a datagram's annotation bytes mean relative to the previous
/// datagram accepted from the same owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrokeEvent {
    /// Nothing changes.
    NoOp,
    /// Start a new polyline at ordinal `count − 1`.
    Begin,
    /// Add a point to the current polyline.
    Append,
    /// Remove the `n` latest annotations.
    Delete(u8),
    /// Remove the `n` latest annotations, then start a new polyline.
    DeleteThenBegin(u8),
    /// The count moved by more than the window; the bytes are ignored.
    Desync,
}

/// Signed change from `old` to `new` under mod-256 arithmetic, if it lies
/// within `±COUNT_WINDOW`.
pub fn count_delta(old: u8, new: u8) -> Option<i32> {
    let d = new.wrapping_sub(old) as i8 as i32;
    (d.abs() <= COUNT_WINDOW).then_some(d)
}

pub fn classify(prev_count: u8, prev_drawing: bool, count: u8, drawing: bool) -> StrokeEvent {
    let Some(d) = count_delta(prev_count, count) else {
        return StrokeEvent::Desync;
    };
    match (d.signum(), drawing) {
        (-1, false) => StrokeEvent::Delete(-d as u8),
        (-1, true) => StrokeEvent::DeleteThenBegin(-d as u8),
        (1, true) => StrokeEvent::Begin,
        (1, false) => StrokeEvent::NoOp,
        (_, true) if !prev_drawing => StrokeEvent::Begin,
        (_, true) => StrokeEvent::Append,
        _ => StrokeEvent::NoOp,
    }
}

/// Where a datagram's ray landed, as resolved by the receiving peer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedPoint {
    pub point: Vec3,
    pub attachment: Attachment,
    pub mesh_version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnnotationChange {
    Began(AnnotationId),
    Appended(AnnotationId),
    Deleted(AnnotationId),
}

/// Per-owner view reconstructed from that owner's datagrams.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OwnerTrack {
    /// Unwrapped annotation count.
    pub count: u32,
    pub drawing: bool,
    pub strokes: BTreeMap<u32, Annotation>,
}

impl OwnerTrack {
    /// Applies one datagram's annotation bytes. `resolve` is only invoked
    /// when a point is needed.
    pub fn apply(
        &mut self,
        owner: u8,
        count_byte: u8,
        drawing: bool,
        resolve: impl FnOnce() -> ResolvedPoint,
    ) -> (StrokeEvent, Vec<AnnotationChange>) {
        let event = classify(self.count as u8, self.drawing, count_byte, drawing);
        let mut changes = Vec::new();
        let delta = count_byte.wrapping_sub(self.count as u8) as i8 as i64;
        let new_count = (self.count as i64 + delta).max(0) as u32;

        match event {
            StrokeEvent::Desync => {
                self.count = new_count;
                self.drawing = drawing;
                return (event, changes);
            }
            StrokeEvent::Delete(_) | StrokeEvent::DeleteThenBegin(_) => {
                self.truncate(new_count, &mut changes);
            }
            _ => {}
        }
        self.count = new_count;
        self.drawing = drawing;

        match event {
            StrokeEvent::Begin | StrokeEvent::DeleteThenBegin(_) if new_count > 0 => {
                let ordinal = new_count - 1;
                self.truncate(ordinal, &mut changes);
                let r = resolve();
                let id = AnnotationId { owner, ordinal };
                self.strokes.insert(
                    ordinal,
                    Annotation { id, points: vec![r.point], attachment: r.attachment, mesh_version: r.mesh_version },
                );
                changes.push(AnnotationChange::Began(id));
            }
            StrokeEvent::Append if new_count > 0 => {
                let ordinal = new_count - 1;
                let r = resolve();
                let id = AnnotationId { owner, ordinal };
                match self.strokes.get_mut(&ordinal) {
                    Some(a) => {
                        a.points.push(r.point);
                        changes.push(AnnotationChange::Appended(id));
                    }
                    None => {
                        // The start of this stroke was never seen; pick it up here.
                        self.strokes.insert(
                            ordinal,
                            Annotation { id, points: vec![r.point], attachment: r.attachment, mesh_version: r.mesh_version },
                        );
                        changes.push(AnnotationChange::Began(id));
                    }
                }
            }
            _ => {}
        }
        (event, changes)
    }

    fn truncate(&mut self, keep_below: u32, changes: &mut Vec<AnnotationChange>) {
        for (_, a) in self.strokes.split_off(&keep_below) {
            changes.push(AnnotationChange::Deleted(a.id));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(x: f64) -> ResolvedPoint {
        ResolvedPoint { point: Vec3::new(x, 0.0, 1.0), attachment: Attachment::MeshSurface, mesh_version: 1 }
    }

    #[test]
    fn flag_sequence_builds_one_polyline() {
        let mut t = OwnerTrack::default();
        // The owner bumps the count when a stroke starts.
        let frames = [(0u8, false), (1, true), (1, true), (1, true), (1, false)];
        for (i, (count, drawing)) in frames.into_iter().enumerate() {
            t.apply(1, count, drawing, || at(i as f64));
        }
        assert_eq!(t.strokes.len(), 1);
        let a = &t.strokes[&0];
        assert_eq!(a.points.len(), 3);
        assert_eq!(a.id, AnnotationId { owner: 1, ordinal: 0 });
    }

    #[test]
    fn decrement_deletes_latest() {
        let mut t = OwnerTrack::default();
        for k in 1..=5u8 {
            t.apply(0, k, true, || at(k as f64));
            t.apply(0, k, false, || at(0.0));
        }
        assert_eq!(t.strokes.len(), 5);
        let (ev, changes) = t.apply(0, 4, false, || unreachable!());
        assert_eq!(ev, StrokeEvent::Delete(1));
        assert_eq!(changes, vec![AnnotationChange::Deleted(AnnotationId { owner: 0, ordinal: 4 })]);
        assert_eq!(t.strokes.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn wrap_while_drawing_is_new_annotation() {
        assert_eq!(classify(255, true, 0, true), StrokeEvent::Begin);
        assert_eq!(classify(0, true, 255, true), StrokeEvent::DeleteThenBegin(1));
        let mut t = OwnerTrack { count: 255, drawing: true, ..Default::default() };
        t.apply(2, 0, true, || at(1.0));
        assert_eq!(t.count, 256);
        assert!(t.strokes.contains_key(&255));
    }

    #[test]
    fn window_edges() {
        assert_eq!(count_delta(10, 42), Some(32));
        assert_eq!(count_delta(10, 43), None);
        assert_eq!(count_delta(42, 10), Some(-32));
        assert_eq!(count_delta(43, 10), None);
        assert_eq!(classify(0, false, 100, true), StrokeEvent::Desync);
    }

    #[test]
    fn missed_delete_then_redraw_replaces() {
        let mut t = OwnerTrack::default();
        t.apply(1, 1, true, || at(1.0));
        t.apply(1, 1, false, || at(0.0));
        // Owner deleted (count 0, lost) and started over (count 1).
        let (ev, changes) = t.apply(1, 1, true, || at(9.0));
        assert_eq!(ev, StrokeEvent::Begin);
        assert_eq!(
            changes,
            vec![
                AnnotationChange::Deleted(AnnotationId { owner: 1, ordinal: 0 }),
                AnnotationChange::Began(AnnotationId { owner: 1, ordinal: 0 })
            ]
        );
        assert_eq!(t.strokes[&0].points, vec![Vec3::new(9.0, 0.0, 1.0)]);
    }

    #[test]
    fn append_without_seen_start_creates_stroke() {
        let mut t = OwnerTrack { count: 3, drawing: true, ..Default::default() };
        t.apply(1, 3, true, || at(2.0));
        assert_eq!(t.strokes[&2].points.len(), 1);
    }
}
