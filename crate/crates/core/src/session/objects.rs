use super::SessionError;
use crate::geometry::SimTransform;
use crate::protocol::{ObjectKind, ObjectProperties};

/// A virtual object shared by both peers. Only its world pose is
/// replicated; poses relative to a cutout copy are derived locally.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedObject {
    pub id: u32,
    pub kind: ObjectKind,
    pub transform: SimTransform,
    pub properties: ObjectProperties,
    /// Sequence number of the last accepted transform or property edit.
    pub seq: u32,
    pub last_writer: u8,
    pub grabbed_by: Option<u8>,
}

impl SharedObject {
    /// Last-writer-wins plus the grab lock: an update must carry a strictly
    /// larger sequence number and come from the lock holder, if any.
    pub fn check_update(&self, sender: u8, seq: u32) -> Result<(), SessionError> {
        if let Some(holder) = self.grabbed_by.filter(|&h| h != sender) {
            return Err(SessionError::GrabConflict { object_id: self.id, holder });
        }
        if seq <= self.seq {
            return Err(SessionError::StaleSeq { object_id: self.id, seq, current: self.seq });
        }
        Ok(())
    }

    /// Concurrent grabs resolve to the lower peer id.
    pub fn grab(&mut self, peer: u8) {
        self.grabbed_by = Some(self.grabbed_by.map_or(peer, |h| h.min(peer)));
    }

    /// Only the holder's release clears the lock.
    pub fn release(&mut self, peer: u8) {
        if self.grabbed_by == Some(peer) {
            self.grabbed_by = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn object() -> SharedObject {
        SharedObject {
            id: 2,
            kind: ObjectKind::Cube,
            transform: SimTransform::identity(),
            properties: ObjectProperties::default(),
            seq: 0,
            last_writer: 0,
            grabbed_by: None,
        }
    }

    #[test]
    fn sequence_must_increase() {
        let mut o = object();
        assert!(o.check_update(1, 1).is_ok());
        o.seq = 3;
        assert_eq!(o.check_update(1, 3), Err(SessionError::StaleSeq { object_id: 2, seq: 3, current: 3 }));
        assert_eq!(o.check_update(0, 2), Err(SessionError::StaleSeq { object_id: 2, seq: 2, current: 3 }));
    }

    #[test]
    fn lock_holder_only() {
        let mut o = object();
        o.grab(1);
        assert_eq!(o.check_update(0, 5), Err(SessionError::GrabConflict { object_id: 2, holder: 1 }));
        assert!(o.check_update(1, 5).is_ok());
        o.release(0);
        assert_eq!(o.grabbed_by, Some(1));
        o.release(1);
        assert_eq!(o.grabbed_by, None);
    }

    #[test]
    fn concurrent_grab_goes_to_lower_id() {
        let mut a = object();
        a.grab(0);
        a.grab(1);
        let mut b = object();
        b.grab(1);
        b.grab(0);
        assert_eq!(a.grabbed_by, Some(0));
        assert_eq!(b.grabbed_by, Some(0));
    }
}
