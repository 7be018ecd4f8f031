use crate::geometry::{SimTransform, UnitQuat, Vec3};
use crate::mesh::{select_triangles, MeshError, MeshSet, Selection, SelectionFrustum};

/// A frustum-selected region of the spatial mesh, with the frame of the
/// original region (`source_frame`) and the frame of the VR user's
/// manipulable copy (`copy_frame`).
#[derive(Debug, Clone, PartialEq)]
pub struct Cutout {
    pub id: u16,
    pub apex: Vec3,
    pub points: [Vec3; 4],
    pub selection: Selection,
    pub source_frame: SimTransform,
    pub copy_frame: SimTransform,
    pub active: bool,
}

/// Selects the region and computes its source frame: the vertex centroid of
/// the selected triangles with identity rotation and unit scale.
pub fn select_region(
    meshes: &MeshSet,
    apex: Vec3,
    points: [Vec3; 4],
) -> Result<(Selection, SimTransform), MeshError> {
    let frustum = SelectionFrustum::build(apex, points)?;
    let selection = select_triangles(meshes, &frustum)?;
    let centroid = selection.mesh.vertex_centroid().ok_or(MeshError::EmptySelection)?;
    Ok((selection, SimTransform::rigid(UnitQuat::identity(), centroid)))
}

/// `F_src ∘ F_copy⁻¹`: carries copy-space poses onto the original region.
pub fn copy_to_world(source_frame: &SimTransform, copy_frame: &SimTransform) -> SimTransform {
    source_frame.compose(&copy_frame.inverse())
}

impl Cutout {
    pub fn copy_to_world(&self) -> SimTransform {
        copy_to_world(&self.source_frame, &self.copy_frame)
    }

    /// World pose of an object given its pose relative to the copy.
    pub fn map_to_world(&self, pose_in_copy: &SimTransform) -> SimTransform {
        self.copy_to_world().compose(pose_in_copy)
    }

    /// Inverse of [`Cutout::map_to_world`].
    pub fn map_to_copy(&self, world_pose: &SimTransform) -> SimTransform {
        self.copy_frame.compose(&self.source_frame.inverse()).compose(world_pose)
    }

    pub fn triangle_count(&self) -> usize {
        self.selection.mesh.triangles().len()
    }
}
