//! Scenario files: a network description, timed actions for each peer and
//! assertions checked once the network is quiet. All keys are kebab-case.

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::geometry::{SimTransform, UnitQuat, Vec3};
use crate::protocol::{ObjectKind, ObjectProperties};
use crate::session::Role;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub actions: Vec<TimedAction>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

/// Applied to both directions; each direction draws from its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "default_latency")]
    pub latency_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub loss: f64,
    #[serde(default)]
    pub reorder: f64,
}

fn default_latency() -> f64 {
    20.0
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self { latency_ms: default_latency(), jitter_ms: 0.0, loss: 0.0, reorder: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeerName {
    Ar,
    Vr,
}

impl PeerName {
    pub fn role(self) -> Role {
        match self {
            PeerName::Ar => Role::Ar,
            PeerName::Vr => Role::Vr,
        }
    }
}

impl From<Role> for PeerName {
    fn from(r: Role) -> Self {
        match r {
            Role::Ar => PeerName::Ar,
            Role::Vr => PeerName::Vr,
        }
    }
}

/// A pose in the acting peer's local space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PoseSpec {
    #[serde(default)]
    pub position: [f64; 3],
    /// `[w, x, y, z]`; normalized on use.
    #[serde(default = "identity_quat")]
    pub rotation: [f64; 4],
    #[serde(default = "one")]
    pub scale: f64,
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn one() -> f64 {
    1.0
}

impl PoseSpec {
    pub fn to_transform(&self) -> Result<SimTransform, ScenarioError> {
        let [w, x, y, z] = self.rotation;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if !(q.norm() > 1e-9) || !(self.scale > 0.0) || !self.position.iter().all(|v| v.is_finite()) {
            return Err(ScenarioError::Invalid(format!("bad pose {self:?}")));
        }
        Ok(SimTransform::new(UnitQuat::from_quaternion(q), Vec3::from(self.position), self.scale))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct MeshSpec {
    pub chunk: u32,
    pub origin: [f64; 3],
    /// Edge vectors of the grid.
    pub u: [f64; 3],
    pub v: [f64; 3],
    #[serde(default = "default_cells")]
    pub cells: [u32; 2],
    #[serde(default)]
    pub color: Option<[f32; 3]>,
}

fn default_cells() -> [u32; 2] {
    [4, 4]
}

/// Object kind by name: `cube`, `sphere`, `cylinder`, `capsule`, `plane`
/// or `replica:<id>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KindSpec(pub String);

impl KindSpec {
    pub fn to_kind(&self) -> Result<ObjectKind, ScenarioError> {
        Ok(match self.0.as_str() {
            "cube" => ObjectKind::Cube,
            "sphere" => ObjectKind::Sphere,
            "cylinder" => ObjectKind::Cylinder,
            "capsule" => ObjectKind::Capsule,
            "plane" => ObjectKind::Plane,
            other => match other.strip_prefix("replica:").and_then(|id| id.parse().ok()) {
                Some(id) => ObjectKind::Replica(id),
                None => return Err(ScenarioError::Invalid(format!("unknown object kind {other:?}"))),
            },
        })
    }
}

/// Property values; omitted fields keep their current (or default) value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PropertiesSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[f32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f32>,
}

impl PropertiesSpec {
    pub fn apply(&self, base: ObjectProperties) -> ObjectProperties {
        ObjectProperties {
            gravity_enabled: self.gravity.unwrap_or(base.gravity_enabled),
            material_color: self.color.unwrap_or(base.material_color),
            uniform_scale: self.scale.unwrap_or(base.uniform_scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeName {
    Sphere,
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TimedAction {
    pub t_ms: f64,
    pub peer: PeerName,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case", rename_all_fields = "kebab-case")]
pub enum Action {
    /// Sets the AR peer's local-to-world alignment.
    SetAlignment { pose: PoseSpec },
    PublishMesh { mesh: MeshSpec },
    RemoveMesh { chunk: u32 },
    PointerMove { origin: [f64; 3], direction: [f64; 3] },
    DrawStart,
    DrawStop,
    Undo,
    /// Resends the current pointer state.
    Flush,
    Spawn {
        object: String,
        kind: KindSpec,
        pose: PoseSpec,
        #[serde(default)]
        properties: PropertiesSpec,
    },
    Grab { object: String },
    Release { object: String },
    MoveObject { object: String, pose: PoseSpec },
    /// VR only: pose of the object's copy inside the cutout.
    MoveObjectInCutout { object: String, cutout: String, pose: PoseSpec },
    EditObject { object: String, properties: PropertiesSpec },
    Despawn { object: String },
    CreateCutout { cutout: String, apex: [f64; 3], points: [[f64; 3]; 4] },
    TransformCutout { cutout: String, pose: PoseSpec },
    Activate { cutout: String },
    Deactivate { cutout: String },
    /// Synthesizes a capture of `shape`, runs the replica pipeline and
    /// announces the mesh under `replica`.
    ScanReplica {
        replica: u32,
        shape: ShapeName,
        #[serde(default)]
        frames: Option<usize>,
        #[serde(default)]
        voxel_mm: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case", rename_all_fields = "kebab-case")]
pub enum Assertion {
    /// Both peers' shared state dumps agree within `tolerance`.
    Converged {
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    /// Both peers hold the same annotation ids with the same attachments.
    /// Point lists may differ when datagrams were lost.
    AnnotationSets,
    /// Each peer's remote pointer equals the other's last sent datagram.
    PointerSynced,
    AnnotationCount {
        #[serde(default)]
        peer: Option<PeerName>,
        count: usize,
    },
    /// World pose of an object.
    ObjectPose {
        object: String,
        #[serde(default)]
        peer: Option<PeerName>,
        pose: PoseSpec,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    /// World pose equals `F_src ∘ F_copy⁻¹ ∘ pose` for the cutout's frames.
    ObjectViaCutout {
        object: String,
        cutout: String,
        #[serde(default)]
        peer: Option<PeerName>,
        pose: PoseSpec,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    ObjectProperty {
        object: String,
        #[serde(default)]
        peer: Option<PeerName>,
        #[serde(default)]
        gravity: Option<bool>,
        #[serde(default)]
        color: Option<[f32; 3]>,
        #[serde(default)]
        scale: Option<f32>,
    },
    ObjectAbsent {
        object: String,
    },
    CutoutActive {
        cutout: String,
        active: bool,
    },
    /// Avatar position shown on the AR side for a VR head pose.
    AvatarPosition {
        head: PoseSpec,
        position: [f64; 3],
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    ReplicaPresent {
        replica: u32,
        #[serde(default)]
        min_triangles: usize,
    },
}

fn default_tolerance() -> f64 {
    1e-5
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (i, w) in self.actions.windows(2).enumerate() {
            if w[1].t_ms < w[0].t_ms {
                return Err(ScenarioError::Invalid(format!("action {} at {} ms precedes action {i}", i + 1, w[1].t_ms)));
            }
        }
        if let Some(a) = self.actions.iter().find(|a| !(a.t_ms >= 0.0 && a.t_ms.is_finite())) {
            return Err(ScenarioError::Invalid(format!("bad action time {}", a.t_ms)));
        }
        Ok(())
    }
}
