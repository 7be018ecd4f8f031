//! Stage orchestration. Every stage is timed; the first failure aborts the
//! run with the stage name attached.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::capture::{load_capture, PlaneSeed};
use super::marching_cubes::{marching_cubes, ScalarGrid};
use super::mask::{coarse_mask, IdentityRefiner, Mask, MaskRefiner, MorphologicalRefiner};
use super::postprocess::postprocess;
use super::ransac::{fit_plane_ransac, RansacParams};
use super::reproject::{reproject_depth, unproject_registered};
use super::tsdf::{fuse_tsdf, MaskedFrame, TsdfGrid};
use super::{DepthImage, PlaneModel, ReplicaError, RgbdFrame};
use crate::geometry::{SimTransform, Vec3};
use crate::mesh::TriangleMesh;

/// Adjusts camera poses before fusion.
pub trait PoseRefiner: Send + Sync {
    fn name(&self) -> &'static str;
    /// Returns one pose per frame.
    fn refine(&self, frames: &[MaskedFrame]) -> Result<Vec<SimTransform>, ReplicaError>;
}

/// Keeps the poses recorded at capture time.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassthroughPoses;

impl PoseRefiner for PassthroughPoses {
    fn name(&self) -> &'static str {
        "passthrough"
    }

    fn refine(&self, frames: &[MaskedFrame]) -> Result<Vec<SimTransform>, ReplicaError> {
        Ok(frames.iter().map(|f| f.camera_pose).collect())
    }
}

/// What a reconstructor produces: a volume for surface extraction, or a
/// finished mesh that skips it.
#[derive(Debug, Clone)]
pub enum Reconstruction {
    Grid(TsdfGrid),
    Mesh(TriangleMesh),
}

pub trait Reconstructor: Send + Sync {
    fn name(&self) -> &'static str;
    /// `plane` is the refined table plane with the cameras on its positive
    /// side.
    fn reconstruct(
        &self,
        frames: &[MaskedFrame],
        plane: &PlaneModel,
        config: &PipelineConfig,
    ) -> Result<Reconstruction, ReplicaError>;
}

/// Truncated signed distance fusion followed by two completions. Voxels
/// that every view saw only from behind a surface are solid, which closes
/// regions no camera looked into. Voxels under the table are empty, so the
/// object's underside closes at the plane.
#[derive(Debug, Clone, Copy, Default)]
pub struct TsdfReconstructor;

impl Reconstructor for TsdfReconstructor {
    fn name(&self) -> &'static str {
        "tsdf"
    }

    fn reconstruct(
        &self,
        frames: &[MaskedFrame],
        plane: &PlaneModel,
        config: &PipelineConfig,
    ) -> Result<Reconstruction, ReplicaError> {
        let mut grid = fuse_tsdf(frames, config.voxel_size, config.min_frames)?;
        let [nx, ny, nz] = grid.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = grid.index(i, j, k);
                    if plane.signed_distance(&grid.voxel_center(i, j, k)) < 0.0 {
                        grid.tsdf[idx] = 1.0;
                        grid.weight[idx] = grid.weight[idx].max(1.0);
                    } else if grid.weight[idx] == 0.0 && grid.views[idx] > 0 {
                        grid.tsdf[idx] = -1.0;
                        grid.weight[idx] = 1.0;
                    }
                }
            }
        }
        Ok(Reconstruction::Grid(grid))
    }
}

/// The swappable stages.
pub struct StageSet {
    pub refine: Box<dyn MaskRefiner>,
    pub pose: Box<dyn PoseRefiner>,
    pub reconstruct: Box<dyn Reconstructor>,
}

impl Default for StageSet {
    fn default() -> Self {
        Self {
            refine: Box::new(MorphologicalRefiner::default()),
            pose: Box::new(PassthroughPoses),
            reconstruct: Box::new(TsdfReconstructor),
        }
    }
}

impl StageSet {
    /// Applies a `stage=implementation` choice such as `refine=identity`.
    pub fn select(&mut self, choice: &str) -> Result<(), String> {
        let (stage, imp) = choice.split_once('=').ok_or_else(|| format!("expected STAGE=IMPL, got {choice:?}"))?;
        match (stage, imp) {
            ("refine", "morphological") => self.refine = Box::new(MorphologicalRefiner::default()),
            ("refine", "identity") => self.refine = Box::new(IdentityRefiner),
            ("pose", "passthrough") => self.pose = Box::new(PassthroughPoses),
            ("reconstruct", "tsdf") => self.reconstruct = Box::new(TsdfReconstructor),
            _ => return Err(format!("unknown stage implementation {choice:?}")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Meters.
    pub voxel_size: f64,
    pub ransac: RansacParams,
    pub min_frames: usize,
    pub smooth_iterations: usize,
    pub smooth_lambda: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { voxel_size: 0.005, ransac: RansacParams::default(), min_frames: 8, smooth_iterations: 10, smooth_lambda: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub implementation: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct TimingReport {
    pub stages: Vec<StageTiming>,
    pub total_ms: f64,
}

impl TimingReport {
    pub fn stage_sum_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.ms).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("timings serialize") + "\n"
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub mesh: TriangleMesh,
    /// The mesh as colored OBJ text.
    pub obj: Vec<u8>,
    pub plane: PlaneModel,
    /// Refined mask per frame that had a foreground.
    pub masks: Vec<Mask>,
    pub timings: TimingReport,
}

struct Timer {
    report: TimingReport,
}

impl Timer {
    fn run<T>(&mut self, stage: &str, imp: &str, f: impl FnOnce() -> Result<T, ReplicaError>) -> Result<T, ReplicaError> {
        let start = Instant::now();
        let out = f().map_err(|cause| ReplicaError::Stage { stage: stage.to_string(), cause: Box::new(cause) });
        self.report.stages.push(StageTiming {
            stage: stage.to_string(),
            implementation: imp.to_string(),
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
        out
    }
}

/// Loads the capture in `dir` and runs every stage on it.
pub fn run_pipeline(dir: &Path, stages: &StageSet, config: &PipelineConfig) -> Result<PipelineOutput, ReplicaError> {
    let start = Instant::now();
    let mut timer = Timer { report: TimingReport::default() };
    let (manifest, frames) = timer.run("load", "capture-dir", || load_capture(dir))?;
    let mut out = run_stages(&frames, &manifest.plane_seed, stages, config, timer)?;
    out.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(out)
}

/// Runs every stage on frames already in memory.
pub fn run_frames(
    frames: &[RgbdFrame],
    plane_seed: &PlaneSeed,
    stages: &StageSet,
    config: &PipelineConfig,
) -> Result<PipelineOutput, ReplicaError> {
    let start = Instant::now();
    let mut out = run_stages(frames, plane_seed, stages, config, Timer { report: TimingReport::default() })?;
    out.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(out)
}

fn run_stages(
    frames: &[RgbdFrame],
    plane_seed: &PlaneSeed,
    stages: &StageSet,
    config: &PipelineConfig,
    mut timer: Timer,
) -> Result<PipelineOutput, ReplicaError> {
    let registered: Vec<DepthImage> = timer.run("reproject", "z-buffer", || {
        frames
            .par_iter()
            .map(|f| {
                f.validate()?;
                Ok(reproject_depth(f))
            })
            .collect()
    })?;

    let plane = timer.run("plane", "ransac", || {
        let points: Vec<Vec3> = frames
            .par_iter()
            .zip(&registered)
            .flat_map_iter(|(f, d)| unproject_registered(d, &f.color_intrinsics, &f.camera_pose).into_iter().map(|(_, p)| p))
            .collect();
        let seed = plane_seed.to_plane(config.ransac.threshold);
        let (mut plane, _) = fit_plane_ransac(&points, &seed, &config.ransac)?;
        let cameras = frames.iter().map(|f| f.camera_pose.translation).sum::<Vec3>() / frames.len().max(1) as f64;
        if plane.signed_distance(&cameras) < 0.0 {
            plane = PlaneModel { normal: -plane.normal, offset: -plane.offset, ..plane };
        }
        Ok(plane)
    })?;

    // Frames whose view holds no foreground are dropped; the run fails only
    // if none has any.
    let coarse: Vec<(usize, Mask, (u32, u32))> = timer.run("coarse", "plane-offset", || {
        let results: Vec<_> = frames
            .par_iter()
            .zip(&registered)
            .map(|(f, d)| coarse_mask(d, &f.color_intrinsics, &f.camera_pose, &plane))
            .collect();
        let mut first_err = None;
        let mut kept = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok((m, prompt)) => kept.push((i, m, prompt)),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        match (kept.is_empty(), first_err) {
            (true, Some(e)) => Err(e),
            (true, None) => Err(ReplicaError::TooFewFrames { found: 0, required: config.min_frames }),
            _ => Ok(kept),
        }
    })?;

    let mut masked: Vec<MaskedFrame> = timer.run("refine", stages.refine.name(), || {
        coarse
            .par_iter()
            .map(|(i, m, prompt)| {
                let f = &frames[*i];
                Ok(MaskedFrame {
                    color: f.color.clone(),
                    depth: registered[*i].clone(),
                    mask: stages.refine.refine(&f.color, m, *prompt)?,
                    intrinsics: f.color_intrinsics,
                    camera_pose: f.camera_pose,
                })
            })
            .collect()
    })?;

    timer.run("pose", stages.pose.name(), || {
        let poses = stages.pose.refine(&masked)?;
        if poses.len() != masked.len() {
            return Err(ReplicaError::InvalidFrame(format!("{} poses for {} frames", poses.len(), masked.len())));
        }
        for (f, p) in masked.iter_mut().zip(poses) {
            f.camera_pose = p;
        }
        Ok(())
    })?;

    let reconstruction =
        timer.run("reconstruct", stages.reconstruct.name(), || stages.reconstruct.reconstruct(&masked, &plane, config))?;

    let extracted = timer.run("extract", "marching-cubes", || {
        let mesh = match &reconstruction {
            Reconstruction::Grid(g) => marching_cubes(
                &ScalarGrid {
                    dims: g.dims,
                    origin: g.origin,
                    voxel_size: g.voxel_size,
                    values: &g.tsdf,
                    weights: Some(&g.weight),
                    colors: Some(&g.color),
                    color_weights: Some(&g.color_weight),
                },
                0.0,
            ),
            Reconstruction::Mesh(m) => m.clone(),
        };
        if mesh.is_empty() {
            Err(ReplicaError::EmptyMesh)
        } else {
            Ok(mesh)
        }
    })?;

    let mesh = timer.run("postprocess", "voxel-remesh+laplacian", || {
        postprocess(&extracted, config.voxel_size, config.smooth_iterations, config.smooth_lambda)
    })?;

    let obj = timer.run("obj", "colored-obj", || Ok(crate::mesh::write_obj(&mesh.to_obj())))?;

    Ok(PipelineOutput { mesh, obj, plane, masks: masked.into_iter().map(|f| f.mask).collect(), timings: timer.report })
}
