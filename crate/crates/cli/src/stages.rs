//! Pipeline stages. Each reads the scenario plus earlier outputs from the
//! run directory, writes its own outputs there, and returns a JSON summary.
//!
//! Run directory contents:
//!
//! ```text
//! config.json                 effective configuration
//! calibration.json, depth/    calibrate: (s, o) and metric depth maps
//! trajectory.txt, anchor_depths.jsonl, slam.json
//!                             slam: solved poses, anchor inverse depths, solver report
//! scene.ply, bodies_world.jsonl
//!                             place: filtered world cloud, world-frame tracks
//! bodies_denoised.jsonl       denoise
//! metrics.json                eval
//! diagnostics.json            written when a stage fails numerically
//! ```

use std::path::{Path, PathBuf};

use humanslam::ba_core::{filter_epipolar, lift_world_points, solve, BAProblem};
use humanslam::body_model::{BodyTemplate, FrameTag};
use humanslam::denoiser::{denoise, load_weights, DenoiserWeights};
use humanslam::depth_calibration::{apply_calibration, assemble_frames, calibrate};
use humanslam::geometry::DepthMap;
use humanslam::metrics::{accel_error, ate, depth_metrics, fa_mpjpe, pa_mpjpe, wa_mpjpe, JointSequence, MpjpeOptions};
use humanslam::synth::{anchor_inv_depths, generate};
use humanslam::world_frame::{interpolate_track, track_to_world, BodyTrack};
use humanslam::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::formats::*;
use crate::layout::{read_depth_dir, write_depth_dir, write_scenario, ScenarioInput};

/// Why a stage stopped: bad input (exit 1) or a numerical failure (exit 2)
/// whose details go to `diagnostics.json`.
#[derive(Debug)]
pub enum Failure {
    Input(Error),
    Numerical { stage: &'static str, message: String, details: Value },
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 1,
            Failure::Numerical { .. } => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Input(e) => write!(f, "{}", e),
            Failure::Numerical { stage, message, .. } => write!(f, "{}: {}", stage, message),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e)
    }
}

pub type StageResult<T = Value> = std::result::Result<T, Failure>;

/// Core errors that come from the numbers rather than the files.
fn numerical(stage: &'static str, e: Error) -> Failure {
    match e {
        Error::Optimizer(_) | Error::Degenerate(_) => Failure::Numerical { stage, message: e.to_string(), details: Value::Null },
        other => Failure::Input(other),
    }
}

/// Records a numerical failure next to the stage outputs.
pub fn write_diagnostics(out: &Path, f: &Failure) -> humanslam::Result<()> {
    if let Failure::Numerical { stage, message, details } = f {
        write_json(&out.join("diagnostics.json"), &json!({ "stage": stage, "error": message, "details": details }))?;
    }
    Ok(())
}

fn template() -> BodyTemplate<f64> {
    BodyTemplate::standard()
}

pub fn synth(out: &Path, cfg: &PipelineConfig) -> StageResult {
    let s = generate(cfg.seed, &cfg.synth)?;
    write_scenario(out, &s)?;
    Ok(json!({
        "stage": "synth",
        "seed": cfg.seed,
        "frames": cfg.synth.frames,
        "humans": cfg.synth.humans,
        "observations": s.observations.len(),
        "corrupted": s.corrupted.len(),
        "depth_scale": cfg.synth.depth_scale,
        "depth_offset": cfg.synth.depth_offset,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationReport {
    pub s: f64,
    pub o: f64,
    pub final_energy: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn calibrate_stage(input: &Path, out: &Path, cfg: &PipelineConfig) -> StageResult {
    let sc = ScenarioInput::read(input, &cfg.focal)?;
    let frames = assemble_frames(&sc.depth, &sc.masks, &sc.tracks, &template())?;
    let r = calibrate(&frames, &sc.intr, &cfg.calibration).map_err(|e| numerical("calibrate", e))?;
    let report = CalibrationReport { s: r.s, o: r.o, final_energy: r.final_energy, iterations: r.iterations, converged: r.converged };
    write_json(&out.join("calibration.json"), &report)?;
    let metric: Vec<DepthMap<f64>> = sc.depth.iter().map(|d| apply_calibration(d, r.s, r.o)).collect::<humanslam::Result<_>>()?;
    write_depth_dir(&out.join("depth"), &metric)?;
    let summary = json!({ "stage": "calibrate", "s": r.s, "o": r.o, "final_energy": r.final_energy, "iterations": r.iterations, "converged": r.converged });
    if !r.converged {
        return Err(Failure::Numerical {
            stage: "calibrate",
            message: format!("L-BFGS stopped after {} iterations without meeting its tolerances", r.iterations),
            details: summary,
        });
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorDepthRecord {
    pub frame: usize,
    pub inv_depths: Vec<f64>,
}

pub fn slam_stage(input: &Path, out: &Path, cfg: &PipelineConfig) -> StageResult {
    let sc = ScenarioInput::read(input, &cfg.focal)?;
    let priors = read_depth_dir(&out.join("depth"), sc.camera.frames)?;
    let problem = BAProblem {
        intr: sc.intr,
        poses: sc.init_poses.clone(),
        anchors: sc.anchors.clone(),
        inv_depths: anchor_inv_depths(&sc.anchors, &priors),
        observations: sc.observations.clone(),
        union_masks: sc.union_masks(),
        prior_depths: priors.into_iter().map(Some).collect(),
        depth_weight: cfg.slam.depth_weight,
    };
    let sol = solve(&problem, &cfg.slam.ba).map_err(|e| numerical("slam", e))?;
    write_trajectory(&out.join("trajectory.txt"), &sc.timestamps, &sol.poses)?;
    let depths: Vec<_> = sol.inv_depths.iter().enumerate().map(|(t, d)| AnchorDepthRecord { frame: t, inv_depths: d.clone() }).collect();
    write_jsonl(&out.join("anchor_depths.jsonl"), &depths)?;
    let report = json!({
        "iterations": sol.iterations,
        "converged": sol.converged,
        "final_cost": sol.cost_trace.last().copied(),
        "cost_trace": sol.cost_trace,
    });
    write_json(&out.join("slam.json"), &report)?;
    let summary = json!({
        "stage": "slam",
        "iterations": sol.iterations,
        "converged": sol.converged,
        "initial_cost": sol.cost_trace.first().copied(),
        "final_cost": sol.cost_trace.last().copied(),
    });
    if !sol.converged {
        return Err(Failure::Numerical {
            stage: "slam",
            message: format!("bundle adjustment did not converge in {} iterations", sol.iterations),
            details: report,
        });
    }
    Ok(summary)
}

pub fn place_stage(input: &Path, out: &Path, cfg: &PipelineConfig) -> StageResult {
    let sc = ScenarioInput::read(input, &cfg.focal)?;
    let traj_path = out.join("trajectory.txt");
    let (_, poses) = read_trajectory(&traj_path)?;
    if poses.len() != sc.camera.frames {
        return Err(Error::format(traj_path.display(), format!("{} poses for {} frames", poses.len(), sc.camera.frames)).into());
    }
    let depth_path = out.join("anchor_depths.jsonl");
    let recs: Vec<AnchorDepthRecord> = read_jsonl(&depth_path)?;
    if recs.len() != sc.camera.frames || recs.iter().enumerate().any(|(t, r)| r.frame != t || r.inv_depths.len() != sc.anchors[t].len()) {
        return Err(Error::format(depth_path.display(), "expected one record per frame with one value per anchor").into());
    }
    let inv: Vec<Vec<f64>> = recs.into_iter().map(|r| r.inv_depths).collect();
    let lifted = lift_world_points(&poses, &sc.anchors, &inv, &sc.intr, &sc.anchor_colors, &sc.anchor_human())?;
    let kept = filter_epipolar(&lifted, &poses, &sc.intr, &sc.observations, cfg.slam.epipolar_tau_px)?;
    write_ply(&out.join("scene.ply"), &kept.cloud)?;

    let template = template();
    let world: Vec<BodyTrack<f64>> = sc
        .tracks
        .iter()
        .map(|tr| interpolate_track(&track_to_world(tr, &poses, &template)?))
        .collect::<humanslam::Result<_>>()?;
    write_tracks(&out.join("bodies_world.jsonl"), &world)?;
    Ok(json!({
        "stage": "place",
        "lifted_points": lifted.cloud.len(),
        "kept_points": kept.cloud.len(),
        "tracks": world.len(),
    }))
}

pub fn load_denoiser(cfg: &PipelineConfig) -> humanslam::Result<DenoiserWeights<f64>> {
    match &cfg.denoise.weights {
        Some(p) => load_weights(p),
        None => DenoiserWeights::init(&cfg.denoise.network),
    }
}

pub fn denoise_stage(input: &Path, out: &Path, cfg: &PipelineConfig) -> StageResult {
    let sc = ScenarioInput::read(input, &cfg.focal)?;
    let tracks = read_tracks(&out.join("bodies_world.jsonl"), sc.camera.frames, FrameTag::World)?;
    let cloud = read_ply(&out.join("scene.ply"))?;
    let weights = load_denoiser(cfg)?;
    let clean: Vec<_> = tracks.iter().map(|tr| denoise(tr, &cloud, &weights)).collect::<humanslam::Result<_>>().map_err(|e| numerical("denoise", e))?;
    write_tracks(&out.join("bodies_denoised.jsonl"), &clean)?;
    Ok(json!({
        "stage": "denoise",
        "tracks": clean.len(),
        "scene_points": cloud.len(),
        "weights": if cfg.denoise.weights.is_some() { "file" } else { "identity" },
    }))
}

fn joints_of(track: &BodyTrack<f64>, template: &BodyTemplate<f64>) -> humanslam::Result<JointSequence<f64>> {
    Ok(JointSequence::new(track.observed()?.iter().map(|p| template.posed_joints(p)).collect()))
}

/// Whole-sequence depth metrics over every frame's jointly valid pixels.
fn pooled_depth_metrics(pred: &[DepthMap<f64>], gt: &[DepthMap<f64>]) -> humanslam::Result<humanslam::metrics::DepthMetrics> {
    let stack = |maps: &[DepthMap<f64>]| -> humanslam::Result<DepthMap<f64>> {
        let w = maps[0].width;
        let h: usize = maps.iter().map(|m| m.height).sum();
        if maps.iter().any(|m| m.width != w) {
            return Err(Error::Shape("depth maps differ in width".into()));
        }
        DepthMap::new(w, h, maps.iter().flat_map(|m| m.data.iter().copied()).collect())
    };
    depth_metrics(&stack(pred)?, &stack(gt)?)
}

pub fn eval_stage(input: &Path, out: &Path, cfg: &PipelineConfig) -> StageResult {
    let frames = read_json::<crate::layout::CameraInfo>(&input.join("camera.json"))?.frames;
    let gt = input.join("gt");
    let mut m = MetricsReport::default();

    let (pred_traj, gt_traj) = (out.join("trajectory.txt"), gt.join("trajectory.txt"));
    if pred_traj.exists() && gt_traj.exists() {
        let (_, p) = read_trajectory(&pred_traj)?;
        let (_, g) = read_trajectory(&gt_traj)?;
        m.ate_mm = Some(ate(&p, &g, cfg.eval.ate_alignment)?);
    }

    let pred_bodies = [out.join("bodies_denoised.jsonl"), out.join("bodies_world.jsonl")].into_iter().find(|p| p.exists());
    let gt_bodies = gt.join("bodies.jsonl");
    if let (Some(pb), true) = (&pred_bodies, gt_bodies.exists()) {
        let template = template();
        let pred = read_tracks(pb, frames, FrameTag::World)?;
        let truth = read_tracks(&gt_bodies, frames, FrameTag::World)?;
        let opts = MpjpeOptions { with_scale: cfg.eval.mpjpe_with_scale };
        let mut sums = [0.0; 4];
        let mut n = 0usize;
        for g in &truth {
            let Some(p) = pred.iter().find(|p| p.track_id == g.track_id) else {
                return Err(Error::format(pb.display(), format!("no prediction for track {}", g.track_id)).into());
            };
            let (pj, gj) = (joints_of(p, &template)?, joints_of(g, &template)?);
            sums[0] += pa_mpjpe(&pj, &gj)?;
            sums[1] += fa_mpjpe(&pj, &gj, opts)?;
            sums[2] += wa_mpjpe(&pj, &gj, opts)?;
            sums[3] += accel_error(&pj, &gj)?;
            n += 1;
        }
        if n > 0 {
            let k = n as f64;
            m.pa_mpjpe_mm = Some(sums[0] / k);
            m.fa_mpjpe_mm = Some(sums[1] / k);
            m.wa_mpjpe_mm = Some(sums[2] / k);
            m.accel_mm_f2 = Some(sums[3] / k);
        }
    }

    let (pred_depth, gt_depth) = (out.join("depth"), gt.join("depth"));
    if pred_depth.is_dir() && gt_depth.is_dir() {
        let d = pooled_depth_metrics(&read_depth_dir(&pred_depth, frames)?, &read_depth_dir(&gt_depth, frames)?)?;
        m.delta1 = Some(d.delta1);
        m.delta2 = Some(d.delta2);
        m.delta3 = Some(d.delta3);
        m.rel = Some(d.rel);
        m.rmse_m = Some(d.rmse);
    }

    write_json(&out.join("metrics.json"), &m)?;
    Ok(serde_json::to_value(m).expect("metrics serialize"))
}

/// `calibrate → slam → place → (denoise) → eval`; synthesizes a scenario
/// into `<out>/scenario` when no input is given.
pub fn pipeline(input: Option<&Path>, out: &Path, cfg: &PipelineConfig) -> StageResult {
    let mut summary = serde_json::Map::new();
    let input: PathBuf = match input {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = out.join("scenario");
            summary.insert("synth".into(), synth(&dir, cfg)?);
            dir
        }
    };
    summary.insert("calibrate".into(), calibrate_stage(&input, out, cfg)?);
    summary.insert("slam".into(), slam_stage(&input, out, cfg)?);
    summary.insert("place".into(), place_stage(&input, out, cfg)?);
    if cfg.denoise.enabled {
        summary.insert("denoise".into(), denoise_stage(&input, out, cfg)?);
    }
    summary.insert("eval".into(), eval_stage(&input, out, cfg)?);
    Ok(json!({ "stage": "pipeline", "stages": summary }))
}
