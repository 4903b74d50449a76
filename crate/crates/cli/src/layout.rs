//! Scenario directory layout.
//!
//! ```text
//! camera.json            {width, height, frames, fps}
//! init_trajectory.txt    initial camera-to-world poses (TUM)
//! depth/NNNNNN.f32|json  raw monocular depth, unknown scale and offset
//! masks/NNNNNN.pgm       human instance masks
//! bodies.jsonl           camera-frame body estimates
//! anchors.jsonl          {frame, pixels, colors}: sampled pixels per frame
//! flow.jsonl             {i, j, targets, confidence}: correspondences of the anchors of i in j
//! gt/trajectory.txt      ground-truth poses (optional)
//! gt/bodies.jsonl        ground-truth world-frame bodies (optional)
//! gt/depth/NNNNNN.*      ground-truth metric depth (optional)
//! ```
//!
//! Mask instance `n` belongs to the `n`-th track in ascending id order.

use std::path::{Path, PathBuf};

use humanslam::ba_core::FramePairObservation;
use humanslam::body_model::FrameTag;
use humanslam::geometry::{DepthMap, InstanceMask, Intrinsics, SE3Pose};
use humanslam::synth::SynthScenario;
use humanslam::world_frame::BodyTrack;
use humanslam::{Error, Result};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::config::FocalPolicy;
use crate::formats::*;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraInfo {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorRecord {
    pub frame: usize,
    pub pixels: Vec<[f64; 2]>,
    pub colors: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowRecord {
    pub i: usize,
    pub j: usize,
    pub targets: Vec<[f64; 2]>,
    pub confidence: Vec<[f64; 2]>,
}

pub fn frame_stem(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("{:06}", t))
}

pub fn read_depth_dir(dir: &Path, frames: usize) -> Result<Vec<DepthMap<f64>>> {
    (0..frames).map(|t| read_depth(&frame_stem(dir, t))).collect()
}

pub fn write_depth_dir(dir: &Path, depths: &[DepthMap<f64>]) -> Result<()> {
    depths.iter().enumerate().try_for_each(|(t, d)| write_depth(&frame_stem(dir, t), d))
}

/// Everything a run may read from a scenario directory, minus ground truth.
#[derive(Debug, Clone)]
pub struct ScenarioInput {
    pub dir: PathBuf,
    pub camera: CameraInfo,
    pub intr: Intrinsics<f64>,
    pub timestamps: Vec<f64>,
    pub init_poses: Vec<SE3Pose<f64>>,
    pub depth: Vec<DepthMap<f64>>,
    pub masks: Vec<InstanceMask>,
    pub tracks: Vec<BodyTrack<f64>>,
    pub anchors: Vec<Vec<Vector2<f64>>>,
    pub anchor_colors: Vec<Vec<[f64; 3]>>,
    pub observations: Vec<FramePairObservation<f64>>,
}

impl ScenarioInput {
    pub fn read(dir: &Path, focal: &FocalPolicy) -> Result<Self> {
        let cam_path = dir.join("camera.json");
        let camera: CameraInfo = read_json(&cam_path)?;
        if camera.frames < 2 {
            return Err(Error::format(cam_path.display(), "a sequence needs at least 2 frames"));
        }
        let intr = focal.intrinsics(camera.width, camera.height).map_err(|e| Error::format(cam_path.display(), e.to_string()))?;
        let f = camera.frames;

        let traj_path = dir.join("init_trajectory.txt");
        let (timestamps, init_poses) = read_trajectory(&traj_path)?;
        if init_poses.len() != f {
            return Err(Error::format(traj_path.display(), format!("{} poses for {} frames", init_poses.len(), f)));
        }

        let depth = read_depth_dir(&dir.join("depth"), f)?;
        let masks: Vec<_> = (0..f).map(|t| read_pgm(&frame_stem(&dir.join("masks"), t).with_extension("pgm"))).collect::<Result<_>>()?;
        for t in 0..f {
            let (d, m) = (&depth[t], &masks[t]);
            if (d.width, d.height) != (camera.width, camera.height) || (m.width, m.height) != (camera.width, camera.height) {
                return Err(Error::format(dir.display(), format!("frame {}: depth or mask size differs from camera.json", t)));
            }
        }
        let tracks = read_tracks(&dir.join("bodies.jsonl"), f, FrameTag::Camera)?;

        let anchor_path = dir.join("anchors.jsonl");
        let anchor_recs: Vec<AnchorRecord> = read_jsonl(&anchor_path)?;
        if anchor_recs.len() != f || anchor_recs.iter().enumerate().any(|(t, r)| r.frame != t) {
            return Err(Error::format(anchor_path.display(), "expected one record per frame, in frame order"));
        }
        let mut anchors = Vec::with_capacity(f);
        let mut anchor_colors = Vec::with_capacity(f);
        for r in anchor_recs {
            if r.colors.len() != r.pixels.len() {
                return Err(Error::format(anchor_path.display(), format!("frame {}: {} colors for {} pixels", r.frame, r.colors.len(), r.pixels.len())));
            }
            let px: Vec<_> = r.pixels.iter().map(|p| Vector2::new(p[0], p[1])).collect();
            if let Some(k) = px.iter().position(|p| !intr.contains(p)) {
                return Err(Error::format(anchor_path.display(), format!("frame {}: anchor {} lies outside the image", r.frame, k)));
            }
            anchors.push(px);
            anchor_colors.push(r.colors);
        }

        let flow_path = dir.join("flow.jsonl");
        let observations = read_jsonl::<FlowRecord>(&flow_path)?
            .into_iter()
            .enumerate()
            .map(|(n, r)| {
                let at = |m: String| Error::format(flow_path.display(), format!("record {} (frames {} -> {}): {}", n + 1, r.i, r.j, m));
                if r.i >= f || r.j >= f || r.i == r.j {
                    return Err(at("frame indices out of range".into()));
                }
                let k = anchors[r.i].len();
                if r.targets.len() != k || r.confidence.len() != k {
                    return Err(at(format!("needs {} targets and weights", k)));
                }
                if r.confidence.iter().flatten().any(|w| !(*w >= 0.0)) {
                    return Err(at("weights must be non-negative".into()));
                }
                Ok(FramePairObservation {
                    i: r.i,
                    j: r.j,
                    pixels: anchors[r.i].clone(),
                    targets: r.targets.iter().map(|p| Vector2::new(p[0], p[1])).collect(),
                    confidence: r.confidence.iter().map(|p| Vector2::new(p[0], p[1])).collect(),
                })
            })
            .collect::<Result<_>>()?;

        Ok(Self { dir: dir.to_path_buf(), camera, intr, timestamps, init_poses, depth, masks, tracks, anchors, anchor_colors, observations })
    }

    pub fn union_masks(&self) -> Vec<humanslam::geometry::Mask> {
        self.masks.iter().map(InstanceMask::union).collect()
    }

    /// Whether each anchor falls on a human.
    pub fn anchor_human(&self) -> Vec<Vec<bool>> {
        self.anchors.iter().zip(self.union_masks()).map(|(a, m)| a.iter().map(|p| m.at(p)).collect()).collect()
    }
}

/// Writes the inputs and the ground truth of a synthetic scenario.
pub fn write_scenario(dir: &Path, s: &SynthScenario) -> Result<()> {
    let cfg = &s.config;
    write_json(&dir.join("camera.json"), &CameraInfo { width: cfg.width, height: cfg.height, frames: cfg.frames, fps: cfg.fps })?;
    write_trajectory(&dir.join("init_trajectory.txt"), &s.timestamps, &s.init_poses)?;
    write_depth_dir(&dir.join("depth"), &s.depth_raw)?;
    for (t, m) in s.masks.iter().enumerate() {
        write_pgm(&frame_stem(&dir.join("masks"), t).with_extension("pgm"), m)?;
    }
    write_tracks(&dir.join("bodies.jsonl"), &s.cam_tracks)?;
    let anchors: Vec<_> = s
        .anchors
        .iter()
        .zip(&s.anchor_colors)
        .enumerate()
        .map(|(t, (a, c))| AnchorRecord { frame: t, pixels: a.iter().map(|p| [p.x, p.y]).collect(), colors: c.clone() })
        .collect();
    write_jsonl(&dir.join("anchors.jsonl"), &anchors)?;
    let flow: Vec<_> = s
        .observations
        .iter()
        .map(|o| FlowRecord {
            i: o.i,
            j: o.j,
            targets: o.targets.iter().map(|p| [p.x, p.y]).collect(),
            confidence: o.confidence.iter().map(|p| [p.x, p.y]).collect(),
        })
        .collect();
    write_jsonl(&dir.join("flow.jsonl"), &flow)?;
    let gt = dir.join("gt");
    write_trajectory(&gt.join("trajectory.txt"), &s.timestamps, &s.gt_poses)?;
    write_tracks(&gt.join("bodies.jsonl"), &s.gt_tracks)?;
    write_depth_dir(&gt.join("depth"), &s.depth_true)
}
