//! Deterministic synthetic worlds with known ground truth, plus brute-force
//! oracles for the calibration optimizer and for gradients.
//!
//! Every random draw comes from `ChaCha8Rng` seeded with the scenario seed,
//! so a seed names one scenario on every platform.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ba_core::{lift_world_points, predict_correspondence, BAProblem, FramePairObservation};
use crate::denoiser::{train_discriminator, DenoiserConfig, DenoiserWeights, Sample};
use crate::body_model::{BodyParams, BodyTemplate, FrameTag, NUM_BETAS, NUM_JOINTS};
use crate::depth_calibration::{assemble_frames, rasterize, rasterize_frames, CalibrationFrame, CalibrationProblem};
use crate::error::{Error, Result};
use crate::geometry::{DepthMap, InstanceMask, Intrinsics, Mask, PointCloud, Rotation, SE3Pose};
use crate::world_frame::{interpolate_track, track_to_world, world_to_camera, BodyTrack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub humans: usize,
    pub anchors_per_frame: usize,
    /// Frames `i` and `j` are paired when `0 < |i − j| <= pair_range`.
    pub pair_range: usize,
    /// Gaussian correspondence noise, pixels.
    pub sigma_px: f64,
    /// Fraction of in-mask anchors whose targets follow the human instead of the scene.
    pub corruption: f64,
    /// Raw depth is `(D_true − depth_offset) / depth_scale`.
    pub depth_scale: f64,
    pub depth_offset: f64,
    /// Multiplicative Gaussian noise on raw depth.
    pub depth_noise: f64,
    /// Magnitude of the initial pose perturbation for frames after the first.
    pub init_rot_noise: f64,
    pub init_trans_noise: f64,
    /// Noise on the per-frame body estimates handed to the pipeline.
    pub body_rot_noise: f64,
    pub body_trans_noise: f64,
    pub missing_rate: f64,
    pub splat_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 12,
            width: 128,
            height: 96,
            fps: 10.0,
            humans: 1,
            anchors_per_frame: 64,
            pair_range: 2,
            sigma_px: 0.0,
            corruption: 0.0,
            depth_scale: 2.0,
            depth_offset: 0.5,
            depth_noise: 0.0,
            init_rot_noise: 0.05,
            init_trans_noise: 0.05,
            body_rot_noise: 0.0,
            body_trans_noise: 0.0,
            missing_rate: 0.0,
            splat_radius: 2.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if self.frames < 2 {
            return Err(Error::Config(format!("frames must be at least 2, got {}", self.frames)));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("image must be at least 16x16".into()));
        }
        if !frac(self.corruption) || !frac(self.missing_rate) {
            return Err(Error::Config("corruption and missing_rate must lie in [0, 1]".into()));
        }
        if !(self.depth_scale > 0.0) || !self.depth_offset.is_finite() {
            return Err(Error::Config("depth_scale must be positive and depth_offset finite".into()));
        }
        if self.humans == 0 || self.humans > 4 {
            return Err(Error::Config("humans must be between 1 and 4".into()));
        }
        let g = (self.anchors_per_frame as f64).sqrt().round() as usize;
        if g * g != self.anchors_per_frame || g == 0 {
            return Err(Error::Config("anchors_per_frame must be a positive perfect square".into()));
        }
        if self.pair_range == 0 || !(self.fps > 0.0) {
            return Err(Error::Config("pair_range and fps must be positive".into()));
        }
        for (name, v) in [
            ("sigma_px", self.sigma_px),
            ("depth_noise", self.depth_noise),
            ("init_rot_noise", self.init_rot_noise),
            ("init_trans_noise", self.init_trans_noise),
            ("body_rot_noise", self.body_rot_noise),
            ("body_trans_noise", self.body_trans_noise),
            ("splat_radius", self.splat_radius),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{} must be non-negative", name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScenario {
    pub seed: u64,
    pub config: SynthConfig,
    pub intr: Intrinsics<f64>,
    pub timestamps: Vec<f64>,
    pub gt_poses: Vec<SE3Pose<f64>>,
    pub init_poses: Vec<SE3Pose<f64>>,
    /// World-frame ground-truth body tracks.
    pub gt_tracks: Vec<BodyTrack<f64>>,
    /// Camera-frame per-frame body estimates (possibly noisy, possibly missing).
    pub cam_tracks: Vec<BodyTrack<f64>>,
    pub depth_true: Vec<DepthMap<f64>>,
    pub depth_raw: Vec<DepthMap<f64>>,
    pub masks: Vec<InstanceMask>,
    pub colors: Vec<Vec<[f64; 3]>>,
    pub anchors: Vec<Vec<Vector2<f64>>>,
    pub gt_inv_depths: Vec<Vec<f64>>,
    pub anchor_colors: Vec<Vec<[f64; 3]>>,
    pub anchor_human: Vec<Vec<bool>>,
    pub observations: Vec<FramePairObservation<f64>>,
    /// `(observation, anchor)` pairs whose targets were corrupted.
    pub corrupted: Vec<(usize, usize)>,
}

const HUMAN_COLOR: [f64; 3] = [0.85, 0.35, 0.3];

/// Axis-aligned box; used both for the room (seen from inside) and clutter.
#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl Aabb {
    /// Nearest positive ray parameter hitting the box surface.
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a] < self.lo[a] || o[a] > self.hi[a] {
                    return None;
                }
                continue;
            }
            let (mut ta, mut tb) = ((self.lo[a] - o[a]) / d[a], (self.hi[a] - o[a]) / d[a]);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        if t1 < t0 {
            return None;
        }
        if t0 > 1e-9 {
            Some(t0)
        } else if t1 > 1e-9 {
            Some(t1)
        } else {
            None
        }
    }
}

struct Scene {
    room: Aabb,
    clutter: Vec<Aabb>,
}

impl Scene {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let room = Aabb { lo: Vector3::new(-4.0, 0.0, -6.0), hi: Vector3::new(4.0, 3.2, 9.0) };
        let clutter = (0..3)
            .map(|k| {
                let side = if k % 2 == 0 { -1.0 } else { 1.0 };
                let cx = side * rng.random_range(1.8..3.2);
                let cz = rng.random_range(0.0..7.0);
                let (sx, sy, sz) = (rng.random_range(0.3..0.7), rng.random_range(0.4..1.4), rng.random_range(0.3..0.7));
                Aabb { lo: Vector3::new(cx - sx, 0.0, cz - sz), hi: Vector3::new(cx + sx, sy, cz + sz) }
            })
            .collect();
        Self { room, clutter }
    }

    /// Depth along a camera ray with bearing z = 1, and the world hit point.
    fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let mut best = self.room.hit(o, d);
        for b in &self.clutter {
            if let Some(t) = b.hit(o, d) {
                if best.is_none_or(|bt| t < bt) {
                    best = Some(t);
                }
            }
        }
        best.map(|t| (t, o + d * t))
    }
}

/// Smooth procedural albedo of a world point.
fn texture(p: &Vector3<f64>) -> [f64; 3] {
    let s = |a: f64| 0.5 + 0.4 * a.sin();
    [s(2.1 * p.x + 0.7 * p.z), s(1.7 * p.y - 1.3 * p.z + 1.0), s(0.9 * p.x + 2.3 * p.y + 2.0)]
}

fn bezier(ctrl: &[Vector3<f64>; 4], u: f64) -> Vector3<f64> {
    let v = 1.0 - u;
    ctrl[0] * (v * v * v) + ctrl[1] * (3.0 * v * v * u) + ctrl[2] * (3.0 * v * u * u) + ctrl[3] * (u * u * u)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

/// Camera trajectory: cubic Bézier through random control points for the
/// position and for (yaw, pitch, roll), looking down the room's +z axis.
fn camera_trajectory(rng: &mut ChaCha8Rng, frames: usize) -> Vec<SE3Pose<f64>> {
    let mut pos = [Vector3::zeros(); 4];
    let mut ang = [Vector3::zeros(); 4];
    for k in 0..4 {
        pos[k] = Vector3::new(rng.random_range(-0.5..0.5), 1.3 + rng.random_range(-0.15..0.15), -3.5 + rng.random_range(-0.4..0.4));
        ang[k] = Vector3::new(rng.random_range(-0.12..0.12), 0.12 + rng.random_range(-0.05..0.05), rng.random_range(-0.04..0.04));
    }
    (0..frames)
        .map(|t| {
            let u = t as f64 / (frames - 1) as f64;
            let a = bezier(&ang, u);
            // camera x right, y down, z forward; rot_z(π) aligns it with a y-up world
            let r = Rotation::rot_y(a.x).compose(&Rotation::rot_x(a.y)).compose(&Rotation::rot_z(std::f64::consts::PI)).compose(&Rotation::rot_z(a.z));
            SE3Pose::new(r, bezier(&pos, u))
        })
        .collect()
}

/// Walking humans with sinusoidal joint angles.
fn human_tracks(rng: &mut ChaCha8Rng, cfg: &SynthConfig, template: &BodyTemplate<f64>) -> Vec<BodyTrack<f64>> {
    let t_total = cfg.frames;
    (0..cfg.humans)
        .map(|h| {
            // diagonal walks across the view cover a wide depth range and move on screen
            let lane = (h as f64 - (cfg.humans as f64 - 1.0) / 2.0) * 1.2;
            let (mut z0, mut z1) = (rng.random_range(-0.5..0.5), rng.random_range(3.5..4.5));
            let (mut x0, mut x1) = (lane - rng.random_range(0.6..1.0), lane + rng.random_range(0.6..1.0));
            if rng.random_bool(0.5) {
                std::mem::swap(&mut z0, &mut z1);
            }
            if rng.random_bool(0.5) {
                std::mem::swap(&mut x0, &mut x1);
            }
            let mut beta = [0.0; NUM_BETAS];
            let nb = Normal::new(0.0, 0.3).expect("normal");
            for b in &mut beta {
                *b = nb.sample(rng);
            }
            let c = template.pelvis(&beta);
            let axes: Vec<Vector3<f64>> = (0..NUM_JOINTS).map(|_| random_unit(rng)).collect();
            let amps: Vec<f64> = (0..NUM_JOINTS).map(|j| if j == 0 { 0.0 } else { rng.random_range(0.1..0.35) }).collect();
            let phases: Vec<f64> = (0..NUM_JOINTS).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            let period = rng.random_range(6.0..10.0);
            let yaw = (x1 - x0).atan2(z1 - z0);
            let slots = (0..t_total)
                .map(|t| {
                    let u = t as f64 / (t_total - 1) as f64;
                    let ground = Vector3::new(x0 + (x1 - x0) * u, 0.0, z0 + (z1 - z0) * u);
                    let theta = (0..NUM_JOINTS)
                        .map(|j| {
                            let a = amps[j] * (std::f64::consts::TAU * t as f64 / period + phases[j]).sin();
                            Rotation::exp(&(axes[j] * a))
                        })
                        .collect();
                    Some(BodyParams {
                        phi: Rotation::rot_y(yaw + 0.1 * (t as f64 * 0.7).sin()),
                        theta,
                        beta,
                        gamma: ground - Vector3::new(c.x, 0.0, c.z),
                    })
                })
                .collect();
            BodyTrack { track_id: h as u32, frame: FrameTag::World, slots }
        })
        .collect()
}

fn jittered_anchors(rng: &mut ChaCha8Rng, intr: &Intrinsics<f64>, n: usize) -> Vec<Vector2<f64>> {
    let g = (n as f64).sqrt().round() as usize;
    let (cw, ch) = (intr.width as f64 / g as f64, intr.height as f64 / g as f64);
    let mut out = Vec::with_capacity(n);
    for gy in 0..g {
        for gx in 0..g {
            let u0 = (gx as f64 * cw).floor() as usize;
            let u1 = (((gx + 1) as f64 * cw).floor() as usize).min(intr.width).max(u0 + 1);
            let v0 = (gy as f64 * ch).floor() as usize;
            let v1 = (((gy + 1) as f64 * ch).floor() as usize).min(intr.height).max(v0 + 1);
            out.push(Vector2::new(rng.random_range(u0..u1) as f64, rng.random_range(v0..v1) as f64));
        }
    }
    out
}

fn perturb(rng: &mut ChaCha8Rng, g: &SE3Pose<f64>, rot: f64, trans: f64) -> SE3Pose<f64> {
    g.retract(&(random_unit(rng) * rot), &(random_unit(rng) * trans))
}

/// Builds a scenario from a seed. Same seed and config give bit-identical output.
pub fn generate(seed: u64, cfg: &SynthConfig) -> Result<SynthScenario> {
    cfg.validate()?;
    let template = BodyTemplate::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = Intrinsics::from_image_size(cfg.width, cfg.height)?;
    let scene = Scene::random(&mut rng);
    let gt_poses = camera_trajectory(&mut rng, cfg.frames);
    let gt_tracks = human_tracks(&mut rng, cfg, &template);
    let (w, h) = (cfg.width, cfg.height);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut depth_true = Vec::with_capacity(cfg.frames);
    let mut depth_raw = Vec::with_capacity(cfg.frames);
    let mut masks = Vec::with_capacity(cfg.frames);
    let mut colors = Vec::with_capacity(cfg.frames);
    for (t, pose) in gt_poses.iter().enumerate() {
        let mut depth = vec![f64::NAN; w * h];
        let mut col = vec![[0.0; 3]; w * h];
        let mut inst = vec![0u8; w * h];
        for v in 0..h {
            for u in 0..w {
                let dir = pose.rotation.apply(&Vector3::new((u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0));
                if let Some((z, p)) = scene.cast(&pose.translation, &dir) {
                    depth[v * w + u] = z;
                    col[v * w + u] = texture(&p);
                }
            }
        }
        for (n, track) in gt_tracks.iter().enumerate() {
            let params = track.slots[t].as_ref().expect("ground truth is complete");
            let cam = world_to_camera(params, pose, &template);
            let mesh = template.pose_mesh(&cam, FrameTag::Camera);
            let r = rasterize(&mesh, &intr, cfg.splat_radius);
            for i in 0..w * h {
                let z = r.zbuf.data[i];
                if r.mask.data[i] && (depth[i].is_nan() || z < depth[i]) {
                    depth[i] = z;
                    inst[i] = (n + 1) as u8;
                    col[i] = HUMAN_COLOR;
                }
            }
        }
        let raw: Vec<f64> = depth
            .iter()
            .map(|&z| {
                let mut d = (z - cfg.depth_offset) / cfg.depth_scale;
                if cfg.depth_noise > 0.0 {
                    d *= 1.0 + cfg.depth_noise * unit.sample(&mut rng);
                }
                if d > 0.0 {
                    d
                } else {
                    f64::NAN
                }
            })
            .collect();
        depth_true.push(DepthMap::new(w, h, depth)?);
        depth_raw.push(DepthMap::new(w, h, raw)?);
        // ids may be non-contiguous if a human is fully occluded; compact them
        masks.push(compact_mask(w, h, inst, cfg.humans)?);
        colors.push(col);
    }

    let mut anchors = Vec::with_capacity(cfg.frames);
    let mut gt_inv_depths: Vec<Vec<f64>> = Vec::with_capacity(cfg.frames);
    let mut anchor_colors = Vec::with_capacity(cfg.frames);
    let mut anchor_human = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let a = jittered_anchors(&mut rng, &intr, cfg.anchors_per_frame);
        let idx = |p: &Vector2<f64>| p.y as usize * w + p.x as usize;
        gt_inv_depths.push(a.iter().map(|p| 1.0 / depth_true[t].data[idx(p)]).collect());
        anchor_colors.push(a.iter().map(|p| colors[t][idx(p)]).collect());
        anchor_human.push(a.iter().map(|p| masks[t].data[idx(p)] != 0).collect());
        anchors.push(a);
    }

    // apparent pelvis motion of each human in frame j between times i and j
    let pelvis_world = |n: usize, t: usize| {
        let p = gt_tracks[n].slots[t].as_ref().expect("complete");
        template.pelvis(&p.beta) + p.gamma
    };
    let mut observations = Vec::new();
    let mut corrupted = Vec::new();
    for i in 0..cfg.frames {
        for j in 0..cfg.frames {
            if i == j || i.abs_diff(j) > cfg.pair_range {
                continue;
            }
            let mut targets = Vec::with_capacity(anchors[i].len());
            let mut confidence = Vec::with_capacity(anchors[i].len());
            for (k, p) in anchors[i].iter().enumerate() {
                let pred = predict_correspondence(&gt_poses[i], &gt_poses[j], &intr, p, gt_inv_depths[i][k]);
                let noise = Vector2::new(unit.sample(&mut rng), unit.sample(&mut rng)) * cfg.sigma_px;
                let inst = masks[i].data[p.y as usize * w + p.x as usize];
                let corrupt = inst != 0 && rng.random_bool(cfg.corruption);
                match pred {
                    Some(q) if intr.contains(&q) => {
                        let mut target = q + noise;
                        if corrupt {
                            let n = inst as usize - 1;
                            let gjinv = gt_poses[j].inverse();
                            let shift = match (
                                intr.project(&gjinv.transform_point(&pelvis_world(n, j))),
                                intr.project(&gjinv.transform_point(&pelvis_world(n, i))),
                            ) {
                                (Ok(a), Ok(b)) => a - b,
                                _ => Vector2::zeros(),
                            };
                            let jitter = Vector2::new(unit.sample(&mut rng), unit.sample(&mut rng));
                            target += shift + jitter;
                            corrupted.push((observations.len(), k));
                        }
                        targets.push(target);
                        confidence.push(Vector2::new(1.0, 1.0));
                    }
                    _ => {
                        targets.push(*p);
                        confidence.push(Vector2::zeros());
                    }
                }
            }
            observations.push(FramePairObservation { i, j, pixels: anchors[i].clone(), targets, confidence });
        }
    }

    let mut init_poses = gt_poses.clone();
    for g in init_poses.iter_mut().skip(1) {
        *g = perturb(&mut rng, g, cfg.init_rot_noise, cfg.init_trans_noise);
    }

    let cam_tracks = gt_tracks
        .iter()
        .map(|tr| {
            let slots = tr
                .slots
                .iter()
                .zip(&gt_poses)
                .enumerate()
                .map(|(t, (s, g))| {
                    let mut p = world_to_camera(s.as_ref().expect("complete"), g, &template);
                    if cfg.body_rot_noise > 0.0 {
                        p.phi = Rotation::exp(&(random_unit(&mut rng) * cfg.body_rot_noise * unit.sample(&mut rng).abs())).compose(&p.phi);
                        for r in p.theta.iter_mut() {
                            *r = Rotation::exp(&(random_unit(&mut rng) * cfg.body_rot_noise * unit.sample(&mut rng).abs())).compose(r);
                        }
                    }
                    if cfg.body_trans_noise > 0.0 {
                        p.gamma += Vector3::new(unit.sample(&mut rng), unit.sample(&mut rng), unit.sample(&mut rng)) * cfg.body_trans_noise;
                    }
                    // the first frame is always observed so tracks are never empty
                    let missing = t > 0 && cfg.missing_rate > 0.0 && rng.random_bool(cfg.missing_rate);
                    (!missing).then_some(p)
                })
                .collect();
            BodyTrack { track_id: tr.track_id, frame: FrameTag::Camera, slots }
        })
        .collect();

    Ok(SynthScenario {
        seed,
        config: cfg.clone(),
        intr,
        timestamps: (0..cfg.frames).map(|t| t as f64 / cfg.fps).collect(),
        gt_poses,
        init_poses,
        gt_tracks,
        cam_tracks,
        depth_true,
        depth_raw,
        masks,
        colors,
        anchors,
        gt_inv_depths,
        anchor_colors,
        anchor_human,
        observations,
        corrupted,
    })
}

fn compact_mask(w: usize, h: usize, mut inst: Vec<u8>, humans: usize) -> Result<InstanceMask> {
    let mut present = vec![false; humans + 1];
    for &i in &inst {
        present[i as usize] = true;
    }
    let mut remap = vec![0u8; humans + 1];
    let mut next = 1u8;
    for n in 1..=humans {
        if present[n] {
            remap[n] = next;
            next += 1;
        }
    }
    for i in inst.iter_mut() {
        *i = remap[*i as usize];
    }
    InstanceMask::new(w, h, inst)
}

/// Copies of `like` with uniformly random joint rotations and exaggerated
/// shapes, used as fake examples for the discriminator.
pub fn implausible_poses(seed: u64, like: &[BodyParams<f64>]) -> Vec<BodyParams<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    like.iter()
        .map(|p| {
            let mut q = p.clone();
            for r in q.theta.iter_mut() {
                *r = Rotation::exp(&(random_unit(&mut rng) * rng.random_range(0.0..std::f64::consts::PI)));
            }
            for b in q.beta.iter_mut() {
                *b = rng.random_range(-3.0..3.0);
            }
            q
        })
        .collect()
}

/// A fixed one-sequence denoiser training problem: a small network whose
/// discriminator has already learned the target as real and random
/// articulations as fake, so the adversarial term behaves as a pose prior.
#[derive(Debug, Clone)]
pub struct DenoiserToyTask {
    pub sample: Sample<f64>,
    pub weights: DenoiserWeights<f64>,
}

pub fn denoiser_toy_task(seed: u64) -> Result<DenoiserToyTask> {
    let frames = 16;
    let cfg = SynthConfig { frames, body_rot_noise: 0.05, body_trans_noise: 0.03, ..Default::default() };
    let sample = generate(seed, &cfg)?.denoiser_sample(0)?;
    let net = DenoiserConfig {
        latent_dim: 32,
        decoder_layers: 2,
        feedforward_dim: 64,
        train_window: [frames, frames],
        infer_window: frames,
        max_window: frames,
        seed,
        ..Default::default()
    };
    let mut weights = DenoiserWeights::init(&net)?;
    let real = vec![sample.target.clone()];
    let fake: Vec<_> = (0..4).map(|k| implausible_poses(seed.wrapping_add(100 + k), &sample.target)).collect();
    for _ in 0..600 {
        weights = train_discriminator(&real, &fake, &weights, 1e-2)?.0;
    }
    Ok(DenoiserToyTask { sample, weights })
}

impl SynthScenario {
    /// Ground-truth scene: every anchor lifted with the true poses and depths.
    pub fn scene_cloud(&self) -> Result<PointCloud<f64>> {
        Ok(lift_world_points(&self.gt_poses, &self.anchors, &self.gt_inv_depths, &self.intr, &self.anchor_colors, &self.anchor_human)?.cloud)
    }

    /// Denoiser supervision for one human: its noisy estimates moved to the
    /// world with the true poses, against the true world track.
    pub fn denoiser_sample(&self, track: usize) -> Result<Sample<f64>> {
        let template = BodyTemplate::standard();
        let noisy = interpolate_track(&track_to_world(&self.cam_tracks[track], &self.gt_poses, &template)?)?;
        Ok(Sample { input: noisy.observed()?, target: self.gt_tracks[track].observed()?, cloud: self.scene_cloud()? })
    }

    /// Calibration input: raw depth, masks and the camera-frame body meshes.
    pub fn calibration_frames(&self) -> Vec<CalibrationFrame<f64>> {
        assemble_frames(&self.depth_raw, &self.masks, &self.cam_tracks, &BodyTemplate::standard()).expect("scenario frames are consistent")
    }

    pub fn union_masks(&self) -> Vec<Mask> {
        self.masks.iter().map(InstanceMask::union).collect()
    }

    /// Inverse depth at every anchor read from a metric depth map; invalid
    /// cells fall back to the median of the valid ones.
    pub fn anchor_inv_depths(&self, depths: &[DepthMap<f64>]) -> Vec<Vec<f64>> {
        anchor_inv_depths(&self.anchors, depths)
    }

    /// Bundle adjustment problem initialized at `init_poses` with depths from `priors`.
    pub fn ba_problem(&self, priors: &[DepthMap<f64>], depth_weight: f64) -> BAProblem<f64> {
        BAProblem {
            intr: self.intr,
            poses: self.init_poses.clone(),
            anchors: self.anchors.clone(),
            inv_depths: self.anchor_inv_depths(priors),
            observations: self.observations.clone(),
            union_masks: self.union_masks(),
            prior_depths: priors.iter().cloned().map(Some).collect(),
            depth_weight,
        }
    }

    /// World-frame ground-truth joints, `T × J`.
    pub fn gt_joints(&self, track: usize) -> Vec<Vec<Vector3<f64>>> {
        let template = BodyTemplate::standard();
        self.gt_tracks[track].slots.iter().map(|s| template.posed_joints(s.as_ref().expect("complete"))).collect()
    }
}

/// Inverse depth at each anchor of a metric depth map, with the frame's
/// median as a fallback where the map is invalid.
pub fn anchor_inv_depths(anchors: &[Vec<Vector2<f64>>], depths: &[DepthMap<f64>]) -> Vec<Vec<f64>> {
    anchors
        .iter()
        .zip(depths)
        .map(|(a, d)| {
            let mut valid: Vec<f64> = d.data.iter().copied().filter(|z| z.is_finite()).collect();
            valid.sort_by(f64::total_cmp);
            let median = valid.get(valid.len() / 2).copied().unwrap_or(1.0);
            a.iter()
                .map(|p| {
                    let z = d.get(p.x.round() as usize, p.y.round() as usize);
                    1.0 / if z.is_finite() && z > 0.0 { z } else { median }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub s_min: f64,
    pub s_max: f64,
    pub o_min: f64,
    pub o_max: f64,
    pub s_steps: usize,
    pub o_steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { s_min: 0.1, s_max: 5.0, o_min: -2.0, o_max: 2.0, s_steps: 201, o_steps: 201 }
    }
}

/// Exhaustive minimum of the calibration energy over a regular `(s, o)` grid.
pub fn oracle_grid_calibration(
    frames: &[CalibrationFrame<f64>],
    intr: &Intrinsics<f64>,
    lambda: f64,
    grid: &GridSpec,
    splat_radius: f64,
) -> Result<(f64, f64, f64)> {
    let rasters = rasterize_frames(frames, intr, splat_radius)?;
    let problem = CalibrationProblem::new(frames, &rasters, intr, lambda)?;
    Ok(grid_minimum(&problem, grid))
}

pub fn grid_minimum(problem: &CalibrationProblem<f64>, grid: &GridSpec) -> (f64, f64, f64) {
    let at = |lo: f64, hi: f64, n: usize, k: usize| if n <= 1 { lo } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 };
    let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
    for a in 0..grid.s_steps {
        let s = at(grid.s_min, grid.s_max, grid.s_steps, a);
        for b in 0..grid.o_steps {
            let o = at(grid.o_min, grid.o_max, grid.o_steps, b);
            let e = problem.energy(s, o);
            if e < best.2 {
                best = (s, o, e);
            }
        }
    }
    best
}

/// Central-difference gradient of `f` at `x`.
pub fn oracle_fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], eps: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + eps;
            let fp = f(&xp);
            xp[i] = x[i] - eps;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * eps)
        })
        .collect()
}
