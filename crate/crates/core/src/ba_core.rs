//! Pseudo-RGB-D bundle adjustment over camera poses and per-anchor inverse
//! depths, with dynamic-foreground masking of the correspondence weights and
//! an inverse-depth prior from calibrated depth.
//!
//! Poses are camera-to-world. A point seen at pixel `p` of frame `i` with
//! inverse depth `d` lands in frame `j` at `π(G_j⁻¹ G_i π⁻¹(p, 1/d))`.

use nalgebra::{DMatrix, DVector, Matrix2x3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{relative_pose, skew, CloudPoint, DepthMap, Intrinsics, Mask, PointCloud, SE3Pose};
use crate::scalar::{is_finite, is_nan, lit, to_f64, Real};

/// Correspondences from the anchors of frame `i` into frame `j`.
/// Entry `k` belongs to anchor `k` of frame `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePairObservation<T: Real> {
    pub i: usize,
    pub j: usize,
    pub pixels: Vec<Vector2<T>>,
    pub targets: Vec<Vector2<T>>,
    /// Per-component `(u, v)` weights.
    pub confidence: Vec<Vector2<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BAProblem<T: Real> {
    pub intr: Intrinsics<T>,
    pub poses: Vec<SE3Pose<T>>,
    /// Anchor pixels per frame.
    pub anchors: Vec<Vec<Vector2<T>>>,
    pub inv_depths: Vec<Vec<T>>,
    pub observations: Vec<FramePairObservation<T>>,
    pub union_masks: Vec<Mask>,
    pub prior_depths: Vec<Option<DepthMap<T>>>,
    pub depth_weight: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BASolution<T: Real> {
    pub poses: Vec<SE3Pose<T>>,
    pub inv_depths: Vec<Vec<T>>,
    pub cost_trace: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BAConfig {
    pub max_iters: usize,
    pub damping_init: f64,
    /// Relative cost change that counts as converged.
    pub tol: f64,
    /// Zero weights of correspondences touching human masks.
    pub use_masks: bool,
}

impl Default for BAConfig {
    fn default() -> Self {
        Self { max_iters: 50, damping_init: 1e-4, tol: 1e-10, use_masks: true }
    }
}

const DAMPING_MAX: f64 = 1e8;
const DAMPING_MIN: f64 = 1e-12;
const MIN_DEPTH: f64 = 1e-6;
/// Inverse depth of a point 1 km away.
const INV_DEPTH_FLOOR: f64 = 1e-3;

/// Ray direction `((u − cx)/fx, (v − cy)/fy, 1)`.
fn bearing<T: Real>(intr: &Intrinsics<T>, p: &Vector2<T>) -> Vector3<T> {
    Vector3::new((p.x - intr.cx) / intr.fx, (p.y - intr.cy) / intr.fy, T::one())
}

/// Where pixel `p` of frame `i` at inverse depth `d` appears in frame `j`;
/// `None` when the point is behind camera `j` or `d` is not positive.
pub fn predict_correspondence<T: Real>(
    gi: &SE3Pose<T>,
    gj: &SE3Pose<T>,
    intr: &Intrinsics<T>,
    pixel: &Vector2<T>,
    inv_depth: T,
) -> Option<Vector2<T>> {
    if !(inv_depth > T::zero()) {
        return None;
    }
    // camera-to-world poses: the camera-i to camera-j map is G_j⁻¹ ∘ G_i
    let rel = relative_pose(&gi.inverse(), &gj.inverse());
    let xj = rel.transform_point(&(bearing(intr, pixel) / inv_depth));
    if !(xj.z > lit(MIN_DEPTH)) {
        return None;
    }
    intr.project(&xj).ok()
}

/// Zeroes weights whose anchor lies in `mask_i` or whose target lies in `mask_j`.
pub fn mask_confidence<T: Real>(
    w: &[Vector2<T>],
    mask_i: &Mask,
    mask_j: &Mask,
    pixels: &[Vector2<T>],
    targets: &[Vector2<T>],
) -> Vec<Vector2<T>> {
    w.iter()
        .zip(pixels)
        .zip(targets)
        .map(|((w, p), q)| if mask_i.at(p) || mask_j.at(q) { Vector2::zeros() } else { *w })
        .collect()
}

/// Residual `p* − π(·)` and its Jacobian with columns
/// `[ω_i (3), v_i (3), ω_j (3), v_j (3), d (1)]` under the left retraction
/// `R ← exp(ω) R`, `t ← t + v`.
pub fn residual_jacobian<T: Real>(
    gi: &SE3Pose<T>,
    gj: &SE3Pose<T>,
    intr: &Intrinsics<T>,
    pixel: &Vector2<T>,
    target: &Vector2<T>,
    d: T,
) -> Option<(Vector2<T>, SMatrix<T, 2, 13>)> {
    if !(d > T::zero()) {
        return None;
    }
    let xbar = bearing(intr, pixel);
    let xi = xbar / d;
    let ri = gi.rotation.matrix();
    let rjt = gj.rotation.matrix().transpose();
    let rxi = ri * xi;
    let w = rxi + gi.translation;
    let xj = rjt * (w - gj.translation);
    if !(xj.z > lit(MIN_DEPTH)) {
        return None;
    }
    let z = xj.z;
    let proj = Vector2::new(intr.fx * xj.x / z + intr.cx, intr.fy * xj.y / z + intr.cy);
    let p = Matrix2x3::new(
        intr.fx / z,
        T::zero(),
        -intr.fx * xj.x / (z * z),
        T::zero(),
        intr.fy / z,
        -intr.fy * xj.y / (z * z),
    );
    let mut jac = SMatrix::<T, 2, 13>::zeros();
    let neg_p = -p;
    jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(neg_p * rjt * (-skew(&rxi))));
    jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&(neg_p * rjt));
    jac.fixed_view_mut::<2, 3>(0, 6).copy_from(&(neg_p * rjt * skew(&(w - gj.translation))));
    jac.fixed_view_mut::<2, 3>(0, 9).copy_from(&(neg_p * (-rjt)));
    let dxd = rjt * ri * (-xbar / (d * d));
    jac.fixed_view_mut::<2, 1>(0, 12).copy_from(&(neg_p * dxd));
    Some((target - proj, jac))
}

impl<T: Real> BAProblem<T> {
    pub fn num_frames(&self) -> usize {
        self.poses.len()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.poses.len();
        if f < 2 {
            return Err(Error::Domain(format!("bundle adjustment needs at least 2 frames, got {}", f)));
        }
        if self.observations.is_empty() {
            return Err(Error::Empty("no observations".into()));
        }
        if self.anchors.len() != f || self.inv_depths.len() != f || self.union_masks.len() != f || self.prior_depths.len() != f {
            return Err(Error::Shape(format!("per-frame inputs must all have {} entries", f)));
        }
        for (t, (a, d)) in self.anchors.iter().zip(&self.inv_depths).enumerate() {
            if a.len() != d.len() {
                return Err(Error::Shape(format!("frame {}: {} anchors but {} inverse depths", t, a.len(), d.len())));
            }
            if let Some(p) = a.iter().find(|p| !self.intr.contains(p)) {
                return Err(Error::Domain(format!("frame {}: anchor {:?} outside the image", t, (to_f64(p.x), to_f64(p.y)))));
            }
        }
        for (n, o) in self.observations.iter().enumerate() {
            if o.i >= f || o.j >= f || o.i == o.j {
                return Err(Error::Domain(format!("observation {} references frames ({}, {})", n, o.i, o.j)));
            }
            let k = self.anchors[o.i].len();
            if o.pixels.len() != k || o.targets.len() != k || o.confidence.len() != k {
                return Err(Error::Shape(format!("observation {} must cover the {} anchors of frame {}", n, k, o.i)));
            }
            if o.confidence.iter().any(|w| w.x < T::zero() || w.y < T::zero()) {
                return Err(Error::Domain(format!("observation {} has negative confidence", n)));
            }
        }
        if self.depth_weight < T::zero() {
            return Err(Error::Domain("depth weight must be non-negative".into()));
        }
        Ok(())
    }

    /// Confidences as used by the solver: masked when `use_masks` is set.
    pub fn effective_confidence(&self, use_masks: bool) -> Vec<Vec<Vector2<T>>> {
        self.observations
            .iter()
            .map(|o| {
                if use_masks {
                    mask_confidence(&o.confidence, &self.union_masks[o.i], &self.union_masks[o.j], &o.pixels, &o.targets)
                } else {
                    o.confidence.clone()
                }
            })
            .collect()
    }

    /// Prior inverse depth at a static anchor, if any.
    pub fn prior_inv_depth(&self, t: usize, k: usize) -> Option<T> {
        let p = self.anchors[t][k];
        if self.union_masks[t].at(&p) {
            return None;
        }
        let dm = self.prior_depths[t].as_ref()?;
        let (u, v) = (to_f64(p.x).round() as usize, to_f64(p.y).round() as usize);
        let z = dm.get(u, v);
        if is_nan(z) || !(z > T::zero()) {
            return None;
        }
        Some(T::one() / z)
    }

    /// Weighted reprojection cost plus the depth prior.
    pub fn cost_with(&self, poses: &[SE3Pose<T>], inv_depths: &[Vec<T>], weights: &[Vec<Vector2<T>>]) -> T {
        let mut c = T::zero();
        for (o, ws) in self.observations.iter().zip(weights) {
            for (k, w) in ws.iter().enumerate() {
                if w.x == T::zero() && w.y == T::zero() {
                    continue;
                }
                let Some(pred) = predict_correspondence(&poses[o.i], &poses[o.j], &self.intr, &o.pixels[k], inv_depths[o.i][k]) else {
                    continue;
                };
                let r = o.targets[k] - pred;
                c += w.x * r.x * r.x + w.y * r.y * r.y;
            }
        }
        if self.depth_weight > T::zero() {
            for (t, ds) in inv_depths.iter().enumerate() {
                for (k, d) in ds.iter().enumerate() {
                    if let Some(pd) = self.prior_inv_depth(t, k) {
                        let r = *d - pd;
                        c += self.depth_weight * r * r;
                    }
                }
            }
        }
        c
    }
}

/// Cost with masked confidences.
pub fn cost<T: Real>(problem: &BAProblem<T>, poses: &[SE3Pose<T>], inv_depths: &[Vec<T>]) -> T {
    problem.cost_with(poses, inv_depths, &problem.effective_confidence(true))
}

struct Normal<T: Real> {
    hpp: DMatrix<T>,
    hpd: DMatrix<T>,
    hdd: DVector<T>,
    gp: DVector<T>,
    gd: DVector<T>,
}

fn build_normal<T: Real>(
    pb: &BAProblem<T>,
    poses: &[SE3Pose<T>],
    inv: &[Vec<T>],
    weights: &[Vec<Vector2<T>>],
    offsets: &[usize],
    nd: usize,
) -> Normal<T> {
    let np = 6 * (pb.num_frames() - 1);
    let mut n = Normal {
        hpp: DMatrix::zeros(np, np),
        hpd: DMatrix::zeros(np, nd),
        hdd: DVector::zeros(nd),
        gp: DVector::zeros(np),
        gd: DVector::zeros(nd),
    };
    // column blocks of the 13-wide Jacobian: (start column, frame)
    for (o, ws) in pb.observations.iter().zip(weights) {
        let blocks = [(0usize, o.i), (6usize, o.j)];
        for (k, w) in ws.iter().enumerate() {
            if w.x == T::zero() && w.y == T::zero() {
                continue;
            }
            let d = inv[o.i][k];
            let Some((r, jac)) = residual_jacobian(&poses[o.i], &poses[o.j], &pb.intr, &o.pixels[k], &o.targets[k], d) else {
                continue;
            };
            let di = offsets[o.i] + k;
            for row in 0..2 {
                let wr = if row == 0 { w.x } else { w.y };
                if wr == T::zero() {
                    continue;
                }
                let jr = jac.row(row);
                let jd = jr[12];
                n.hdd[di] += wr * jd * jd;
                n.gd[di] += wr * jd * r[row];
                for &(ca, fa) in &blocks {
                    if fa == 0 {
                        continue;
                    }
                    let ba = 6 * (fa - 1);
                    for a in 0..6 {
                        let ja = jr[ca + a];
                        n.gp[ba + a] += wr * ja * r[row];
                        n.hpd[(ba + a, di)] += wr * ja * jd;
                        for &(cb, fb) in &blocks {
                            if fb == 0 {
                                continue;
                            }
                            let bb = 6 * (fb - 1);
                            for b in 0..6 {
                                n.hpp[(ba + a, bb + b)] += wr * ja * jr[cb + b];
                            }
                        }
                    }
                }
            }
        }
    }
    if pb.depth_weight > T::zero() {
        for (t, ds) in inv.iter().enumerate() {
            for (k, d) in ds.iter().enumerate() {
                if let Some(pd) = pb.prior_inv_depth(t, k) {
                    let di = offsets[t] + k;
                    n.hdd[di] += pb.depth_weight;
                    n.gd[di] += pb.depth_weight * (*d - pd);
                }
            }
        }
    }
    n
}

/// Damped Gauss–Newton with frame 0 held fixed. Depths are eliminated by a
/// Schur complement since each anchor couples only to pose blocks.
pub fn solve<T: Real>(problem: &BAProblem<T>, cfg: &BAConfig) -> Result<BASolution<T>> {
    problem.validate()?;
    let weights = problem.effective_confidence(cfg.use_masks);
    let mut offsets = Vec::with_capacity(problem.num_frames());
    let mut nd = 0;
    for a in &problem.anchors {
        offsets.push(nd);
        nd += a.len();
    }
    let np = 6 * (problem.num_frames() - 1);
    let mut poses = problem.poses.clone();
    let mut inv = problem.inv_depths.clone();
    let mut cur = problem.cost_with(&poses, &inv, &weights);
    if !is_finite(cur) {
        return Err(Error::Optimizer("initial bundle adjustment cost is not finite".into()));
    }
    let mut trace = vec![cur];
    let mut lambda = cfg.damping_init;
    let tol: T = lit(cfg.tol);
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < cfg.max_iters {
        iterations += 1;
        if cur <= lit(1e-20) {
            converged = true;
            break;
        }
        let n = build_normal(problem, &poses, &inv, &weights, &offsets, nd);
        // anchors on the floor that still want to move past it stay put this iteration
        let floor: T = lit(INV_DEPTH_FLOOR);
        let pinned: Vec<bool> = inv.iter().flatten().zip(n.gd.iter()).map(|(d, g)| *d <= floor && *g > T::zero()).collect();
        // every residual r has Jacobian J = ∂r/∂x, and g = Jᵀ W r; the step solves (H + λI) δ = −g
        loop {
            let lam: T = lit(lambda);
            let mut hdd_inv = n.hdd.clone();
            for (v, p) in hdd_inv.iter_mut().zip(&pinned) {
                *v = if *p { T::zero() } else { T::one() / (*v + lam) };
            }
            let bp = -&n.gp;
            let bd = -&n.gd;
            let mut s = n.hpp.clone();
            for a in 0..np {
                s[(a, a)] += lam;
            }
            let hpd_scaled = {
                let mut m = n.hpd.clone();
                for (c, mut col) in m.column_iter_mut().enumerate() {
                    col *= hdd_inv[c];
                }
                m
            };
            s -= &hpd_scaled * n.hpd.transpose();
            let rhs = &bp - &hpd_scaled * &bd;
            let Some(chol) = s.clone().cholesky() else {
                lambda *= 10.0;
                if lambda > DAMPING_MAX {
                    break 'outer;
                }
                continue;
            };
            let dp = chol.solve(&rhs);
            let dd = (&bd - n.hpd.transpose() * &dp).component_mul(&hdd_inv);

            // decrease promised by the undamped quadratic model
            let gtd = n.gp.dot(&dp) + n.gd.dot(&dd);
            let quad = dp.dot(&(&n.hpp * &dp)) + dd.dot(&n.hdd.component_mul(&dd)) + lit::<T>(2.0) * dp.dot(&(&n.hpd * &dd));
            let predicted = -(lit::<T>(2.0) * gtd + quad);
            let mut cand_poses = poses.clone();
            for f in 1..poses.len() {
                let b = 6 * (f - 1);
                let omega = Vector3::new(dp[b], dp[b + 1], dp[b + 2]);
                let v = Vector3::new(dp[b + 3], dp[b + 4], dp[b + 5]);
                cand_poses[f] = poses[f].retract(&omega, &v);
            }
            let mut cand_inv = inv.clone();
            // weakly observed anchors may be pushed through infinity; keep them just in front of it
            for (t, ds) in cand_inv.iter_mut().enumerate() {
                for (k, d) in ds.iter_mut().enumerate() {
                    *d = (*d + dd[offsets[t] + k]).max(lit(INV_DEPTH_FLOOR));
                }
            }
            let new_cost = problem.cost_with(&cand_poses, &cand_inv, &weights);
            if is_finite(new_cost) && new_cost < cur {
                let rel = (cur - new_cost) / cur;
                poses = cand_poses;
                inv = cand_inv;
                cur = new_cost;
                trace.push(cur);
                lambda = (lambda / 10.0).max(DAMPING_MIN);
                if rel < tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            if predicted.abs() <= tol * cur {
                // the model promises nothing measurable: at a minimum
                converged = true;
                break 'outer;
            }
            lambda *= 10.0;
            if lambda > DAMPING_MAX {
                break 'outer;
            }
        }
    }
    Ok(BASolution { poses, inv_depths: inv, cost_trace: trace, converged, iterations })
}

/// World points with the `(frame, anchor)` each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedCloud<T: Real> {
    pub cloud: PointCloud<T>,
    pub sources: Vec<(usize, usize)>,
}

/// Lifts every anchor to the world: `G_t ∘ π⁻¹(p, 1/d)`.
pub fn lift_world_points<T: Real>(
    poses: &[SE3Pose<T>],
    anchors: &[Vec<Vector2<T>>],
    inv_depths: &[Vec<T>],
    intr: &Intrinsics<T>,
    colors: &[Vec<[T; 3]>],
    human_flags: &[Vec<bool>],
) -> Result<LiftedCloud<T>> {
    let f = poses.len();
    if anchors.len() != f || inv_depths.len() != f || colors.len() != f || human_flags.len() != f {
        return Err(Error::Shape("per-frame inputs must match the pose count".into()));
    }
    let mut points = Vec::new();
    let mut sources = Vec::new();
    for t in 0..f {
        let k = anchors[t].len();
        if inv_depths[t].len() != k || colors[t].len() != k || human_flags[t].len() != k {
            return Err(Error::Shape(format!("frame {}: per-anchor inputs differ in length", t)));
        }
        for a in 0..k {
            let d = inv_depths[t][a];
            if !(d > T::zero()) {
                continue;
            }
            let xc = intr.unproject(&anchors[t][a], T::one() / d)?;
            points.push(CloudPoint {
                xyz: poses[t].transform_point(&xc),
                rgb: colors[t][a],
                human: if human_flags[t][a] { T::one() } else { T::zero() },
            });
            sources.push((t, a));
        }
    }
    Ok(LiftedCloud { cloud: PointCloud::new(points), sources })
}

/// Worst reprojection disagreement of one lifted point over the frames that
/// observe its anchor; infinite when it falls behind one of them.
pub fn epipolar_error<T: Real>(
    world: &Vector3<T>,
    source: (usize, usize),
    poses: &[SE3Pose<T>],
    intr: &Intrinsics<T>,
    observations: &[FramePairObservation<T>],
) -> T {
    let mut worst = T::zero();
    for o in observations.iter().filter(|o| o.i == source.0) {
        let xj = poses[o.j].inverse().transform_point(world);
        let e = match intr.project(&xj) {
            Ok(p) if xj.z > lit(MIN_DEPTH) => (p - o.targets[source.1]).norm(),
            _ => T::max_value().unwrap(),
        };
        worst = worst.max(e);
    }
    worst
}

/// Keeps points whose reprojection into every co-observing frame stays within `tau_px`.
pub fn filter_epipolar<T: Real>(
    lifted: &LiftedCloud<T>,
    poses: &[SE3Pose<T>],
    intr: &Intrinsics<T>,
    observations: &[FramePairObservation<T>],
    tau_px: T,
) -> Result<LiftedCloud<T>> {
    if !(tau_px > T::zero()) {
        return Err(Error::Domain("epipolar threshold must be positive".into()));
    }
    let mut points = Vec::new();
    let mut sources = Vec::new();
    for (p, s) in lifted.cloud.points.iter().zip(&lifted.sources) {
        if epipolar_error(&p.xyz, *s, poses, intr, observations) <= tau_px {
            points.push(*p);
            sources.push(*s);
        }
    }
    Ok(LiftedCloud { cloud: PointCloud::new(points), sources })
}
