//! Evaluation metrics: Procrustes machinery, PA/WA/FA-MPJPE, acceleration
//! error, absolute trajectory error and depth accuracy.
//!
//! Joint metrics are reported in millimeters, ATE in millimeters, and depth
//! RMSE in meters.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Rotation, SE3Pose};
use crate::scalar::{is_nan, lit, Real};

/// `T × J` joint positions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSequence<T: Real> {
    pub frames: Vec<Vec<Vector3<T>>>,
}

impl<T: Real> JointSequence<T> {
    pub fn new(frames: Vec<Vec<Vector3<T>>>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn transformed(&self, a: &SimilarityAlignment<T>) -> Self {
        Self::new(
            self.frames
                .iter()
                .map(|f| f.iter().map(|p| a.apply(p)).collect())
                .collect(),
        )
    }
}

/// `x ↦ s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityAlignment<T: Real> {
    pub scale: T,
    pub rotation: Rotation<T>,
    pub translation: Vector3<T>,
    pub with_scale: bool,
}

impl<T: Real> SimilarityAlignment<T> {
    pub fn identity() -> Self {
        Self {
            scale: T::one(),
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
            with_scale: false,
        }
    }

    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.apply(p) * self.scale + self.translation
    }
}

fn centroid<T: Real>(pts: &[Vector3<T>]) -> Vector3<T> {
    let n: T = lit(pts.len() as f64);
    pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n
}

/// Closed-form least-squares similarity (Umeyama) without degeneracy checks.
fn umeyama<T: Real>(x: &[Vector3<T>], y: &[Vector3<T>], with_scale: bool) -> SimilarityAlignment<T> {
    if x == y {
        // the optimum is known exactly; the SVD would only add rounding
        return SimilarityAlignment { with_scale, ..SimilarityAlignment::identity() };
    }
    let mx = centroid(x);
    let my = centroid(y);
    let n: T = lit(x.len() as f64);
    let mut cov = Matrix3::zeros();
    let mut var_x = T::zero();
    for (a, b) in x.iter().zip(y) {
        let xc = a - mx;
        let yc = b - my;
        cov += yc * xc.transpose();
        var_x += xc.norm_squared();
    }
    cov /= n;
    var_x /= n;
    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < T::zero() {
        s[(2, 2)] = -T::one();
    }
    let r = u * s * v_t;
    let scale = if with_scale && var_x > T::zero() {
        let d = svd.singular_values;
        (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_x
    } else {
        T::one()
    };
    SimilarityAlignment {
        scale,
        rotation: Rotation::from_matrix_unchecked(r),
        translation: my - r * mx * scale,
        with_scale,
    }
}

/// Optimal `(s, R, t)` minimizing `Σ ‖s R xᵢ + t − yᵢ‖²`, with a reflection guard.
pub fn procrustes<T: Real>(
    x: &[Vector3<T>],
    y: &[Vector3<T>],
    with_scale: bool,
) -> Result<SimilarityAlignment<T>> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} points", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Degenerate(format!(
            "Procrustes needs at least 3 points, got {}",
            x.len()
        )));
    }
    let mx = centroid(x);
    let mut scatter = Matrix3::zeros();
    for p in x {
        let c = p - mx;
        scatter += c * c.transpose();
    }
    let sv = scatter.symmetric_eigenvalues();
    let mut sv: Vec<T> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    if !(sv[0] > T::zero()) || sv[1] <= sv[0] * lit(1e-12) {
        return Err(Error::Degenerate("source points are collinear or coincident".into()));
    }
    Ok(umeyama(x, y, with_scale))
}

pub fn alignment_residual<T: Real>(a: &SimilarityAlignment<T>, x: &[Vector3<T>], y: &[Vector3<T>]) -> T {
    x.iter()
        .zip(y)
        .fold(T::zero(), |acc, (p, q)| acc + (a.apply(p) - q).norm_squared())
}

fn check_shapes<T: Real>(pred: &JointSequence<T>, gt: &JointSequence<T>) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} vs {} frames", pred.len(), gt.len())));
    }
    for (t, (a, b)) in pred.frames.iter().zip(&gt.frames).enumerate() {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "frame {}: {} vs {} joints",
                t,
                a.len(),
                b.len()
            )));
        }
    }
    if pred.is_empty() {
        return Err(Error::Empty("joint sequences are empty".into()));
    }
    Ok(())
}

fn frame_valid(valid: Option<&[bool]>, t: usize) -> bool {
    valid.is_none_or(|v| v.get(t).copied().unwrap_or(false))
}

fn mean_joint_error<T: Real>(a: &[Vector3<T>], b: &[Vector3<T>]) -> T {
    let s = a.iter().zip(b).fold(T::zero(), |acc, (p, q)| acc + (p - q).norm());
    s / lit(a.len() as f64)
}

const MM: f64 = 1000.0;

/// Alignment options shared by the world-frame joint metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpjpeOptions {
    pub with_scale: bool,
}

impl Default for MpjpeOptions {
    fn default() -> Self {
        Self { with_scale: true }
    }
}

pub fn pa_mpjpe<T: Real>(pred: &JointSequence<T>, gt: &JointSequence<T>) -> Result<T> {
    pa_mpjpe_masked(pred, gt, None)
}

/// Per-frame similarity alignment, then mean joint error, in mm.
pub fn pa_mpjpe_masked<T: Real>(
    pred: &JointSequence<T>,
    gt: &JointSequence<T>,
    valid: Option<&[bool]>,
) -> Result<T> {
    check_shapes(pred, gt)?;
    let mut sum = T::zero();
    let mut n = 0usize;
    for (t, (p, g)) in pred.frames.iter().zip(&gt.frames).enumerate() {
        if !frame_valid(valid, t) {
            continue;
        }
        let a = procrustes(p, g, true)?;
        let aligned: Vec<_> = p.iter().map(|x| a.apply(x)).collect();
        sum += mean_joint_error(&aligned, g);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("no valid frames".into()));
    }
    Ok(sum / lit(n as f64) * lit(MM))
}

fn sequence_error<T: Real>(
    pred: &JointSequence<T>,
    gt: &JointSequence<T>,
    a: &SimilarityAlignment<T>,
    valid: Option<&[bool]>,
) -> Result<T> {
    let mut sum = T::zero();
    let mut n = 0usize;
    for (t, (p, g)) in pred.frames.iter().zip(&gt.frames).enumerate() {
        if !frame_valid(valid, t) {
            continue;
        }
        for (x, y) in p.iter().zip(g) {
            sum += (a.apply(x) - y).norm();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("no valid frames".into()));
    }
    Ok(sum / lit(n as f64) * lit(MM))
}

pub fn wa_mpjpe<T: Real>(pred: &JointSequence<T>, gt: &JointSequence<T>, opts: MpjpeOptions) -> Result<T> {
    wa_mpjpe_masked(pred, gt, opts, None)
}

/// One alignment over the whole trajectory, in mm.
pub fn wa_mpjpe_masked<T: Real>(
    pred: &JointSequence<T>,
    gt: &JointSequence<T>,
    opts: MpjpeOptions,
    valid: Option<&[bool]>,
) -> Result<T> {
    check_shapes(pred, gt)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (t, (p, g)) in pred.frames.iter().zip(&gt.frames).enumerate() {
        if frame_valid(valid, t) {
            xs.extend_from_slice(p);
            ys.extend_from_slice(g);
        }
    }
    let a = procrustes(&xs, &ys, opts.with_scale)?;
    sequence_error(pred, gt, &a, valid)
}

pub fn fa_mpjpe<T: Real>(pred: &JointSequence<T>, gt: &JointSequence<T>, opts: MpjpeOptions) -> Result<T> {
    fa_mpjpe_masked(pred, gt, opts, None)
}

/// Alignment estimated on the first valid frame only, applied to all frames, in mm.
pub fn fa_mpjpe_masked<T: Real>(
    pred: &JointSequence<T>,
    gt: &JointSequence<T>,
    opts: MpjpeOptions,
    valid: Option<&[bool]>,
) -> Result<T> {
    check_shapes(pred, gt)?;
    let first = (0..pred.len())
        .find(|&t| frame_valid(valid, t))
        .ok_or_else(|| Error::Empty("no valid frames".into()))?;
    let a = procrustes(&pred.frames[first], &gt.frames[first], opts.with_scale)?;
    sequence_error(pred, gt, &a, valid)
}

/// Mean norm of the second-difference mismatch, in mm/frame².
pub fn accel_error<T: Real>(pred: &JointSequence<T>, gt: &JointSequence<T>) -> Result<T> {
    check_shapes(pred, gt)?;
    if pred.len() < 3 {
        return Err(Error::Domain(format!(
            "acceleration needs at least 3 frames, got {}",
            pred.len()
        )));
    }
    let two: T = lit(2.0);
    let mut sum = T::zero();
    let mut n = 0usize;
    for t in 1..pred.len() - 1 {
        for j in 0..pred.num_joints() {
            let acc = |s: &JointSequence<T>| s.frames[t + 1][j] - s.frames[t][j] * two + s.frames[t - 1][j];
            sum += (acc(pred) - acc(gt)).norm();
            n += 1;
        }
    }
    Ok(sum / lit(n as f64) * lit(MM))
}

/// How the estimated trajectory is registered before computing ATE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AteAlignment {
    #[default]
    Rigid,
    Similarity,
    None,
}

/// RMSE of camera positions after alignment, in mm.
pub fn ate<T: Real>(pred: &[SE3Pose<T>], gt: &[SE3Pose<T>], align: AteAlignment) -> Result<T> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} vs {} poses", pred.len(), gt.len())));
    }
    if pred.len() < 2 {
        return Err(Error::Domain("ATE needs at least two poses".into()));
    }
    let x: Vec<_> = pred.iter().map(|p| p.translation).collect();
    let y: Vec<_> = gt.iter().map(|p| p.translation).collect();
    let a = match align {
        AteAlignment::Rigid => umeyama(&x, &y, false),
        AteAlignment::Similarity => umeyama(&x, &y, true),
        AteAlignment::None => SimilarityAlignment::identity(),
    };
    let mse = alignment_residual(&a, &x, &y) / lit(x.len() as f64);
    Ok(mse.sqrt() * lit(MM))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub rel: f64,
    pub rmse: f64,
}

/// Threshold accuracy, absolute relative error and RMSE over jointly valid pixels.
pub fn depth_metrics<T: Real>(pred: &DepthMap<T>, gt: &DepthMap<T>) -> Result<DepthMetrics> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::Shape(format!(
            "depth maps {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut n = 0usize;
    let mut hits = [0usize; 3];
    let mut rel = 0.0;
    let mut sq = 0.0;
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        if is_nan(p) || is_nan(g) || !(p > T::zero()) || !(g > T::zero()) {
            continue;
        }
        let (p, g) = (crate::scalar::to_f64(p), crate::scalar::to_f64(g));
        n += 1;
        let ratio = (p / g).max(g / p);
        for (k, h) in hits.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *h += 1;
            }
        }
        rel += (p - g).abs() / g;
        sq += (p - g) * (p - g);
    }
    if n == 0 {
        return Err(Error::Empty("no jointly valid depth pixels".into()));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
        rel: rel / nf,
        rmse: (sq / nf).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_v(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    fn rand_rot(rng: &mut ChaCha8Rng) -> Rotation<f64> {
        Rotation::exp(&rand_v(rng, 2.0))
    }

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, j: usize) -> JointSequence<f64> {
        let base: Vec<_> = (0..j).map(|_| rand_v(rng, 0.8)).collect();
        JointSequence::new(
            (0..t)
                .map(|k| {
                    let drift = Vector3::new(0.05 * k as f64, 0.0, 0.02 * k as f64);
                    base.iter().map(|b| b + drift + rand_v(rng, 0.02)).collect()
                })
                .collect(),
        )
    }

    #[test]
    fn procrustes_identity_and_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x: Vec<_> = (0..10).map(|_| rand_v(&mut rng, 1.0)).collect();
        let a = procrustes(&x, &x, true).unwrap();
        assert!((a.scale - 1.0).abs() < 1e-12);
        assert!((a.rotation.matrix() - Matrix3::identity()).abs().max() < 1e-12);
        assert!(a.translation.norm() < 1e-12);

        let r = Rotation::rot_z(30f64.to_radians());
        let t = Vector3::new(1.0, 0.0, 0.0);
        let y: Vec<_> = x.iter().map(|p| r.apply(p) * 2.0 + t).collect();
        let a = procrustes(&x, &y, true).unwrap();
        assert!((a.scale - 2.0).abs() < 1e-12);
        assert!((a.rotation.matrix() - r.matrix()).abs().max() < 1e-12);
        assert!((a.translation - t).norm() < 1e-12);
    }

    #[test]
    fn procrustes_reflection_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x: Vec<_> = (0..8).map(|_| rand_v(&mut rng, 1.0)).collect();
        let y: Vec<_> = x.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let a = procrustes(&x, &y, true).unwrap();
        assert!((a.rotation.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn procrustes_degenerate() {
        let x = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 1.0, 1.0), Vector3::new(2.0, 2.0, 2.0)];
        assert!(matches!(procrustes(&x, &x, true), Err(Error::Degenerate(_))));
        assert!(procrustes(&x[..2], &x[..2], true).is_err());
    }

    #[test]
    fn procrustes_beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let x: Vec<_> = (0..12).map(|_| rand_v(&mut rng, 1.0)).collect();
        let y: Vec<_> = x
            .iter()
            .map(|p| Rotation::rot_x(0.4).apply(p) * 1.3 + Vector3::new(0.2, -0.1, 0.5) + rand_v(&mut rng, 0.1))
            .collect();
        let best = procrustes(&x, &y, true).unwrap();
        let best_res = alignment_residual(&best, &x, &y);
        for _ in 0..10_000 {
            let cand = SimilarityAlignment {
                scale: rng.random_range(0.5..2.0),
                rotation: rand_rot(&mut rng),
                translation: rand_v(&mut rng, 1.0),
                with_scale: true,
            };
            assert!(best_res <= alignment_residual(&cand, &x, &y) + 1e-12);
        }
        // local perturbations do not improve either
        for _ in 0..1000 {
            let cand = SimilarityAlignment {
                scale: best.scale + rng.random_range(-1e-3..1e-3),
                rotation: Rotation::exp(&rand_v(&mut rng, 1e-3)).compose(&best.rotation),
                translation: best.translation + rand_v(&mut rng, 1e-3),
                with_scale: true,
            };
            assert!(best_res <= alignment_residual(&cand, &x, &y) + 1e-12);
        }
    }

    #[test]
    fn pa_mpjpe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let gt = random_seq(&mut rng, 6, 22);
        // per-frame similarity of gt
        let pred = JointSequence::new(
            gt.frames
                .iter()
                .map(|f| {
                    let r = rand_rot(&mut rng);
                    let s = rng.random_range(0.5..2.0);
                    let t = rand_v(&mut rng, 3.0);
                    f.iter().map(|p| r.apply(p) * s + t).collect()
                })
                .collect(),
        );
        assert!(pa_mpjpe(&pred, &gt).unwrap() < 1e-9);

        // loop oracle
        let noisy = JointSequence::new(
            gt.frames.iter().map(|f| f.iter().map(|p| p + rand_v(&mut rng, 0.05)).collect()).collect(),
        );
        let mut oracle = 0.0;
        for (p, g) in noisy.frames.iter().zip(&gt.frames) {
            let a = procrustes(p, g, true).unwrap();
            let mut e = 0.0;
            for (x, y) in p.iter().zip(g) {
                e += (a.apply(x) - y).norm();
            }
            oracle += e / p.len() as f64;
        }
        oracle = oracle / gt.len() as f64 * 1000.0;
        let v = pa_mpjpe(&noisy, &gt).unwrap();
        assert!((v - oracle).abs() < 1e-12);

        // a global similarity on pred leaves it unchanged
        let sim = SimilarityAlignment { scale: 1.7, rotation: rand_rot(&mut rng), translation: rand_v(&mut rng, 2.0), with_scale: true };
        let moved = noisy.transformed(&sim);
        assert!((pa_mpjpe(&moved, &gt).unwrap() - v).abs() < 1e-9);
        assert!(pa_mpjpe(&noisy, &random_seq(&mut rng, 5, 22)).is_err());
    }

    #[test]
    fn wa_fa_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let gt = random_seq(&mut rng, 8, 22);
        let rigid = SimilarityAlignment { scale: 1.0, rotation: rand_rot(&mut rng), translation: rand_v(&mut rng, 2.0), with_scale: false };
        let pred = gt.transformed(&rigid);
        let o = MpjpeOptions::default();
        assert!(wa_mpjpe(&pred, &gt, o).unwrap() < 1e-9);
        assert!(fa_mpjpe(&pred, &gt, o).unwrap() < 1e-9);

        let t = gt.len();
        let shifted = JointSequence::new(
            gt.frames
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    let d = if k == 0 { Vector3::zeros() } else { Vector3::new(0.010, 0.0, 0.0) };
                    f.iter().map(|p| p + d).collect()
                })
                .collect(),
        );
        let fa = fa_mpjpe(&shifted, &gt, o).unwrap();
        assert!((fa - 10.0 * (t - 1) as f64 / t as f64).abs() < 1e-9);

        // single-alignment oracle
        let noisy = JointSequence::new(
            gt.frames.iter().map(|f| f.iter().map(|p| p + rand_v(&mut rng, 0.05)).collect()).collect(),
        );
        let xs: Vec<_> = noisy.frames.concat();
        let ys: Vec<_> = gt.frames.concat();
        let a = procrustes(&xs, &ys, true).unwrap();
        let oracle = xs.iter().zip(&ys).map(|(x, y)| (a.apply(x) - y).norm()).sum::<f64>() / xs.len() as f64 * 1000.0;
        assert!((wa_mpjpe(&noisy, &gt, o).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn masked_frames_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let gt = random_seq(&mut rng, 5, 22);
        let mut pred = gt.clone();
        for p in &mut pred.frames[2] {
            *p += Vector3::new(1.0, 0.0, 0.0);
        }
        let valid = [true, true, false, true, true];
        let o = MpjpeOptions::default();
        assert!(wa_mpjpe_masked(&pred, &gt, o, Some(&valid)).unwrap() < 1e-9);
        assert!(pa_mpjpe_masked(&pred, &gt, Some(&valid)).unwrap() < 1e-9);
        assert!(fa_mpjpe_masked(&pred, &gt, o, Some(&valid)).unwrap() < 1e-9);
        assert!(wa_mpjpe(&pred, &gt, o).unwrap() > 1.0);
    }

    #[test]
    fn accel_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let gt = random_seq(&mut rng, 7, 4);
        let offset = JointSequence::new(gt.frames.iter().map(|f| f.iter().map(|p| p + Vector3::new(1.0, 2.0, 3.0)).collect()).collect());
        assert!(accel_error(&offset, &gt).unwrap() < 1e-9);
        let linear = JointSequence::new(
            gt.frames.iter().enumerate().map(|(t, f)| f.iter().map(|p| p + Vector3::new(0.1, -0.2, 0.05) * t as f64).collect()).collect(),
        );
        assert!(accel_error(&linear, &gt).unwrap() < 1e-9);
        let c = Vector3::new(0.003, 0.0, 0.004);
        let quad = JointSequence::new(
            gt.frames
                .iter()
                .enumerate()
                .map(|(t, f)| {
                    let mut f = f.clone();
                    f[1] += c * (t * t) as f64;
                    f
                })
                .collect(),
        );
        // only joint 1 of 4 carries ‖2c‖ per interior step
        let expect = (2.0 * c).norm() * 1000.0 / 4.0;
        assert!((accel_error(&quad, &gt).unwrap() - expect).abs() < 1e-9);
        let short = JointSequence::new(gt.frames[..2].to_vec());
        assert!(accel_error(&short, &short).is_err());
    }

    fn traj(rng: &mut ChaCha8Rng, n: usize) -> Vec<SE3Pose<f64>> {
        (0..n).map(|_| SE3Pose::new(rand_rot(rng), rand_v(rng, 2.0))).collect()
    }

    #[test]
    fn ate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let gt = traj(&mut rng, 10);
        assert!(ate(&gt, &gt, AteAlignment::Rigid).unwrap() < 1e-9);
        let g = SE3Pose::new(rand_rot(&mut rng), rand_v(&mut rng, 3.0));
        let moved: Vec<_> = gt.iter().map(|p| g.compose(p)).collect();
        assert!(ate(&moved, &gt, AteAlignment::Rigid).unwrap() < 1e-9);
        // common rigid transform of both leaves ATE unchanged
        let pred: Vec<_> = gt.iter().map(|p| SE3Pose::new(p.rotation, p.translation + rand_v(&mut rng, 0.05))).collect();
        let a = ate(&pred, &gt, AteAlignment::Rigid).unwrap();
        let pred2: Vec<_> = pred.iter().map(|p| g.compose(p)).collect();
        let gt2: Vec<_> = gt.iter().map(|p| g.compose(p)).collect();
        assert!((ate(&pred2, &gt2, AteAlignment::Rigid).unwrap() - a).abs() < 1e-9);
        assert!(ate(&pred[..3], &gt, AteAlignment::Rigid).is_err());
    }

    #[test]
    fn ate_scaled_about_centroid() {
        // three positions with centroid at (1, 1, 0)
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(3.0, 0.0, 0.0), Vector3::new(0.0, 3.0, 0.0)];
        let c = Vector3::new(1.0, 1.0, 0.0);
        let gt: Vec<_> = pts.iter().map(|p| SE3Pose::from_translation(*p)).collect();
        let pred: Vec<_> = pts.iter().map(|p| SE3Pose::from_translation(c + (p - c) * 2.0)).collect();
        // centered offsets (-1,-1), (2,-1), (-1,2): squared norms 2, 5, 5
        let expect = ((2.0 + 5.0 + 5.0) / 3.0f64).sqrt() * 1000.0;
        assert!((ate(&pred, &gt, AteAlignment::Rigid).unwrap() - expect).abs() < 1e-9);
        assert!(ate(&pred, &gt, AteAlignment::Similarity).unwrap() < 1e-9);
    }

    #[test]
    fn depth_examples() {
        let gt = DepthMap::new(2, 1, vec![1.0, 1.0]).unwrap();
        let pred = DepthMap::new(2, 1, vec![1.0, 2.0]).unwrap();
        let m = depth_metrics(&pred, &gt).unwrap();
        assert_eq!(m.delta1, 0.5);
        assert_eq!(m.rel, 0.5);
        assert_eq!(m.rmse, 0.5f64.sqrt());
        let m = depth_metrics(&gt, &gt).unwrap();
        assert_eq!((m.delta1, m.rel, m.rmse), (1.0, 0.0, 0.0));
        let none = DepthMap::invalid(2, 1);
        assert!(depth_metrics(&none, &gt).is_err());
    }

    #[test]
    fn depth_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let mk = |rng: &mut ChaCha8Rng| {
            let d: Vec<f64> = (0..300).map(|_| if rng.random_bool(0.9) { rng.random_range(0.5..8.0) } else { f64::NAN }).collect();
            DepthMap::new(20, 15, d).unwrap()
        };
        let p = mk(&mut rng);
        let g = mk(&mut rng);
        let m = depth_metrics(&p, &g).unwrap();
        let pairs: Vec<(f64, f64)> = p.data.iter().zip(&g.data).filter(|(a, b)| !a.is_nan() && !b.is_nan()).map(|(a, b)| (*a, *b)).collect();
        let n = pairs.len() as f64;
        let d1 = pairs.iter().filter(|(a, b)| (a / b).max(b / a) < 1.25).count() as f64 / n;
        let rel = pairs.iter().map(|(a, b)| (a - b).abs() / b).sum::<f64>() / n;
        let rmse = (pairs.iter().map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
        assert!((m.delta1 - d1).abs() < 1e-15);
        assert!((m.rel - rel).abs() < 1e-12);
        assert!((m.rmse - rmse).abs() < 1e-12);
    }

    #[test]
    fn alignment_ordering_on_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let o = MpjpeOptions::default();
        for _ in 0..50 {
            let gt = random_seq(&mut rng, 10, 22);
            let sim = SimilarityAlignment { scale: rng.random_range(0.8..1.2), rotation: rand_rot(&mut rng), translation: rand_v(&mut rng, 2.0), with_scale: true };
            let pred = JointSequence::new(
                gt.transformed(&sim).frames.iter().enumerate().map(|(t, f)| {
                    let drift = Vector3::new(0.01, 0.0, -0.01) * t as f64;
                    f.iter().map(|p| p + drift + rand_v(&mut rng, 0.03)).collect()
                }).collect(),
            );
            let pa = pa_mpjpe(&pred, &gt).unwrap();
            let wa = wa_mpjpe(&pred, &gt, o).unwrap();
            let fa = fa_mpjpe(&pred, &gt, o).unwrap();
            assert!(pa <= wa + 1e-9 && wa <= fa + 1e-9, "pa {} wa {} fa {}", pa, wa, fa);
            assert!(pa >= 0.0);
        }
    }
}
