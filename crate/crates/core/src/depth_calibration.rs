//! Human-aware depth calibration.
//!
//! Body meshes recovered in the camera frame carry metric size. Rasterizing
//! them and comparing against an up-to-affine depth map on the pixels where
//! the rendered body and the segmentation mask agree pins one global scale
//! `s` and offset `o` such that `s·D + o` is metric.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyMesh, BodyTemplate, FrameTag};
use crate::error::{Error, Result};
use crate::geometry::{DepthMap, InstanceMask, Intrinsics, Mask};
use crate::lbfgs::{minimize, LbfgsConfig};
use crate::scalar::{is_nan, lit, nan, Real};
use crate::world_frame::BodyTrack;

/// z-buffered splat of a mesh; `zbuf` is NaN wherever `mask` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterResult<T> {
    pub mask: Mask,
    pub zbuf: DepthMap<T>,
}

/// Splats every vertex in front of the camera as a disc of `radius` pixels;
/// the nearest depth wins.
pub fn rasterize<T: Real>(mesh: &BodyMesh<T>, intr: &Intrinsics<T>, radius: f64) -> RasterResult<T> {
    let (w, h) = (intr.width, intr.height);
    let mut mask = Mask::new(w, h);
    let mut zbuf = DepthMap::invalid(w, h);
    let r2 = radius * radius;
    for p in &mesh.vertices {
        let Ok(px) = intr.project(p) else { continue };
        let (u, v) = (crate::scalar::to_f64(px.x), crate::scalar::to_f64(px.y));
        let u0 = (u - radius).floor().max(0.0);
        let v0 = (v - radius).floor().max(0.0);
        let u1 = (u + radius).ceil().min(w as f64 - 1.0);
        let v1 = (v + radius).ceil().min(h as f64 - 1.0);
        if u1 < u0 || v1 < v0 {
            continue;
        }
        for j in v0 as usize..=v1 as usize {
            for i in u0 as usize..=u1 as usize {
                let (du, dv) = (i as f64 - u, j as f64 - v);
                if du * du + dv * dv > r2 {
                    continue;
                }
                let cur = zbuf.get(i, j);
                if is_nan(cur) || p.z < cur {
                    zbuf.set(i, j, p.z);
                    mask.set(i, j, true);
                }
            }
        }
    }
    RasterResult { mask, zbuf }
}

/// Rendered body pixels that also belong to instance `n`.
pub fn overlap_mask<T: Real>(raster: &RasterResult<T>, inst: &InstanceMask, n: u8) -> Result<Mask> {
    if raster.mask.width != inst.width || raster.mask.height != inst.height {
        return Err(Error::Shape(format!(
            "raster {}x{} vs mask {}x{}",
            raster.mask.width, raster.mask.height, inst.width, inst.height
        )));
    }
    Ok(Mask {
        width: inst.width,
        height: inst.height,
        data: raster
            .mask
            .data
            .iter()
            .zip(&inst.data)
            .map(|(&r, &m)| r && m == n && n != 0)
            .collect(),
    })
}

/// One frame of calibration input; mesh `k` belongs to instance id `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFrame<T: Real> {
    pub depth: DepthMap<T>,
    pub masks: InstanceMask,
    pub meshes: Vec<BodyMesh<T>>,
}

impl<T: Real> CalibrationFrame<T> {
    fn validate(&self, t: usize, intr: &Intrinsics<T>) -> Result<()> {
        let dims = |w: usize, h: usize| w == intr.width && h == intr.height;
        if !dims(self.depth.width, self.depth.height) || !dims(self.masks.width, self.masks.height) {
            return Err(Error::Shape(format!(
                "frame {}: depth {}x{} and mask {}x{} must match the {}x{} image",
                t, self.depth.width, self.depth.height, self.masks.width, self.masks.height, intr.width, intr.height
            )));
        }
        if self.masks.instance_count() > self.meshes.len() {
            return Err(Error::Shape(format!(
                "frame {}: {} mask instances but {} meshes",
                t,
                self.masks.instance_count(),
                self.meshes.len()
            )));
        }
        Ok(())
    }
}

/// Pairs per-frame raw depth and masks with the camera-frame meshes of the
/// tracked humans. Instance `n` is matched to the `n`-th track, so a frame
/// where some track is undetected or some human is off-screen keeps no mask
/// and contributes no support.
pub fn assemble_frames<T: Real>(
    depths: &[DepthMap<T>],
    masks: &[InstanceMask],
    tracks: &[BodyTrack<T>],
    template: &BodyTemplate<T>,
) -> Result<Vec<CalibrationFrame<T>>> {
    if masks.len() != depths.len() || tracks.iter().any(|tr| tr.len() != depths.len()) {
        return Err(Error::Shape("depth maps, masks and tracks must cover the same frames".into()));
    }
    Ok(depths
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(t, (depth, mask))| {
            let meshes: Vec<_> =
                tracks.iter().filter_map(|tr| tr.slots[t].as_ref()).map(|p| template.pose_mesh(p, FrameTag::Camera)).collect();
            let complete = meshes.len() == tracks.len() && mask.instance_count() == tracks.len();
            let masks = if complete { mask.clone() } else { InstanceMask::empty(mask.width, mask.height) };
            CalibrationFrame { depth: depth.clone(), masks, meshes }
        })
        .collect())
}

/// Rasters for every `(frame, human)`.
pub fn rasterize_frames<T: Real>(
    frames: &[CalibrationFrame<T>],
    intr: &Intrinsics<T>,
    radius: f64,
) -> Result<Vec<Vec<RasterResult<T>>>> {
    frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            f.validate(t, intr)?;
            Ok(f.meshes.iter().map(|m| rasterize(m, intr, radius)).collect())
        })
        .collect()
}

/// A support pixel: location, rendered body depth, raw depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportPixel<T> {
    pub u: usize,
    pub v: usize,
    pub z: T,
    pub d: T,
}

/// Overlap pixels of human `k` in a frame where the raw depth is valid.
pub fn support_pixels<T: Real>(frame: &CalibrationFrame<T>, raster: &RasterResult<T>, k: usize) -> Vec<SupportPixel<T>> {
    let n = (k + 1) as u8;
    let mut out = Vec::new();
    for v in 0..frame.depth.height {
        for u in 0..frame.depth.width {
            if raster.mask.get(u, v) && frame.masks.get(u, v) == n && frame.depth.is_valid(u, v) {
                out.push(SupportPixel { u, v, z: raster.zbuf.get(u, v), d: frame.depth.get(u, v) });
            }
        }
    }
    out
}

fn check_rasters<T: Real>(frames: &[CalibrationFrame<T>], rasters: &[Vec<RasterResult<T>>]) -> Result<()> {
    if frames.len() != rasters.len() || frames.iter().zip(rasters).any(|(f, r)| f.meshes.len() != r.len()) {
        return Err(Error::Shape("rasters do not match frames".into()));
    }
    Ok(())
}

/// Mean squared z mismatch over every support pixel of every `(n, t)`.
pub fn e_depth<T: Real>(frames: &[CalibrationFrame<T>], rasters: &[Vec<RasterResult<T>>], s: T, o: T) -> Result<T> {
    check_rasters(frames, rasters)?;
    let mut sum = T::zero();
    let mut count = 0usize;
    for (f, rs) in frames.iter().zip(rasters) {
        for (k, r) in rs.iter().enumerate() {
            for p in support_pixels(f, r, k) {
                let e = p.z - (s * p.d + o);
                sum += e * e;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::NoSupport);
    }
    Ok(sum / lit(count as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// `max − min` of one camera coordinate after unprojecting `(pixel, depth)` pairs.
pub fn extent<T: Real>(points: &[(Vector2<T>, T)], intr: &Intrinsics<T>, axis: Axis) -> Result<T> {
    if points.is_empty() {
        return Err(Error::Empty("extent of an empty pixel set".into()));
    }
    let (mut lo, mut hi) = (T::max_value().unwrap(), T::min_value().unwrap());
    for (px, z) in points {
        let c = match axis {
            Axis::X => (px.x - intr.cx) * *z / intr.fx,
            Axis::Y => (px.y - intr.cy) * *z / intr.fy,
        };
        lo = lo.min(c);
        hi = hi.max(c);
    }
    Ok(hi - lo)
}

fn pixel<T: Real>(p: &SupportPixel<T>) -> Vector2<T> {
    Vector2::new(lit(p.u as f64), lit(p.v as f64))
}

/// Squared body-extent mismatch on both image axes, averaged over all `(n, t)` pairs.
pub fn e_size<T: Real>(
    frames: &[CalibrationFrame<T>],
    rasters: &[Vec<RasterResult<T>>],
    intr: &Intrinsics<T>,
    s: T,
    o: T,
) -> Result<T> {
    check_rasters(frames, rasters)?;
    let mut sum = T::zero();
    let mut pairs = 0usize;
    for (f, rs) in frames.iter().zip(rasters) {
        for (k, r) in rs.iter().enumerate() {
            pairs += 1;
            let sp = support_pixels(f, r, k);
            if sp.is_empty() {
                continue;
            }
            let body: Vec<_> = sp.iter().map(|p| (pixel(p), p.z)).collect();
            let scene: Vec<_> = sp.iter().map(|p| (pixel(p), s * p.d + o)).collect();
            for axis in [Axis::X, Axis::Y] {
                let e = extent(&body, intr, axis)? - extent(&scene, intr, axis)?;
                sum += e * e;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::NoSupport);
    }
    Ok(sum / lit(pairs as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Weight of the size term.
    pub lambda: f64,
    pub max_iters: usize,
    pub splat_radius: f64,
    pub grad_tol: f64,
    pub rel_tol: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { lambda: 1.0, max_iters: 30, splat_radius: 2.0, grad_tol: 1e-8, rel_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult<T> {
    pub s: T,
    pub o: T,
    pub final_energy: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Upper and lower envelopes of `s·a + o·b` are attained on the convex hull
/// of the `(a, b)` points, so only hull vertices are kept.
#[derive(Debug, Clone)]
struct LinearExtent<T> {
    hull: Vec<(T, T)>,
}

fn cross<T: Real>(o: (T, T), a: (T, T), b: (T, T)) -> T {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

impl<T: Real> LinearExtent<T> {
    fn new(mut pts: Vec<(T, T)>) -> Self {
        pts.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
        pts.dedup();
        if pts.len() <= 2 {
            return Self { hull: pts };
        }
        let mut hull: Vec<(T, T)> = Vec::with_capacity(2 * pts.len());
        for pass in 0..2 {
            let start = hull.len();
            let iter: Box<dyn Iterator<Item = &(T, T)>> =
                if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
            for &p in iter {
                while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= T::zero() {
                    hull.pop();
                }
                hull.push(p);
            }
            hull.pop();
        }
        Self { hull }
    }

    fn eval(&self, s: T, o: T) -> T {
        let mut lo = T::max_value().unwrap();
        let mut hi = T::min_value().unwrap();
        for &(a, b) in &self.hull {
            let c = s * a + o * b;
            lo = lo.min(c);
            hi = hi.max(c);
        }
        hi - lo
    }
}

#[derive(Debug, Clone)]
struct PairTerm<T> {
    body_extent: [T; 2],
    scene_extent: [LinearExtent<T>; 2],
}

/// Energy `E_depth + λ·E_size` reduced to sufficient statistics so that
/// evaluations cost O(hull size) instead of O(pixels).
#[derive(Debug, Clone)]
pub struct CalibrationProblem<T: Real> {
    lambda: T,
    pixel_count: usize,
    pair_count: usize,
    mean_z: T,
    mean_d: T,
    var_z: T,
    var_d: T,
    cov_zd: T,
    pairs: Vec<PairTerm<T>>,
}

impl<T: Real> CalibrationProblem<T> {
    pub fn new(
        frames: &[CalibrationFrame<T>],
        rasters: &[Vec<RasterResult<T>>],
        intr: &Intrinsics<T>,
        lambda: T,
    ) -> Result<Self> {
        check_rasters(frames, rasters)?;
        let mut all = Vec::new();
        let mut pairs = Vec::new();
        let mut pair_count = 0;
        for (f, rs) in frames.iter().zip(rasters) {
            for (k, r) in rs.iter().enumerate() {
                pair_count += 1;
                let sp = support_pixels(f, r, k);
                if sp.is_empty() {
                    continue;
                }
                let body: Vec<_> = sp.iter().map(|p| (pixel(p), p.z)).collect();
                let coeff = |p: &SupportPixel<T>, axis: Axis| match axis {
                    Axis::X => (lit::<T>(p.u as f64) - intr.cx) / intr.fx,
                    Axis::Y => (lit::<T>(p.v as f64) - intr.cy) / intr.fy,
                };
                let lin = |axis| LinearExtent::new(sp.iter().map(|p| (coeff(p, axis) * p.d, coeff(p, axis))).collect());
                pairs.push(PairTerm {
                    body_extent: [extent(&body, intr, Axis::X)?, extent(&body, intr, Axis::Y)?],
                    scene_extent: [lin(Axis::X), lin(Axis::Y)],
                });
                all.extend(sp);
            }
        }
        if all.is_empty() {
            return Err(Error::NoSupport);
        }
        let n: T = lit(all.len() as f64);
        let mean_z = all.iter().fold(T::zero(), |a, p| a + p.z) / n;
        let mean_d = all.iter().fold(T::zero(), |a, p| a + p.d) / n;
        let (mut var_z, mut var_d, mut cov_zd) = (T::zero(), T::zero(), T::zero());
        for p in &all {
            let (dz, dd) = (p.z - mean_z, p.d - mean_d);
            var_z += dz * dz;
            var_d += dd * dd;
            cov_zd += dz * dd;
        }
        Ok(Self {
            lambda,
            pixel_count: all.len(),
            pair_count,
            mean_z,
            mean_d,
            var_z: var_z / n,
            var_d: var_d / n,
            cov_zd: cov_zd / n,
            pairs,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }

    pub fn e_depth(&self, s: T, o: T) -> T {
        let two: T = lit(2.0);
        let m = self.mean_z - s * self.mean_d - o;
        (self.var_z - two * s * self.cov_zd + s * s * self.var_d + m * m).max(T::zero())
    }

    pub fn e_depth_grad(&self, s: T, o: T) -> [T; 2] {
        let two: T = lit(2.0);
        let m = self.mean_z - s * self.mean_d - o;
        [two * (s * self.var_d - self.cov_zd) - two * m * self.mean_d, -two * m]
    }

    pub fn e_size(&self, s: T, o: T) -> T {
        let mut sum = T::zero();
        for p in &self.pairs {
            for a in 0..2 {
                let e = p.body_extent[a] - p.scene_extent[a].eval(s, o);
                sum += e * e;
            }
        }
        sum / lit(self.pair_count as f64)
    }

    pub fn energy(&self, s: T, o: T) -> T {
        self.e_depth(s, o) + self.lambda * self.e_size(s, o)
    }

    /// Value and gradient in the optimizer's `(ln s, o)` coordinates; the size
    /// term is differentiated by central differences.
    pub fn energy_and_grad_log(&self, x: &[T]) -> (T, Vec<T>) {
        let s = x[0].exp();
        let o = x[1];
        let gd = self.e_depth_grad(s, o);
        let h: T = lit(1e-6);
        let two: T = lit(2.0);
        let size = |ls: T, o: T| self.e_size(ls.exp(), o);
        let gs_ls = (size(x[0] + h, o) - size(x[0] - h, o)) / (two * h);
        let gs_o = (size(x[0], o + h) - size(x[0], o - h)) / (two * h);
        let value = self.energy(s, o);
        (value, vec![gd[0] * s + self.lambda * gs_ls, gd[1] + self.lambda * gs_o])
    }
}

/// Minimizes `E_depth + λ·E_size` over `(s, o)` from `(1, 0)` with `s` kept
/// positive through a log parameterization.
pub fn calibrate<T: Real>(
    frames: &[CalibrationFrame<T>],
    intr: &Intrinsics<T>,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult<T>> {
    let rasters = rasterize_frames(frames, intr, cfg.splat_radius)?;
    let problem = CalibrationProblem::new(frames, &rasters, intr, lit(cfg.lambda))?;
    calibrate_problem(&problem, cfg)
}

pub fn calibrate_problem<T: Real>(problem: &CalibrationProblem<T>, cfg: &CalibrationConfig) -> Result<CalibrationResult<T>> {
    let lcfg = LbfgsConfig { max_iters: cfg.max_iters, grad_tol: cfg.grad_tol, rel_tol: cfg.rel_tol, ..Default::default() };
    let rep = minimize(|x: &[T]| problem.energy_and_grad_log(x), &[T::zero(), T::zero()], &lcfg)?;
    Ok(CalibrationResult {
        s: rep.x[0].exp(),
        o: rep.x[1],
        final_energy: rep.value,
        iterations: rep.iterations,
        converged: rep.converged,
    })
}

/// `s·D + o` per cell; NaN stays NaN and non-positive results become NaN.
pub fn apply_calibration<T: Real>(depth: &DepthMap<T>, s: T, o: T) -> Result<DepthMap<T>> {
    if !(s > T::zero()) {
        return Err(Error::Domain("calibration scale must be positive".into()));
    }
    let data = depth
        .data
        .iter()
        .map(|&d| {
            let m = s * d + o;
            if is_nan(m) || !(m > T::zero()) {
                nan()
            } else {
                m
            }
        })
        .collect();
    DepthMap::new(depth.width, depth.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::FrameTag;
    use nalgebra::Vector3;

    fn intr() -> Intrinsics<f64> {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    fn mesh(v: Vec<Vector3<f64>>) -> BodyMesh<f64> {
        BodyMesh { vertices: v, frame: FrameTag::Camera }
    }

    #[test]
    fn raster_examples() {
        let r = rasterize(&mesh(vec![Vector3::new(0.0, 0.0, 2.0)]), &intr(), 2.0);
        assert_eq!(r.mask.count(), 13);
        for v in 0..100 {
            for u in 0..100 {
                let inside = (u as f64 - 50.0).powi(2) + (v as f64 - 50.0).powi(2) <= 4.0;
                assert_eq!(r.mask.get(u, v), inside);
                assert_eq!(r.zbuf.is_valid(u, v), inside);
                if inside {
                    assert_eq!(r.zbuf.get(u, v), 2.0);
                }
            }
        }
        let behind = rasterize(&mesh(vec![Vector3::new(0.0, 0.0, -1.0), Vector3::new(0.1, 0.0, 0.0)]), &intr(), 2.0);
        assert_eq!(behind.mask.count(), 0);
        let two = rasterize(&mesh(vec![Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.0, 0.0, 1.0)]), &intr(), 2.0);
        assert_eq!(two.zbuf.get(50, 50), 1.0);
    }

    #[test]
    fn overlap_examples() {
        let r = rasterize(&mesh(vec![Vector3::new(0.0, 0.0, 2.0)]), &intr(), 2.0);
        let disjoint = InstanceMask::new(100, 100, (0..10_000).map(|i| if i < 100 { 1 } else { 0 }).collect()).unwrap();
        assert_eq!(overlap_mask(&r, &disjoint, 1).unwrap().count(), 0);
        let same = InstanceMask::new(100, 100, r.mask.data.iter().map(|&b| b as u8).collect()).unwrap();
        assert_eq!(overlap_mask(&r, &same, 1).unwrap(), r.mask);
    }

    fn one_pixel_frame(z: f64, d: f64) -> (Vec<CalibrationFrame<f64>>, Vec<Vec<RasterResult<f64>>>) {
        let m = mesh(vec![Vector3::new(0.0, 0.0, z)]);
        let r = rasterize(&m, &intr(), 0.0);
        let mut inst = vec![0u8; 10_000];
        inst[50 * 100 + 50] = 1;
        let f = CalibrationFrame {
            depth: DepthMap::filled(100, 100, d),
            masks: InstanceMask::new(100, 100, inst).unwrap(),
            meshes: vec![m],
        };
        (vec![f], vec![vec![r]])
    }

    #[test]
    fn e_depth_examples() {
        let (f, r) = one_pixel_frame(2.0, 1.0);
        assert_eq!(e_depth(&f, &r, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(e_depth(&f, &r, 2.0, 0.0).unwrap(), 0.0);
        let p = CalibrationProblem::new(&f, &r, &intr(), 1.0).unwrap();
        assert!((p.e_depth(1.0, 0.0) - 1.0).abs() < 1e-15);
        let empty = vec![CalibrationFrame { meshes: vec![], ..f[0].clone() }];
        let empty = vec![CalibrationFrame { masks: InstanceMask::empty(100, 100), ..empty[0].clone() }];
        assert!(matches!(e_depth(&empty, &[vec![]], 1.0, 0.0), Err(Error::NoSupport)));
    }

    #[test]
    fn extent_examples() {
        let i = intr();
        // x = (u - 50) * z / 100 at z = 1
        let pts = vec![(Vector2::new(30.0, 50.0), 1.0), (Vector2::new(80.0, 50.0), 1.0)];
        assert!((extent(&pts, &i, Axis::X).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(extent(&pts[..1], &i, Axis::X).unwrap(), 0.0);
        assert!(extent(&[], &i, Axis::Y).is_err());
    }

    #[test]
    fn e_size_hand_example() {
        // body points span x in [-0.2, 0.3]; the scene side is stretched by 1.2
        let i = intr();
        let m = mesh(vec![Vector3::new(-0.2, 0.0, 1.0), Vector3::new(0.3, 0.0, 1.0)]);
        let r = rasterize(&m, &i, 0.0);
        let inst: Vec<u8> = r.mask.data.iter().map(|&b| b as u8).collect();
        let f = CalibrationFrame {
            depth: DepthMap::filled(100, 100, 1.0),
            masks: InstanceMask::new(100, 100, inst).unwrap(),
            meshes: vec![m],
        };
        let (fs, rs) = (vec![f], vec![vec![r]]);
        assert!(e_size(&fs, &rs, &i, 1.0, 0.0).unwrap() < 1e-30);
        // depth 1.2: x extent 0.6 vs 0.5, y extents both 0
        let e = e_size(&fs, &rs, &i, 1.2, 0.0).unwrap();
        assert!((e - 0.01).abs() < 1e-12, "{}", e);
        let p = CalibrationProblem::new(&fs, &rs, &i, 1.0).unwrap();
        assert!((p.e_size(1.2, 0.0) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn hull_extent_matches_direct() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(51);
        for _ in 0..50 {
            let pts: Vec<(f64, f64)> = (0..200).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0))).collect();
            let le = LinearExtent::new(pts.clone());
            for _ in 0..20 {
                let (s, o) = (rng.random_range(0.1..5.0), rng.random_range(-2.0..2.0));
                let vals: Vec<f64> = pts.iter().map(|(a, b)| s * a + o * b).collect();
                let direct = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
                assert!((le.eval(s, o) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_examples() {
        let d = DepthMap::new(3, 1, vec![2.0, f64::NAN, 0.1]).unwrap();
        let out = apply_calibration(&d, 2.0, 0.5).unwrap();
        assert_eq!(out.data[0], 4.5);
        assert!(out.data[1].is_nan());
        let id = apply_calibration(&d, 1.0, 0.0).unwrap();
        assert_eq!(id.data[0], 2.0);
        let neg = apply_calibration(&d, 1.0, -1.0).unwrap();
        assert!(neg.data[2].is_nan());
        assert!(apply_calibration(&d, 0.0, 0.0).is_err());
    }
}
