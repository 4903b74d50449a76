//! Rotation, rigid-pose, and pinhole-camera algebra.
//!
//! Poses stored by the pipeline are camera-to-world. Quaternions use the
//! `(w, x, y, z)` component order internally.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{is_finite, is_nan, lit, nan, Real};

/// Unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> UnitQuat<T> {
    pub fn identity() -> Self {
        Self {
            w: T::one(),
            x: T::zero(),
            y: T::zero(),
            z: T::zero(),
        }
    }

    /// Normalizes `(w, x, y, z)`; a zero or non-finite vector is rejected.
    pub fn new(w: T, x: T, y: T, z: T) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !is_finite(n) || n <= T::zero() {
            return Err(Error::Domain(
                "quaternion with zero or non-finite norm".into(),
            ));
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn from_array(q: [T; 4]) -> Result<Self> {
        Self::new(q[0], q[1], q[2], q[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: &Vector3<T>, angle: T) -> Self {
        let n = axis.norm();
        if n <= T::zero() {
            return Self::identity();
        }
        let half = angle * lit(0.5);
        let s = half.sin() / n;
        Self {
            w: half.cos(),
            x: axis.x * s,
            y: axis.y * s,
            z: axis.z * s,
        }
    }

    pub fn dot(&self, o: &Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn neg(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Representative with non-negative scalar part.
    pub fn canonical(&self) -> Self {
        if self.w < T::zero() {
            self.neg()
        } else {
            *self
        }
    }

    /// Hamilton product `self ⊗ rhs`; matches `R(self) · R(rhs)`.
    pub fn mul(&self, r: &Self) -> Self {
        let (a, b) = (self, r);
        Self {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    /// Rotation angle between the two rotations, in `[0, π]`.
    pub fn angle_to(&self, o: &Self) -> T {
        let r = self.conjugate().mul(o);
        let v = (r.x * r.x + r.y * r.y + r.z * r.z).sqrt();
        lit::<T>(2.0) * v.atan2(r.w.abs())
    }

    pub fn to_rotation(&self) -> Rotation<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let two: T = lit(2.0);
        let one = T::one();
        Rotation(Matrix3::new(
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ))
    }

    /// Shepperd's method; the result has `w >= 0`.
    pub fn from_rotation(r: &Rotation<T>) -> Self {
        let m = &r.0;
        let one = T::one();
        let quarter: T = lit(0.25);
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z);
        if trace > T::zero() {
            let s = (trace + one).sqrt() * lit(2.0);
            w = quarter * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (one + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * lit(2.0);
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = quarter * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (one + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * lit(2.0);
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = quarter * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (one + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * lit(2.0);
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = quarter * s;
        }
        // Renormalize to absorb rounding in the matrix.
        Self::new(w, x, y, z)
            .expect("rotation matrix yields a non-zero quaternion")
            .canonical()
    }
}

/// Spherical linear interpolation along the shorter arc.
///
/// `t = 0` and `t = 1` return the endpoints exactly (with `q1` sign-aligned
/// to `q0`). An exactly antipodal pair encodes one rotation, so the path is
/// constant; the fallback for nearly parallel inputs is normalized lerp.
pub fn quat_slerp<T: Real>(q0: &UnitQuat<T>, q1: &UnitQuat<T>, t: T) -> UnitQuat<T> {
    let mut d = q0.dot(q1);
    let mut b = *q1;
    if d < T::zero() {
        d = -d;
        b = b.neg();
    }
    if t == T::zero() {
        return *q0;
    }
    if t == T::one() {
        return b;
    }
    let (s0, s1) = if d > T::one() - lit(1e-12) {
        (T::one() - t, t)
    } else {
        let theta = d.min(T::one()).acos();
        let st = theta.sin();
        (
            ((T::one() - t) * theta).sin() / st,
            (t * theta).sin() / st,
        )
    };
    UnitQuat::new(
        s0 * q0.w + s1 * b.w,
        s0 * q0.x + s1 * b.x,
        s0 * q0.y + s1 * b.y,
        s0 * q0.z + s1 * b.z,
    )
    .expect("slerp of unit quaternions is non-zero")
}

/// Proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<T: Real>(Matrix3<T>);

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Checks orthonormality and `det = +1` within `tol`.
    pub fn from_matrix(m: Matrix3<T>, tol: T) -> Result<Self> {
        let err = (m * m.transpose() - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !is_finite(err) || err > tol || (det - T::one()).abs() > tol {
            return Err(Error::Domain(format!(
                "matrix is not a rotation (orthogonality error {:e}, det {:e})",
                crate::scalar::to_f64(err),
                crate::scalar::to_f64(det)
            )));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix the caller already knows to be a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<T>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    /// Exponential map (Rodrigues).
    pub fn exp(w: &Vector3<T>) -> Self {
        let theta2 = w.norm_squared();
        let k = skew(w);
        let (a, b) = if theta2 < lit(1e-16) {
            (T::one() - theta2 / lit(6.0), lit::<T>(0.5) - theta2 / lit(24.0))
        } else {
            let theta = theta2.sqrt();
            (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
        };
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    /// Logarithm map to the rotation vector.
    pub fn log(&self) -> Vector3<T> {
        let q = UnitQuat::from_rotation(self);
        let v = Vector3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < lit(1e-12) {
            return v * lit::<T>(2.0);
        }
        let angle = lit::<T>(2.0) * s.atan2(q.w);
        v * (angle / s)
    }

    pub fn from_axis_angle(axis: &Vector3<T>, angle: T) -> Self {
        UnitQuat::from_axis_angle(axis, angle).to_rotation()
    }

    pub fn rot_x(a: T) -> Self {
        Self::from_axis_angle(&Vector3::x(), a)
    }
    pub fn rot_y(a: T) -> Self {
        Self::from_axis_angle(&Vector3::y(), a)
    }
    pub fn rot_z(a: T) -> Self {
        Self::from_axis_angle(&Vector3::z(), a)
    }

    pub fn to_quat(&self) -> UnitQuat<T> {
        UnitQuat::from_rotation(self)
    }

    pub fn compose(&self, o: &Self) -> Self {
        Self(self.0 * o.0)
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<T>) -> Vector3<T> {
        self.0 * v
    }

    /// Geodesic angle of this rotation.
    pub fn angle(&self) -> T {
        let q = self.to_quat();
        let v = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        lit::<T>(2.0) * v.atan2(q.w.abs())
    }

    pub fn angle_to(&self, o: &Self) -> T {
        self.inverse().compose(o).angle()
    }
}

pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose<T: Real> {
    pub rotation: Rotation<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> SE3Pose<T> {
    pub fn new(rotation: Rotation<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<T>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn compose(&self, b: &Self) -> Self {
        se3_compose(self, b)
    }

    pub fn inverse(&self) -> Self {
        se3_inverse(self)
    }

    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.apply(p) + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Left-multiplied tangent update `(exp(ω) R, t + v)`.
    pub fn retract(&self, omega: &Vector3<T>, v: &Vector3<T>) -> Self {
        Self::new(
            Rotation::exp(omega).compose(&self.rotation),
            self.translation + v,
        )
    }
}

pub fn se3_compose<T: Real>(a: &SE3Pose<T>, b: &SE3Pose<T>) -> SE3Pose<T> {
    SE3Pose::new(
        a.rotation.compose(&b.rotation),
        a.rotation.apply(&b.translation) + a.translation,
    )
}

pub fn se3_inverse<T: Real>(a: &SE3Pose<T>) -> SE3Pose<T> {
    let rt = a.rotation.inverse();
    SE3Pose::new(rt, -rt.apply(&a.translation))
}

/// `G_j ∘ G_i⁻¹`.
pub fn relative_pose<T: Real>(gi: &SE3Pose<T>, gj: &SE3Pose<T>) -> SE3Pose<T> {
    se3_compose(gj, &se3_inverse(gi))
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        let w: T = lit(width as f64);
        let h: T = lit(height as f64);
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(Error::Domain("focal lengths must be positive".into()));
        }
        if !(cx > T::zero() && cx < w && cy > T::zero() && cy < h) {
            return Err(Error::Domain(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Focal length `(W + H) / 2`, principal point at the image center.
    pub fn from_image_size(width: usize, height: usize) -> Result<Self> {
        let f = lit::<T>((width + height) as f64 / 2.0);
        Self::new(
            f,
            f,
            lit(width as f64 / 2.0),
            lit(height as f64 / 2.0),
            width,
            height,
        )
    }

    pub fn k_matrix(&self) -> Matrix3<T> {
        Matrix3::new(
            self.fx,
            T::zero(),
            self.cx,
            T::zero(),
            self.fy,
            self.cy,
            T::zero(),
            T::zero(),
            T::one(),
        )
    }

    pub fn contains(&self, p: &Vector2<T>) -> bool {
        p.x >= T::zero()
            && p.y >= T::zero()
            && p.x <= lit(self.width as f64 - 1.0)
            && p.y <= lit(self.height as f64 - 1.0)
    }

    pub fn project(&self, point: &Vector3<T>) -> Result<Vector2<T>> {
        project(self, point)
    }

    pub fn unproject(&self, pixel: &Vector2<T>, depth: T) -> Result<Vector3<T>> {
        unproject(self, pixel, depth)
    }
}

pub fn project<T: Real>(intr: &Intrinsics<T>, p: &Vector3<T>) -> Result<Vector2<T>> {
    if !(p.z > T::zero()) {
        return Err(Error::Domain("projection of a point with z <= 0".into()));
    }
    Ok(Vector2::new(
        intr.fx * p.x / p.z + intr.cx,
        intr.fy * p.y / p.z + intr.cy,
    ))
}

pub fn unproject<T: Real>(intr: &Intrinsics<T>, px: &Vector2<T>, depth: T) -> Result<Vector3<T>> {
    if !(depth > T::zero()) {
        return Err(Error::Domain(
            "unprojection needs a positive finite depth".into(),
        ));
    }
    Ok(Vector3::new(
        (px.x - intr.cx) * depth / intr.fx,
        (px.y - intr.cy) * depth / intr.fy,
        depth,
    ))
}

/// Unprojects every pixel of a depth map; invalid cells give `None`.
pub fn unproject_grid<T: Real>(intr: &Intrinsics<T>, depth: &DepthMap<T>) -> Vec<Option<Vector3<T>>> {
    let mut out = Vec::with_capacity(depth.data.len());
    for v in 0..depth.height {
        for u in 0..depth.width {
            let px = Vector2::new(lit(u as f64), lit(v as f64));
            out.push(unproject(intr, &px, depth.get(u, v)).ok());
        }
    }
    out
}

/// Row-major depth grid in meters; NaN marks invalid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> DepthMap<T> {
    /// Rejects finite non-positive cells and infinities.
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "depth map {}x{} needs {} cells, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&d| !is_nan(d) && !(d > T::zero() && is_finite(d))) {
            return Err(Error::Domain(format!(
                "depth cell {} is not a positive finite value",
                i
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self::filled(width, height, nan())
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> T {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, d: T) {
        self.data[v * self.width + u] = d;
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        !is_nan(self.get(u, v))
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| !is_nan(**d)).count()
    }
}

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, b: bool) {
        self.data[v * self.width + u] = b;
    }

    /// Looks up the pixel nearest to a continuous coordinate; outside is false.
    pub fn at<T: Real>(&self, p: &Vector2<T>) -> bool {
        let u = crate::scalar::to_f64(p.x).round();
        let v = crate::scalar::to_f64(p.y).round();
        if !(u >= 0.0 && v >= 0.0 && (u as usize) < self.width && (v as usize) < self.height) {
            return false;
        }
        self.get(u as usize, v as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }
}

/// Per-pixel human instance ids: 0 is background, `n` is instance `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl InstanceMask {
    /// Ids present must form the contiguous range `1..=N`.
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "mask {}x{} needs {} cells, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        let mut seen = [false; 256];
        for &d in &data {
            seen[d as usize] = true;
        }
        let max = data.iter().copied().max().unwrap_or(0) as usize;
        if let Some(missing) = (1..=max).find(|&n| !seen[n]) {
            return Err(Error::Domain(format!(
                "instance ids are not contiguous: {} missing below {}",
                missing, max
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.data[v * self.width + u]
    }

    pub fn instance_count(&self) -> usize {
        self.data.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn instance(&self, n: u8) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&d| d == n && n != 0).collect(),
        }
    }

    /// Union of all human instances.
    pub fn union(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&d| d != 0).collect(),
        }
    }
}

pub const CLOUD_CHANNELS: usize = 7;

/// A colored point with a human flag: 7 channels in total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint<T: Real> {
    pub xyz: Vector3<T>,
    pub rgb: [T; 3],
    pub human: T,
}

impl<T: Real> CloudPoint<T> {
    pub fn features(&self) -> [T; CLOUD_CHANNELS] {
        [
            self.xyz.x,
            self.xyz.y,
            self.xyz.z,
            self.rgb[0],
            self.rgb[1],
            self.rgb[2],
            self.human,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T: Real> {
    pub points: Vec<CloudPoint<T>>,
}

impl<T: Real> PointCloud<T> {
    pub const CHANNELS: usize = CLOUD_CHANNELS;

    pub fn new(points: Vec<CloudPoint<T>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
