//! Scalar abstraction shared by every numeric module.
//!
//! All geometry, calibration, bundle adjustment, metric and network code is
//! written against [`Real`], so the same algorithms run in `f32` or `f64`.
//! Gradient checks and acceptance runs use `f64`.

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Floating-point scalar usable by every module of the crate.
pub trait Real: RealField + Copy + ToPrimitive + Default {}

impl<T: RealField + Copy + ToPrimitive + Default> Real for T {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts `T` to `f64` for reporting and serialization.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Not-a-number in `T`; used as the invalid-depth sentinel.
#[inline]
pub fn nan<T: Real>() -> T {
    lit(f64::NAN)
}

#[inline]
pub fn is_finite<T: Real>(x: T) -> bool {
    to_f64(x).is_finite()
}

#[inline]
#[allow(clippy::eq_op)]
pub fn is_nan<T: Real>(x: T) -> bool {
    x != x
}
