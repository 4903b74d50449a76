// `!(x > 0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ba_core;
pub mod body_model;
pub mod denoiser;
pub mod depth_calibration;
pub mod error;
pub mod geometry;
pub mod lbfgs;
pub mod metrics;
pub mod scalar;
pub mod synth;
pub mod world_frame;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` instances of the generic types.
pub mod f64 {
    use super::*;

    pub type UnitQuat = geometry::UnitQuat<f64>;
    pub type Rotation = geometry::Rotation<f64>;
    pub type SE3Pose = geometry::SE3Pose<f64>;
    pub type Intrinsics = geometry::Intrinsics<f64>;
    pub type DepthMap = geometry::DepthMap<f64>;
    pub type CloudPoint = geometry::CloudPoint<f64>;
    pub type PointCloud = geometry::PointCloud<f64>;
    pub type BodyTemplate = body_model::BodyTemplate<f64>;
    pub type BodyParams = body_model::BodyParams<f64>;
    pub type BodyMesh = body_model::BodyMesh<f64>;
    pub type BodyTrack = world_frame::BodyTrack<f64>;
    pub type CalibrationFrame = depth_calibration::CalibrationFrame<f64>;
    pub type CalibrationProblem = depth_calibration::CalibrationProblem<f64>;
    pub type CalibrationResult = depth_calibration::CalibrationResult<f64>;
    pub type FramePairObservation = ba_core::FramePairObservation<f64>;
    pub type BAProblem = ba_core::BAProblem<f64>;
    pub type BASolution = ba_core::BASolution<f64>;
    pub type JointSequence = metrics::JointSequence<f64>;
    pub type SimilarityAlignment = metrics::SimilarityAlignment<f64>;
    pub type DenoiserWeights = denoiser::DenoiserWeights<f64>;
}
