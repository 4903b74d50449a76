use std::path::{Path, PathBuf};

use humanslam::ba_core::BAConfig;
use humanslam::denoiser::DenoiserConfig;
use humanslam::depth_calibration::CalibrationConfig;
use humanslam::geometry::Intrinsics;
use humanslam::metrics::AteAlignment;
use humanslam::synth::SynthConfig;
use humanslam::{Error, Result};
use serde::{Deserialize, Serialize};

/// How intrinsics are obtained from the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FocalPolicy {
    /// `f = (W + H) / 2`, principal point at the image center.
    #[default]
    ImageSize,
    Fixed { fx: f64, fy: f64, cx: f64, cy: f64 },
}

impl FocalPolicy {
    pub fn intrinsics(&self, width: usize, height: usize) -> Result<Intrinsics<f64>> {
        match *self {
            FocalPolicy::ImageSize => Intrinsics::from_image_size(width, height),
            FocalPolicy::Fixed { fx, fy, cx, cy } => Intrinsics::new(fx, fy, cx, cy, width, height),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlamConfig {
    pub ba: BAConfig,
    /// Weight of the calibrated-depth prior; 0 leaves scale unconstrained.
    pub depth_weight: f64,
    /// Lifted points whose reprojection strays further than this are dropped.
    pub epipolar_tau_px: f64,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self { ba: BAConfig::default(), depth_weight: 1.0, epipolar_tau_px: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseStageConfig {
    pub enabled: bool,
    /// Trained weights; when absent the network is identity-initialized.
    pub weights: Option<PathBuf>,
    pub network: DenoiserConfig,
}

impl Default for DenoiseStageConfig {
    fn default() -> Self {
        Self { enabled: true, weights: None, network: DenoiserConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ate_alignment: AteAlignment,
    /// Allow scale in the first-frame and world alignments of MPJPE.
    pub mpjpe_with_scale: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ate_alignment: AteAlignment::Rigid, mpjpe_with_scale: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub focal: FocalPolicy,
    pub synth: SynthConfig,
    pub calibration: CalibrationConfig,
    pub slam: SlamConfig,
    pub denoise: DenoiseStageConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = crate::formats::read_json(path)?;
        cfg.validate().map_err(|e| Error::format(path.display(), e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.denoise.network.validate()?;
        let c = &self.calibration;
        if !(c.lambda >= 0.0) || c.max_iters == 0 || !(c.splat_radius > 0.0) {
            return Err(Error::Config("calibration needs lambda >= 0, max_iters > 0 and splat_radius > 0".into()));
        }
        let s = &self.slam;
        if !(s.depth_weight >= 0.0) || !(s.epipolar_tau_px > 0.0) || s.ba.max_iters == 0 {
            return Err(Error::Config("slam needs depth_weight >= 0, epipolar_tau_px > 0 and ba.max_iters > 0".into()));
        }
        if let FocalPolicy::Fixed { fx, fy, .. } = self.focal {
            if !(fx > 0.0 && fy > 0.0) {
                return Err(Error::Config("fixed focal lengths must be positive".into()));
            }
        }
        Ok(())
    }
}
