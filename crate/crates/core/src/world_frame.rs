//! Camera-to-world transport of body parameters and gap filling.

use nalgebra::Vector3;

use crate::body_model::{BodyParams, BodyTemplate, FrameTag, NUM_BETAS};
use crate::error::{Error, Result};
use crate::geometry::{quat_slerp, Rotation, SE3Pose};
use crate::scalar::{lit, Real};

/// Per-frame parameters of one tracked human; `None` marks a missed detection.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyTrack<T: Real> {
    pub track_id: u32,
    pub frame: FrameTag,
    pub slots: Vec<Option<BodyParams<T>>>,
}

impl<T: Real> BodyTrack<T> {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    /// Parameters of a fully observed track.
    pub fn observed(&self) -> Result<Vec<BodyParams<T>>> {
        self.slots
            .iter()
            .enumerate()
            .map(|(t, s)| {
                s.clone().ok_or_else(|| {
                    Error::Domain(format!("track {} has no observation at frame {}", self.track_id, t))
                })
            })
            .collect()
    }
}

/// `Φʷ = R Φᶜ`, `Γʷ = R (Γᶜ + c) + t − c` with `c` the shaped pelvis.
pub fn camera_to_world<T: Real>(
    params: &BodyParams<T>,
    pose: &SE3Pose<T>,
    template: &BodyTemplate<T>,
) -> BodyParams<T> {
    let c = template.pelvis(&params.beta);
    let r = &pose.rotation;
    BodyParams {
        phi: r.compose(&params.phi),
        theta: params.theta.clone(),
        beta: params.beta,
        gamma: r.apply(&(params.gamma + c)) + pose.translation - c,
    }
}

/// Inverse of [`camera_to_world`].
pub fn world_to_camera<T: Real>(
    params: &BodyParams<T>,
    pose: &SE3Pose<T>,
    template: &BodyTemplate<T>,
) -> BodyParams<T> {
    let c = template.pelvis(&params.beta);
    let rt = pose.rotation.inverse();
    BodyParams {
        phi: rt.compose(&params.phi),
        theta: params.theta.clone(),
        beta: params.beta,
        gamma: rt.apply(&(params.gamma + c - pose.translation)) - c,
    }
}

/// Transports a whole camera-frame track with per-frame camera-to-world poses.
pub fn track_to_world<T: Real>(
    track: &BodyTrack<T>,
    poses: &[SE3Pose<T>],
    template: &BodyTemplate<T>,
) -> Result<BodyTrack<T>> {
    if track.frame != FrameTag::Camera {
        return Err(Error::Domain(format!("track {} is not in the camera frame", track.track_id)));
    }
    if poses.len() < track.len() {
        return Err(Error::Shape(format!(
            "track {} spans {} frames but only {} poses are available",
            track.track_id,
            track.len(),
            poses.len()
        )));
    }
    Ok(BodyTrack {
        track_id: track.track_id,
        frame: FrameTag::World,
        slots: track
            .slots
            .iter()
            .zip(poses)
            .map(|(s, g)| s.as_ref().map(|p| camera_to_world(p, g, template)))
            .collect(),
    })
}

fn lerp_params<T: Real>(a: &BodyParams<T>, b: &BodyParams<T>, t: T) -> BodyParams<T> {
    let slerp = |ra: &Rotation<T>, rb: &Rotation<T>| {
        quat_slerp(&ra.to_quat(), &rb.to_quat(), t).to_rotation()
    };
    let mut beta = [T::zero(); NUM_BETAS];
    for (i, b_i) in beta.iter_mut().enumerate() {
        *b_i = a.beta[i] + (b.beta[i] - a.beta[i]) * t;
    }
    BodyParams {
        phi: slerp(&a.phi, &b.phi),
        theta: a.theta.iter().zip(&b.theta).map(|(x, y)| slerp(x, y)).collect(),
        beta,
        gamma: a.gamma + (b.gamma - a.gamma) * t,
    }
}

/// Fills missing slots: rotations by slerp, shape and translation linearly,
/// leading and trailing gaps by clamping to the nearest observation.
pub fn interpolate_track<T: Real>(track: &BodyTrack<T>) -> Result<BodyTrack<T>> {
    let observed: Vec<usize> = track
        .slots
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().map(|_| i))
        .collect();
    let (first, last) = match (observed.first(), observed.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => {
            return Err(Error::Empty(format!(
                "track {} has no observed frame",
                track.track_id
            )))
        }
    };
    let mut slots = track.slots.clone();
    for t in 0..slots.len() {
        if slots[t].is_some() {
            continue;
        }
        let filled = if t < first {
            track.slots[first].clone()
        } else if t > last {
            track.slots[last].clone()
        } else {
            let hi = observed.partition_point(|&o| o < t);
            let (a, b) = (observed[hi - 1], observed[hi]);
            let w = lit::<T>((t - a) as f64 / (b - a) as f64);
            let pa = track.slots[a].as_ref().expect("observed");
            let pb = track.slots[b].as_ref().expect("observed");
            Some(lerp_params(pa, pb, w))
        };
        slots[t] = filled;
    }
    Ok(BodyTrack {
        track_id: track.track_id,
        frame: track.frame,
        slots,
    })
}

/// World-frame pelvis position of a parameter set.
pub fn pelvis_position<T: Real>(params: &BodyParams<T>, template: &BodyTemplate<T>) -> Vector3<T> {
    template.pelvis(&params.beta) + params.gamma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::tests::random_params;
    use crate::geometry::UnitQuat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> SE3Pose<f64> {
        SE3Pose::new(
            Rotation::exp(&Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            )),
            Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ),
        )
    }

    #[test]
    fn identity_and_translation() {
        let t = BodyTemplate::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_params(&mut rng);
        let w = camera_to_world(&p, &SE3Pose::identity(), &t);
        assert!((w.gamma - p.gamma).norm() < 1e-15);
        assert_eq!(w.phi, p.phi);
        let shift = Vector3::new(0.5, -1.0, 2.0);
        let w = camera_to_world(&p, &SE3Pose::from_translation(shift), &t);
        assert!((w.gamma - (p.gamma + shift)).norm() < 1e-14);
        assert_eq!(w.phi, p.phi);
        let back = world_to_camera(&p, &SE3Pose::identity(), &t);
        assert!((back.gamma - p.gamma).norm() < 1e-15);
    }

    #[test]
    fn transport_is_mesh_equivariant() {
        let t = BodyTemplate::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let p = random_params(&mut rng);
            let g = random_pose(&mut rng);
            let w = camera_to_world(&p, &g, &t);
            assert_eq!(w.theta, p.theta);
            assert_eq!(w.beta, p.beta);
            let lhs = t.pose_mesh(&w, FrameTag::World);
            let rhs = t.pose_mesh(&p, FrameTag::Camera).transformed(&g, FrameTag::World);
            let err = lhs
                .vertices
                .iter()
                .zip(&rhs.vertices)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "max vertex error {}", err);
        }
    }

    #[test]
    fn round_trip() {
        let t = BodyTemplate::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let p = random_params(&mut rng);
            let g = random_pose(&mut rng);
            let back = world_to_camera(&camera_to_world(&p, &g, &t), &g, &t);
            assert!((back.gamma - p.gamma).norm() < 1e-12);
            assert!((back.phi.matrix() - p.phi.matrix()).abs().max() < 1e-12);
            // G then G⁻¹ through camera_to_world alone
            let twice = camera_to_world(&camera_to_world(&p, &g, &t), &g.inverse(), &t);
            assert!((twice.gamma - p.gamma).norm() < 1e-12);
        }
    }

    fn track_of(slots: Vec<Option<BodyParams<f64>>>) -> BodyTrack<f64> {
        BodyTrack {
            track_id: 1,
            frame: FrameTag::World,
            slots,
        }
    }

    #[test]
    fn interpolation_examples() {
        let mut a = BodyParams::identity();
        let mut b = BodyParams::identity();
        b.gamma = Vector3::new(2.0, 0.0, 0.0);
        b.phi = Rotation::rot_z(std::f64::consts::FRAC_PI_2);
        a.beta[2] = 1.0;
        let tr = track_of(vec![None, Some(a.clone()), None, Some(b.clone()), None, None]);
        let full = interpolate_track(&tr).unwrap();
        assert!(full.is_complete());
        let mid = full.slots[2].as_ref().unwrap();
        assert!((mid.gamma - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((mid.beta[2] - 0.5).abs() < 1e-15);
        let z45 = UnitQuat::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_4);
        assert!(mid.phi.to_quat().angle_to(&z45) < 1e-12);
        assert_eq!(full.slots[0].as_ref().unwrap(), &a);
        assert_eq!(full.slots[5].as_ref().unwrap(), &b);

        let complete = track_of(vec![Some(a.clone()), Some(b.clone())]);
        assert_eq!(interpolate_track(&complete).unwrap(), complete);
        assert!(interpolate_track(&track_of(vec![None, None])).is_err());
    }

    #[test]
    fn interpolated_rotations_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let a = random_params(&mut rng);
        let b = random_params(&mut rng);
        let full = interpolate_track(&track_of(vec![Some(a), None, None, None, Some(b)])).unwrap();
        for s in full.slots.iter().flatten() {
            for r in std::iter::once(&s.phi).chain(&s.theta) {
                assert!(Rotation::from_matrix(*r.matrix(), 1e-9).is_ok());
            }
        }
    }
}
