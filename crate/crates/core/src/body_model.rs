//! Simplified parametric human body.
//!
//! The template keeps the algebra of the usual parametric body: shape blend,
//! kinematic pose over a 22-joint tree, global orientation about the shaped
//! pelvis, and root translation:
//!
//! ```text
//! V = Φ · (FK(θ, β) − c(β)) + c(β) + Γ
//! ```
//!
//! Vertices move rigidly with the joint that owns them. The template is
//! procedurally generated from a fixed seed and shipped as a JSON asset.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rotation;
use crate::scalar::{lit, Real};

pub const NUM_JOINTS: usize = 22;
pub const NUM_BETAS: usize = 10;
pub const VERTS_PER_PART: usize = 10;
const RING: usize = 6;

/// Seed of the shipped template asset.
pub const TEMPLATE_SEED: u64 = 20_240_622;

const TEMPLATE_JSON: &str = include_str!("../assets/body_template.json");

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

pub const JOINT_PARENTS: [i32; NUM_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19,
];

// T-pose rest joints, y up, feet near y = 0.
const REST_JOINTS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.95, 0.0],
    [0.09, 0.87, 0.0],
    [-0.09, 0.87, 0.0],
    [0.0, 1.05, -0.01],
    [0.10, 0.50, 0.01],
    [-0.10, 0.50, 0.01],
    [0.0, 1.18, 0.0],
    [0.11, 0.09, -0.02],
    [-0.11, 0.09, -0.02],
    [0.0, 1.24, 0.01],
    [0.12, 0.03, 0.10],
    [-0.12, 0.03, 0.10],
    [0.0, 1.45, 0.0],
    [0.07, 1.38, 0.0],
    [-0.07, 1.38, 0.0],
    [0.0, 1.58, 0.03],
    [0.18, 1.40, 0.0],
    [-0.18, 1.40, 0.0],
    [0.44, 1.40, 0.0],
    [-0.44, 1.40, 0.0],
    [0.68, 1.40, 0.0],
    [-0.68, 1.40, 0.0],
];

const PART_RADII: [f64; NUM_JOINTS] = [
    0.14, 0.08, 0.08, 0.13, 0.06, 0.06, 0.13, 0.05, 0.05, 0.14, 0.04, 0.04, 0.05, 0.05, 0.05,
    0.10, 0.05, 0.05, 0.04, 0.04, 0.035, 0.035,
];

/// Serialized template, stored as plain `f64` arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateAsset {
    pub seed: u64,
    pub joint_names: Vec<String>,
    pub joint_parents: Vec<i32>,
    pub rest_vertices: Vec<[f64; 3]>,
    pub shape_basis: Vec<Vec<[f64; 3]>>,
    pub joint_regressor: Vec<Vec<f64>>,
    pub vertex_part: Vec<usize>,
    pub faces: Vec<[usize; 3]>,
}

/// Generates the procedural template for `seed`.
pub fn generate_template_asset(seed: u64) -> TemplateAsset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let joints: Vec<Vector3<f64>> = REST_JOINTS.iter().map(|j| Vector3::from(*j)).collect();
    let mut children = vec![Vec::new(); NUM_JOINTS];
    for (k, &p) in JOINT_PARENTS.iter().enumerate() {
        if p >= 0 {
            children[p as usize].push(k);
        }
    }
    let m = NUM_JOINTS * VERTS_PER_PART;
    let mut verts = Vec::with_capacity(m);
    let mut part = Vec::with_capacity(m);
    let mut regressor = vec![vec![0.0; m]; NUM_JOINTS];
    let mut faces = Vec::new();
    for k in 0..NUM_JOINTS {
        // bone from the joint toward its first child, or continuing the parent bone
        let bone = match children[k].first() {
            Some(&c) => joints[c] - joints[k],
            None => {
                let p = JOINT_PARENTS[k] as usize;
                let d = joints[k] - joints[p];
                let len = if k == 15 { 0.18 } else { 0.09 };
                d.normalize() * len
            }
        };
        let axis = bone.normalize();
        let helper = if axis.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let e1 = axis.cross(&helper).normalize();
        let e2 = axis.cross(&e1);
        let r = PART_RADII[k] * rng.random_range(0.9..1.1);
        let base = verts.len();
        for i in 0..RING {
            let a = std::f64::consts::TAU * i as f64 / RING as f64;
            verts.push(joints[k] + (e1 * a.cos() + e2 * a.sin()) * r);
            part.push(k);
            regressor[k][base + i] = 1.0 / RING as f64;
        }
        for (f, a) in [(0.35, 0.0), (0.35, 0.5), (0.7, 0.25), (0.7, 0.75)] {
            let a = std::f64::consts::TAU * a;
            verts.push(joints[k] + bone * f + (e1 * a.cos() + e2 * a.sin()) * (r * 0.9));
            part.push(k);
        }
        for i in 0..RING {
            let j = (i + 1) % RING;
            let tip = base + RING + (i % 4);
            faces.push([base + i, base + j, tip]);
        }
        faces.push([base + RING, base + RING + 1, base + RING + 2]);
        faces.push([base + RING, base + RING + 2, base + RING + 3]);
    }

    let mut basis = Vec::with_capacity(NUM_BETAS);
    // first component scales the whole body about the ground origin
    basis.push(verts.iter().map(|v| (v * 0.1).into()).collect::<Vec<[f64; 3]>>());
    for _ in 1..NUM_BETAS {
        let amp = rng.random_range(0.01..0.02);
        let mut waves = Vec::new();
        for _ in 0..2 {
            let kvec = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            waves.push((kvec, phase, dir));
        }
        basis.push(
            verts
                .iter()
                .map(|v| {
                    let mut d = Vector3::zeros();
                    for (kv, ph, dir) in &waves {
                        d += dir * (amp * (kv.dot(v) + ph).sin());
                    }
                    d.into()
                })
                .collect(),
        );
    }

    TemplateAsset {
        seed,
        joint_names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        joint_parents: JOINT_PARENTS.to_vec(),
        rest_vertices: verts.iter().map(|v| (*v).into()).collect(),
        shape_basis: basis,
        joint_regressor: regressor,
        vertex_part: part,
        faces,
    }
}

/// Coordinate frame a mesh or parameter set lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameTag {
    Camera,
    World,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyTemplate<T: Real> {
    pub rest_vertices: Vec<Vector3<T>>,
    pub shape_basis: Vec<Vec<Vector3<T>>>,
    pub joint_parents: Vec<Option<usize>>,
    pub joint_regressor: Vec<Vec<T>>,
    pub vertex_part: Vec<usize>,
    pub faces: Vec<[usize; 3]>,
}

impl BodyTemplate<f64> {
    /// The template shipped with the crate.
    pub fn standard() -> Self {
        let asset: TemplateAsset =
            serde_json::from_str(TEMPLATE_JSON).expect("bundled template asset parses");
        Self::from_asset(&asset).expect("bundled template asset is valid")
    }
}

impl<T: Real> BodyTemplate<T> {
    pub fn from_asset(a: &TemplateAsset) -> Result<Self> {
        let v3 = |p: &[f64; 3]| Vector3::new(lit(p[0]), lit(p[1]), lit(p[2]));
        let t = Self {
            rest_vertices: a.rest_vertices.iter().map(v3).collect(),
            shape_basis: a
                .shape_basis
                .iter()
                .map(|b| b.iter().map(v3).collect())
                .collect(),
            joint_parents: a
                .joint_parents
                .iter()
                .map(|&p| if p < 0 { None } else { Some(p as usize) })
                .collect(),
            joint_regressor: a
                .joint_regressor
                .iter()
                .map(|r| r.iter().map(|&w| lit(w)).collect())
                .collect(),
            vertex_part: a.vertex_part.clone(),
            faces: a.faces.clone(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_asset(&self, seed: u64) -> TemplateAsset {
        let f = |v: &Vector3<T>| {
            [
                crate::scalar::to_f64(v.x),
                crate::scalar::to_f64(v.y),
                crate::scalar::to_f64(v.z),
            ]
        };
        TemplateAsset {
            seed,
            joint_names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            joint_parents: self
                .joint_parents
                .iter()
                .map(|p| p.map(|p| p as i32).unwrap_or(-1))
                .collect(),
            rest_vertices: self.rest_vertices.iter().map(f).collect(),
            shape_basis: self
                .shape_basis
                .iter()
                .map(|b| b.iter().map(f).collect())
                .collect(),
            joint_regressor: self
                .joint_regressor
                .iter()
                .map(|r| r.iter().map(|&w| crate::scalar::to_f64(w)).collect())
                .collect(),
            vertex_part: self.vertex_part.clone(),
            faces: self.faces.clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> BodyTemplate<U> {
        let c = |v: &Vector3<T>| v.map(|x| lit::<U>(crate::scalar::to_f64(x)));
        BodyTemplate {
            rest_vertices: self.rest_vertices.iter().map(c).collect(),
            shape_basis: self
                .shape_basis
                .iter()
                .map(|b| b.iter().map(c).collect())
                .collect(),
            joint_parents: self.joint_parents.clone(),
            joint_regressor: self
                .joint_regressor
                .iter()
                .map(|r| r.iter().map(|&w| lit(crate::scalar::to_f64(w))).collect())
                .collect(),
            vertex_part: self.vertex_part.clone(),
            faces: self.faces.clone(),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.joint_parents.len()
    }

    /// Rooted tree with parents listed before children, stochastic regressor,
    /// one part per vertex.
    pub fn validate(&self) -> Result<()> {
        let m = self.rest_vertices.len();
        let j = self.joint_parents.len();
        if j != NUM_JOINTS {
            return Err(Error::Domain(format!("template has {} joints, expected {}", j, NUM_JOINTS)));
        }
        if self.joint_parents[0].is_some() {
            return Err(Error::Domain("joint 0 (pelvis) must be the root".into()));
        }
        for (k, p) in self.joint_parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < k => {}
                _ => {
                    return Err(Error::Domain(format!(
                        "joint {} must have a parent with a smaller index",
                        k
                    )))
                }
            }
        }
        if self.shape_basis.len() != NUM_BETAS || self.shape_basis.iter().any(|b| b.len() != m) {
            return Err(Error::Shape("shape basis must be 10 x M x 3".into()));
        }
        if self.joint_regressor.len() != j {
            return Err(Error::Shape("joint regressor must have J rows".into()));
        }
        for (k, row) in self.joint_regressor.iter().enumerate() {
            if row.len() != m || row.iter().any(|w| *w < T::zero()) {
                return Err(Error::Shape(format!("regressor row {} is malformed", k)));
            }
            let s = row.iter().fold(T::zero(), |a, b| a + *b);
            if (s - T::one()).abs() > lit(1e-9) {
                return Err(Error::Domain(format!("regressor row {} sums to {:?}", k, s)));
            }
        }
        if self.vertex_part.len() != m || self.vertex_part.iter().any(|p| *p >= j) {
            return Err(Error::Shape("vertex_part must assign each vertex to a joint".into()));
        }
        if self.faces.iter().flatten().any(|&i| i >= m) {
            return Err(Error::Shape("face index out of range".into()));
        }
        Ok(())
    }

    /// Regressed joints of an arbitrary vertex set.
    pub fn regress_joints(&self, verts: &[Vector3<T>]) -> Vec<Vector3<T>> {
        self.joint_regressor
            .iter()
            .map(|row| {
                row.iter()
                    .zip(verts)
                    .fold(Vector3::zeros(), |acc, (w, v)| acc + v * *w)
            })
            .collect()
    }

    pub fn shape_blend(&self, beta: &[T; NUM_BETAS]) -> (Vec<Vector3<T>>, Vec<Vector3<T>>) {
        let mut verts = self.rest_vertices.clone();
        for (b, basis) in beta.iter().zip(&self.shape_basis) {
            if *b == T::zero() {
                continue;
            }
            for (v, d) in verts.iter_mut().zip(basis) {
                *v += d * *b;
            }
        }
        let joints = self.regress_joints(&verts);
        (verts, joints)
    }

    /// Shaped pelvis `c(β)`, the center of the global orientation.
    pub fn pelvis(&self, beta: &[T; NUM_BETAS]) -> Vector3<T> {
        self.shape_blend(beta).1[0]
    }

    /// Chains local rotations down the tree; returns per-joint (rotation, position)
    /// before the global orientation is applied.
    pub fn forward_kinematics(
        &self,
        shaped_joints: &[Vector3<T>],
        theta: &[Rotation<T>],
    ) -> Vec<(Matrix3<T>, Vector3<T>)> {
        let mut out: Vec<(Matrix3<T>, Vector3<T>)> = Vec::with_capacity(shaped_joints.len());
        for (k, parent) in self.joint_parents.iter().enumerate() {
            let local = *theta[k].matrix();
            match parent {
                None => out.push((local, shaped_joints[k])),
                Some(p) => {
                    let (pr, pp) = out[*p];
                    out.push((pr * local, pp + pr * (shaped_joints[k] - shaped_joints[*p])));
                }
            }
        }
        out
    }

    pub fn pose_mesh(&self, params: &BodyParams<T>, frame: FrameTag) -> BodyMesh<T> {
        let (verts, joints) = self.shape_blend(&params.beta);
        let fk = self.forward_kinematics(&joints, &params.theta);
        let c = joints[0];
        let phi = params.phi.matrix();
        let vertices = verts
            .iter()
            .zip(&self.vertex_part)
            .map(|(v, &p)| {
                let (r, pos) = &fk[p];
                let posed = r * (v - joints[p]) + pos;
                phi * (posed - c) + c + params.gamma
            })
            .collect();
        BodyMesh { vertices, frame }
    }

    /// Joint locations regressed from the posed mesh.
    pub fn posed_joints(&self, params: &BodyParams<T>) -> Vec<Vector3<T>> {
        let mesh = self.pose_mesh(params, FrameTag::World);
        self.regress_joints(&mesh.vertices)
    }
}

/// `{Φ, θ, β, Γ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyParams<T: Real> {
    pub phi: Rotation<T>,
    pub theta: Vec<Rotation<T>>,
    pub beta: [T; NUM_BETAS],
    pub gamma: Vector3<T>,
}

impl<T: Real> BodyParams<T> {
    pub fn identity() -> Self {
        Self {
            phi: Rotation::identity(),
            theta: vec![Rotation::identity(); NUM_JOINTS],
            beta: [T::zero(); NUM_BETAS],
            gamma: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyMesh<T: Real> {
    pub vertices: Vec<Vector3<T>>,
    pub frame: FrameTag,
}

impl<T: Real> BodyMesh<T> {
    pub fn transformed(&self, pose: &crate::geometry::SE3Pose<T>, frame: FrameTag) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(),
            frame,
        }
    }
}
