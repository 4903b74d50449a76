//! Regressed joints as a differentiable function of flattened parameters.
//!
//! Mirrors `BodyTemplate::pose_mesh` followed by `regress_joints`, written
//! with constant selection matrices so every step is a tape operation.

use nalgebra::DMatrix;

use super::tape::{Mat, Tape, Var};
use crate::body_model::{BodyTemplate, NUM_BETAS};
use crate::error::Result;
use crate::scalar::Real;

/// Constant matrices derived from a template.
#[derive(Debug, Clone)]
pub(crate) struct BodyConsts<T: Real> {
    parents: Vec<Option<usize>>,
    /// `NUM_BETAS × 3M`
    shape: Mat<T>,
    /// `1 × 3M`
    rest: Mat<T>,
    /// `3M × 3J`: shaped vertices to shaped joints.
    regress: Mat<T>,
    /// Per part: `3M × 3n` vertex gather, `3 × 3n` tiling, `3n × 3J` regressor block.
    parts: Vec<Option<(Mat<T>, Mat<T>, Mat<T>)>>,
}

impl<T: Real> BodyConsts<T> {
    pub(crate) fn new(template: &BodyTemplate<T>) -> Self {
        let m = template.num_vertices();
        let j = template.num_joints();
        let shape = Mat::from_fn(NUM_BETAS, 3 * m, |b, c| template.shape_basis[b][c / 3][c % 3]);
        let rest = Mat::from_fn(1, 3 * m, |_, c| template.rest_vertices[c / 3][c % 3]);
        let regress = Mat::from_fn(3 * m, 3 * j, |r, c| {
            if r % 3 == c % 3 {
                template.joint_regressor[c / 3][r / 3]
            } else {
                T::zero()
            }
        });
        let parts = (0..j)
            .map(|p| {
                let verts: Vec<usize> = (0..m).filter(|&v| template.vertex_part[v] == p).collect();
                if verts.is_empty() {
                    return None;
                }
                let n = verts.len();
                let gather = Mat::from_fn(3 * m, 3 * n, |r, c| if r == 3 * verts[c / 3] + c % 3 { T::one() } else { T::zero() });
                let tile = Mat::from_fn(3, 3 * n, |r, c| if r == c % 3 { T::one() } else { T::zero() });
                let reg = Mat::from_fn(3 * n, 3 * j, |r, c| {
                    if r % 3 == c % 3 {
                        template.joint_regressor[c / 3][verts[r / 3]]
                    } else {
                        T::zero()
                    }
                });
                Some((gather, tile, reg))
            })
            .collect();
        Self { parents: template.joint_parents.clone(), shape, rest, regress, parts }
    }

    /// World joints `T × 3J` from Φ (`T×4`), θ (`T×4J`), β (`T×10`) and Γ (`T×3`).
    pub(crate) fn joints(&self, t: &mut Tape<T>, phi: Var, theta: Var, beta: Var, gamma: Var) -> Result<Var> {
        let shape = t.leaf(self.shape.clone());
        let rest = t.leaf(self.rest.clone());
        let regress = t.leaf(self.regress.clone());
        let verts = t.matmul(beta, shape)?;
        let verts = t.add_row(verts, rest)?;
        let shaped = t.matmul(verts, regress)?;

        let mut fk: Vec<(Var, Var)> = Vec::with_capacity(self.parents.len());
        for (k, parent) in self.parents.iter().enumerate() {
            let q = t.col_slice(theta, 4 * k, 4)?;
            let local = t.quat_to_rot(q)?;
            let jk = t.col_slice(shaped, 3 * k, 3)?;
            match parent {
                None => fk.push((local, jk)),
                Some(p) => {
                    let (pr, pp) = fk[*p];
                    let jp = t.col_slice(shaped, 3 * p, 3)?;
                    let off = t.sub(jk, jp)?;
                    let off = t.rot_apply(pr, off)?;
                    let pos = t.add(pp, off)?;
                    let rot = t.rot_mul(pr, local)?;
                    fk.push((rot, pos));
                }
            }
        }

        let c = t.col_slice(shaped, 0, 3)?;
        let rphi = t.quat_to_rot(phi)?;
        let mut total: Option<Var> = None;
        for (p, part) in self.parts.iter().enumerate() {
            let Some((gather, tile, reg)) = part else { continue };
            let (gather, tile, reg) = (t.leaf(gather.clone()), t.leaf(tile.clone()), t.leaf(reg.clone()));
            let (rot, pos) = fk[p];
            let v = t.matmul(verts, gather)?;
            let jp = t.col_slice(shaped, 3 * p, 3)?;
            let jp = t.matmul(jp, tile)?;
            let local = t.sub(v, jp)?;
            let posed = t.rot_apply(rot, local)?;
            let pos = t.matmul(pos, tile)?;
            let posed = t.add(posed, pos)?;
            let ct = t.matmul(c, tile)?;
            let centered = t.sub(posed, ct)?;
            let w = t.rot_apply(rphi, centered)?;
            let w = t.add(w, ct)?;
            let g = t.matmul(gamma, tile)?;
            let w = t.add(w, g)?;
            let contrib = t.matmul(w, reg)?;
            total = Some(match total {
                Some(s) => t.add(s, contrib)?,
                None => contrib,
            });
        }
        Ok(total.expect("the template has at least one part"))
    }
}

/// Joints of plain parameter sequences as a `T × 3J` matrix.
pub(crate) fn joint_matrix<T: Real>(template: &BodyTemplate<T>, params: &[crate::body_model::BodyParams<T>]) -> Mat<T> {
    let j = template.num_joints();
    let mut m = DMatrix::zeros(params.len(), 3 * j);
    for (t, p) in params.iter().enumerate() {
        for (k, v) in template.posed_joints(p).iter().enumerate() {
            for c in 0..3 {
                m[(t, 3 * k + c)] = v[c];
            }
        }
    }
    m
}
