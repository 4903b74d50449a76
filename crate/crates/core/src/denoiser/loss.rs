//! Supervision terms and the shape/pose discriminator.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::body::{joint_matrix, BodyConsts};
use super::tape::{Mat, Tape, Var};
use super::{flatten_params, Bound, DenoiserWeights, BETA_OFF, DISC_FACTORS, THETA_OFF};
use crate::body_model::{BodyParams, BodyTemplate, NUM_BETAS, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::geometry::UnitQuat;
use crate::scalar::{lit, to_f64, Real};

/// `1 − |⟨q, q*⟩|`: zero for the same rotation (either sign), one at 180°.
pub fn loss_rotation<T: Real>(pred: &UnitQuat<T>, target: &UnitQuat<T>) -> T {
    T::one() - pred.dot(target).abs()
}

/// Sum of absolute differences.
pub fn loss_l1<T: Real>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("L1 of {} vs {} entries", pred.len(), target.len())));
    }
    Ok(pred.iter().zip(target).fold(T::zero(), |s, (a, b)| s + (*a - *b).abs()))
}

fn speeds<T: Real>(joints: &[Vec<Vector3<T>>], order: usize) -> Vec<Vec<T>> {
    let mut d: Vec<Vec<Vector3<T>>> = joints.to_vec();
    for _ in 0..order {
        d = d.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect()).collect();
    }
    d.iter().map(|f| f.iter().map(|v| v.norm()).collect()).collect()
}

/// `(Σ |‖J̇‖ − ‖J̇*‖|, Σ |‖J̈‖ − ‖J̈*‖|)` with per-frame differences.
pub fn loss_motion<T: Real>(pred: &[Vec<Vector3<T>>], target: &[Vec<Vector3<T>>]) -> Result<(T, T)> {
    if pred.len() != target.len() || pred.iter().zip(target).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Shape("motion loss needs matching joint sequences".into()));
    }
    if pred.len() < 3 {
        return Err(Error::Shape(format!("acceleration needs at least 3 frames, got {}", pred.len())));
    }
    let term = |order| {
        speeds(pred, order)
            .iter()
            .zip(&speeds(target, order))
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (*x - *y).abs()))
            .fold(T::zero(), |s, v| s + v)
    };
    Ok((term(1), term(2)))
}

/// `Σ ‖1 − C‖²` over all discriminator outputs.
pub fn lsgan_generator_loss<T: Real>(outputs: &Mat<T>) -> T {
    outputs.iter().fold(T::zero(), |s, c| s + (T::one() - *c) * (T::one() - *c))
}

fn mlp<T: Real>(t: &mut Tape<T>, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = t.matmul(x, b.var(&format!("{prefix}.w1"))?)?;
    let h = t.add_row(h, b.var(&format!("{prefix}.b1"))?)?;
    let h = t.gelu(h);
    let o = t.matmul(h, b.var(&format!("{prefix}.w2"))?)?;
    t.add_row(o, b.var(&format!("{prefix}.b2"))?)
}

/// Per-frame factor scores in `(0, 1)`: whole pose, shape, then each joint rotation.
pub(crate) fn disc_on_tape<T: Real>(t: &mut Tape<T>, b: &Bound, theta: Var, beta: Var) -> Result<Var> {
    let pose = mlp(t, b, "disc.pose", theta)?;
    let shape = mlp(t, b, "disc.shape", beta)?;
    let mut cols = vec![pose, shape];
    let w1 = b.var("disc.part.w1")?;
    let b1 = b.var("disc.part.b1")?;
    let w2 = b.var("disc.part.w2")?;
    let b2 = b.var("disc.part.b2")?;
    for j in 0..NUM_JOINTS {
        let q = t.col_slice(theta, 4 * j, 4)?;
        let h = t.matmul(q, w1)?;
        let h = t.add_row(h, b1)?;
        let h = t.gelu(h);
        let wj = t.col_slice(w2, j, 1)?;
        let bj = t.col_slice(b2, j, 1)?;
        let o = t.matmul(h, wj)?;
        cols.push(t.add_row(o, bj)?);
    }
    let logits = t.hcat(&cols)?;
    Ok(t.sigmoid(logits))
}

/// Discriminator scores (`T × (2 + J)`) of a parameter sequence.
pub fn discriminator_outputs<T: Real>(params: &[BodyParams<T>], weights: &DenoiserWeights<T>) -> Result<Mat<T>> {
    let flat = flatten_params(params);
    let mut t = Tape::new();
    let b = Bound::new(&mut t, weights);
    let theta = t.leaf(flat.columns(THETA_OFF, 4 * NUM_JOINTS).into_owned());
    let beta = t.leaf(flat.columns(BETA_OFF, NUM_BETAS).into_owned());
    let out = disc_on_tape(&mut t, &b, theta, beta)?;
    debug_assert_eq!(t.value(out).ncols(), DISC_FACTORS);
    Ok(t.value(out).clone())
}

/// Generator-side adversarial loss of a parameter sequence.
pub fn loss_discriminator<T: Real>(params: &[BodyParams<T>], weights: &DenoiserWeights<T>) -> Result<T> {
    Ok(lsgan_generator_loss(&discriminator_outputs(params, weights)?))
}

/// Every term of the training objective, already weighted, plus their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub phi: f64,
    pub theta: f64,
    pub beta: f64,
    pub gamma: f64,
    pub adversarial: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub total: f64,
}

/// Terms in the order of [`LossBreakdown`]'s fields, weighted, and their sum.
pub(crate) struct SequenceLoss {
    pub terms: [Var; 7],
    pub total: Var,
}

fn ones<T: Real>(t: &mut Tape<T>, rows: usize, groups: usize, width: usize) -> Var {
    t.leaf(Mat::from_fn(rows, groups, |r, c| if r / width == c { T::one() } else { T::zero() }))
}

fn const_minus<T: Real>(t: &mut Tape<T>, c: f64, v: Var) -> Result<Var> {
    let k = t.leaf(Mat::from_element(1, 1, lit(c)));
    t.sub(k, v)
}

/// Weighted loss of predicted parameters (as head outputs composed with the
/// input) against a target sequence.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sequence_loss<T: Real>(
    t: &mut Tape<T>,
    b: &Bound,
    body: &BodyConsts<T>,
    template: &BodyTemplate<T>,
    weights: &super::LossWeights,
    pred: [Var; 4],
    target: &[BodyParams<T>],
) -> Result<SequenceLoss> {
    let [phi, theta, beta, gamma] = pred;
    let n = target.len();
    if n < 3 {
        return Err(Error::Shape(format!("training windows need at least 3 frames, got {}", n)));
    }
    let flat = flatten_params(target);
    let tgt = |t: &mut Tape<T>, off: usize, w: usize| t.leaf(flat.columns(off, w).into_owned());
    let phi_t = tgt(t, 0, 4);
    let theta_t = tgt(t, THETA_OFF, 4 * NUM_JOINTS);
    let beta_t = tgt(t, BETA_OFF, NUM_BETAS);
    let gamma_t = tgt(t, BETA_OFF + NUM_BETAS, 3);

    let rot_term = |t: &mut Tape<T>, p: Var, q: Var, groups: usize| -> Result<Var> {
        let prod = t.mul(p, q)?;
        let o = ones(t, 4 * groups, groups, 4);
        let dots = t.matmul(prod, o)?;
        let a = t.abs(dots);
        let s = t.sum(a);
        const_minus(t, (n * groups) as f64, s)
    };
    let l1 = |t: &mut Tape<T>, p: Var, q: Var| -> Result<Var> {
        let d = t.sub(p, q)?;
        let a = t.abs(d);
        Ok(t.sum(a))
    };
    let l_phi = rot_term(t, phi, phi_t, 1)?;
    let l_theta = rot_term(t, theta, theta_t, NUM_JOINTS)?;
    let l_beta = l1(t, beta, beta_t)?;
    let l_gamma = l1(t, gamma, gamma_t)?;

    let scores = disc_on_tape(t, b, theta, beta)?;
    let gap = t.scale(scores, -T::one());
    let one = t.leaf(Mat::from_element(1, DISC_FACTORS, T::one()));
    let gap = t.add_row(gap, one)?;
    let sq = t.square(gap);
    let l_adv = t.sum(sq);

    let joints = body.joints(t, phi, theta, beta, gamma)?;
    let target_joints = joint_matrix(template, target);
    let mut motion = Vec::with_capacity(2);
    let (mut p, mut q) = (joints, t.leaf(target_joints));
    for _ in 0..2 {
        p = t.row_diff(p)?;
        q = t.row_diff(q)?;
        let sp = t.norm3(p)?;
        let sq = t.norm3(q)?;
        motion.push(l1(t, sp, sq)?);
    }

    let raw = [l_phi, l_theta, l_beta, l_gamma, l_adv, motion[0], motion[1]];
    let ws = [weights.phi, weights.theta, weights.beta, weights.gamma, weights.adversarial, weights.velocity, weights.acceleration];
    let mut terms = raw;
    let mut total: Option<Var> = None;
    for (k, (v, w)) in raw.iter().zip(ws).enumerate() {
        let s = t.scale(*v, lit(w));
        terms[k] = s;
        total = Some(match total {
            Some(acc) => t.add(acc, s)?,
            None => s,
        });
    }
    Ok(SequenceLoss { terms, total: total.expect("seven terms") })
}

pub(crate) fn breakdown<T: Real>(t: &Tape<T>, terms: &[Var; 7], total: Var) -> LossBreakdown {
    let v = |x: Var| to_f64(t.scalar(x));
    LossBreakdown {
        phi: v(terms[0]),
        theta: v(terms[1]),
        beta: v(terms[2]),
        gamma: v(terms[3]),
        adversarial: v(terms[4]),
        velocity: v(terms[5]),
        acceleration: v(terms[6]),
        total: v(total),
    }
}
