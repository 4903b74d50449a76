//! Batch objective, plain gradient steps and an AdamW trainer.

use std::collections::BTreeMap;

use super::body::BodyConsts;
use super::loss::{breakdown, disc_on_tape, sequence_loss, LossBreakdown};
use super::tape::{Mat, Tape, Var};
use super::{flatten_params, forward_window, scene_tokens_on_tape, Bound, DenoiserWeights, BETA_OFF, GAMMA_OFF, THETA_OFF};
use crate::body_model::{BodyParams, BodyTemplate, NUM_BETAS, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::scalar::{is_finite, lit, Real};

/// One supervised window: noisy input, clean target, and the scene around it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Real> {
    pub input: Vec<BodyParams<T>>,
    pub target: Vec<BodyParams<T>>,
    pub cloud: PointCloud<T>,
}

/// Template-derived constants reused across steps.
pub(crate) struct LossContext<T: Real> {
    template: BodyTemplate<T>,
    body: BodyConsts<T>,
}

impl<T: Real> LossContext<T> {
    pub(crate) fn new() -> Self {
        let template = BodyTemplate::standard().cast::<T>();
        let body = BodyConsts::new(&template);
        Self { template, body }
    }
}

struct Graph<T: Real> {
    tape: Tape<T>,
    bound: Bound,
    total: Var,
    report: LossBreakdown,
}

fn build<T: Real>(batch: &[Sample<T>], weights: &DenoiserWeights<T>, ctx: &LossContext<T>) -> Result<Graph<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let cfg = &weights.config;
    let mut t = Tape::new();
    let b = Bound::new(&mut t, weights);
    let inv: T = lit(1.0 / batch.len() as f64);
    let mut total: Option<Var> = None;
    let mut report = LossBreakdown::default();
    for (i, s) in batch.iter().enumerate() {
        if s.input.len() != s.target.len() {
            return Err(Error::Shape(format!("sample {}: {} input frames vs {} target frames", i, s.input.len(), s.target.len())));
        }
        if s.input.len() > cfg.max_window {
            return Err(Error::Shape(format!("sample {}: {} frames exceed max_window {}", i, s.input.len(), cfg.max_window)));
        }
        let tokens = scene_tokens_on_tape(&mut t, &b, &s.cloud, cfg)?;
        let flat = flatten_params(&s.input);
        let out = forward_window(&mut t, &b, cfg, &flat, tokens)?;
        let [hphi, htheta, dbeta, dgamma] = out;
        let phi0 = t.leaf(flat.columns(0, 4).into_owned());
        let theta0 = t.leaf(flat.columns(THETA_OFF, 4 * NUM_JOINTS).into_owned());
        let beta0 = t.leaf(flat.columns(BETA_OFF, NUM_BETAS).into_owned());
        let gamma0 = t.leaf(flat.columns(GAMMA_OFF, 3).into_owned());
        let pred = [t.quat_mul(hphi, phi0)?, t.quat_mul(htheta, theta0)?, t.add(dbeta, beta0)?, t.add(dgamma, gamma0)?];
        let seq = sequence_loss(&mut t, &b, &ctx.body, &ctx.template, &cfg.loss_weights, pred, &s.target)?;
        let r = breakdown(&t, &seq.terms, seq.total);
        let k = 1.0 / batch.len() as f64;
        report.phi += k * r.phi;
        report.theta += k * r.theta;
        report.beta += k * r.beta;
        report.gamma += k * r.gamma;
        report.adversarial += k * r.adversarial;
        report.velocity += k * r.velocity;
        report.acceleration += k * r.acceleration;
        let scaled = t.scale(seq.total, inv);
        total = Some(match total {
            Some(a) => t.add(a, scaled)?,
            None => scaled,
        });
    }
    let total = total.expect("non-empty batch");
    report.total = crate::scalar::to_f64(t.scalar(total));
    if !report.total.is_finite() {
        return Err(Error::Optimizer(format!("non-finite training loss: {:?}", report)));
    }
    Ok(Graph { tape: t, bound: b, total, report })
}

/// Batch-averaged loss.
pub fn total_loss<T: Real>(batch: &[Sample<T>], weights: &DenoiserWeights<T>) -> Result<LossBreakdown> {
    Ok(build(batch, weights, &LossContext::new())?.report)
}

fn gradients<T: Real>(g: &Graph<T>, weights: &DenoiserWeights<T>) -> BTreeMap<String, Mat<T>> {
    let grads = g.tape.backward(g.total);
    g.bound
        .iter()
        .map(|(name, v)| {
            let shape = weights.tensors[name].shape();
            (name.clone(), grads.get(*v).cloned().unwrap_or_else(|| Mat::zeros(shape.0, shape.1)))
        })
        .collect()
}

pub(crate) fn loss_and_gradients_with<T: Real>(
    batch: &[Sample<T>],
    weights: &DenoiserWeights<T>,
    ctx: &LossContext<T>,
) -> Result<(LossBreakdown, BTreeMap<String, Mat<T>>)> {
    let g = build(batch, weights, ctx)?;
    let grads = gradients(&g, weights);
    Ok((g.report, grads))
}

/// Loss and its gradient with respect to every tensor (discriminator tensors included).
pub fn loss_and_gradients<T: Real>(batch: &[Sample<T>], weights: &DenoiserWeights<T>) -> Result<(LossBreakdown, BTreeMap<String, Mat<T>>)> {
    loss_and_gradients_with(batch, weights, &LossContext::new())
}

fn is_disc(name: &str) -> bool {
    name.starts_with("disc.")
}

fn check_grads<T: Real>(grads: &BTreeMap<String, Mat<T>>) -> Result<()> {
    for (name, g) in grads {
        if g.iter().any(|v| !is_finite(*v)) {
            return Err(Error::Optimizer(format!("non-finite gradient in {}", name)));
        }
    }
    Ok(())
}

/// One plain gradient-descent update of the denoiser (the discriminator is held fixed).
/// Returns the updated weights and the loss before the update.
pub fn train_step<T: Real>(batch: &[Sample<T>], weights: &DenoiserWeights<T>, lr: f64) -> Result<(DenoiserWeights<T>, f64)> {
    let (report, grads) = loss_and_gradients(batch, weights)?;
    check_grads(&grads)?;
    let mut next = weights.clone();
    let lr: T = lit(lr);
    for (name, g) in &grads {
        if !is_disc(name) {
            let w = next.tensors.get_mut(name).expect("gradient names mirror tensors");
            *w -= g * lr;
        }
    }
    Ok((next, report.total))
}

/// Least-squares discriminator update: scores pushed toward 1 on real and 0 on fake sequences.
/// Returns the updated weights and the discriminator loss before the update.
pub fn train_discriminator<T: Real>(
    real: &[Vec<BodyParams<T>>],
    fake: &[Vec<BodyParams<T>>],
    weights: &DenoiserWeights<T>,
    lr: f64,
) -> Result<(DenoiserWeights<T>, f64)> {
    if real.is_empty() && fake.is_empty() {
        return Err(Error::Empty("discriminator batch".into()));
    }
    let mut t = Tape::new();
    let b = Bound::new(&mut t, weights);
    let mut total: Option<Var> = None;
    for (seqs, goal) in [(real, 1.0), (fake, 0.0)] {
        for seq in seqs {
            let flat = flatten_params(seq);
            let theta = t.leaf(flat.columns(THETA_OFF, 4 * NUM_JOINTS).into_owned());
            let beta = t.leaf(flat.columns(BETA_OFF, NUM_BETAS).into_owned());
            let scores = disc_on_tape(&mut t, &b, theta, beta)?;
            let target = t.leaf(Mat::from_element(seq.len(), super::DISC_FACTORS, lit(goal)));
            let d = t.sub(scores, target)?;
            let sq = t.square(d);
            let s = t.sum(sq);
            total = Some(match total {
                Some(a) => t.add(a, s)?,
                None => s,
            });
        }
    }
    let total = total.expect("non-empty batch");
    let loss = crate::scalar::to_f64(t.scalar(total));
    if !loss.is_finite() {
        return Err(Error::Optimizer(format!("non-finite discriminator loss {}", loss)));
    }
    let grads = t.backward(total);
    let mut next = weights.clone();
    let lr: T = lit(lr);
    for (name, v) in b.iter() {
        if is_disc(name) {
            if let Some(g) = grads.get(*v) {
                let w = next.tensors.get_mut(name).expect("bound names mirror tensors");
                *w -= g * lr;
            }
        }
    }
    Ok((next, loss))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied only to weight matrices (names whose last segment starts with `w`).
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T: Real> {
    pub config: AdamWConfig,
    step: u64,
    m: BTreeMap<String, Mat<T>>,
    v: BTreeMap<String, Mat<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates the tensors named in `grads` that pass `select`.
    pub fn update(&mut self, weights: &mut DenoiserWeights<T>, grads: &BTreeMap<String, Mat<T>>, select: impl Fn(&str) -> bool) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2): (T, T) = (lit(c.beta1), lit(c.beta2));
        for (name, g) in grads {
            if !select(name) {
                continue;
            }
            let Some(w) = weights.tensors.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Mat::zeros(g.nrows(), g.ncols()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Mat::zeros(g.nrows(), g.ncols()));
            *m = &*m * b1 + g * (T::one() - b1);
            *v = &*v * b2 + g.component_mul(g) * (T::one() - b2);
            let decays = name.rsplit('.').next().is_some_and(|s| s.starts_with('w'));
            if decays && c.weight_decay > 0.0 {
                *w *= lit::<T>(1.0 - c.lr * c.weight_decay);
            }
            let lr: T = lit(c.lr);
            for ((wi, mi), vi) in w.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mh = *mi / lit(bc1);
                let vh = *vi / lit(bc2);
                *wi -= lr * mh / (vh.sqrt() + lit(c.eps));
            }
        }
    }
}

/// Owns a weight set and trains the denoiser part with AdamW.
pub struct Trainer<T: Real> {
    pub weights: DenoiserWeights<T>,
    pub optimizer: AdamW<T>,
    ctx: LossContext<T>,
}

impl<T: Real> Trainer<T> {
    pub fn new(weights: DenoiserWeights<T>, config: AdamWConfig) -> Self {
        Self { weights, optimizer: AdamW::new(config), ctx: LossContext::new() }
    }

    /// One update; returns the loss before it.
    pub fn step(&mut self, batch: &[Sample<T>]) -> Result<LossBreakdown> {
        let (report, grads) = loss_and_gradients_with(batch, &self.weights, &self.ctx)?;
        check_grads(&grads)?;
        self.optimizer.update(&mut self.weights, &grads, |n| !is_disc(n));
        Ok(report)
    }

    pub fn loss(&self, batch: &[Sample<T>]) -> Result<LossBreakdown> {
        Ok(build(batch, &self.weights, &self.ctx)?.report)
    }
}
