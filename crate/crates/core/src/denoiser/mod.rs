//! Scene-aware motion denoiser.
//!
//! A per-human latent track (`FC(params) + TPE`) is refined by a pre-norm
//! transformer decoder that cross-attends to pooled scene tokens. Residual
//! heads then compose rotations and add shape and translation offsets, so a
//! freshly initialized model is the identity. Gradients come from the
//! reverse-mode [`tape`].

mod body;
mod io;
mod loss;
pub mod tape;
mod train;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyParams, NUM_BETAS, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, UnitQuat, CLOUD_CHANNELS};
use crate::scalar::{lit, Real};
use crate::world_frame::BodyTrack;
use tape::{Mat, Tape, Var};

pub use io::{load_weights, read_weights, save_weights, write_weights};
pub use loss::{
    discriminator_outputs, loss_discriminator, loss_l1, loss_motion, loss_rotation, lsgan_generator_loss, LossBreakdown,
};
pub use train::{
    loss_and_gradients, total_loss, train_discriminator, train_step, AdamW, AdamWConfig, Sample, Trainer,
};

/// Flattened parameter width: Φ and θ as quaternions, then β and Γ.
pub const FLAT_DIM: usize = 4 + 4 * NUM_JOINTS + NUM_BETAS + 3;
const THETA_OFF: usize = 4;
const BETA_OFF: usize = 4 + 4 * NUM_JOINTS;
const GAMMA_OFF: usize = BETA_OFF + NUM_BETAS;
/// Discriminator factors: whole pose, shape, then one per joint rotation.
pub const DISC_FACTORS: usize = 2 + NUM_JOINTS;

/// Unit weights by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub phi: f64,
    pub theta: f64,
    pub beta: f64,
    pub gamma: f64,
    pub adversarial: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { phi: 1.0, theta: 1.0, beta: 1.0, gamma: 1.0, adversarial: 1.0, velocity: 1.0, acceleration: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub feedforward_dim: usize,
    pub scene_tokens: usize,
    pub joints: usize,
    /// Inclusive range of training window lengths.
    pub train_window: [usize; 2],
    pub infer_window: usize,
    /// Rows of the temporal embedding table.
    pub max_window: usize,
    pub disc_hidden: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            decoder_layers: 6,
            attention_heads: 4,
            feedforward_dim: 128,
            scene_tokens: 16,
            joints: NUM_JOINTS,
            train_window: [64, 128],
            infer_window: 100,
            max_window: 128,
            disc_hidden: 32,
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.latent_dim == 0 || self.attention_heads == 0 || self.latent_dim % self.attention_heads != 0 {
            return bad("latent_dim must be a positive multiple of attention_heads");
        }
        if self.joints != NUM_JOINTS {
            return bad("joints must match the body model (22)");
        }
        if self.feedforward_dim == 0 || self.disc_hidden == 0 {
            return bad("feedforward_dim and disc_hidden must be positive");
        }
        let [lo, hi] = self.train_window;
        if lo < 2 || lo > hi || self.infer_window < 2 {
            return bad("windows must be at least 2 frames and train_window must be ordered");
        }
        if hi > self.max_window || self.infer_window > self.max_window {
            return bad("windows cannot exceed max_window");
        }
        if self.scene_tokens == 0 || self.scene_tokens > self.max_window {
            return bad("scene_tokens must lie in 1..=max_window");
        }
        Ok(())
    }

    /// Grid of the horizontal voxel partition: `(cells along x, cells along z)`.
    fn voxel_grid(&self) -> (usize, usize) {
        let k = self.scene_tokens;
        let kx = (1..=k).filter(|d| k % d == 0 && d * d <= k).max().unwrap_or(1);
        (kx, k / kx)
    }
}

/// Named tensors of the denoiser and its discriminator (names starting with `disc.`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserWeights<T: Real> {
    pub config: DenoiserConfig,
    pub tensors: BTreeMap<String, Mat<T>>,
}

fn shapes(cfg: &DenoiserConfig) -> Vec<(String, usize, usize)> {
    let d = cfg.latent_dim;
    let h = cfg.disc_hidden;
    let mut s: Vec<(String, usize, usize)> = vec![
        ("embed.w".into(), FLAT_DIM, d),
        ("embed.b".into(), 1, d),
        ("tpe".into(), cfg.max_window, d),
        ("scene.w1".into(), CLOUD_CHANNELS, d),
        ("scene.b1".into(), 1, d),
        ("scene.w2".into(), d, d),
        ("scene.b2".into(), 1, d),
        ("scene.null".into(), 1, d),
    ];
    for l in 0..cfg.decoder_layers {
        for ln in ["ln1", "ln2", "ln3"] {
            s.push((format!("dec.{l}.{ln}.g"), 1, d));
            s.push((format!("dec.{l}.{ln}.b"), 1, d));
        }
        for at in ["sa", "ca"] {
            for w in ["wq", "wk", "wv", "wo"] {
                s.push((format!("dec.{l}.{at}.{w}"), d, d));
            }
            s.push((format!("dec.{l}.{at}.bo"), 1, d));
        }
        s.push((format!("dec.{l}.ff.w1"), d, cfg.feedforward_dim));
        s.push((format!("dec.{l}.ff.b1"), 1, cfg.feedforward_dim));
        s.push((format!("dec.{l}.ff.w2"), cfg.feedforward_dim, d));
        s.push((format!("dec.{l}.ff.b2"), 1, d));
    }
    for (name, width) in [("phi", 4), ("theta", 4 * NUM_JOINTS), ("beta", NUM_BETAS), ("gamma", 3)] {
        s.push((format!("head.{name}.w"), d, width));
        s.push((format!("head.{name}.b"), 1, width));
    }
    for (name, width) in [("pose", 4 * NUM_JOINTS), ("shape", NUM_BETAS)] {
        s.push((format!("disc.{name}.w1"), width, h));
        s.push((format!("disc.{name}.b1"), 1, h));
        s.push((format!("disc.{name}.w2"), h, 1));
        s.push((format!("disc.{name}.b2"), 1, 1));
    }
    s.push(("disc.part.w1".into(), 4, h));
    s.push(("disc.part.b1".into(), 1, h));
    s.push(("disc.part.w2".into(), h, NUM_JOINTS));
    s.push(("disc.part.b2".into(), 1, NUM_JOINTS));
    s
}

fn sinusoidal(rows: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, d, |t, c| {
        let freq = 1.0 / 10_000f64.powf((2 * (c / 2)) as f64 / d as f64);
        let a = t as f64 * freq;
        if c % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

fn identity_quat_row(groups: usize) -> DMatrix<f64> {
    DMatrix::from_fn(1, 4 * groups, |_, c| if c % 4 == 0 { 1.0 } else { 0.0 })
}

impl<T: Real> DenoiserWeights<T> {
    /// Seeded initialization with identity heads: zero head weights,
    /// rotation biases `(1, 0, 0, 0)` and zero additive biases.
    pub fn init(config: &DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut tensors = BTreeMap::new();
        for (name, r, c) in shapes(config) {
            let last = name.rsplit('.').next().unwrap_or("");
            let m: DMatrix<f64> = if name == "tpe" {
                sinusoidal(r, c)
            } else if name == "head.phi.b" {
                identity_quat_row(1)
            } else if name == "head.theta.b" {
                identity_quat_row(NUM_JOINTS)
            } else if name.starts_with("head.") {
                DMatrix::zeros(r, c)
            } else if last == "g" {
                DMatrix::from_element(r, c, 1.0)
            } else if name == "scene.null" {
                DMatrix::from_fn(r, c, |_, _| 0.02 * unit.sample(&mut rng))
            } else if last.starts_with('w') {
                let s = 1.0 / (r as f64).sqrt();
                DMatrix::from_fn(r, c, |_, _| s * unit.sample(&mut rng))
            } else {
                DMatrix::zeros(r, c)
            };
            tensors.insert(name, m.map(lit::<T>));
        }
        Ok(Self { config: config.clone(), tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Mat<T>> {
        self.tensors.get(name).ok_or_else(|| Error::Domain(format!("missing weight tensor {}", name)))
    }

    /// Checks names and shapes against the configuration and that every value is finite.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = shapes(&self.config);
        if expected.len() != self.tensors.len() {
            return Err(Error::Shape(format!("expected {} tensors, found {}", expected.len(), self.tensors.len())));
        }
        for (name, r, c) in expected {
            let m = self.get(&name)?;
            if m.shape() != (r, c) {
                return Err(Error::Shape(format!("{} is {}x{}, expected {}x{}", name, m.nrows(), m.ncols(), r, c)));
            }
            if m.iter().any(|v| !crate::scalar::is_finite(*v)) {
                return Err(Error::Domain(format!("{} holds a non-finite value", name)));
            }
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }
}

/// Weight tensors recorded as tape leaves.
pub(crate) struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub(crate) fn new<T: Real>(tape: &mut Tape<T>, w: &DenoiserWeights<T>) -> Self {
        Self { vars: w.tensors.iter().map(|(k, m)| (k.clone(), tape.leaf(m.clone()))).collect() }
    }

    pub(crate) fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Domain(format!("missing weight tensor {}", name)))
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// One row per frame: Φ, θ₁..θ_J as quaternions (w first), β, Γ.
pub fn flatten_params<T: Real>(params: &[BodyParams<T>]) -> Mat<T> {
    let mut m = Mat::zeros(params.len(), FLAT_DIM);
    for (t, p) in params.iter().enumerate() {
        for (k, q) in p.phi.to_quat().to_array().iter().enumerate() {
            m[(t, k)] = *q;
        }
        for (j, r) in p.theta.iter().enumerate() {
            for (k, q) in r.to_quat().to_array().iter().enumerate() {
                m[(t, THETA_OFF + 4 * j + k)] = *q;
            }
        }
        for (k, b) in p.beta.iter().enumerate() {
            m[(t, BETA_OFF + k)] = *b;
        }
        for k in 0..3 {
            m[(t, GAMMA_OFF + k)] = p.gamma[k];
        }
    }
    m
}

/// Flattens a fully observed track.
pub fn flatten_track<T: Real>(track: &BodyTrack<T>) -> Result<Mat<T>> {
    Ok(flatten_params(&track.observed()?))
}

/// Inverse of [`flatten_params`]; quaternions are renormalized, and a zero one is an error.
pub fn unflatten_params<T: Real>(flat: &Mat<T>) -> Result<Vec<BodyParams<T>>> {
    if flat.ncols() != FLAT_DIM {
        return Err(Error::Shape(format!("flattened parameters need {} columns, got {}", FLAT_DIM, flat.ncols())));
    }
    let quat = |t: usize, off: usize| {
        UnitQuat::new(flat[(t, off)], flat[(t, off + 1)], flat[(t, off + 2)], flat[(t, off + 3)])
            .map(|q| q.to_rotation())
            .map_err(|_| Error::Degenerate(format!("zero quaternion at frame {}, column {}", t, off)))
    };
    (0..flat.nrows())
        .map(|t| {
            let mut beta = [T::zero(); NUM_BETAS];
            for (k, b) in beta.iter_mut().enumerate() {
                *b = flat[(t, BETA_OFF + k)];
            }
            Ok(BodyParams {
                phi: quat(t, 0)?,
                theta: (0..NUM_JOINTS).map(|j| quat(t, THETA_OFF + 4 * j)).collect::<Result<_>>()?,
                beta,
                gamma: Vector3::new(flat[(t, GAMMA_OFF)], flat[(t, GAMMA_OFF + 1)], flat[(t, GAMMA_OFF + 2)]),
            })
        })
        .collect()
}

/// Splits points into the horizontal voxel cells of the cloud's bounding box.
fn voxel_groups<T: Real>(cloud: &PointCloud<T>, cfg: &DenoiserConfig) -> Vec<Vec<usize>> {
    let (kx, kz) = cfg.voxel_grid();
    let mut groups = vec![Vec::new(); kx * kz];
    if cloud.is_empty() {
        return groups;
    }
    let fold = |f: fn(T, T) -> T, init: T, pick: fn(&Vector3<T>) -> T| cloud.points.iter().fold(init, |a, p| f(a, pick(&p.xyz)));
    let big: T = lit(f64::MAX);
    let (x0, x1) = (fold(T::min, big, |v| v.x), fold(T::max, -big, |v| v.x));
    let (z0, z1) = (fold(T::min, big, |v| v.z), fold(T::max, -big, |v| v.z));
    let cell = |v: T, lo: T, hi: T, n: usize| -> usize {
        if !(hi > lo) {
            return 0;
        }
        let f = crate::scalar::to_f64((v - lo) / (hi - lo)) * n as f64;
        (f.floor().max(0.0) as usize).min(n - 1)
    };
    for (i, p) in cloud.points.iter().enumerate() {
        let g = cell(p.xyz.x, x0, x1, kx) * kz + cell(p.xyz.z, z0, z1, kz);
        groups[g].push(i);
    }
    groups
}

fn affine<T: Real>(t: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = t.matmul(x, w)?;
    t.add_row(y, b)
}

pub(crate) fn embed_on_tape<T: Real>(t: &mut Tape<T>, b: &Bound, flat: Var) -> Result<Var> {
    let rows = t.value(flat).nrows();
    let cap = t.value(b.var("tpe")?).nrows();
    if rows > cap {
        return Err(Error::Shape(format!("window of {} frames exceeds the embedding capacity {}", rows, cap)));
    }
    let y = affine(t, flat, b.var("embed.w")?, b.var("embed.b")?)?;
    let tpe = t.row_slice(b.var("tpe")?, 0, rows)?;
    t.add(y, tpe)
}

/// Scene tokens before the temporal embedding is added.
pub(crate) fn encode_on_tape<T: Real>(t: &mut Tape<T>, b: &Bound, cloud: &PointCloud<T>, cfg: &DenoiserConfig) -> Result<Var> {
    let groups = voxel_groups(cloud, cfg);
    let feats = Mat::from_fn(cloud.len(), CLOUD_CHANNELS, |r, c| cloud.points[r].features()[c]);
    let x = t.leaf(feats);
    let null = b.var("scene.null")?;
    if cloud.is_empty() {
        let d = t.value(null).ncols();
        let empty = t.leaf(Mat::zeros(0, d));
        return t.group_max(empty, &groups, null);
    }
    let h = affine(t, x, b.var("scene.w1")?, b.var("scene.b1")?)?;
    let h = t.gelu(h);
    let f = affine(t, h, b.var("scene.w2")?, b.var("scene.b2")?)?;
    t.group_max(f, &groups, null)
}

fn attention<T: Real>(t: &mut Tape<T>, b: &Bound, prefix: &str, xq: Var, xkv: Var, heads: usize, probs: &mut Vec<Var>) -> Result<Var> {
    let q = t.matmul(xq, b.var(&format!("{prefix}.wq"))?)?;
    let k = t.matmul(xkv, b.var(&format!("{prefix}.wk"))?)?;
    let v = t.matmul(xkv, b.var(&format!("{prefix}.wv"))?)?;
    let d = t.value(q).ncols();
    let dh = d / heads;
    let scale: T = lit(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.col_slice(q, h * dh, dh)?;
        let kh = t.col_slice(k, h * dh, dh)?;
        let vh = t.col_slice(v, h * dh, dh)?;
        let s = t.matmul_t(qh, kh)?;
        let s = t.scale(s, scale);
        let p = t.softmax(s);
        probs.push(p);
        outs.push(t.matmul(p, vh)?);
    }
    let cat = t.hcat(&outs)?;
    affine(t, cat, b.var(&format!("{prefix}.wo"))?, b.var(&format!("{prefix}.bo"))?)
}

/// Returns the refined latents and every attention probability matrix.
pub(crate) fn decode_on_tape<T: Real>(t: &mut Tape<T>, b: &Bound, z0: Var, tokens: Var, cfg: &DenoiserConfig) -> Result<(Var, Vec<Var>)> {
    let mut z = z0;
    let mut probs = Vec::new();
    for l in 0..cfg.decoder_layers {
        let p = format!("dec.{l}");
        let h = t.layer_norm(z, b.var(&format!("{p}.ln1.g"))?, b.var(&format!("{p}.ln1.b"))?)?;
        let a = attention(t, b, &format!("{p}.sa"), h, h, cfg.attention_heads, &mut probs)?;
        z = t.add(z, a)?;
        let h = t.layer_norm(z, b.var(&format!("{p}.ln2.g"))?, b.var(&format!("{p}.ln2.b"))?)?;
        let a = attention(t, b, &format!("{p}.ca"), h, tokens, cfg.attention_heads, &mut probs)?;
        z = t.add(z, a)?;
        let h = t.layer_norm(z, b.var(&format!("{p}.ln3.g"))?, b.var(&format!("{p}.ln3.b"))?)?;
        let f = affine(t, h, b.var(&format!("{p}.ff.w1"))?, b.var(&format!("{p}.ff.b1"))?)?;
        let f = t.gelu(f);
        let f = affine(t, f, b.var(&format!("{p}.ff.w2"))?, b.var(&format!("{p}.ff.b2"))?)?;
        z = t.add(z, f)?;
    }
    Ok((z, probs))
}

/// Raw head outputs `(Φ quats, θ quats, Δβ, ΔΓ)`, quaternions normalized.
pub(crate) fn heads_on_tape<T: Real>(t: &mut Tape<T>, b: &Bound, z1: Var) -> Result<[Var; 4]> {
    let phi = affine(t, z1, b.var("head.phi.w")?, b.var("head.phi.b")?)?;
    let theta = affine(t, z1, b.var("head.theta.w")?, b.var("head.theta.b")?)?;
    let beta = affine(t, z1, b.var("head.beta.w")?, b.var("head.beta.b")?)?;
    let gamma = affine(t, z1, b.var("head.gamma.w")?, b.var("head.gamma.b")?)?;
    Ok([t.quat_normalize(phi)?, t.quat_normalize(theta)?, beta, gamma])
}

/// Raw head outputs for one window, recorded on `t`.
pub(crate) fn forward_window<T: Real>(
    t: &mut Tape<T>,
    b: &Bound,
    cfg: &DenoiserConfig,
    flat: &Mat<T>,
    tokens: Var,
) -> Result<[Var; 4]> {
    let f = t.leaf(flat.clone());
    let z0 = embed_on_tape(t, b, f)?;
    let (z1, _) = decode_on_tape(t, b, z0, tokens, cfg)?;
    heads_on_tape(t, b, z1)
}

/// Scene tokens with the temporal embedding added, ready for cross-attention.
pub(crate) fn scene_tokens_on_tape<T: Real>(t: &mut Tape<T>, b: &Bound, cloud: &PointCloud<T>, cfg: &DenoiserConfig) -> Result<Var> {
    let tok = encode_on_tape(t, b, cloud, cfg)?;
    let tpe = t.row_slice(b.var("tpe")?, 0, cfg.scene_tokens)?;
    t.add(tok, tpe)
}

/// `z₀[t] = FC(flat[t]) + TPE[t]`.
pub fn embed<T: Real>(flat: &Mat<T>, weights: &DenoiserWeights<T>) -> Result<Mat<T>> {
    if flat.ncols() != FLAT_DIM {
        return Err(Error::Shape(format!("embedding expects {} columns, got {}", FLAT_DIM, flat.ncols())));
    }
    let mut t = Tape::new();
    let b = Bound::new(&mut t, weights);
    let f = t.leaf(flat.clone());
    let z = embed_on_tape(&mut t, &b, f)?;
    Ok(t.value(z).clone())
}

/// `K × D` scene tokens; an empty cloud yields `K` copies of the null token.
pub fn encode_scene<T: Real>(cloud: &PointCloud<T>, weights: &DenoiserWeights<T>) -> Result<Mat<T>> {
    let mut t = Tape::new();
    let b = Bound::new(&mut t, weights);
    let tok = encode_on_tape(&mut t, &b, cloud, &weights.config)?;
    Ok(t.value(tok).clone())
}

/// Decoder output together with every attention probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace<T: Real> {
    pub latents: Mat<T>,
    pub attention: Vec<Mat<T>>,
}

/// Runs the decoder on `z0` against scene tokens (with the temporal embedding already added).
pub fn decode_traced<T: Real>(z0: &Mat<T>, scene_tokens: &Mat<T>, weights: &DenoiserWeights<T>) -> Result<DecodeTrace<T>> {
    let d = weights.config.latent_dim;
    if z0.ncols() != d || scene_tokens.ncols() != d {
        return Err(Error::Shape(format!("latents and tokens must have {} columns", d)));
    }
    let mut t = Tape::new();
    let b = Bound::new(&mut t, weights);
    let z = t.leaf(z0.clone());
    let s = t.leaf(scene_tokens.clone());
    let (z1, probs) = decode_on_tape(&mut t, &b, z, s, &weights.config)?;
    Ok(DecodeTrace { latents: t.value(z1).clone(), attention: probs.iter().map(|p| t.value(*p).clone()).collect() })
}

pub fn decode<T: Real>(z0: &Mat<T>, scene_tokens: &Mat<T>, weights: &DenoiserWeights<T>) -> Result<Mat<T>> {
    Ok(decode_traced(z0, scene_tokens, weights)?.latents)
}

/// Adds the temporal embedding to encoded scene tokens.
pub fn add_token_embedding<T: Real>(tokens: &Mat<T>, weights: &DenoiserWeights<T>) -> Result<Mat<T>> {
    let tpe = weights.get("tpe")?;
    if tokens.nrows() > tpe.nrows() || tokens.ncols() != tpe.ncols() {
        return Err(Error::Shape("scene tokens do not fit the embedding table".into()));
    }
    Ok(tokens + tpe.rows(0, tokens.nrows()))
}

fn head_quat<T: Real>(raw: &Mat<T>, t: usize, off: usize) -> Result<UnitQuat<T>> {
    let q = [raw[(t, off)], raw[(t, off + 1)], raw[(t, off + 2)], raw[(t, off + 3)]];
    if q.iter().all(|v| *v == T::zero()) {
        return Err(Error::Degenerate(format!("rotation head produced a zero quaternion at frame {}", t)));
    }
    UnitQuat::from_array(q)
}

/// Residual update: rotations are left-composed with the normalized head
/// quaternions, shape and translation get additive offsets.
pub fn apply_heads<T: Real>(z1: &Mat<T>, z0_params: &[BodyParams<T>], weights: &DenoiserWeights<T>) -> Result<Vec<BodyParams<T>>> {
    if z1.nrows() != z0_params.len() {
        return Err(Error::Shape(format!("{} latent rows for {} frames", z1.nrows(), z0_params.len())));
    }
    let lin = |name: &str| -> Result<Mat<T>> {
        let w = weights.get(&format!("head.{name}.w"))?;
        let b = weights.get(&format!("head.{name}.b"))?;
        if z1.ncols() != w.nrows() {
            return Err(Error::Shape("latent width does not match the heads".into()));
        }
        let mut y = z1 * w;
        for mut row in y.row_iter_mut() {
            row += b.row(0);
        }
        Ok(y)
    };
    let (phi, theta, beta, gamma) = (lin("phi")?, lin("theta")?, lin("beta")?, lin("gamma")?);
    z0_params
        .iter()
        .enumerate()
        .map(|(t, p0)| {
            let mut beta1 = p0.beta;
            for (k, b) in beta1.iter_mut().enumerate() {
                *b += beta[(t, k)];
            }
            Ok(BodyParams {
                phi: head_quat(&phi, t, 0)?.to_rotation().compose(&p0.phi),
                theta: p0
                    .theta
                    .iter()
                    .enumerate()
                    .map(|(j, r)| Ok(head_quat(&theta, t, 4 * j)?.to_rotation().compose(r)))
                    .collect::<Result<_>>()?,
                beta: beta1,
                gamma: p0.gamma + Vector3::new(gamma[(t, 0)], gamma[(t, 1)], gamma[(t, 2)]),
            })
        })
        .collect()
}

/// Denoises one fully observed world-frame track in windows of `infer_window` frames.
pub fn denoise<T: Real>(track: &BodyTrack<T>, cloud: &PointCloud<T>, weights: &DenoiserWeights<T>) -> Result<BodyTrack<T>> {
    let params = track.observed()?;
    let cfg = &weights.config;
    let mut t = Tape::new();
    let b = Bound::new(&mut t, weights);
    let tokens = scene_tokens_on_tape(&mut t, &b, cloud, cfg)?;
    let mut out = Vec::with_capacity(params.len());
    for chunk in params.chunks(cfg.infer_window.max(1)) {
        let flat = flatten_params(chunk);
        let f = t.leaf(flat);
        let z0 = embed_on_tape(&mut t, &b, f)?;
        let (z1, _) = decode_on_tape(&mut t, &b, z0, tokens, cfg)?;
        out.extend(apply_heads(t.value(z1), chunk, weights)?);
    }
    Ok(BodyTrack { track_id: track.track_id, frame: track.frame, slots: out.into_iter().map(Some).collect() })
}
