//! Reverse-mode differentiation over dense matrices.
//!
//! Every operation records its inputs on a [`Tape`]; [`Tape::backward`] walks
//! the record in reverse and accumulates adjoints. Rows are frames (or points,
//! or tokens) throughout, and grouped operations act on consecutive columns.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub type Mat<T> = DMatrix<T>;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, normalized: Mat<T>, inv_std: Vec<T> },
    Softmax(Var),
    ColSlice(Var, usize),
    RowSlice(Var, usize),
    HCat(Vec<Var>),
    RowDiff(Var),
    Norm3(Var),
    QuatNormalize(Var, Vec<T>),
    QuatMul(Var, Var),
    QuatToRot(Var),
    RotMul(Var, Var),
    RotApply(Var, Var),
    /// Per group and column, the winning row, or `None` when the null row was used.
    GroupMax { x: Var, null: Var, winners: Vec<Vec<Option<usize>>> },
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node<T: Real> {
    value: Mat<T>,
    op: Op<T>,
}

/// The record of one forward evaluation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Adjoints of every recorded value with respect to one scalar output.
#[derive(Debug, Clone)]
pub struct Grads<T: Real> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Mat<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.044_715;

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let k: T = lit(0.797_884_560_802_865_4); // sqrt(2/π)
    let c: T = lit(GELU_C);
    let half: T = lit(0.5);
    let u = k * (x + c * x * x * x);
    let th = u.tanh();
    let y = half * x * (T::one() + th);
    let dy = half * (T::one() + th) + half * x * (T::one() - th * th) * k * (T::one() + lit::<T>(3.0) * c * x * x);
    (y, dy)
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn rot_at<T: Real>(m: &Mat<T>, r: usize) -> nalgebra::Matrix3<T> {
    nalgebra::Matrix3::from_fn(|i, j| m[(r, 3 * i + j)])
}

fn put_rot<T: Real>(m: &mut Mat<T>, r: usize, v: &nalgebra::Matrix3<T>) {
    for i in 0..3 {
        for j in 0..3 {
            m[(r, 3 * i + j)] += v[(i, j)];
        }
    }
}

fn quat_left<T: Real>(a: [T; 4]) -> nalgebra::Matrix4<T> {
    let [w, x, y, z] = a;
    nalgebra::Matrix4::new(w, -x, -y, -z, x, w, -z, y, y, z, w, -x, z, -y, x, w)
}

fn quat_right<T: Real>(b: [T; 4]) -> nalgebra::Matrix4<T> {
    let [w, x, y, z] = b;
    nalgebra::Matrix4::new(w, -x, -y, -z, x, w, z, -y, y, -z, w, x, z, y, -x, w)
}

fn quat_at<T: Real>(m: &Mat<T>, r: usize, g: usize) -> [T; 4] {
    [m[(r, 4 * g)], m[(r, 4 * g + 1)], m[(r, 4 * g + 2)], m[(r, 4 * g + 3)]]
}

fn shape_err(what: &str, a: &Mat<impl Real>, b: &Mat<impl Real>) -> Error {
    Error::Shape(format!("{}: {}x{} vs {}x{}", what, a.nrows(), a.ncols(), b.nrows(), b.ncols()))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    /// The single entry of a 1×1 value.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(shape_err("matmul", va, vb));
        }
        let v = va * vb;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(shape_err("matmul_t", va, vb));
        }
        let v = va * vb.transpose();
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(what, va, vb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).component_mul(self.value(b));
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds the 1×n row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.nrows() != 1 || vb.ncols() != va.ncols() {
            return Err(shape_err("add_row", va, vb));
        }
        let mut v = va.clone();
        for mut row in v.row_iter_mut() {
            row += vb.row(0);
        }
        Ok(self.push(v, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    /// Tanh approximation of the Gaussian error linear unit.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| gelu_parts(x).0);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Row-wise normalization with a learned gain and bias (both 1×n).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let vx = self.value(x);
        let n = vx.ncols();
        for p in [gain, bias] {
            let vp = self.value(p);
            if vp.nrows() != 1 || vp.ncols() != n {
                return Err(shape_err("layer_norm", vx, vp));
            }
        }
        let nf: T = lit(n as f64);
        let mut normalized = vx.clone();
        let mut inv_std = Vec::with_capacity(vx.nrows());
        for mut row in normalized.row_iter_mut() {
            let mean = row.sum() / nf;
            row.add_scalar_mut(-mean);
            let var = row.norm_squared() / nf;
            let is = T::one() / (var + lit(LN_EPS)).sqrt();
            row *= is;
            inv_std.push(is);
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut v = normalized.clone();
        for mut row in v.row_iter_mut() {
            row.component_mul_assign(&g.row(0));
            row += b.row(0);
        }
        Ok(self.push(v, Op::LayerNorm { x, gain, bias, normalized, inv_std }))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.row_iter_mut() {
            let m = row.max();
            row.apply(|x| *x = (*x - m).exp());
            let s = row.sum();
            row /= s;
        }
        self.push(v, Op::Softmax(a))
    }

    pub fn col_slice(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let va = self.value(a);
        if start + width > va.ncols() {
            return Err(Error::Shape(format!("column slice {}..{} of {} columns", start, start + width, va.ncols())));
        }
        let v = va.columns(start, width).into_owned();
        Ok(self.push(v, Op::ColSlice(a, start)))
    }

    pub fn row_slice(&mut self, a: Var, start: usize, height: usize) -> Result<Var> {
        let va = self.value(a);
        if start + height > va.nrows() {
            return Err(Error::Shape(format!("row slice {}..{} of {} rows", start, start + height, va.nrows())));
        }
        let v = va.rows(start, height).into_owned();
        Ok(self.push(v, Op::RowSlice(a, start)))
    }

    /// Side-by-side concatenation.
    pub fn hcat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|p| self.value(*p).nrows()).ok_or_else(|| Error::Empty("hcat of nothing".into()))?;
        if parts.iter().any(|p| self.value(*p).nrows() != rows) {
            return Err(Error::Shape("hcat row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut c = 0;
        for p in parts {
            let vp = self.value(*p);
            v.columns_mut(c, vp.ncols()).copy_from(vp);
            c += vp.ncols();
        }
        Ok(self.push(v, Op::HCat(parts.to_vec())))
    }

    /// Forward differences between consecutive rows.
    pub fn row_diff(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.nrows() < 2 {
            return Err(Error::Shape("row difference needs at least two rows".into()));
        }
        let v = va.rows(1, va.nrows() - 1) - va.rows(0, va.nrows() - 1);
        Ok(self.push(v, Op::RowDiff(a)))
    }

    /// Euclidean length of each consecutive 3-column group.
    pub fn norm3(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.ncols() % 3 != 0 {
            return Err(Error::Shape("norm3 needs a multiple of 3 columns".into()));
        }
        let v = Mat::from_fn(va.nrows(), va.ncols() / 3, |r, g| {
            (va[(r, 3 * g)] * va[(r, 3 * g)] + va[(r, 3 * g + 1)] * va[(r, 3 * g + 1)] + va[(r, 3 * g + 2)] * va[(r, 3 * g + 2)]).sqrt()
        });
        Ok(self.push(v, Op::Norm3(a)))
    }

    /// Scales every 4-column group to unit length. A zero group is an error.
    pub fn quat_normalize(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.ncols() % 4 != 0 {
            return Err(Error::Shape("quaternion groups need a multiple of 4 columns".into()));
        }
        let groups = va.ncols() / 4;
        let mut v = va.clone();
        let mut norms = Vec::with_capacity(va.nrows() * groups);
        for r in 0..va.nrows() {
            for g in 0..groups {
                let q = quat_at(va, r, g);
                let n = q.iter().fold(T::zero(), |s, x| s + *x * *x).sqrt();
                if !(n > T::zero()) {
                    return Err(Error::Degenerate(format!("zero-norm quaternion at row {}, group {}", r, g)));
                }
                for k in 0..4 {
                    v[(r, 4 * g + k)] = q[k] / n;
                }
                norms.push(n);
            }
        }
        Ok(self.push(v, Op::QuatNormalize(a, norms)))
    }

    /// Hamilton product of matching 4-column groups.
    pub fn quat_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("quat_mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() % 4 != 0 {
            return Err(Error::Shape("quaternion groups need a multiple of 4 columns".into()));
        }
        let mut v = va.clone();
        for r in 0..va.nrows() {
            for g in 0..va.ncols() / 4 {
                let c = quat_left(quat_at(va, r, g)) * nalgebra::Vector4::from(quat_at(vb, r, g));
                for k in 0..4 {
                    v[(r, 4 * g + k)] = c[k];
                }
            }
        }
        Ok(self.push(v, Op::QuatMul(a, b)))
    }

    /// Unit quaternions (n×4) to row-major rotation matrices (n×9).
    pub fn quat_to_rot(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.ncols() != 4 {
            return Err(Error::Shape("quat_to_rot expects 4 columns".into()));
        }
        let two: T = lit(2.0);
        let one = T::one();
        let v = Mat::from_fn(va.nrows(), 9, |r, k| {
            let [w, x, y, z] = quat_at(va, r, 0);
            match k {
                0 => one - two * (y * y + z * z),
                1 => two * (x * y - w * z),
                2 => two * (x * z + w * y),
                3 => two * (x * y + w * z),
                4 => one - two * (x * x + z * z),
                5 => two * (y * z - w * x),
                6 => two * (x * z - w * y),
                7 => two * (y * z + w * x),
                _ => one - two * (x * x + y * y),
            }
        });
        Ok(self.push(v, Op::QuatToRot(a)))
    }

    /// Row-wise product of 3×3 matrices stored as 9 columns.
    pub fn rot_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("rot_mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != 9 {
            return Err(Error::Shape("rot_mul expects 9 columns".into()));
        }
        let mut v = Mat::zeros(va.nrows(), 9);
        for r in 0..va.nrows() {
            put_rot(&mut v, r, &(rot_at(va, r) * rot_at(vb, r)));
        }
        Ok(self.push(v, Op::RotMul(a, b)))
    }

    /// Applies the row's 3×3 matrix to every 3-column group of `x`.
    pub fn rot_apply(&mut self, rot: Var, x: Var) -> Result<Var> {
        let (vr, vx) = (self.value(rot), self.value(x));
        if vr.ncols() != 9 || vr.nrows() != vx.nrows() || vx.ncols() % 3 != 0 {
            return Err(shape_err("rot_apply", vr, vx));
        }
        let mut v = vx.clone();
        for r in 0..vx.nrows() {
            let m = rot_at(vr, r);
            for g in 0..vx.ncols() / 3 {
                let p = m * nalgebra::Vector3::new(vx[(r, 3 * g)], vx[(r, 3 * g + 1)], vx[(r, 3 * g + 2)]);
                for k in 0..3 {
                    v[(r, 3 * g + k)] = p[k];
                }
            }
        }
        Ok(self.push(v, Op::RotApply(rot, x)))
    }

    /// Column-wise max over each row group; empty groups take the 1×n `null` row.
    pub fn group_max(&mut self, x: Var, groups: &[Vec<usize>], null: Var) -> Result<Var> {
        let (vx, vn) = (self.value(x), self.value(null));
        let d = vn.ncols();
        if vn.nrows() != 1 || (vx.nrows() > 0 && vx.ncols() != d) {
            return Err(shape_err("group_max", vx, vn));
        }
        if groups.iter().flatten().any(|&i| i >= vx.nrows()) {
            return Err(Error::Shape("group_max row index out of range".into()));
        }
        let mut v = Mat::zeros(groups.len(), d);
        let mut winners = Vec::with_capacity(groups.len());
        for (k, g) in groups.iter().enumerate() {
            let mut win = Vec::with_capacity(d);
            for c in 0..d {
                let best = g.iter().copied().fold(None, |best: Option<usize>, i| match best {
                    Some(b) if vx[(b, c)] >= vx[(i, c)] => Some(b),
                    _ => Some(i),
                });
                v[(k, c)] = match best {
                    Some(b) => vx[(b, c)],
                    None => vn[(0, c)],
                };
                win.push(best);
            }
            winners.push(win);
        }
        Ok(self.push(v, Op::GroupMax { x, null, winners }))
    }

    /// Sum of all entries, as 1×1.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_element(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Adjoints of the 1×1 value `out` with respect to every recorded value.
    pub fn backward(&self, out: Var) -> Grads<T> {
        let mut grads: Vec<Option<Mat<T>>> = vec![None; self.nodes.len()];
        let shape = self.nodes[out.0].value.shape();
        grads[out.0] = Some(Mat::from_element(shape.0, shape.1, T::one()));

        fn acc<T: Real>(grads: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
            match &mut grads[v.0] {
                Some(e) => *e += g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, &dy * val(*b).transpose());
                    acc(&mut grads, *b, val(*a).transpose() * &dy);
                }
                Op::MatMulT(a, b) => {
                    acc(&mut grads, *a, &dy * val(*b));
                    acc(&mut grads, *b, dy.transpose() * val(*a));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, dy.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, -dy.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, dy.component_mul(val(*b)));
                    acc(&mut grads, *b, dy.component_mul(val(*a)));
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, Mat::from_fn(1, dy.ncols(), |_, c| dy.column(c).sum()));
                    acc(&mut grads, *a, dy.clone());
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &dy * *c),
                Op::Gelu(a) => {
                    let g = val(*a).zip_map(&dy, |x, d| gelu_parts(x).1 * d);
                    acc(&mut grads, *a, g);
                }
                Op::Sigmoid(a) => {
                    let g = node.value.zip_map(&dy, |s, d| s * (T::one() - s) * d);
                    acc(&mut grads, *a, g);
                }
                Op::Abs(a) => {
                    let g = val(*a).zip_map(&dy, |x, d| {
                        if x > T::zero() {
                            d
                        } else if x < T::zero() {
                            -d
                        } else {
                            T::zero()
                        }
                    });
                    acc(&mut grads, *a, g);
                }
                Op::Square(a) => {
                    let g = val(*a).zip_map(&dy, |x, d| lit::<T>(2.0) * x * d);
                    acc(&mut grads, *a, g);
                }
                Op::LayerNorm { x, gain, bias, normalized, inv_std } => {
                    let g = val(*gain);
                    let n: T = lit(dy.ncols() as f64);
                    acc(&mut grads, *gain, Mat::from_fn(1, dy.ncols(), |_, c| dy.column(c).dot(&normalized.column(c))));
                    acc(&mut grads, *bias, Mat::from_fn(1, dy.ncols(), |_, c| dy.column(c).sum()));
                    let mut dx = dy.clone();
                    for (r, is) in inv_std.iter().enumerate() {
                        let dxh = dy.row(r).component_mul(&g.row(0));
                        let m1 = dxh.sum() / n;
                        let m2 = dxh.dot(&normalized.row(r)) / n;
                        for c in 0..dy.ncols() {
                            dx[(r, c)] = *is * (dxh[c] - m1 - normalized[(r, c)] * m2);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut dx = y.component_mul(&dy);
                    for r in 0..y.nrows() {
                        let s = dx.row(r).sum();
                        for c in 0..y.ncols() {
                            dx[(r, c)] -= y[(r, c)] * s;
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::ColSlice(a, start) => {
                    let va = val(*a);
                    let mut g = Mat::zeros(va.nrows(), va.ncols());
                    g.columns_mut(*start, dy.ncols()).copy_from(&dy);
                    acc(&mut grads, *a, g);
                }
                Op::RowSlice(a, start) => {
                    let va = val(*a);
                    let mut g = Mat::zeros(va.nrows(), va.ncols());
                    g.rows_mut(*start, dy.nrows()).copy_from(&dy);
                    acc(&mut grads, *a, g);
                }
                Op::HCat(parts) => {
                    let mut c = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        acc(&mut grads, *p, dy.columns(c, w).into_owned());
                        c += w;
                    }
                }
                Op::RowDiff(a) => {
                    let va = val(*a);
                    let mut g = Mat::zeros(va.nrows(), va.ncols());
                    let n = dy.nrows();
                    let mut hi = g.rows_mut(1, n);
                    hi += &dy;
                    let mut lo = g.rows_mut(0, n);
                    lo -= &dy;
                    acc(&mut grads, *a, g);
                }
                Op::Norm3(a) => {
                    let va = val(*a);
                    let g = Mat::from_fn(va.nrows(), va.ncols(), |r, c| {
                        let n = node.value[(r, c / 3)];
                        if n > T::zero() {
                            va[(r, c)] / n * dy[(r, c / 3)]
                        } else {
                            T::zero()
                        }
                    });
                    acc(&mut grads, *a, g);
                }
                Op::QuatNormalize(a, norms) => {
                    let y = &node.value;
                    let groups = y.ncols() / 4;
                    let mut g = Mat::zeros(y.nrows(), y.ncols());
                    for r in 0..y.nrows() {
                        for k in 0..groups {
                            let yq = quat_at(y, r, k);
                            let dq = quat_at(&dy, r, k);
                            let dot = (0..4).fold(T::zero(), |s, i| s + yq[i] * dq[i]);
                            let n = norms[r * groups + k];
                            for i in 0..4 {
                                g[(r, 4 * k + i)] = (dq[i] - yq[i] * dot) / n;
                            }
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::QuatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let mut ga = Mat::zeros(va.nrows(), va.ncols());
                    let mut gb = Mat::zeros(va.nrows(), va.ncols());
                    for r in 0..va.nrows() {
                        for k in 0..va.ncols() / 4 {
                            let d = nalgebra::Vector4::from(quat_at(&dy, r, k));
                            let da = quat_right(quat_at(vb, r, k)).transpose() * d;
                            let db = quat_left(quat_at(va, r, k)).transpose() * d;
                            for i in 0..4 {
                                ga[(r, 4 * k + i)] = da[i];
                                gb[(r, 4 * k + i)] = db[i];
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::QuatToRot(a) => {
                    let va = val(*a);
                    let two: T = lit(2.0);
                    let four: T = lit(4.0);
                    let g = Mat::from_fn(va.nrows(), 4, |r, k| {
                        let [w, x, y, z] = quat_at(va, r, 0);
                        let d = |i: usize| dy[(r, i)];
                        match k {
                            0 => two * (-z * d(1) + y * d(2) + z * d(3) - x * d(5) - y * d(6) + x * d(7)),
                            1 => two * (y * d(1) + z * d(2) + y * d(3) - w * d(5) + z * d(6) + w * d(7)) - four * x * (d(4) + d(8)),
                            2 => two * (x * d(1) + w * d(2) + x * d(3) + z * d(5) - w * d(6) + z * d(7)) - four * y * (d(0) + d(8)),
                            _ => two * (-w * d(1) + x * d(2) + w * d(3) + y * d(5) + x * d(6) + y * d(7)) - four * z * (d(0) + d(4)),
                        }
                    });
                    acc(&mut grads, *a, g);
                }
                Op::RotMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let mut ga = Mat::zeros(va.nrows(), 9);
                    let mut gb = Mat::zeros(va.nrows(), 9);
                    for r in 0..va.nrows() {
                        let d = rot_at(&dy, r);
                        put_rot(&mut ga, r, &(d * rot_at(vb, r).transpose()));
                        put_rot(&mut gb, r, &(rot_at(va, r).transpose() * d));
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::RotApply(rot, x) => {
                    let (vr, vx) = (val(*rot), val(*x));
                    let mut gr = Mat::zeros(vr.nrows(), 9);
                    let mut gx = Mat::zeros(vx.nrows(), vx.ncols());
                    for r in 0..vx.nrows() {
                        let m = rot_at(vr, r);
                        let mut dm = nalgebra::Matrix3::zeros();
                        for g in 0..vx.ncols() / 3 {
                            let d = nalgebra::Vector3::new(dy[(r, 3 * g)], dy[(r, 3 * g + 1)], dy[(r, 3 * g + 2)]);
                            let p = nalgebra::Vector3::new(vx[(r, 3 * g)], vx[(r, 3 * g + 1)], vx[(r, 3 * g + 2)]);
                            dm += d * p.transpose();
                            let back = m.transpose() * d;
                            for k in 0..3 {
                                gx[(r, 3 * g + k)] = back[k];
                            }
                        }
                        put_rot(&mut gr, r, &dm);
                    }
                    acc(&mut grads, *rot, gr);
                    acc(&mut grads, *x, gx);
                }
                Op::GroupMax { x, null, winners } => {
                    let vx = val(*x);
                    let mut gx = Mat::zeros(vx.nrows(), vx.ncols());
                    let mut gn = Mat::zeros(1, dy.ncols());
                    for (k, win) in winners.iter().enumerate() {
                        for (c, w) in win.iter().enumerate() {
                            match w {
                                Some(i) => gx[(*i, c)] += dy[(k, c)],
                                None => gn[(0, c)] += dy[(k, c)],
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *null, gn);
                }
                Op::Sum(a) => {
                    let va = val(*a);
                    acc(&mut grads, *a, Mat::from_element(va.nrows(), va.ncols(), dy[(0, 0)]));
                }
            }
            grads[i] = Some(dy);
        }
        Grads { grads }
    }
}
