//! Limited-memory BFGS for small smooth problems.
//!
//! Two-loop recursion with a scaled identity as the initial inverse Hessian
//! and a backtracking Armijo line search whose first trial step is 1 (or a
//! unit-length move when no curvature pairs are stored).

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::{is_finite, lit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when the gradient infinity norm drops below this.
    pub grad_tol: f64,
    /// Stop when `|f_prev - f| <= rel_tol * max(|f_prev|, tiny)`.
    pub rel_tol: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            memory: 8,
            grad_tol: 1e-8,
            rel_tol: 1e-10,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport<T> {
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf_norm: T,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

fn inf_norm<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

fn check<T: Real>(x: &[T], f: T, g: &[T]) -> Result<()> {
    if !is_finite(f) || g.iter().any(|v| !is_finite(*v)) {
        return Err(Error::Optimizer(format!(
            "non-finite objective {} or gradient {:?} at x = {:?}",
            to_f64(f),
            g.iter().map(|v| to_f64(*v)).collect::<Vec<_>>(),
            x.iter().map(|v| to_f64(*v)).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// Minimizes `f` starting at `x0`. `f` returns the value and gradient.
pub fn minimize<T, F>(mut f: F, x0: &[T], cfg: &LbfgsConfig) -> Result<LbfgsReport<T>>
where
    T: Real,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    check(&x, fx, &g)?;
    let mut hist: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::new();
    let c1: T = lit(1e-4);
    let grad_tol: T = lit(cfg.grad_tol);
    let rel_tol: T = lit(cfg.rel_tol);
    let tiny: T = lit(1e-300);

    for it in 0..cfg.max_iters {
        if inf_norm(&g) < grad_tol {
            return Ok(LbfgsReport { grad_inf_norm: inf_norm(&g), x, value: fx, iterations: it, converged: true });
        }

        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = *rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * *yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = *rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (*a - b) * *si;
            }
        }
        let mut d: Vec<T> = q.iter().map(|v| -*v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) {
            hist.clear();
            d = g.iter().map(|v| -*v).collect();
            slope = dot(&g, &d);
        }

        // without curvature history the raw gradient has no natural length
        let mut step = if hist.is_empty() { T::one().min(T::one() / inf_norm(&d)) } else { T::one() };
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let xn: Vec<T> = x.iter().zip(&d).map(|(xi, di)| *xi + step * *di).collect();
            let (fn_, gn) = f(&xn);
            if is_finite(fn_) && fn_ <= fx + c1 * step * slope {
                check(&xn, fn_, &gn)?;
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= lit(0.5);
        }
        let Some((xn, fn_, gn)) = accepted else {
            // no decrease along a descent direction: we are at numerical precision
            let converged = inf_norm(&g) < grad_tol.sqrt();
            return Ok(LbfgsReport { grad_inf_norm: inf_norm(&g), x, value: fx, iterations: it, converged });
        };

        let s: Vec<T> = xn.iter().zip(&x).map(|(a, b)| *a - *b).collect();
        let y: Vec<T> = gn.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &y);
        if sy > lit::<T>(1e-12) * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > tiny {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, T::one() / sy));
        } else {
            // without positive curvature the stored model is stale
            hist.clear();
        }
        let f_prev = fx;
        x = xn;
        fx = fn_;
        g = gn;
        if (f_prev - fx).abs() <= rel_tol * f_prev.abs().max(tiny) {
            return Ok(LbfgsReport { grad_inf_norm: inf_norm(&g), x, value: fx, iterations: it + 1, converged: true });
        }
    }
    let converged = inf_norm(&g) < grad_tol;
    Ok(LbfgsReport { grad_inf_norm: inf_norm(&g), x, value: fx, iterations: cfg.max_iters, converged })
}
