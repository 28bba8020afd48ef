//! Bound-constrained smooth minimization.
//!
//! A projected limited-memory BFGS: the quasi-Newton direction is computed on
//! the free variables only (variables sitting on a bound with the gradient
//! pushing outward are frozen for the step), the trial point is projected back
//! onto the box, and step lengths come from Armijo backtracking along the
//! projected path. ℓ₁-penalized problems are handled by [`minimize_l1_smooth`],
//! which splits `W = W⁺ − W⁻` with `W⁺, W⁻ ≥ 0`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxOptions {
    /// Tolerance on the infinity norm of the projected gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative function decrease below which the solve is considered stalled
    /// at a minimum. Zero disables the test.
    pub ftol: f64,
    /// Number of stored curvature pairs.
    pub history: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            ftol: 1e-13,
            history: 10,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxStatus {
    /// Projected gradient norm fell below `tol`.
    Converged,
    /// Relative objective decrease fell below `ftol`.
    FunctionTolerance,
    MaxIterations,
    /// No step along either the quasi-Newton or the projected gradient
    /// direction satisfied the Armijo condition.
    LineSearchStalled,
}

impl BoxStatus {
    pub fn is_converged(self) -> bool {
        matches!(self, BoxStatus::Converged | BoxStatus::FunctionTolerance)
    }
}

#[derive(Debug, Clone)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub status: BoxStatus,
    pub iterations: usize,
    pub evaluations: usize,
    pub pg_norm: f64,
    /// Objective after each accepted step, starting with the value at `x0`.
    pub f_history: Vec<f64>,
}

/// A smooth objective over a box. The objective writes the gradient into its
/// second argument and returns the value; a non-finite return marks the point
/// as unusable.
pub struct BoxProblem<F> {
    pub objective: F,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub options: BoxOptions,
}

impl<F> BoxProblem<F>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    pub fn new(objective: F, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::invalid("bound vectors differ in length"));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::invalid(format!(
                "inconsistent bounds at coordinate {i}: [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(Self {
            objective,
            lower,
            upper,
            options: BoxOptions::default(),
        })
    }

    pub fn with_options(mut self, options: BoxOptions) -> Self {
        self.options = options;
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &u))| (xi - (xi - gi).clamp(l, u)).abs())
        .fold(0.0, f64::max)
}

struct Memory {
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
    cap: usize,
}

impl Memory {
    fn new(cap: usize) -> Self {
        Self {
            s: VecDeque::with_capacity(cap),
            y: VecDeque::with_capacity(cap),
            rho: VecDeque::with_capacity(cap),
            cap,
        }
    }

    fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy <= 1e-12 * yy || sy <= 0.0 {
            return;
        }
        if self.s.len() == self.cap {
            self.s.pop_front();
            self.y.pop_front();
            self.rho.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
        self.rho.push_back(1.0 / sy);
    }

    /// Two-loop recursion, returning `H q` restricted to `free`.
    fn apply(&self, q: &[f64], free: &[bool]) -> Vec<f64> {
        let mut r: Vec<f64> = q
            .iter()
            .zip(free)
            .map(|(v, &f)| if f { *v } else { 0.0 })
            .collect();
        let masked_dot = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .zip(free)
                .filter(|(_, &f)| f)
                .map(|((x, y), _)| x * y)
                .sum()
        };
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * masked_dot(&self.s[i], &r);
            for (rj, (yj, fj)) in r.iter_mut().zip(self.y[i].iter().zip(free)) {
                if *fj {
                    *rj -= alpha[i] * yj;
                }
            }
        }
        let last = k - 1;
        let gamma = dot(&self.s[last], &self.y[last]) / dot(&self.y[last], &self.y[last]);
        r.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..k {
            let beta = self.rho[i] * masked_dot(&self.y[i], &r);
            for (rj, (sj, fj)) in r.iter_mut().zip(self.s[i].iter().zip(free)) {
                if *fj {
                    *rj += (alpha[i] - beta) * sj;
                }
            }
        }
        r
    }
}

/// Minimize a smooth function over a box, starting from `x0` (projected onto
/// the box if it lies outside).
pub fn minimize_box<F>(problem: &mut BoxProblem<F>, x0: &[f64]) -> Result<BoxResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = problem.dim();
    if x0.len() != n {
        return Err(Error::invalid(format!(
            "starting point has {} coordinates, problem has {n}",
            x0.len()
        )));
    }
    let opts = problem.options;
    let lo = problem.lower.clone();
    let hi = problem.upper.clone();
    let objective = &mut problem.objective;

    let mut x: Vec<f64> = x0
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(v, (l, u))| v.clamp(*l, *u))
        .collect();
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    let mut evaluations = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("objective is not finite at the starting point"));
    }

    let mut memory = Memory::new(opts.history.max(1));
    let mut f_history = vec![f];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut free = vec![true; n];
    let mut status = BoxStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if projected_gradient_norm(&x, &g, &lo, &hi) <= opts.tol {
            status = BoxStatus::Converged;
            break;
        }
        for i in 0..n {
            let at_lo = x[i] <= lo[i];
            let at_hi = x[i] >= hi[i];
            free[i] = !((at_lo && g[i] > 0.0) || (at_hi && g[i] < 0.0) || (at_lo && at_hi));
        }
        let steepest: Vec<f64> = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();

        let mut used_quasi_newton = !memory.is_empty();
        let mut dir = if used_quasi_newton {
            let mut d = memory.apply(&g, &free);
            d.iter_mut().for_each(|v| *v = -*v);
            for i in 0..n {
                if (x[i] <= lo[i] && d[i] < 0.0) || (x[i] >= hi[i] && d[i] > 0.0) {
                    d[i] = 0.0;
                }
            }
            let gd = dot(&g, &d);
            let scale = (dot(&steepest, &steepest) * dot(&d, &d)).sqrt();
            if !(gd < -1e-12 * scale) {
                used_quasi_newton = false;
                steepest.clone()
            } else {
                d
            }
        } else {
            steepest.clone()
        };

        let accepted = loop {
            let mut t = if used_quasi_newton {
                1.0
            } else {
                (1.0 / inf_norm(&dir).max(1e-300)).min(1.0)
            };
            let mut found = None;
            for _ in 0..opts.max_backtracks {
                for i in 0..n {
                    x_new[i] = (x[i] + t * dir[i]).clamp(lo[i], hi[i]);
                }
                let lin: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
                if lin < 0.0 {
                    let f_try = objective(&x_new, &mut g_new);
                    evaluations += 1;
                    if f_try.is_finite()
                        && g_new.iter().all(|v| v.is_finite())
                        && f_try <= f + opts.armijo_c * lin
                    {
                        found = Some(f_try);
                        break;
                    }
                }
                t *= opts.backtrack;
            }
            match found {
                Some(f_try) => break Some(f_try),
                None if used_quasi_newton => {
                    memory.clear();
                    used_quasi_newton = false;
                    dir = steepest.clone();
                }
                None => break None,
            }
        };

        let Some(f_next) = accepted else {
            status = BoxStatus::LineSearchStalled;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        memory.push(s, y);
        let decrease = f - f_next;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_next;
        f_history.push(f);
        if opts.ftol > 0.0 && decrease <= opts.ftol * f.abs().max(1.0) {
            status = if projected_gradient_norm(&x, &g, &lo, &hi) <= opts.tol {
                BoxStatus::Converged
            } else {
                BoxStatus::FunctionTolerance
            };
            break;
        }
    }

    let pg_norm = projected_gradient_norm(&x, &g, &lo, &hi);
    if status == BoxStatus::MaxIterations && pg_norm <= opts.tol {
        status = BoxStatus::Converged;
    }
    Ok(BoxResult {
        x,
        f,
        status,
        iterations,
        evaluations,
        pg_norm,
        f_history,
    })
}

/// Which off-diagonal entries of a weight matrix are free to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EdgeMask {
    /// Every entry except the diagonal.
    #[default]
    NoSelfLoops,
    /// Only entries `(a, b)` with `a < b`.
    StrictUpper,
}

impl EdgeMask {
    pub fn allows(self, row: usize, col: usize) -> bool {
        match self {
            EdgeMask::NoSelfLoops => row != col,
            EdgeMask::StrictUpper => row < col,
        }
    }

    /// Zero every entry the mask forbids.
    pub fn apply(self, w: &mut Matrix) {
        let (r, c) = w.shape();
        for j in 0..c {
            for i in 0..r {
                if !self.allows(i, j) {
                    w[(i, j)] = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct L1Fit {
    pub w: Matrix,
    pub w_plus: Matrix,
    pub w_minus: Matrix,
    /// `smooth(W) + λ₁‖W‖₁` at the returned point.
    pub objective: f64,
    pub status: BoxStatus,
    pub iterations: usize,
}

/// Minimize `smooth(W) + λ₁‖W‖₁` over `d × d` matrices respecting `mask`.
///
/// `smooth` returns the value and gradient at `W`; an `Err` is treated as an
/// unusable point by the line search. The diagonal (and anything else the mask
/// forbids) is held at exactly zero.
pub fn minimize_l1_smooth<S>(
    mut smooth: S,
    lambda1: f64,
    d: usize,
    w0: &Matrix,
    mask: EdgeMask,
    options: &BoxOptions,
) -> Result<L1Fit>
where
    S: FnMut(&Matrix) -> Result<(f64, Matrix)>,
{
    if lambda1 < 0.0 || !lambda1.is_finite() {
        return Err(Error::invalid(format!("lambda1 must be nonnegative, got {lambda1}")));
    }
    if w0.shape() != (d, d) {
        return Err(Error::invalid(format!(
            "starting matrix is {:?}, expected {d}x{d}",
            w0.shape()
        )));
    }
    let cells = d * d;
    let lower = vec![0.0; 2 * cells];
    let mut upper = vec![f64::INFINITY; 2 * cells];
    let mut x0 = vec![0.0; 2 * cells];
    for j in 0..d {
        for i in 0..d {
            let k = i + j * d;
            if mask.allows(i, j) {
                x0[k] = w0[(i, j)].max(0.0);
                x0[cells + k] = (-w0[(i, j)]).max(0.0);
            } else {
                upper[k] = 0.0;
                upper[cells + k] = 0.0;
            }
        }
    }

    let mut w = Matrix::zeros(d, d);
    let objective = |x: &[f64], grad: &mut [f64]| -> f64 {
        for k in 0..cells {
            w[(k % d, k / d)] = x[k] - x[cells + k];
        }
        let Ok((value, g)) = smooth(&w) else {
            return f64::NAN;
        };
        let mut penalty = 0.0;
        for k in 0..cells {
            let (i, j) = (k % d, k / d);
            if mask.allows(i, j) {
                penalty += x[k] + x[cells + k];
                grad[k] = g[(i, j)] + lambda1;
                grad[cells + k] = -g[(i, j)] + lambda1;
            } else {
                grad[k] = 0.0;
                grad[cells + k] = 0.0;
            }
        }
        value + lambda1 * penalty
    };

    let mut problem = BoxProblem::new(objective, lower, upper)?.with_options(*options);
    let result = minimize_box(&mut problem, &x0)?;
    let w_plus = Matrix::from_fn(d, d, |i, j| result.x[i + j * d]);
    let w_minus = Matrix::from_fn(d, d, |i, j| result.x[cells + i + j * d]);
    let w = &w_plus - &w_minus;
    Ok(L1Fit {
        w,
        w_plus,
        w_minus,
        objective: result.f,
        status: result.status,
        iterations: result.iterations,
    })
}
