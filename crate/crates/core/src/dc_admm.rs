//! Fused DAG estimation by difference-of-convex iterations over a
//! Gauss-Seidel ADMM.
//!
//! The objective is
//!
//! ```text
//! F(W, θ) = Σᵢ (1/2mᵢ)‖Xᵢ − XᵢWᵢ‖²_F + λ₁ Σᵢ ‖Wᵢ‖₁ + λ₂ Σ_{i<j} min(‖θᵢⱼ‖_F, τ)
//! s.t.  h(Wᵢ) = 0,  θᵢⱼ = Wᵢ − Wⱼ.
//! ```
//!
//! Each DC iteration `s` freezes, per pair, whether `‖θᵢⱼ‖_F` was at or above
//! `τ` at the previous iterate. Capped pairs contribute the constant `λ₂τ` and
//! uncapped pairs the convex `λ₂‖θᵢⱼ‖_F`, which yields the surrogate `F̄`. The
//! surrogate is minimized by ADMM in scaled form with dual `Uᵢⱼ` for the
//! consensus constraints and an augmented Lagrangian `αᵢ h + (ρ₁/2) h²` for
//! acyclicity. One ADMM iteration is
//!
//! 1. a Gauss-Seidel sweep over subjects, each `Wᵢ` minimizing its loss,
//!    `λ₁‖Wᵢ‖₁`, the acyclicity terms and `(ρ₂/2)‖θᵢⱼ − (Wᵢ − Wⱼ) + Uᵢⱼ‖²` over
//!    its pairs (already-updated neighbours for `j < i`);
//! 2. `θᵢⱼ ← Δᵢⱼ` for capped pairs and the block soft-threshold
//!    `ST(Δᵢⱼ; λ₂/ρ₂)` otherwise, with `Δᵢⱼ = Wᵢ − Wⱼ − Uᵢⱼ`;
//! 3. `αᵢ ← αᵢ + ρ₁ h(Wᵢ)` and `Uᵢⱼ ← Uᵢⱼ + θᵢⱼ − (Wᵢ − Wⱼ)`;
//! 4. `ρ₁ ← η ρ₁` when the total `h` did not shrink by the factor `ξ`.
//!
//! With [`Hyperparams::upper_triangular_mode`] every `Wᵢ` is confined to the
//! strict upper triangle, the acyclicity terms are dropped and each DC
//! subproblem becomes convex.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxopt::{minimize_l1_smooth, BoxOptions, EdgeMask};
use crate::matfun::{acyclicity_h, acyclicity_with_grad};
use crate::sem::{QuadLoss, SubjectData};
use crate::single_dag::{l1_norm, zero_dust};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub rho1_init: f64,
    pub rho2: f64,
    pub eta_rho1: f64,
    pub xi: f64,
    /// Relative tolerance on successive surrogate values.
    pub eps_out: f64,
    pub admm_primal_tol: f64,
    pub admm_dual_tol: f64,
    pub max_dc_iter: usize,
    pub max_admm_iter: usize,
    pub upper_triangular_mode: bool,
    /// Acyclicity feasibility tolerance.
    pub h_tol: f64,
    pub rho1_max: f64,
    /// Options for every `W` subproblem, including initialization.
    pub inner: BoxOptions,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda1: 1e-2,
            lambda2: 1e-3,
            tau: 0.4,
            rho1_init: 0.1,
            rho2: 0.05,
            eta_rho1: 10.0,
            xi: 0.25,
            eps_out: 1e-4,
            admm_primal_tol: 1e-4,
            admm_dual_tol: 1e-4,
            max_dc_iter: 30,
            max_admm_iter: 200,
            upper_triangular_mode: false,
            h_tol: 1e-8,
            rho1_max: 1e16,
            inner: BoxOptions::default(),
        }
    }
}

impl Hyperparams {
    pub fn new(lambda1: f64, lambda2: f64, tau: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let penalties = [self.lambda1, self.lambda2, self.rho1_init, self.rho2];
        if penalties.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("penalty parameters must be finite and nonnegative"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau must be positive"));
        }
        if !(self.eta_rho1 > 1.0) {
            return Err(Error::invalid("eta_rho1 must exceed 1"));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::invalid("xi must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn mask(&self) -> EdgeMask {
        if self.upper_triangular_mode {
            EdgeMask::StrictUpper
        } else {
            EdgeMask::NoSelfLoops
        }
    }
}

/// Auxiliary difference and scaled dual for one ordered pair `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub theta: Matrix,
    pub dual: Matrix,
}

/// Dense index of the pair `(i, j)`, `i < j < n`, in lexicographic order.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// All pairs `(i, j)` with `i < j < n` in [`pair_index`] order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitState {
    pub w: Vec<Matrix>,
    /// Pair states in [`pair_index`] order.
    pub pairs: Vec<PairState>,
    pub alpha: Vec<f64>,
    pub rho1: f64,
    /// Per pair: was `‖θᵢⱼ‖_F ≥ τ` at the previous DC iterate.
    pub capped: Vec<bool>,
    pub surrogate_value: f64,
}

impl FitState {
    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn d(&self) -> usize {
        self.w.first().map_or(0, Matrix::nrows)
    }

    pub fn pair(&self, i: usize, j: usize) -> &PairState {
        &self.pairs[pair_index(self.n(), i, j)]
    }

    pub fn pair_mut(&mut self, i: usize, j: usize) -> &mut PairState {
        let n = self.n();
        &mut self.pairs[pair_index(n, i, j)]
    }

    pub fn is_capped(&self, i: usize, j: usize) -> bool {
        self.capped[pair_index(self.n(), i, j)]
    }

    /// Largest consensus residual `max ‖θᵢⱼ − (Wᵢ − Wⱼ)‖_F`.
    pub fn max_consensus_residual(&self) -> f64 {
        pairs(self.n())
            .map(|(i, j)| (&self.pair(i, j).theta - (&self.w[i] - &self.w[j])).norm())
            .fold(0.0, f64::max)
    }

    /// Indicator map computed from the current `θ`.
    pub fn current_indicator(&self, tau: f64) -> Vec<bool> {
        self.pairs.iter().map(|p| p.theta.norm() >= tau).collect()
    }
}

/// One ADMM iteration's diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub outer: usize,
    pub inner: usize,
    pub surrogate: f64,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub max_h: f64,
    pub rho1: f64,
}

/// One DC iteration's summary; `outer = 0` describes the initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcRecord {
    pub outer: usize,
    pub surrogate: f64,
    pub objective: f64,
    pub admm_iterations: usize,
    pub admm_converged: bool,
    /// Pairs whose indicator differs from the one used in this iteration.
    pub indicator_changes: usize,
    pub capped_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    /// The DC loop hit `max_dc_iter`.
    MaxDcIterations,
    /// The DC loop stopped but the final ADMM solve hit `max_admm_iter`.
    AdmmNotConverged,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitTrace {
    pub inner: Vec<TraceRecord>,
    pub outer: Vec<DcRecord>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: FitState,
    pub trace: FitTrace,
    pub status: FitStatus,
}

/// Truncated lasso penalty `min(|β|, τ)`.
pub fn tlp(beta: f64, tau: f64) -> f64 {
    beta.abs().min(tau)
}

/// Block soft-threshold `(‖Δ‖ − γ)₊ Δ / ‖Δ‖`.
pub fn block_soft_threshold(delta: &Matrix, gamma: f64) -> Matrix {
    let norm = delta.norm();
    if norm <= gamma {
        Matrix::zeros(delta.nrows(), delta.ncols())
    } else {
        delta * (1.0 - gamma / norm)
    }
}

fn check_data(data: &[SubjectData]) -> Result<usize> {
    let first = data.first().ok_or_else(|| Error::invalid("no subjects"))?;
    let d = first.d();
    if let Some(bad) = data.iter().find(|s| s.d() != d) {
        return Err(Error::invalid(format!(
            "subject {} has d = {}, expected {d}",
            bad.id(),
            bad.d()
        )));
    }
    Ok(d)
}

fn check_state(state: &FitState, data: &[SubjectData]) -> Result<()> {
    let n = data.len();
    let d = check_data(data)?;
    if state.n() != n || state.d() != d || state.pairs.len() != n * (n - 1) / 2 {
        return Err(Error::invalid("fit state does not match the data"));
    }
    Ok(())
}

fn data_terms(losses: &[QuadLoss], state: &FitState, lambda1: f64) -> f64 {
    losses
        .iter()
        .zip(&state.w)
        .map(|(loss, w)| loss.value_unchecked(w) + lambda1 * l1_norm(w))
        .sum()
}

fn losses_of(data: &[SubjectData]) -> Vec<QuadLoss> {
    data.iter().map(QuadLoss::from_subject).collect()
}

fn full_objective_with(losses: &[QuadLoss], state: &FitState, hypers: &Hyperparams) -> f64 {
    let fusion: f64 = state
        .pairs
        .iter()
        .map(|p| tlp(p.theta.norm(), hypers.tau))
        .sum();
    data_terms(losses, state, hypers.lambda1) + hypers.lambda2 * fusion
}

fn surrogate_with(losses: &[QuadLoss], state: &FitState, hypers: &Hyperparams) -> f64 {
    let fusion: f64 = state
        .pairs
        .iter()
        .zip(&state.capped)
        .map(|(p, &capped)| if capped { hypers.tau } else { p.theta.norm() })
        .sum();
    data_terms(losses, state, hypers.lambda1) + hypers.lambda2 * fusion
}

/// Penalized objective `F(W, θ)`, ignoring constraint residuals.
pub fn full_objective(state: &FitState, data: &[SubjectData], hypers: &Hyperparams) -> Result<f64> {
    check_state(state, data)?;
    Ok(full_objective_with(&losses_of(data), state, hypers))
}

/// DC surrogate `F̄(W, θ)` under the state's frozen indicator map.
pub fn surrogate_objective(
    state: &FitState,
    data: &[SubjectData],
    hypers: &Hyperparams,
) -> Result<f64> {
    check_state(state, data)?;
    Ok(surrogate_with(&losses_of(data), state, hypers))
}

fn w_update_with(
    i: usize,
    loss: &QuadLoss,
    state: &FitState,
    hypers: &Hyperparams,
) -> Result<Matrix> {
    let n = state.n();
    let d = state.d();
    // Σₖ ‖Wᵢ − Tₖ‖² over the pairs touching i, with Tₖ the consensus target.
    let mut target_sum = Matrix::zeros(d, d);
    let mut target_sq = 0.0;
    for j in 0..n {
        if j == i {
            continue;
        }
        let target = if i < j {
            let p = state.pair(i, j);
            &p.theta + &state.w[j] + &p.dual
        } else {
            let p = state.pair(j, i);
            &state.w[j] - &p.theta - &p.dual
        };
        target_sq += target.norm_squared();
        target_sum += target;
    }
    let others = (n - 1) as f64;
    let rho2 = hypers.rho2;
    let alpha = state.alpha[i];
    let rho1 = state.rho1;
    let general = !hypers.upper_triangular_mode;

    let smooth = |w: &Matrix| -> Result<(f64, Matrix)> {
        let (mut value, mut grad) = loss.value_grad_unchecked(w);
        if general {
            let (h, gh) = acyclicity_with_grad(w)?;
            value += alpha * h + 0.5 * rho1 * h * h;
            grad += gh * (alpha + rho1 * h);
        }
        if n > 1 && rho2 > 0.0 {
            value += 0.5
                * rho2
                * (others * w.norm_squared() - 2.0 * w.dot(&target_sum) + target_sq);
            grad += (w * others - &target_sum) * rho2;
        }
        Ok((value, grad))
    };
    let fit = minimize_l1_smooth(smooth, hypers.lambda1, d, &state.w[i], hypers.mask(), &hypers.inner)?;
    Ok(fit.w)
}

/// Minimizer of subject `i`'s ADMM subproblem given the current state.
///
/// Neighbours `j < i` are expected to hold this sweep's values already.
pub fn w_update(
    i: usize,
    state: &FitState,
    data: &[SubjectData],
    hypers: &Hyperparams,
) -> Result<Matrix> {
    check_state(state, data)?;
    if i >= state.n() {
        return Err(Error::invalid(format!("subject index {i} out of range")));
    }
    w_update_with(i, &data[i].loss(), state, hypers)
}

/// Exact minimizer of the θ-block for pair `(i, j)`.
pub fn theta_update(i: usize, j: usize, state: &FitState, hypers: &Hyperparams) -> Matrix {
    let pair = state.pair(i, j);
    let delta = &state.w[i] - &state.w[j] - &pair.dual;
    theta_prox(&delta, state.is_capped(i, j), hypers.lambda2, hypers.rho2)
}

/// `argmin_θ pen(θ) + (ρ₂/2)‖θ − Δ‖²` where `pen` is `λ₂‖θ‖_F` for an
/// uncapped pair and constant for a capped one.
pub fn theta_prox(delta: &Matrix, capped: bool, lambda2: f64, rho2: f64) -> Matrix {
    if capped || lambda2 == 0.0 {
        return delta.clone();
    }
    if rho2 == 0.0 {
        return Matrix::zeros(delta.nrows(), delta.ncols());
    }
    block_soft_threshold(delta, lambda2 / rho2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualStep {
    /// `max ‖θᵢⱼ − (Wᵢ − Wⱼ)‖_F` before the update.
    pub primal_residual: f64,
    /// `h(Wᵢ)` per subject.
    pub h: Vec<f64>,
}

/// Advance `α` (general mode only) and the scaled consensus duals.
pub fn dual_update(state: &mut FitState, hypers: &Hyperparams) -> Result<DualStep> {
    let n = state.n();
    let h = if hypers.upper_triangular_mode {
        vec![0.0; n]
    } else {
        state.w.iter().map(acyclicity_h).collect::<Result<Vec<_>>>()?
    };
    if !hypers.upper_triangular_mode {
        for (a, hi) in state.alpha.iter_mut().zip(&h) {
            *a += state.rho1 * hi;
        }
    }
    let mut primal = 0.0f64;
    for (i, j) in pairs(n) {
        let resid = &state.pair(i, j).theta - (&state.w[i] - &state.w[j]);
        primal = primal.max(resid.norm());
        state.pair_mut(i, j).dual += resid;
    }
    Ok(DualStep {
        primal_residual: primal,
        h,
    })
}

/// Multiply `ρ₁` by `η` when `h_new > ξ h_old`. Already-feasible iterates
/// (`h_new ≤ h_tol`) and a saturated `ρ₁` never escalate. Returns whether
/// `ρ₁` changed.
pub fn adapt_rho1(h_new: f64, h_old: f64, state: &mut FitState, hypers: &Hyperparams) -> bool {
    if h_new > hypers.xi * h_old && h_new > hypers.h_tol && state.rho1 < hypers.rho1_max {
        state.rho1 = (state.rho1 * hypers.eta_rho1).min(hypers.rho1_max);
        true
    } else {
        false
    }
}

fn primal_sweep_with(losses: &[QuadLoss], state: &mut FitState, hypers: &Hyperparams) -> Result<f64> {
    for (i, loss) in losses.iter().enumerate() {
        let updated = w_update_with(i, loss, state, hypers)?;
        state.w[i] = updated;
    }
    let mut step = 0.0f64;
    for (i, j) in pairs(state.n()) {
        let theta = theta_update(i, j, state, hypers);
        let pair = state.pair_mut(i, j);
        step = step.max((&theta - &pair.theta).norm());
        pair.theta = theta;
    }
    Ok(hypers.rho2 * step)
}

/// Gauss-Seidel `W` sweep in ascending subject order followed by the `θ`
/// sweep, duals untouched. Returns the dual residual `ρ₂ max ‖Δθᵢⱼ‖_F`.
pub fn primal_sweep(state: &mut FitState, data: &[SubjectData], hypers: &Hyperparams) -> Result<f64> {
    hypers.validate()?;
    check_state(state, data)?;
    primal_sweep_with(&losses_of(data), state, hypers)
}

/// Scaled-form augmented Lagrangian of the current DC surrogate:
/// `F̄ + Σ αᵢh(Wᵢ) + (ρ₁/2)h(Wᵢ)² + (ρ₂/2) Σ (‖θᵢⱼ − (Wᵢ − Wⱼ) + Uᵢⱼ‖² − ‖Uᵢⱼ‖²)`.
pub fn augmented_lagrangian(state: &FitState, data: &[SubjectData], hypers: &Hyperparams) -> Result<f64> {
    check_state(state, data)?;
    let mut value = surrogate_with(&losses_of(data), state, hypers);
    if !hypers.upper_triangular_mode {
        for (w, a) in state.w.iter().zip(&state.alpha) {
            let h = acyclicity_h(w)?;
            value += a * h + 0.5 * state.rho1 * h * h;
        }
    }
    for ((i, j), p) in pairs(state.n()).zip(&state.pairs) {
        let r = &p.theta - (&state.w[i] - &state.w[j]) + &p.dual;
        value += 0.5 * hypers.rho2 * (r.norm_squared() - p.dual.norm_squared());
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOutcome {
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub max_h: f64,
}

fn admm_solve_with(
    losses: &[QuadLoss],
    state: &mut FitState,
    hypers: &Hyperparams,
    outer: usize,
    trace: &mut Vec<TraceRecord>,
) -> Result<AdmmOutcome> {
    let general = !hypers.upper_triangular_mode;
    let mut h_old: f64 = if general {
        state.w.iter().map(acyclicity_h).sum::<Result<f64>>()?
    } else {
        0.0
    };
    let mut outcome = AdmmOutcome {
        iterations: 0,
        converged: false,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        max_h: f64::INFINITY,
    };

    for k in 1..=hypers.max_admm_iter {
        let dual_residual = primal_sweep_with(losses, state, hypers)?;
        let step = dual_update(state, hypers)?;
        let h_total: f64 = step.h.iter().sum();
        let max_h = step.h.iter().copied().fold(0.0, f64::max);
        if general {
            adapt_rho1(h_total, h_old, state, hypers);
            h_old = h_total;
        }

        trace.push(TraceRecord {
            outer,
            inner: k,
            surrogate: surrogate_with(losses, state, hypers),
            objective: full_objective_with(losses, state, hypers),
            primal_residual: step.primal_residual,
            dual_residual,
            max_h,
            rho1: state.rho1,
        });
        outcome = AdmmOutcome {
            iterations: k,
            converged: false,
            primal_residual: step.primal_residual,
            dual_residual,
            max_h,
        };
        if step.primal_residual <= hypers.admm_primal_tol
            && dual_residual <= hypers.admm_dual_tol
            && (!general || max_h <= hypers.h_tol)
        {
            outcome.converged = true;
            break;
        }
    }
    Ok(outcome)
}

/// Run ADMM on the current DC surrogate until the residual tests pass or
/// `max_admm_iter` is reached. The indicator map is left untouched.
pub fn admm_solve(
    state: &mut FitState,
    data: &[SubjectData],
    hypers: &Hyperparams,
    trace: &mut Vec<TraceRecord>,
) -> Result<AdmmOutcome> {
    hypers.validate()?;
    check_state(state, data)?;
    admm_solve_with(&losses_of(data), state, hypers, 0, trace)
}

/// Per-subject ℓ₁ fits with acyclicity and consensus switched off, `θ⁰ᵢⱼ =
/// W⁰ᵢ − W⁰ⱼ`, zero duals, and the indicator map of `θ⁰`.
pub fn init_estimates(data: &[SubjectData], hypers: &Hyperparams) -> Result<FitState> {
    hypers.validate()?;
    let d = check_data(data)?;
    let n = data.len();
    let mask = hypers.mask();
    let w = data
        .par_iter()
        .map(|s| {
            let loss = s.loss();
            let smooth = |w: &Matrix| Ok(loss.value_grad_unchecked(w));
            minimize_l1_smooth(smooth, hypers.lambda1, d, &Matrix::zeros(d, d), mask, &hypers.inner)
                .map(|fit| fit.w)
        })
        .collect::<Result<Vec<_>>>()?;
    let pair_states: Vec<PairState> = pairs(n)
        .map(|(i, j)| PairState {
            theta: &w[i] - &w[j],
            dual: Matrix::zeros(d, d),
        })
        .collect();
    let mut state = FitState {
        w,
        pairs: pair_states,
        alpha: vec![0.0; n],
        rho1: hypers.rho1_init,
        capped: Vec::new(),
        surrogate_value: 0.0,
    };
    state.capped = state.current_indicator(hypers.tau);
    state.surrogate_value = surrogate_with(&losses_of(data), &state, hypers);
    Ok(state)
}

/// Full DC/ADMM fit from the default initialization.
pub fn dc_admm_fit(data: &[SubjectData], hypers: &Hyperparams) -> Result<FitResult> {
    let state = init_estimates(data, hypers)?;
    dc_admm_fit_from(state, data, hypers)
}

/// DC/ADMM fit starting from a given state (its indicator map is used for the
/// first DC iteration).
pub fn dc_admm_fit_from(
    mut state: FitState,
    data: &[SubjectData],
    hypers: &Hyperparams,
) -> Result<FitResult> {
    hypers.validate()?;
    check_state(&state, data)?;
    let losses = losses_of(data);
    let mut trace = FitTrace::default();

    let mut previous = surrogate_with(&losses, &state, hypers);
    state.surrogate_value = previous;
    trace.outer.push(DcRecord {
        outer: 0,
        surrogate: previous,
        objective: full_objective_with(&losses, &state, hypers),
        admm_iterations: 0,
        admm_converged: true,
        indicator_changes: 0,
        capped_pairs: state.capped.iter().filter(|c| **c).count(),
    });

    let mut status = FitStatus::MaxDcIterations;
    for s in 1..=hypers.max_dc_iter {
        let outcome = admm_solve_with(&losses, &mut state, hypers, s, &mut trace.inner)?;
        let surrogate = surrogate_with(&losses, &state, hypers);
        state.surrogate_value = surrogate;
        let next = state.current_indicator(hypers.tau);
        let changes = next.iter().zip(&state.capped).filter(|(a, b)| a != b).count();
        trace.outer.push(DcRecord {
            outer: s,
            surrogate,
            objective: full_objective_with(&losses, &state, hypers),
            admm_iterations: outcome.iterations,
            admm_converged: outcome.converged,
            indicator_changes: changes,
            capped_pairs: state.capped.iter().filter(|c| **c).count(),
        });
        log::debug!(
            "dc iter {s}: surrogate {surrogate:.6e}, admm {} its (converged {}), {changes} indicator changes",
            outcome.iterations,
            outcome.converged
        );
        let settled = (surrogate - previous).abs() / previous.abs().max(1.0) <= hypers.eps_out;
        if settled {
            status = if outcome.converged {
                FitStatus::Converged
            } else {
                FitStatus::AdmmNotConverged
            };
            break;
        }
        previous = surrogate;
        state.capped = next;
    }

    for w in &mut state.w {
        zero_dust(w);
    }
    Ok(FitResult {
        state,
        trace,
        status,
    })
}
