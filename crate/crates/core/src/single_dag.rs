//! Single-DAG learner and the three reference baselines.
//!
//! The learner minimizes a (possibly pooled) reconstruction loss plus
//! `λ₁‖W‖₁` subject to `h(W) = 0` with an augmented Lagrangian: each outer step
//! solves `loss + α h + (ρ/2) h² + λ₁‖W‖₁` with [`minimize_l1_smooth`],
//! escalating `ρ` until `h` shrinks by the progress factor, then takes the dual
//! step `α ← α + ρ h`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxopt::{minimize_l1_smooth, BoxOptions, EdgeMask};
use crate::datagen::Scenario;
use crate::matfun::{acyclicity_h, acyclicity_with_grad};
use crate::sem::{QuadLoss, SubjectData};
use crate::{Error, Matrix, Result};

/// Entries below this magnitude are zeroed on output.
pub const DUST: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SingleFitOptions {
    pub lambda1: f64,
    pub rho_init: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    pub h_tol: f64,
    /// Required shrink factor of `h` between outer iterations.
    pub progress: f64,
    /// Relative objective change required, together with `h ≤ h_tol`, to stop.
    pub obj_tol: f64,
    pub max_outer: usize,
    pub alpha_init: f64,
    pub inner: BoxOptions,
}

impl Default for SingleFitOptions {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            rho_init: 1.0,
            rho_growth: 10.0,
            rho_max: 1e16,
            h_tol: 1e-8,
            progress: 0.25,
            obj_tol: 1e-6,
            max_outer: 100,
            alpha_init: 0.0,
            inner: BoxOptions::default(),
        }
    }
}

impl SingleFitOptions {
    pub fn with_lambda1(lambda1: f64) -> Self {
        Self {
            lambda1,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho_growth > 1.0) {
            return Err(Error::invalid("rho_growth must exceed 1"));
        }
        if !(self.h_tol > 0.0) {
            return Err(Error::invalid("h_tol must be positive"));
        }
        if !(self.lambda1 >= 0.0) || !(self.rho_init > 0.0) {
            return Err(Error::invalid("lambda1 must be >= 0 and rho_init > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// The penalty parameter exceeded its cap before `h` reached tolerance.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct SingleFit {
    pub w: Matrix,
    pub h: f64,
    pub status: FitStatus,
    pub outer_iterations: usize,
    pub rho: f64,
    pub alpha: f64,
    /// Number of times `ρ` was multiplied by `rho_growth`.
    pub escalations: usize,
    /// `loss + λ₁‖W‖₁` at the returned matrix.
    pub objective: f64,
}

/// `loss(W) + α h(W) + (ρ/2) h(W)²` with its gradient.
pub fn augmented_smooth(
    loss: &QuadLoss,
    alpha: f64,
    rho: f64,
) -> impl FnMut(&Matrix) -> Result<(f64, Matrix)> + '_ {
    move |w: &Matrix| {
        let (lv, mut g) = loss.value_grad_unchecked(w);
        let (h, gh) = acyclicity_with_grad(w)?;
        g += gh * (alpha + rho * h);
        Ok((lv + alpha * h + 0.5 * rho * h * h, g))
    }
}

pub fn l1_norm(w: &Matrix) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

pub(crate) fn zero_dust(w: &mut Matrix) {
    w.iter_mut().filter(|v| v.abs() < DUST).for_each(|v| *v = 0.0);
}

/// Fit one DAG to the pooled loss `Σᵢ (1/2mᵢ)‖Xᵢ − XᵢW‖²_F + λ₁‖W‖₁`.
pub fn fit_single_dag(data: &[SubjectData], opts: &SingleFitOptions) -> Result<SingleFit> {
    let loss = QuadLoss::pooled(data)?;
    fit_single_dag_loss(&loss, opts)
}

pub fn fit_single_dag_loss(loss: &QuadLoss, opts: &SingleFitOptions) -> Result<SingleFit> {
    opts.validate()?;
    let d = loss.d();
    let mut w = Matrix::zeros(d, d);
    let mut alpha = opts.alpha_init;
    let mut rho = opts.rho_init;
    let mut h_prev = f64::INFINITY;
    let mut prev_objective: Option<f64> = None;
    let mut status = FitStatus::MaxIterations;
    let mut outer = 0;
    let mut escalations = 0;

    'outer: while outer < opts.max_outer {
        outer += 1;
        let h = loop {
            let fit = minimize_l1_smooth(
                augmented_smooth(loss, alpha, rho),
                opts.lambda1,
                d,
                &w,
                EdgeMask::NoSelfLoops,
                &opts.inner,
            )?;
            let h_new = acyclicity_h(&fit.w)?;
            if h_new > opts.progress * h_prev && h_new > opts.h_tol {
                rho *= opts.rho_growth;
                escalations += 1;
                if rho > opts.rho_max {
                    w = fit.w;
                    status = FitStatus::Diverged;
                    break 'outer;
                }
            } else {
                w = fit.w;
                break h_new;
            }
        };
        alpha += rho * h;
        h_prev = h;
        let objective = loss.value_unchecked(&w) + opts.lambda1 * l1_norm(&w);
        let settled = prev_objective.is_some_and(|p| {
            (objective - p).abs() / p.abs().max(1.0) < opts.obj_tol
        });
        if h <= opts.h_tol && settled {
            status = FitStatus::Converged;
            break;
        }
        prev_objective = Some(objective);
    }

    zero_dust(&mut w);
    if d == 1 {
        status = FitStatus::Converged;
    }
    let objective = loss.value_unchecked(&w) + opts.lambda1 * l1_norm(&w);
    Ok(SingleFit {
        h: acyclicity_h(&w)?,
        w,
        status,
        outer_iterations: outer,
        rho,
        alpha,
        escalations,
        objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// One DAG for all subjects pooled together.
    Population,
    /// One DAG per subject.
    Individual,
    /// One DAG per true cluster, pooling that cluster's subjects.
    Oracle,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(Self::Population),
            "individual" => Ok(Self::Individual),
            "oracle" => Ok(Self::Oracle),
            other => Err(Error::invalid(format!("unknown baseline kind `{other}`"))),
        }
    }
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Population => "population",
            Self::Individual => "individual",
            Self::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineFit {
    pub kind: BaselineKind,
    /// One matrix per subject, in subject order.
    pub per_subject: Vec<Matrix>,
    /// Status of each underlying fit (one for population, n for individual,
    /// one per cluster for oracle).
    pub statuses: Vec<FitStatus>,
}

pub fn run_baseline(
    kind: BaselineKind,
    subjects: &[SubjectData],
    labels: Option<&[usize]>,
    opts: &SingleFitOptions,
) -> Result<BaselineFit> {
    if subjects.is_empty() {
        return Err(Error::invalid("no subjects"));
    }
    let n = subjects.len();
    let (per_subject, statuses) = match kind {
        BaselineKind::Population => {
            let fit = fit_single_dag(subjects, opts)?;
            (vec![fit.w; n], vec![fit.status])
        }
        BaselineKind::Individual => {
            let fits = subjects
                .par_iter()
                .map(|s| fit_single_dag(std::slice::from_ref(s), opts))
                .collect::<Result<Vec<_>>>()?;
            let statuses = fits.iter().map(|f| f.status).collect();
            (fits.into_iter().map(|f| f.w).collect(), statuses)
        }
        BaselineKind::Oracle => {
            let labels =
                labels.ok_or_else(|| Error::invalid("oracle baseline requires true labels"))?;
            if labels.len() != n {
                return Err(Error::invalid("label count does not match subject count"));
            }
            let clusters = labels.iter().max().map_or(0, |m| m + 1);
            let fits = (0..clusters)
                .into_par_iter()
                .map(|c| {
                    let members: Vec<SubjectData> = subjects
                        .iter()
                        .zip(labels)
                        .filter(|(_, &l)| l == c)
                        .map(|(s, _)| s.clone())
                        .collect();
                    if members.is_empty() {
                        Ok(None)
                    } else {
                        fit_single_dag(&members, opts).map(Some)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let per_subject = labels
                .iter()
                .map(|&l| fits[l].as_ref().expect("label has members").w.clone())
                .collect();
            let statuses = fits.iter().flatten().map(|f| f.status).collect();
            (per_subject, statuses)
        }
    };
    Ok(BaselineFit {
        kind,
        per_subject,
        statuses,
    })
}

pub fn run_baseline_on(
    kind: BaselineKind,
    scenario: &Scenario,
    opts: &SingleFitOptions,
) -> Result<BaselineFit> {
    run_baseline(kind, &scenario.subjects, Some(&scenario.true_labels), opts)
}
