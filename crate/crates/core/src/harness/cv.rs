use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_fit, consensus_matrices};
use crate::dc_admm::{dc_admm_fit, FitStatus, Hyperparams};
use crate::metrics::validation_recon_error;
use crate::sem::SubjectData;
use crate::single_dag::{run_baseline, BaselineKind, SingleFitOptions};
use crate::{Error, Result};

/// Training and validation rows of every subject for one fold.
#[derive(Debug, Clone)]
pub struct Fold {
    pub train: Vec<SubjectData>,
    pub val: Vec<SubjectData>,
}

/// Split each subject's rows into `k` folds: rows are shuffled per subject
/// with a generator seeded from `seed`, then cut into contiguous blocks whose
/// sizes differ by at most one.
pub fn rowwise_kfold(subjects: &[SubjectData], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if let Some(s) = subjects.iter().find(|s| s.m() < k) {
        return Err(Error::invalid(format!(
            "subject {} has {} rows, fewer than {k} folds",
            s.id(),
            s.m()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Fold> = (0..k)
        .map(|_| Fold {
            train: Vec::with_capacity(subjects.len()),
            val: Vec::with_capacity(subjects.len()),
        })
        .collect();
    for s in subjects {
        let m = s.m();
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        for (f, fold) in folds.iter_mut().enumerate() {
            let (lo, hi) = (f * m / k, (f + 1) * m / k);
            let mut val_rows = order[lo..hi].to_vec();
            let mut train_rows: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
            val_rows.sort_unstable();
            train_rows.sort_unstable();
            fold.train.push(s.select_rows(&train_rows)?);
            fold.val.push(s.select_rows(&val_rows)?);
        }
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda1_values: Vec<f64>,
    pub lambda2_values: Vec<f64>,
    pub tau_values: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_folds() -> usize {
    3
}

impl GridSpec {
    /// The standard 4 × 4 × 4 grid.
    pub fn standard(seed: u64) -> Self {
        Self {
            lambda1_values: vec![1e-4, 1e-3, 1e-2, 1e-1],
            lambda2_values: vec![1e-5, 1e-4, 1e-3, 1e-2],
            tau_values: vec![0.05, 0.1, 0.4, 0.7],
            folds: default_folds(),
            seed,
        }
    }

    pub fn single(lambda1: f64, lambda2: f64, tau: f64, seed: u64) -> Self {
        Self {
            lambda1_values: vec![lambda1],
            lambda2_values: vec![lambda2],
            tau_values: vec![tau],
            folds: default_folds(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1_values.is_empty() || self.lambda2_values.is_empty() || self.tau_values.is_empty() {
            return Err(Error::invalid("grid value lists must be nonempty"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("grid needs at least 2 folds"));
        }
        Ok(())
    }

    /// Cells in `λ₁`-major order.
    pub fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &l1 in &self.lambda1_values {
            for &l2 in &self.lambda2_values {
                for &tau in &self.tau_values {
                    out.push((l1, l2, tau));
                }
            }
        }
        out
    }
}

/// Cross-validation result of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    /// Mean validation reconstruction error under the estimated clusters.
    pub mean_loss: Option<f64>,
    /// Same held-out rows, consensus built from the true labels.
    pub mean_loss_truth: Option<f64>,
    pub fold_losses: Vec<f64>,
    pub converged_folds: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best: Hyperparams,
    pub best_cell: CvCell,
    pub table: Vec<CvCell>,
}

struct FoldEval {
    est: f64,
    truth: Option<f64>,
    converged: bool,
}

fn eval_fold(
    fold: &Fold,
    hypers: &Hyperparams,
    true_labels: Option<&[usize]>,
    delta: f64,
) -> Result<FoldEval> {
    let fit = dc_admm_fit(&fold.train, hypers)?;
    let clusters = cluster_fit(&fit.state, hypers.tau, delta)?;
    let est = validation_recon_error(&fold.val, &clusters.labels, &clusters.consensus)?;
    let truth = match true_labels {
        Some(labels) => {
            let consensus = consensus_matrices(labels, &fit.state.w, delta)?;
            Some(validation_recon_error(&fold.val, labels, &consensus)?)
        }
        None => None,
    };
    Ok(FoldEval {
        est,
        truth,
        converged: fit.status == FitStatus::Converged,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Ranking used for selection: lowest loss, then larger `λ₂`, larger `λ₁`,
/// smaller `τ`.
fn better(a: &CvCell, b: &CvCell) -> bool {
    let (la, lb) = (a.mean_loss.unwrap_or(f64::INFINITY), b.mean_loss.unwrap_or(f64::INFINITY));
    if la != lb {
        return la < lb;
    }
    if a.lambda2 != b.lambda2 {
        return a.lambda2 > b.lambda2;
    }
    if a.lambda1 != b.lambda1 {
        return a.lambda1 > b.lambda1;
    }
    a.tau < b.tau
}

/// Evaluate every grid cell by k-fold row-wise cross-validation and pick the
/// cell with the lowest mean validation reconstruction error. Cells whose
/// fits fail are recorded with their error and skipped.
pub fn grid_search(
    subjects: &[SubjectData],
    true_labels: Option<&[usize]>,
    grid: &GridSpec,
    base: &Hyperparams,
    delta: f64,
) -> Result<GridOutcome> {
    grid.validate()?;
    let folds = rowwise_kfold(subjects, grid.folds, grid.seed)?;
    let cells = grid.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let results: Vec<Result<FoldEval>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (lambda1, lambda2, tau) = cells[c];
            let hypers = Hyperparams {
                lambda1,
                lambda2,
                tau,
                ..*base
            };
            eval_fold(&folds[f], &hypers, true_labels, delta)
        })
        .collect();

    let mut table = Vec::with_capacity(cells.len());
    let mut results = results.into_iter();
    for &(lambda1, lambda2, tau) in &cells {
        let mut cell = CvCell {
            lambda1,
            lambda2,
            tau,
            mean_loss: None,
            mean_loss_truth: None,
            fold_losses: Vec::new(),
            converged_folds: 0,
            error: None,
        };
        let mut truth = Vec::new();
        for r in results.by_ref().take(folds.len()) {
            match r {
                Ok(e) if e.est.is_finite() => {
                    cell.fold_losses.push(e.est);
                    truth.extend(e.truth);
                    cell.converged_folds += usize::from(e.converged);
                }
                Ok(_) => {
                    cell.error.get_or_insert_with(|| "non-finite validation loss".to_string());
                }
                Err(err) => {
                    cell.error.get_or_insert_with(|| err.to_string());
                }
            }
        }
        if cell.error.is_none() {
            cell.mean_loss = Some(mean(&cell.fold_losses));
            if truth.len() == folds.len() {
                cell.mean_loss_truth = Some(mean(&truth));
            }
        } else {
            log::warn!("grid cell ({lambda1}, {lambda2}, {tau}) failed: {:?}", cell.error);
        }
        table.push(cell);
    }

    let best_cell = table
        .iter()
        .filter(|c| c.mean_loss.is_some())
        .fold(None::<&CvCell>, |acc, c| match acc {
            Some(b) if !better(c, b) => Some(b),
            _ => Some(c),
        })
        .cloned()
        .ok_or_else(|| Error::numerical("every grid cell failed"))?;
    Ok(GridOutcome {
        best: Hyperparams {
            lambda1: best_cell.lambda1,
            lambda2: best_cell.lambda2,
            tau: best_cell.tau,
            ..*base
        },
        best_cell,
        table,
    })
}

/// Pick a baseline's `λ₁` by k-fold validation reconstruction error using each
/// subject's own estimate. Ties go to the larger `λ₁`.
pub fn select_baseline_lambda1(
    kind: BaselineKind,
    subjects: &[SubjectData],
    true_labels: Option<&[usize]>,
    lambda1_values: &[f64],
    folds: usize,
    seed: u64,
    base: &SingleFitOptions,
) -> Result<f64> {
    match lambda1_values {
        [] => return Err(Error::invalid("no lambda1 candidates")),
        [only] => return Ok(*only),
        _ => {}
    }
    let splits = rowwise_kfold(subjects, folds, seed)?;
    let scores: Vec<Option<f64>> = lambda1_values
        .par_iter()
        .map(|&lambda1| {
            let opts = SingleFitOptions { lambda1, ..*base };
            let mut losses = Vec::with_capacity(splits.len());
            for fold in &splits {
                let fit = run_baseline(kind, &fold.train, true_labels, &opts).ok()?;
                let labels: Vec<usize> = (0..fold.val.len()).collect();
                losses.push(validation_recon_error(&fold.val, &labels, &fit.per_subject).ok()?);
            }
            Some(mean(&losses))
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for (&l1, score) in lambda1_values.iter().zip(scores) {
        let Some(s) = score.filter(|s| s.is_finite()) else { continue };
        if best.is_none_or(|(bs, bl)| s < bs || (s == bs && l1 > bl)) {
            best = Some((s, l1));
        }
    }
    best.map(|(_, l1)| l1)
        .ok_or_else(|| Error::numerical(format!("every lambda1 candidate failed for {}", kind.name())))
}
