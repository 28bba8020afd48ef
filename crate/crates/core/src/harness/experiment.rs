use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{grid_search, select_baseline_lambda1, CvCell, GridSpec};
use super::io::write_json;
use crate::clustering::{cluster_fit, consensus_matrices, DEFAULT_DELTA};
use crate::datagen::{generate_scenario, Scenario, ScenarioSpec};
use crate::dc_admm::{dc_admm_fit, FitResult, FitStatus, Hyperparams};
use crate::metrics::{ari, homogeneity_completeness, macro_recovery, EdgeMetrics};
use crate::single_dag::{run_baseline, BaselineKind, SingleFitOptions};
use crate::{Error, Matrix, Result};

pub const METHOD_DC_ADMM: &str = "dag-dc-admm";

fn default_reps() -> usize {
    5
}

fn default_methods() -> Vec<BaselineKind> {
    vec![BaselineKind::Population, BaselineKind::Individual, BaselineKind::Oracle]
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

/// Thresholds `0.01, 0.02, …, 0.10`.
pub fn delta_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(to >= from) || !from.is_finite() || !to.is_finite() {
        return Err(Error::invalid("delta range needs finite from <= to and step > 0"));
    }
    let count = ((to - from) / step + 1e-9).floor() as usize;
    // Rounded to 12 places so that 0.01 + 2·0.01 prints as 0.03.
    Ok((0..=count)
        .map(|k| ((from + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub grid: GridSpec,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<BaselineKind>,
    #[serde(default)]
    pub hypers: Hyperparams,
    #[serde(default)]
    pub baseline: SingleFitOptions,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Extra thresholds at which every method is re-scored.
    #[serde(default)]
    pub delta_sweep: Vec<f64>,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioSpec, grid: GridSpec) -> Self {
        Self {
            scenario,
            grid,
            reps: default_reps(),
            methods: default_methods(),
            hypers: Hyperparams::default(),
            baseline: SingleFitOptions::default(),
            delta: default_delta(),
            delta_sweep: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.grid.validate()?;
        self.hypers.validate()?;
        if self.reps == 0 {
            return Err(Error::invalid("reps must be positive"));
        }
        if !(self.delta >= 0.0) || self.delta_sweep.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::invalid("thresholds must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chosen {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub lambda1: f64,
    pub skeleton: EdgeMetrics,
    pub dag: EdgeMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub delta: f64,
    pub skeleton: EdgeMetrics,
    pub dag: EdgeMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepMetrics {
    pub chosen: Chosen,
    pub fit_status: FitStatus,
    pub ari: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub recon_truth: f64,
    pub recon_est: f64,
    pub r_truth: usize,
    pub r_est: usize,
    pub labels: Vec<usize>,
    pub true_labels: Vec<usize>,
    pub methods: Vec<MethodMetrics>,
    pub sweep: Vec<SweepRow>,
    pub cv_table: Vec<CvCell>,
}

impl RepMetrics {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// One repetition; exactly one of `metrics` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub scenario_seed: u64,
    pub metrics: Option<RepMetrics>,
    pub error: Option<String>,
    /// Excluded from `report.json` so reports are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    /// Half-width `1.96 · sd / √reps`.
    pub ci: f64,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> MeanCi {
        let k = values.len();
        if k == 0 {
            return MeanCi { mean: f64::NAN, ci: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / k as f64;
        if k < 2 {
            return MeanCi { mean, ci: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        MeanCi {
            mean,
            ci: 1.96 * var.sqrt() / (k as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSummary {
    pub tpr: MeanCi,
    pub fdr: MeanCi,
    pub tnr: MeanCi,
}

impl EdgeSummary {
    fn of(items: &[EdgeMetrics]) -> Self {
        let pick = |f: fn(&EdgeMetrics) -> f64| MeanCi::of(&items.iter().map(f).collect::<Vec<_>>());
        Self {
            tpr: pick(|m| m.tpr),
            fdr: pick(|m| m.fdr),
            tnr: pick(|m| m.tnr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub skeleton: EdgeSummary,
    pub dag: EdgeSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: String,
    pub delta: f64,
    pub skeleton: EdgeSummary,
    pub dag: EdgeSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub ari: MeanCi,
    pub homogeneity: MeanCi,
    pub completeness: MeanCi,
    pub recon_truth: MeanCi,
    pub recon_est: MeanCi,
    pub r_truth: usize,
    /// Most frequent estimated cluster count (smallest on ties).
    pub r_hat_mode: usize,
    pub methods: Vec<MethodSummary>,
    pub sweep: Vec<SweepSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub records: Vec<RepRecord>,
    pub summary: Summary,
}

impl RunReport {
    pub fn ok_metrics(&self) -> impl Iterator<Item = &RepMetrics> {
        self.records.iter().filter_map(|r| r.metrics.as_ref())
    }
}

/// Estimates of one method, one matrix per subject.
struct MethodEstimate {
    method: String,
    lambda1: f64,
    per_subject: Vec<Matrix>,
}

fn score(
    est: &MethodEstimate,
    scenario: &Scenario,
    delta: f64,
) -> Result<(EdgeMetrics, EdgeMetrics)> {
    macro_recovery(&est.per_subject, &scenario.true_dags, &scenario.true_labels, delta)
}

fn dc_estimate_at(fit: &FitResult, labels: &[usize], delta: f64) -> Result<Vec<Matrix>> {
    let consensus = consensus_matrices(labels, &fit.state.w, delta)?;
    Ok(labels.iter().map(|&l| consensus[l].clone()).collect())
}

fn run_rep(config: &ExperimentConfig, rep: usize) -> Result<RepMetrics> {
    let spec = ScenarioSpec {
        seed: config.scenario.seed.wrapping_add(rep as u64),
        ..config.scenario.clone()
    };
    let scenario = generate_scenario(&spec)?;
    let truth = scenario.true_labels.as_slice();
    let grid = GridSpec {
        seed: config.grid.seed.wrapping_add(rep as u64),
        ..config.grid.clone()
    };

    let cv = grid_search(&scenario.subjects, Some(truth), &grid, &config.hypers, config.delta)?;
    let hypers = cv.best;
    let fit = dc_admm_fit(&scenario.subjects, &hypers)?;
    let clusters = cluster_fit(&fit.state, hypers.tau, config.delta)?;
    let labels = clusters.labels.clone();
    let (homogeneity, completeness) = homogeneity_completeness(truth, &labels)?;
    let ari = if scenario.n() >= 2 { ari(truth, &labels)? } else { 1.0 };

    let mut estimates = vec![MethodEstimate {
        method: METHOD_DC_ADMM.to_string(),
        lambda1: hypers.lambda1,
        per_subject: clusters.per_subject(),
    }];
    for &kind in &config.methods {
        let lambda1 = select_baseline_lambda1(
            kind,
            &scenario.subjects,
            Some(truth),
            &grid.lambda1_values,
            grid.folds,
            grid.seed,
            &config.baseline,
        )?;
        let opts = SingleFitOptions {
            lambda1,
            ..config.baseline
        };
        let fit = run_baseline(kind, &scenario.subjects, Some(truth), &opts)?;
        estimates.push(MethodEstimate {
            method: kind.name().to_string(),
            lambda1,
            per_subject: fit.per_subject,
        });
    }

    let mut methods = Vec::with_capacity(estimates.len());
    for est in &estimates {
        let (skeleton, dag) = score(est, &scenario, config.delta)?;
        methods.push(MethodMetrics {
            method: est.method.clone(),
            lambda1: est.lambda1,
            skeleton,
            dag,
        });
    }

    let mut sweep = Vec::new();
    for &delta in &config.delta_sweep {
        for est in &estimates {
            let scored = if est.method == METHOD_DC_ADMM {
                MethodEstimate {
                    method: est.method.clone(),
                    lambda1: est.lambda1,
                    per_subject: dc_estimate_at(&fit, &labels, delta)?,
                }
            } else {
                MethodEstimate {
                    method: est.method.clone(),
                    lambda1: est.lambda1,
                    per_subject: est.per_subject.clone(),
                }
            };
            let (skeleton, dag) = score(&scored, &scenario, delta)?;
            sweep.push(SweepRow {
                method: est.method.clone(),
                delta,
                skeleton,
                dag,
            });
        }
    }

    let best = &cv.best_cell;
    Ok(RepMetrics {
        chosen: Chosen {
            lambda1: hypers.lambda1,
            lambda2: hypers.lambda2,
            tau: hypers.tau,
        },
        fit_status: fit.status,
        ari,
        homogeneity,
        completeness,
        recon_truth: best.mean_loss_truth.unwrap_or(f64::NAN),
        recon_est: best.mean_loss.unwrap_or(f64::NAN),
        r_truth: scenario.true_dags.len(),
        r_est: clusters.n_clusters(),
        labels,
        true_labels: scenario.true_labels.clone(),
        methods,
        sweep,
        cv_table: cv.table,
    })
}

fn mode(values: &[usize]) -> usize {
    let mut best = (0, 0);
    for &v in values {
        let count = values.iter().filter(|&&x| x == v).count();
        if count > best.1 || (count == best.1 && v < best.0) {
            best = (v, count);
        }
    }
    best.0
}

pub fn summarize(records: &[RepRecord]) -> Summary {
    let ok: Vec<&RepMetrics> = records.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let col = |f: fn(&RepMetrics) -> f64| MeanCi::of(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());

    let mut method_names: Vec<String> = Vec::new();
    for m in ok.iter().flat_map(|r| &r.methods) {
        if !method_names.contains(&m.method) {
            method_names.push(m.method.clone());
        }
    }
    let methods = method_names
        .iter()
        .map(|name| {
            let rows: Vec<&MethodMetrics> = ok.iter().filter_map(|r| r.method(name)).collect();
            MethodSummary {
                method: name.clone(),
                skeleton: EdgeSummary::of(&rows.iter().map(|m| m.skeleton).collect::<Vec<_>>()),
                dag: EdgeSummary::of(&rows.iter().map(|m| m.dag).collect::<Vec<_>>()),
            }
        })
        .collect();

    let mut keys: Vec<(String, f64)> = Vec::new();
    for row in ok.iter().flat_map(|r| &r.sweep) {
        if !keys.iter().any(|(m, d)| *m == row.method && *d == row.delta) {
            keys.push((row.method.clone(), row.delta));
        }
    }
    let sweep = keys
        .into_iter()
        .map(|(method, delta)| {
            let rows: Vec<&SweepRow> = ok
                .iter()
                .flat_map(|r| &r.sweep)
                .filter(|s| s.method == method && s.delta == delta)
                .collect();
            SweepSummary {
                skeleton: EdgeSummary::of(&rows.iter().map(|s| s.skeleton).collect::<Vec<_>>()),
                dag: EdgeSummary::of(&rows.iter().map(|s| s.dag).collect::<Vec<_>>()),
                method,
                delta,
            }
        })
        .collect();

    Summary {
        reps_ok: ok.len(),
        reps_failed: records.len() - ok.len(),
        ari: col(|m| m.ari),
        homogeneity: col(|m| m.homogeneity),
        completeness: col(|m| m.completeness),
        recon_truth: col(|m| m.recon_truth),
        recon_est: col(|m| m.recon_est),
        r_truth: mode(&ok.iter().map(|m| m.r_truth).collect::<Vec<_>>()),
        r_hat_mode: mode(&ok.iter().map(|m| m.r_est).collect::<Vec<_>>()),
        methods,
        sweep,
    }
}

/// Run `reps` independent repetitions of generate → cross-validate → refit →
/// cluster → score. Repetition `r` uses scenario seed `seed + r` and fold seed
/// `grid.seed + r`. Failed repetitions are recorded, not propagated.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let records: Vec<RepRecord> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let start = Instant::now();
            let outcome = run_rep(config, rep);
            let wall_time_secs = start.elapsed().as_secs_f64();
            if let Err(e) = &outcome {
                log::warn!("repetition {rep} failed: {e}");
            }
            RepRecord {
                rep,
                scenario_seed: config.scenario.seed.wrapping_add(rep as u64),
                error: outcome.as_ref().err().map(ToString::to_string),
                metrics: outcome.ok(),
                wall_time_secs,
            }
        })
        .collect();
    let summary = summarize(&records);
    Ok(RunReport {
        config: config.clone(),
        records,
        summary,
    })
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

const EDGE_COLUMNS: [&str; 12] = [
    "skel_tpr", "skel_tpr_ci", "skel_fdr", "skel_fdr_ci", "skel_tnr", "skel_tnr_ci", "dag_tpr",
    "dag_tpr_ci", "dag_fdr", "dag_fdr_ci", "dag_tnr", "dag_tnr_ci",
];

fn edge_cells(skel: &EdgeSummary, dag: &EdgeSummary) -> Vec<String> {
    [skel.tpr, skel.fdr, skel.tnr, dag.tpr, dag.fdr, dag.tnr]
        .iter()
        .flat_map(|m| [fmt(m.mean), fmt(m.ci)])
        .collect()
}

/// Write `report.json`, `tables/clustering.csv`, `tables/recovery.csv`,
/// `tables/delta_sweep.csv`, `tables/per_rep.csv` and `tables/timing.csv`.
/// Everything except the timing table is a deterministic function of the
/// configuration.
pub fn write_report(dir: &Path, report: &RunReport) -> Result<()> {
    let tables = dir.join("tables");
    std::fs::create_dir_all(&tables)?;
    write_json(&dir.join("report.json"), report)?;
    let s = &report.summary;
    let sigma = report.config.scenario.sigma;

    table(
        &tables.join("clustering.csv"),
        &[
            "sigma", "ari", "ari_ci", "homogeneity", "homogeneity_ci", "completeness",
            "completeness_ci", "recon_truth", "recon_truth_ci", "recon_est", "recon_est_ci",
            "r_truth", "r_hat",
        ],
        vec![{
            let mut row = vec![sigma.to_string()];
            for m in [s.ari, s.homogeneity, s.completeness, s.recon_truth, s.recon_est] {
                row.push(fmt(m.mean));
                row.push(fmt(m.ci));
            }
            row.push(s.r_truth.to_string());
            row.push(s.r_hat_mode.to_string());
            row
        }],
    )?;

    let mut header = vec!["sigma", "method"];
    header.extend(EDGE_COLUMNS);
    table(
        &tables.join("recovery.csv"),
        &header,
        s.methods
            .iter()
            .map(|m| {
                let mut row = vec![sigma.to_string(), m.method.clone()];
                row.extend(edge_cells(&m.skeleton, &m.dag));
                row
            })
            .collect(),
    )?;

    let mut header = vec!["method", "delta"];
    header.extend(EDGE_COLUMNS);
    table(
        &tables.join("delta_sweep.csv"),
        &header,
        s.sweep
            .iter()
            .map(|m| {
                let mut row = vec![m.method.clone(), m.delta.to_string()];
                row.extend(edge_cells(&m.skeleton, &m.dag));
                row
            })
            .collect(),
    )?;

    let mut rows = Vec::new();
    for r in &report.records {
        let Some(m) = &r.metrics else {
            rows.push(vec![
                r.rep.to_string(),
                r.scenario_seed.to_string(),
                String::new(),
                "failed".to_string(),
            ]);
            continue;
        };
        for mm in &m.methods {
            rows.push(vec![
                r.rep.to_string(),
                r.scenario_seed.to_string(),
                mm.method.clone(),
                "ok".to_string(),
                mm.lambda1.to_string(),
                m.chosen.lambda2.to_string(),
                m.chosen.tau.to_string(),
                fmt(m.ari),
                fmt(m.homogeneity),
                fmt(m.completeness),
                fmt(m.recon_truth),
                fmt(m.recon_est),
                m.r_est.to_string(),
                fmt(mm.skeleton.tpr),
                fmt(mm.skeleton.fdr),
                fmt(mm.skeleton.tnr),
                fmt(mm.dag.tpr),
                fmt(mm.dag.fdr),
                fmt(mm.dag.tnr),
            ]);
        }
    }
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(tables.join("per_rep.csv"))?;
    w.write_record([
        "rep", "seed", "method", "status", "lambda1", "lambda2", "tau", "ari", "homogeneity",
        "completeness", "recon_truth", "recon_est", "r_est", "skel_tpr", "skel_fdr", "skel_tnr",
        "dag_tpr", "dag_fdr", "dag_tnr",
    ])?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;

    table(
        &tables.join("timing.csv"),
        &["rep", "wall_time_secs"],
        report
            .records
            .iter()
            .map(|r| vec![r.rep.to_string(), format!("{:.3}", r.wall_time_secs)])
            .collect(),
    )?;
    Ok(())
}
