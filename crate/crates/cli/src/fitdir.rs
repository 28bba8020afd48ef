//! Fit directories written by `fit` and `baseline` and read by `evaluate`
//! and `sweep-delta`.
//!
//! Layout: `fit.json` ([`FitRecord`]), one `w_<i>.csv` per subject holding
//! the unthresholded estimate, and for joint fits `consensus_<k>.csv` and
//! `trace.csv`.

use std::path::Path;

use dagdc::clustering::consensus_matrices;
use dagdc::dc_admm::{DcRecord, Hyperparams, TraceRecord};
use dagdc::harness::io::{read_json, read_matrix_csv, write_json, write_matrix_csv};
use dagdc::single_dag::SingleFitOptions;
use dagdc::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    /// `dc_admm` or a baseline name.
    pub method: String,
    pub n: usize,
    pub d: usize,
    pub converged: bool,
    pub status: String,
    /// Estimated cluster labels; absent for baselines.
    pub labels: Option<Vec<usize>>,
    /// Threshold used for the consensus matrices written alongside.
    pub delta: Option<f64>,
    pub hypers: Option<Hyperparams>,
    pub baseline: Option<SingleFitOptions>,
    pub theta_norms: Option<Matrix>,
    pub outer_trace: Vec<DcRecord>,
}

pub struct FitDir {
    pub record: FitRecord,
    pub w: Vec<Matrix>,
}

impl FitDir {
    pub fn write(&self, dir: &Path, consensus: &[Matrix], trace: &[TraceRecord]) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("fit.json"), &self.record)?;
        for (i, w) in self.w.iter().enumerate() {
            write_matrix_csv(&dir.join(format!("w_{i}.csv")), w, None)?;
        }
        for (k, c) in consensus.iter().enumerate() {
            write_matrix_csv(&dir.join(format!("consensus_{k}.csv")), c, None)?;
        }
        if !trace.is_empty() {
            let mut out = csv::Writer::from_path(dir.join("trace.csv"))?;
            for row in trace {
                out.serialize(row)?;
            }
            out.flush()?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let record: FitRecord = read_json(&dir.join("fit.json"))?;
        let w = (0..record.n)
            .map(|i| read_matrix_csv(&dir.join(format!("w_{i}.csv")), false))
            .collect::<Result<Vec<_>>>()?;
        if w.iter().any(|m| m.nrows() != record.d || m.ncols() != record.d) {
            return Err(Error::InvalidInput(format!(
                "estimates in {} are not {d}x{d}",
                dir.display(),
                d = record.d
            )));
        }
        if let Some(labels) = &record.labels {
            if labels.len() != record.n {
                return Err(Error::InvalidInput("label count does not match n".into()));
            }
        }
        Ok(Self { record, w })
    }

    /// Per-subject matrices to score at threshold `delta`: cluster consensus
    /// for joint fits, the raw estimates otherwise.
    pub fn scored(&self, delta: f64) -> Result<Vec<Matrix>> {
        match &self.record.labels {
            Some(labels) => {
                let consensus = consensus_matrices(labels, &self.w, delta)?;
                Ok(labels.iter().map(|&l| consensus[l].clone()).collect())
            }
            None => Ok(self.w.clone()),
        }
    }
}
