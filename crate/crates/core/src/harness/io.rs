//! On-disk dataset and result formats.
//!
//! A dataset directory holds `manifest.json`, one `subject_<i>.csv` per
//! subject (header row of variable names, one row per measurement) and, for
//! synthetic data, one `dag_<r>.csv` per cluster as a dense headerless matrix.
//! Numbers are written in Rust's shortest round-trip decimal form.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::{Scenario, ScenarioSpec};
use crate::sem::SubjectData;
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub d: usize,
    pub m: Vec<usize>,
    #[serde(default)]
    pub true_labels: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub generator: Option<ScenarioSpec>,
    #[serde(default)]
    pub n_dags: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub subjects: Vec<SubjectData>,
    pub true_dags: Vec<Matrix>,
}

impl Dataset {
    pub fn from_scenario(scenario: Scenario, spec: &ScenarioSpec) -> Self {
        let manifest = Manifest {
            n: scenario.n(),
            d: scenario.d(),
            m: scenario.subjects.iter().map(SubjectData::m).collect(),
            true_labels: Some(scenario.true_labels.clone()),
            seed: Some(spec.seed),
            generator: Some(spec.clone()),
            n_dags: scenario.true_dags.len(),
        };
        Self {
            manifest,
            subjects: scenario.subjects,
            true_dags: scenario.true_dags,
        }
    }

    pub fn true_labels(&self) -> Option<&[usize]> {
        self.manifest.true_labels.as_deref()
    }
}

pub fn variable_names(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).collect()
}

pub fn write_matrix_csv(path: &Path, m: &Matrix, header: Option<&[String]>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path, has_header: bool) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in rdr.records() {
        let record = record?;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(Error::invalid(format!("{}: ragged rows", path.display())));
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::invalid(format!("{}: cannot parse '{field}' as a number", path.display()))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Ok(Matrix::from_row_slice(rows, cols, &values))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("manifest.json"), &data.manifest)?;
    let names = variable_names(data.manifest.d);
    for (i, s) in data.subjects.iter().enumerate() {
        write_matrix_csv(&dir.join(format!("subject_{i}.csv")), s.x(), Some(&names))?;
    }
    for (r, w) in data.true_dags.iter().enumerate() {
        write_matrix_csv(&dir.join(format!("dag_{r}.csv")), w, None)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mut manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    if manifest.n == 0 {
        return Err(Error::invalid("manifest declares no subjects"));
    }
    let mut subjects = Vec::with_capacity(manifest.n);
    for i in 0..manifest.n {
        let x = read_matrix_csv(&dir.join(format!("subject_{i}.csv")), true)?;
        if x.ncols() != manifest.d {
            return Err(Error::invalid(format!(
                "subject_{i}.csv has {} columns, manifest says d = {}",
                x.ncols(),
                manifest.d
            )));
        }
        if manifest.m.get(i).is_some_and(|&m| m != x.nrows()) {
            return Err(Error::invalid(format!(
                "subject_{i}.csv has {} rows, manifest says {}",
                x.nrows(),
                manifest.m[i]
            )));
        }
        subjects.push(SubjectData::new(i, x)?);
    }
    if let Some(labels) = &manifest.true_labels {
        if labels.len() != manifest.n {
            return Err(Error::invalid("manifest true_labels length differs from n"));
        }
        manifest.n_dags = manifest.n_dags.max(labels.iter().max().map_or(0, |m| m + 1));
    }
    let mut true_dags = Vec::new();
    for r in 0..manifest.n_dags {
        let path = dir.join(format!("dag_{r}.csv"));
        if !path.exists() {
            break;
        }
        true_dags.push(read_matrix_csv(&path, false)?);
    }
    Ok(Dataset {
        manifest,
        subjects,
        true_dags,
    })
}
