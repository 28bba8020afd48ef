//! Clustering agreement and edge-recovery metrics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::sem::SubjectData;
use crate::{Error, Matrix, Result};

/// Boolean adjacency pattern.
pub type EdgeSet = DMatrix<bool>;

fn contingency(a: &[usize], b: &[usize]) -> Result<(Vec<Vec<u64>>, Vec<u64>, Vec<u64>)> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "label vectors differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok((table, rows, cols))
}

fn choose2(k: u64) -> i128 {
    (k as i128) * (k as i128 - 1) / 2
}

/// Hubert–Arabie adjusted Rand index. Labels are arbitrary nonnegative ids.
pub fn ari(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() < 2 {
        return Err(Error::invalid("ari needs at least two items"));
    }
    let (table, rows, cols) = contingency(labels_a, labels_b)?;
    let total = choose2(labels_a.len() as u64);
    let index: i128 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let sum_a: i128 = rows.iter().map(|&v| choose2(v)).sum();
    let sum_b: i128 = cols.iter().map(|&v| choose2(v)).sum();
    // Scaled by 2·C(n, 2) so everything stays integral.
    let numer = 2 * (total * index - sum_a * sum_b);
    let denom = total * (sum_a + sum_b) - 2 * sum_a * sum_b;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(numer as f64 / denom as f64)
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `(homogeneity, completeness)` of `pred` against `truth`, natural-log
/// entropies; a zero-entropy reference scores 1.
pub fn homogeneity_completeness(truth: &[usize], pred: &[usize]) -> Result<(f64, f64)> {
    if truth.is_empty() {
        return Err(Error::invalid("empty labelings"));
    }
    let (table, class_counts, cluster_counts) = contingency(truth, pred)?;
    let n = truth.len() as f64;
    let h_class = entropy(&class_counts, n);
    let h_cluster = entropy(&cluster_counts, n);
    let mut h_class_given_cluster = 0.0;
    let mut h_cluster_given_class = 0.0;
    for (c, row) in table.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let joint = v as f64 / n;
            h_class_given_cluster -= joint * (v as f64 / cluster_counts[k] as f64).ln();
            h_cluster_given_class -= joint * (v as f64 / class_counts[c] as f64).ln();
        }
    }
    let homogeneity = if h_class == 0.0 {
        1.0
    } else {
        1.0 - h_class_given_cluster / h_class
    };
    let completeness = if h_cluster == 0.0 {
        1.0
    } else {
        1.0 - h_cluster_given_class / h_cluster
    };
    Ok((homogeneity.clamp(0.0, 1.0), completeness.clamp(0.0, 1.0)))
}

/// Undirected skeleton: `B_ab = 1` iff `max(|W_ab|, |W_ba|) ≥ δ`, `a ≠ b`.
pub fn skeleton_of(w: &Matrix, delta: f64) -> EdgeSet {
    let d = w.nrows();
    EdgeSet::from_fn(d, d, |a, b| a != b && w[(a, b)].abs().max(w[(b, a)].abs()) >= delta)
}

/// Directed pattern: `B_ab = 1` iff `|W_ab| ≥ δ`, `a ≠ b`.
pub fn directed_of(w: &Matrix, delta: f64) -> EdgeSet {
    let d = w.nrows();
    EdgeSet::from_fn(d, d, |a, b| a != b && w[(a, b)].abs() >= delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EdgeMetrics {
    pub tpr: f64,
    pub fdr: f64,
    pub tnr: f64,
}

impl EdgeMetrics {
    /// Component-wise mean.
    pub fn mean(items: &[EdgeMetrics]) -> EdgeMetrics {
        let k = items.len().max(1) as f64;
        EdgeMetrics {
            tpr: items.iter().map(|m| m.tpr).sum::<f64>() / k,
            fdr: items.iter().map(|m| m.fdr).sum::<f64>() / k,
            tnr: items.iter().map(|m| m.tnr).sum::<f64>() / k,
        }
    }
}

/// TPR, FDR and TNR of `est` against `truth`.
///
/// Directed mode scores every ordered off-diagonal cell; undirected mode
/// scores unordered pairs `a < b`. Empty denominators give FDR 0 (nothing
/// predicted), TPR 1 (nothing to find) and TNR 1 (no non-edges).
pub fn edge_metrics(est: &EdgeSet, truth: &EdgeSet, directed: bool) -> Result<EdgeMetrics> {
    if est.shape() != truth.shape() || est.nrows() != est.ncols() {
        return Err(Error::invalid("edge sets must be square and of equal shape"));
    }
    let d = est.nrows();
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for a in 0..d {
        for b in 0..d {
            if a == b || (!directed && a > b) {
                continue;
            }
            match (est[(a, b)], truth[(a, b)]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    let ratio = |num: u64, den: u64, empty: f64| {
        if den == 0 {
            empty
        } else {
            num as f64 / den as f64
        }
    };
    Ok(EdgeMetrics {
        tpr: ratio(tp, tp + fn_, 1.0),
        fdr: ratio(fp, tp + fp, 0.0),
        tnr: ratio(tn, tn + fp, 1.0),
    })
}

/// Skeleton and directed metrics for one estimate against one true DAG.
pub fn recovery_metrics(est: &Matrix, truth: &Matrix, delta: f64) -> Result<(EdgeMetrics, EdgeMetrics)> {
    let truth_nonzero = truth.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    let skel = edge_metrics(&skeleton_of(est, delta), &skeleton_of(&truth_nonzero, 0.5), false)?;
    let dag = edge_metrics(&directed_of(est, delta), &directed_of(&truth_nonzero, 0.5), true)?;
    Ok((skel, dag))
}

/// Macro-averaged skeleton and DAG metrics over subjects: subject `i` is
/// scored with `estimates[i]` against `true_dags[true_labels[i]]`.
pub fn macro_recovery(
    estimates: &[Matrix],
    true_dags: &[Matrix],
    true_labels: &[usize],
    delta: f64,
) -> Result<(EdgeMetrics, EdgeMetrics)> {
    if estimates.len() != true_labels.len() {
        return Err(Error::invalid("one estimate per subject is required"));
    }
    let mut skel = Vec::with_capacity(estimates.len());
    let mut dag = Vec::with_capacity(estimates.len());
    for (est, &label) in estimates.iter().zip(true_labels) {
        let truth = true_dags
            .get(label)
            .ok_or_else(|| Error::invalid(format!("no true DAG for label {label}")))?;
        let (s, g) = recovery_metrics(est, truth, delta)?;
        skel.push(s);
        dag.push(g);
    }
    Ok((EdgeMetrics::mean(&skel), EdgeMetrics::mean(&dag)))
}

/// `n⁻¹ Σᵢ (1/2mᵢ)‖Xᵢ − XᵢW_{r(i)}‖²_F`, averaging over subjects.
pub fn validation_recon_error(
    val_data: &[SubjectData],
    labels: &[usize],
    consensus: &[Matrix],
) -> Result<f64> {
    if val_data.len() != labels.len() {
        return Err(Error::invalid("every validation subject needs a cluster assignment"));
    }
    if val_data.is_empty() {
        return Err(Error::invalid("no validation subjects"));
    }
    let mut total = 0.0;
    for (s, &l) in val_data.iter().zip(labels) {
        let w = consensus
            .get(l)
            .ok_or_else(|| Error::invalid(format!("subject {} assigned to missing cluster {l}", s.id())))?;
        total += s.loss().value(w)?;
    }
    Ok(total / val_data.len() as f64)
}
