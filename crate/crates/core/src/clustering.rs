//! Turning a fitted [`FitState`] into subject clusters.
//!
//! Pairwise dissimilarities are the Frobenius norms of the fitted differences
//! `θᵢⱼ`. Complete-linkage agglomeration merges the closest pair of clusters
//! while their linkage distance stays within `τ`; each resulting cluster is
//! summarized by the mean of its members' matrices, hard-thresholded at `δ`.

use serde::{Deserialize, Serialize};

use crate::dc_admm::{pairs, FitState};
use crate::{Error, Matrix, Result};

/// Default hard threshold for consensus matrices and edge evaluation.
pub const DEFAULT_DELTA: f64 = 0.02;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusteringResult {
    /// 0-based contiguous cluster labels, numbered by first appearance.
    pub labels: Vec<usize>,
    pub theta_norms: Matrix,
    pub consensus: Vec<Matrix>,
    pub delta: f64,
}

impl ClusteringResult {
    pub fn n_clusters(&self) -> usize {
        self.consensus.len()
    }

    /// Consensus matrix assigned to each subject.
    pub fn per_subject(&self) -> Vec<Matrix> {
        self.labels.iter().map(|&l| self.consensus[l].clone()).collect()
    }
}

/// Symmetric `n × n` matrix of `‖θᵢⱼ‖_F` with zero diagonal.
pub fn dissimilarity_matrix(state: &FitState) -> Matrix {
    let n = state.n();
    let mut theta = Matrix::zeros(n, n);
    for (i, j) in pairs(n) {
        let v = state.pair(i, j).theta.norm();
        theta[(i, j)] = v;
        theta[(j, i)] = v;
    }
    theta
}

/// Complete-linkage agglomeration cut at height `tau`.
///
/// At each step the pair of active clusters with the smallest linkage
/// distance is merged, provided that distance is at most `tau`; ties go to
/// the lexicographically smallest pair of cluster indices, where clusters are
/// indexed by position in the active list (a merge keeps the lower index).
pub fn complete_linkage_cut(theta: &Matrix, tau: f64) -> Result<Vec<usize>> {
    let n = theta.nrows();
    if theta.ncols() != n {
        return Err(Error::invalid("dissimilarity matrix must be square"));
    }
    if theta.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("dissimilarities must be finite and nonnegative"));
    }
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| theta[(i, j)].max(theta[(j, i)])).collect())
        .collect();

    loop {
        let k = members.len();
        let mut best: Option<(usize, usize, f64)> = None;
        for u in 0..k {
            for v in (u + 1)..k {
                let dv = dist[u][v];
                if dv <= tau && best.is_none_or(|(_, _, b)| dv < b) {
                    best = Some((u, v, dv));
                }
            }
        }
        let Some((u, v, _)) = best else { break };
        let absorbed = members.remove(v);
        members[u].extend(absorbed);
        for w in 0..k {
            let merged = dist[u][w].max(dist[v][w]);
            dist[u][w] = merged;
            dist[w][u] = merged;
        }
        dist.remove(v);
        for row in &mut dist {
            row.remove(v);
        }
        dist[u][u] = 0.0;
    }

    let mut raw = vec![0usize; n];
    for (c, group) in members.iter().enumerate() {
        for &i in group {
            raw[i] = c;
        }
    }
    Ok(relabel_by_first_appearance(&raw))
}

/// Map arbitrary labels to `0, 1, 2, …` in order of first appearance.
pub fn relabel_by_first_appearance(labels: &[usize]) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(p) => p,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect()
}

/// Mean of each cluster's matrices with entries below `delta` in magnitude
/// set to zero.
pub fn consensus_matrices(labels: &[usize], w: &[Matrix], delta: f64) -> Result<Vec<Matrix>> {
    if labels.len() != w.len() {
        return Err(Error::invalid("label count does not match matrix count"));
    }
    if w.is_empty() {
        return Ok(Vec::new());
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let (r, c) = w[0].shape();
    let mut sums = vec![Matrix::zeros(r, c); k];
    let mut counts = vec![0usize; k];
    for (&l, m) in labels.iter().zip(w) {
        sums[l] += m;
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("cluster {empty} has no members")));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, count)| {
            let mut mean = s / count as f64;
            mean.iter_mut().filter(|v| v.abs() < delta).for_each(|v| *v = 0.0);
            mean
        })
        .collect())
}

/// Cluster a fitted state at height `tau` and build thresholded consensus
/// matrices.
pub fn cluster_fit(state: &FitState, tau: f64, delta: f64) -> Result<ClusteringResult> {
    let theta_norms = dissimilarity_matrix(state);
    let labels = complete_linkage_cut(&theta_norms, tau)?;
    let consensus = consensus_matrices(&labels, &state.w, delta)?;
    Ok(ClusteringResult {
        labels,
        theta_norms,
        consensus,
        delta,
    })
}
