#![allow(dead_code)]

use dagdc::datagen::{generate_cluster_dag, simulate_subject, topological_order, ScenarioRng};
use dagdc::sem::SubjectData;
use dagdc::Matrix;
use rand::SeedableRng;

/// Relabel nodes along a topological order so the DAG is strictly upper
/// triangular.
pub fn to_upper(w: &Matrix) -> Matrix {
    let order = topological_order(w).expect("acyclic");
    let mut pos = vec![0; order.len()];
    for (k, &node) in order.iter().enumerate() {
        pos[node] = k;
    }
    let d = w.nrows();
    let mut out = Matrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            out[(pos[a], pos[b])] = w[(a, b)];
        }
    }
    out
}

/// `n` subjects split evenly between `clusters` random DAGs.
pub fn instance(
    seed: u64,
    n: usize,
    clusters: usize,
    m: usize,
    d: usize,
    edges: usize,
    upper: bool,
) -> (Vec<SubjectData>, Vec<usize>, Vec<Matrix>) {
    let mut rng = ScenarioRng::seed_from_u64(seed);
    let dags: Vec<Matrix> = (0..clusters)
        .map(|_| {
            let w = generate_cluster_dag(d, edges, &mut rng).unwrap();
            if upper {
                to_upper(&w)
            } else {
                w
            }
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % clusters).collect();
    let subjects = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| simulate_subject(i, &dags[c], m, 1.0, &mut rng).unwrap())
        .collect();
    (subjects, labels, dags)
}

pub fn data_objective(subjects: &[SubjectData], w: &[Matrix], lambda1: f64) -> f64 {
    subjects
        .iter()
        .zip(w)
        .map(|(s, w)| s.loss().value(w).unwrap() + lambda1 * w.iter().map(|v| v.abs()).sum::<f64>())
        .sum()
}
