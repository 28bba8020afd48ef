//! Synthetic clustered-DAG scenarios.
//!
//! Each cluster gets a random DAG: edges are drawn from the strict upper
//! triangle with weights uniform on `[-0.5, -0.2] ∪ [0.2, 0.5]`, then the nodes
//! are relabeled by a random permutation. Subjects draw `X = Z (I − W)⁻¹` with
//! `Z ~ N(0, σ² I)`, and finally subjects, labels and cluster DAGs are
//! shuffled jointly. All randomness flows from [`ScenarioSpec::seed`].

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::sem::SubjectData;
use crate::{Error, Matrix, Result};

pub const WEIGHT_MIN: f64 = 0.2;
pub const WEIGHT_MAX: f64 = 0.5;

pub type ScenarioRng = ChaCha8Rng;

fn default_d() -> usize {
    10
}

fn default_edges() -> usize {
    15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    pub cluster_proportions: Vec<f64>,
    #[serde(default = "default_edges")]
    pub edges_per_dag: usize,
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    /// Two clusters with proportions `[0.6, 0.4]`, `d = 10`, 15 edges per DAG.
    pub fn two_cluster(n: usize, m: usize, sigma: f64, seed: u64) -> Self {
        Self {
            n,
            m,
            d: default_d(),
            cluster_proportions: vec![0.6, 0.4],
            edges_per_dag: default_edges(),
            sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::invalid("n, m and d must all be positive"));
        }
        if self.cluster_proportions.is_empty() {
            return Err(Error::invalid("at least one cluster proportion is required"));
        }
        if self
            .cluster_proportions
            .iter()
            .any(|p| !p.is_finite() || *p < 0.0)
        {
            return Err(Error::invalid("cluster proportions must be finite and nonnegative"));
        }
        let total: f64 = self.cluster_proportions.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "cluster proportions sum to {total}, expected 1"
            )));
        }
        let slots = self.d * (self.d - 1) / 2;
        if self.edges_per_dag > slots {
            return Err(Error::invalid(format!(
                "{} edges requested but only {slots} slots exist for d = {}",
                self.edges_per_dag, self.d
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub subjects: Vec<SubjectData>,
    pub true_labels: Vec<usize>,
    pub true_dags: Vec<Matrix>,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn d(&self) -> usize {
        self.subjects.first().map_or(0, SubjectData::d)
    }
}

/// Split `n` items by `proportions` using largest-remainder rounding.
/// Remainder ties go to the earlier cluster.
pub fn largest_remainder_sizes(n: usize, proportions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[k] += 1;
    }
    sizes
}

/// Random DAG with exactly `edges` nonzero weights, relabeled by a random
/// node permutation.
pub fn generate_cluster_dag<R: Rng + ?Sized>(d: usize, edges: usize, rng: &mut R) -> Result<Matrix> {
    let slots: Vec<(usize, usize)> = (0..d)
        .flat_map(|a| ((a + 1)..d).map(move |b| (a, b)))
        .collect();
    if edges > slots.len() {
        return Err(Error::invalid(format!(
            "{edges} edges requested but only {} slots exist for d = {d}",
            slots.len()
        )));
    }
    let mut upper = Matrix::zeros(d, d);
    for k in index::sample(rng, slots.len(), edges).into_vec() {
        let magnitude = rng.random_range(WEIGHT_MIN..=WEIGHT_MAX);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (a, b) = slots[k];
        upper[(a, b)] = sign * magnitude;
    }
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(rng);
    let mut w = Matrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            w[(perm[a], perm[b])] = upper[(a, b)];
        }
    }
    Ok(w)
}

/// Draw `m` rows of `X = Z (I − W)⁻¹` with `Z ~ N(0, σ² I)`.
pub fn simulate_subject<R: Rng + ?Sized>(
    id: usize,
    w: &Matrix,
    m: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<SubjectData> {
    let d = w.nrows();
    if w.ncols() != d {
        return Err(Error::invalid("weight matrix must be square"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma must be nonnegative"));
    }
    let inverse = (Matrix::identity(d, d) - w)
        .try_inverse()
        .ok_or_else(|| Error::numerical("I - W is singular"))?;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let z = Matrix::from_fn(m, d, |_, _| sigma * noise.sample(rng));
    SubjectData::new(id, z * inverse)
}

pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ScenarioRng::seed_from_u64(spec.seed);
    let sizes = largest_remainder_sizes(spec.n, &spec.cluster_proportions);
    let dags = (0..sizes.len())
        .map(|_| generate_cluster_dag(spec.d, spec.edges_per_dag, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let mut drawn = Vec::with_capacity(spec.n);
    for (cluster, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            let subject = simulate_subject(0, &dags[cluster], spec.m, spec.sigma, &mut rng)?;
            drawn.push((subject, cluster));
        }
    }

    // Relabel clusters and reorder subjects so that generation order leaks nowhere.
    let mut cluster_perm: Vec<usize> = (0..dags.len()).collect();
    cluster_perm.shuffle(&mut rng);
    let mut true_dags = vec![Matrix::zeros(spec.d, spec.d); dags.len()];
    for (old, dag) in dags.into_iter().enumerate() {
        true_dags[cluster_perm[old]] = dag;
    }
    drawn.shuffle(&mut rng);
    let (subjects, true_labels) = drawn
        .into_iter()
        .enumerate()
        .map(|(i, (s, c))| (s.with_id(i), cluster_perm[c]))
        .unzip();

    Ok(Scenario {
        subjects,
        true_labels,
        true_dags,
    })
}

/// Kahn's algorithm on the nonzero pattern of `w`; `None` if there is a cycle.
pub fn topological_order(w: &Matrix) -> Option<Vec<usize>> {
    let d = w.nrows();
    let mut indegree: Vec<usize> = (0..d)
        .map(|b| (0..d).filter(|&a| a != b && w[(a, b)] != 0.0).count())
        .collect();
    let mut ready: Vec<usize> = (0..d).rev().filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(d);
    while let Some(a) = ready.pop() {
        order.push(a);
        for b in 0..d {
            if a != b && w[(a, b)] != 0.0 {
                indegree[b] -= 1;
                if indegree[b] == 0 {
                    ready.push(b);
                }
            }
        }
    }
    (order.len() == d).then_some(order)
}
