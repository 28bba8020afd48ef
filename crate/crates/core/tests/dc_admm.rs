mod common;

use common::{data_objective, instance};
use dagdc::boxopt::{minimize_l1_smooth, BoxOptions, EdgeMask};
use dagdc::clustering::dissimilarity_matrix;
use dagdc::dc_admm::{
    augmented_lagrangian, dc_admm_fit, init_estimates, primal_sweep, theta_prox, w_update, FitState,
    FitStatus, Hyperparams, PairState,
};
use dagdc::sem::SubjectData;
use dagdc::single_dag::{augmented_smooth, fit_single_dag, SingleFitOptions};
use dagdc::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tight() -> BoxOptions {
    BoxOptions {
        tol: 1e-10,
        max_iter: 5000,
        ftol: 0.0,
        ..BoxOptions::default()
    }
}

fn single_state(w: Matrix, alpha: f64, rho1: f64) -> FitState {
    FitState {
        w: vec![w],
        pairs: Vec::new(),
        alpha: vec![alpha],
        rho1,
        capped: Vec::new(),
        surrogate_value: 0.0,
    }
}

#[test]
fn theta_prox_beats_ray_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let d = rng.random_range(2..5);
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let delta = Matrix::from_fn(d, d, |_, _| scale * rng.random_range(-1.0..1.0));
        let lambda2 = 10f64.powf(rng.random_range(-4.0..0.0));
        let rho2 = 10f64.powf(rng.random_range(-2.0..1.0));
        let tau = rng.random_range(0.05..1.0);
        let capped = rng.random_bool(0.5);
        let f = |t: &Matrix| {
            let pen = if capped { lambda2 * tau } else { lambda2 * t.norm() };
            pen + 0.5 * rho2 * (t - &delta).norm_squared()
        };
        let best = f(&theta_prox(&delta, capped, lambda2, rho2));
        let unit = &delta / delta.norm();
        let reach = 2.0 * delta.norm();
        let mut grid_min = f(&Matrix::zeros(d, d));
        for k in 0..10_000 {
            let t = reach * k as f64 / 9_999.0;
            grid_min = grid_min.min(f(&(&unit * t)));
        }
        assert!(best <= grid_min + 1e-10, "closed form {best} vs grid {grid_min}");
    }
}

#[test]
fn w_update_single_subject_matches_single_dag_subproblem() {
    let (subjects, _, _) = instance(3, 1, 1, 400, 5, 5, false);
    let hypers = Hyperparams {
        inner: tight(),
        ..Hyperparams::new(0.05, 0.0, 0.4)
    };
    let start = Matrix::from_fn(5, 5, |i, j| if i == j { 0.0 } else { 0.05 * (i as f64 - j as f64) });
    let state = single_state(start.clone(), 0.3, 2.0);
    let ours = w_update(0, &state, &subjects, &hypers).unwrap();

    let loss = subjects[0].loss();
    let reference = minimize_l1_smooth(
        augmented_smooth(&loss, 0.3, 2.0),
        0.05,
        5,
        &start,
        EdgeMask::NoSelfLoops,
        &tight(),
    )
    .unwrap();
    assert!((&ours - &reference.w).amax() < 1e-6);
}

#[test]
fn w_update_without_coupling_is_least_squares_in_upper_mode() {
    let (subjects, _, _) = instance(5, 1, 1, 300, 5, 6, true);
    let hypers = Hyperparams {
        inner: tight(),
        upper_triangular_mode: true,
        rho2: 0.0,
        ..Hyperparams::new(0.0, 0.0, 0.4)
    };
    let state = single_state(Matrix::zeros(5, 5), 0.0, 0.0);
    let w = w_update(0, &state, &subjects, &hypers).unwrap();
    let s = subjects[0].gram() / subjects[0].m() as f64;
    for b in 1..5 {
        let sub = s.view((0, 0), (b, b)).into_owned();
        let rhs = s.view((0, b), (b, 1)).into_owned();
        let beta = sub.cholesky().unwrap().solve(&rhs);
        for a in 0..b {
            assert!((w[(a, b)] - beta[a]).abs() < 1e-5, "({a},{b}) {} vs {}", w[(a, b)], beta[a]);
        }
    }
    for a in 0..5 {
        for b in 0..=a {
            assert_eq!(w[(a, b)], 0.0);
        }
    }
}

#[test]
fn w_update_is_symmetric_for_identical_subjects() {
    let (one, _, _) = instance(9, 1, 1, 200, 4, 4, false);
    let twin = SubjectData::new(1, one[0].x().clone()).unwrap();
    let subjects = vec![one[0].clone(), twin];
    let hypers = Hyperparams::new(0.02, 0.01, 0.4);
    let start = Matrix::from_element(4, 4, 0.1);
    let state = FitState {
        w: vec![start.clone(), start],
        pairs: vec![PairState {
            theta: Matrix::zeros(4, 4),
            dual: Matrix::zeros(4, 4),
        }],
        alpha: vec![0.1, 0.1],
        rho1: 1.0,
        capped: vec![false],
        surrogate_value: 0.0,
    };
    let w0 = w_update(0, &state, &subjects, &hypers).unwrap();
    let w1 = w_update(1, &state, &subjects, &hypers).unwrap();
    assert!((&w0 - &w1).amax() < 1e-12);
}

#[test]
fn single_subject_fit_matches_single_dag_objective() {
    let (subjects, _, _) = instance(21, 1, 1, 1000, 5, 5, false);
    let lambda1 = 0.02;
    let hypers = Hyperparams {
        h_tol: 1e-12,
        inner: tight(),
        ..Hyperparams::new(lambda1, 1e-3, 0.4)
    };
    let fit = dc_admm_fit(&subjects, &hypers).unwrap();
    assert_eq!(fit.status, FitStatus::Converged);
    let opts = SingleFitOptions {
        h_tol: 1e-12,
        obj_tol: 1e-10,
        inner: tight(),
        ..SingleFitOptions::with_lambda1(lambda1)
    };
    let single = fit_single_dag(&subjects, &opts).unwrap();
    let ours = data_objective(&subjects, &fit.state.w, lambda1);
    let theirs = data_objective(&subjects, std::slice::from_ref(&single.w), lambda1);
    assert!((ours - theirs).abs() < 1e-5, "{ours} vs {theirs}");
}

#[test]
fn strong_fusion_merges_same_dag_subjects() {
    let (subjects, _, _) = instance(13, 2, 1, 500, 4, 4, false);
    let hypers = Hyperparams::new(0.02, 10.0, 100.0);
    let fit = dc_admm_fit(&subjects, &hypers).unwrap();
    assert_eq!(fit.status, FitStatus::Converged);
    let gap = (&fit.state.w[0] - &fit.state.w[1]).norm();
    assert!(gap < 1e-3, "gap {gap}");
}

#[test]
fn init_examples() {
    let zeros: Vec<SubjectData> = (0..3).map(|i| SubjectData::new(i, Matrix::zeros(10, 3)).unwrap()).collect();
    let state = init_estimates(&zeros, &Hyperparams::default()).unwrap();
    assert!(state.w.iter().all(|w| w.iter().all(|v| *v == 0.0)));
    assert!(state.pairs.iter().all(|p| p.theta.iter().all(|v| *v == 0.0)));

    let (one, _, _) = instance(2, 1, 1, 100, 4, 3, false);
    let copies: Vec<SubjectData> = (0..3).map(|i| SubjectData::new(i, one[0].x().clone()).unwrap()).collect();
    let state = init_estimates(&copies, &Hyperparams::default()).unwrap();
    assert_eq!(state.w[0], state.w[2]);
    assert!(state.pairs.iter().all(|p| p.theta.norm() == 0.0));

    let (subjects, _, _) = instance(4, 4, 2, 100, 4, 3, false);
    let state = init_estimates(&subjects, &Hyperparams::default()).unwrap();
    assert_eq!(state.max_consensus_residual(), 0.0);
    assert!(state.alpha.iter().all(|a| *a == 0.0));
    assert!(state.pairs.iter().all(|p| p.dual.norm() == 0.0));
}

#[test]
fn primal_sweep_does_not_increase_augmented_lagrangian() {
    for seed in 0..4 {
        let (subjects, _, _) = instance(40 + seed, 4, 2, 150, 5, 5, false);
        let hypers = Hyperparams::new(0.02, 0.01, 0.4);
        let mut state = init_estimates(&subjects, &hypers).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut state.pairs {
            p.dual = Matrix::from_fn(5, 5, |_, _| 0.05 * rng.random_range(-1.0..1.0));
        }
        state.alpha = vec![0.5; 4];
        state.rho1 = 1.0;
        for _ in 0..3 {
            let before = augmented_lagrangian(&state, &subjects, &hypers).unwrap();
            primal_sweep(&mut state, &subjects, &hypers).unwrap();
            let after = augmented_lagrangian(&state, &subjects, &hypers).unwrap();
            assert!(after <= before + 1e-10, "seed {seed}: {before} -> {after}");
        }
    }
}

#[test]
fn permuting_subjects_preserves_objective() {
    let (subjects, _, _) = instance(77, 4, 2, 300, 5, 5, true);
    let hypers = Hyperparams {
        upper_triangular_mode: true,
        admm_primal_tol: 1e-7,
        admm_dual_tol: 1e-7,
        eps_out: 1e-10,
        max_admm_iter: 5000,
        inner: tight(),
        ..Hyperparams::new(0.02, 0.01, 0.4)
    };
    let fit = dc_admm_fit(&subjects, &hypers).unwrap();
    let perm = [2usize, 0, 3, 1];
    let permuted: Vec<SubjectData> = perm.iter().map(|&p| subjects[p].clone()).collect();
    let refit = dc_admm_fit(&permuted, &hypers).unwrap();
    let a = fit.trace.outer.last().unwrap().objective;
    let b = refit.trace.outer.last().unwrap().objective;
    assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    for (k, &p) in perm.iter().enumerate() {
        assert!((&refit.state.w[k] - &fit.state.w[p]).amax() < 1e-3);
    }
}

#[test]
fn two_well_separated_clusters_split_at_tau() {
    let (subjects, labels, _) = instance(8, 6, 2, 2000, 5, 6, false);
    let hypers = Hyperparams::new(0.05, 0.05, 0.7);
    let fit = dc_admm_fit(&subjects, &hypers).unwrap();
    let theta = dissimilarity_matrix(&fit.state);
    for i in 0..6 {
        for j in (i + 1)..6 {
            if labels[i] == labels[j] {
                assert!(theta[(i, j)] < hypers.tau, "within ({i},{j}) = {}", theta[(i, j)]);
            } else {
                assert!(theta[(i, j)] >= hypers.tau, "across ({i},{j}) = {}", theta[(i, j)]);
            }
        }
    }
}

#[test]
fn homogeneous_subjects_fuse_into_one_block() {
    let (subjects, _, _) = instance(10, 5, 1, 2000, 5, 6, false);
    let hypers = Hyperparams::new(0.05, 0.05, 0.7);
    let fit = dc_admm_fit(&subjects, &hypers).unwrap();
    let theta = dissimilarity_matrix(&fit.state);
    assert!(theta.amax() < hypers.tau, "max dissimilarity {}", theta.amax());
}
