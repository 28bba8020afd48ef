use dagdc::boxopt::{minimize_l1_smooth, BoxOptions, EdgeMask};
use dagdc::clustering::complete_linkage_cut;
use dagdc::metrics::ari;
use dagdc::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All set partitions of `n` items as restricted growth strings.
fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for l in 0..=next {
            prefix.push(l);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, &mut out);
    out
}

/// Hubert–Arabie ARI from the four pair-agreement counts.
fn pair_count_ari(a: &[usize], b: &[usize]) -> f64 {
    let (mut ss, mut sd, mut ds, mut dd) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    if denom == 0.0 {
        1.0
    } else {
        2.0 * (ss * dd - sd * ds) / denom
    }
}

#[test]
fn ari_matches_pair_counting_exhaustively() {
    for n in 2..=6 {
        let all = partitions(n);
        for a in &all {
            for b in &all {
                let got = ari(a, b).unwrap();
                let want = pair_count_ari(a, b);
                assert!((got - want).abs() < 1e-12, "{a:?} {b:?}: {got} vs {want}");
            }
        }
    }
    assert_eq!(partitions(6).len(), 203);
}

fn diameter(theta: &Matrix, members: &[usize]) -> f64 {
    let mut d = 0.0f64;
    for &i in members {
        for &j in members {
            d = d.max(theta[(i, j)]);
        }
    }
    d
}

fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    (0..k)
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect()
}

/// Every block has diameter ≤ τ and no two blocks could be merged.
fn valid_cut(theta: &Matrix, labels: &[usize], tau: f64) -> bool {
    let g = groups(labels);
    if g.iter().any(|m| diameter(theta, m) > tau) {
        return false;
    }
    for u in 0..g.len() {
        for v in (u + 1)..g.len() {
            let union: Vec<usize> = g[u].iter().chain(&g[v]).copied().collect();
            if diameter(theta, &union) <= tau {
                return false;
            }
        }
    }
    true
}

#[test]
fn linkage_cut_is_one_of_the_valid_partitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 2..=8 {
        let all = partitions(n);
        for _ in 0..10 {
            let mut theta = Matrix::zeros(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    let v: f64 = rng.random_range(0.0..1.0);
                    theta[(i, j)] = v;
                    theta[(j, i)] = v;
                }
            }
            for tau in [0.05, 0.1, 0.4, 0.7] {
                let labels = complete_linkage_cut(&theta, tau).unwrap();
                let valid: Vec<&Vec<usize>> = all.iter().filter(|p| valid_cut(&theta, p, tau)).collect();
                assert!(valid.contains(&&labels), "n={n} tau={tau}: {labels:?} not valid");
            }
        }
    }
}

#[test]
fn linkage_cut_coarsens_with_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 12;
    let mut theta = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = rng.random_range(0.0..1.0);
            theta[(i, j)] = v;
            theta[(j, i)] = v;
        }
    }
    let counts: Vec<usize> = [0.05, 0.1, 0.4, 0.7]
        .iter()
        .map(|&t| complete_linkage_cut(&theta, t).unwrap().into_iter().max().unwrap() + 1)
        .collect();
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
}

/// Column-wise cyclic coordinate descent for
/// `½ tr((I − W)ᵀ S (I − W)) + λ‖W‖₁` with zero diagonal.
fn lasso_cd(s: &Matrix, lambda: f64) -> Matrix {
    let d = s.nrows();
    let mut w = Matrix::zeros(d, d);
    for _ in 0..20_000 {
        let mut change = 0.0f64;
        for b in 0..d {
            for a in 0..d {
                if a == b {
                    continue;
                }
                let mut r = s[(a, b)];
                for c in 0..d {
                    if c != a {
                        r -= s[(a, c)] * w[(c, b)];
                    }
                }
                let new = r.signum() * (r.abs() - lambda).max(0.0) / s[(a, a)];
                change = change.max((new - w[(a, b)]).abs());
                w[(a, b)] = new;
            }
        }
        if change < 1e-14 {
            break;
        }
    }
    w
}

#[test]
fn l1_solver_matches_coordinate_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for &(d, lambda) in &[(3, 0.01), (4, 0.1), (6, 0.05), (5, 0.0)] {
        let x = Matrix::from_fn(50, d, |_, _| rng.random_range(-1.0..1.0));
        let s = x.transpose() * &x / 50.0;
        let want = lasso_cd(&s, lambda);
        let smooth = |w: &Matrix| {
            let r = Matrix::identity(d, d) - w;
            let sr = &s * &r;
            Ok((0.5 * r.dot(&sr), -sr))
        };
        let opts = BoxOptions {
            tol: 1e-11,
            ftol: 0.0,
            max_iter: 10_000,
            ..BoxOptions::default()
        };
        let got = minimize_l1_smooth(smooth, lambda, d, &Matrix::zeros(d, d), EdgeMask::NoSelfLoops, &opts).unwrap();
        assert!((&got.w - &want).amax() < 1e-6, "d={d} lambda={lambda}");
    }
}
