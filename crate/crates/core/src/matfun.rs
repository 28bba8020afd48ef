//! Matrix exponential and the trace-exponential acyclicity function.
//!
//! `exp` uses scaling and squaring with diagonal Padé approximants of degree
//! 3, 5, 7, 9 or 13, selected from the 1-norm of the argument (Higham 2005).
//! For acyclicity we only ever exponentiate `W ∘ W`, which is nonnegative, so
//! no cancellation issues arise in the squaring phase.

use crate::{Error, Matrix, Result};

/// Feasibility tolerance used when deciding whether `h(W) = 0`.
pub const H_FEASIBLE_TOL: f64 = 1e-8;

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which each degree meets double precision backward error.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.539398330063230e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068e0;
const THETA13: f64 = 5.371920351148152e0;

fn check_square_finite(a: &Matrix) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::invalid("matrix dimension must be at least 1"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    Ok(())
}

fn one_norm(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Padé pair (U, V) of low degree: U holds the odd part, V the even part.
fn pade_low(a: &Matrix, b: &[f64]) -> (Matrix, Matrix) {
    let n = a.nrows();
    let ident = Matrix::identity(n, n);
    let a2 = a * a;
    let mut u_poly = &ident * b[1];
    let mut v = &ident * b[0];
    let mut power = ident.clone();
    for k in 1..b.len() / 2 {
        power = &power * &a2;
        u_poly += &power * b[2 * k + 1];
        v += &power * b[2 * k];
    }
    (a * u_poly, v)
}

fn pade13(a: &Matrix) -> (Matrix, Matrix) {
    let b = &PADE13;
    let n = a.nrows();
    let ident = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];
    (u, v)
}

/// Matrix exponential of a square finite matrix.
pub fn matrix_exp(a: &Matrix) -> Result<Matrix> {
    check_square_finite(a)?;
    let norm = one_norm(a);
    let (u, v, squarings) = if norm <= THETA3 {
        let (u, v) = pade_low(a, &PADE3);
        (u, v, 0)
    } else if norm <= THETA5 {
        let (u, v) = pade_low(a, &PADE5);
        (u, v, 0)
    } else if norm <= THETA7 {
        let (u, v) = pade_low(a, &PADE7);
        (u, v, 0)
    } else if norm <= THETA9 {
        let (u, v) = pade_low(a, &PADE9);
        (u, v, 0)
    } else {
        let s = (norm / THETA13).log2().ceil().max(0.0) as i32;
        let scaled = a * 2f64.powi(-s);
        let (u, v) = pade13(&scaled);
        (u, v, s)
    };

    let numer = &v + &u;
    let denom = &v - &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::numerical("singular Padé denominator in matrix_exp"))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("matrix_exp overflowed"));
    }
    Ok(result)
}

/// Acyclicity value `h(W) = tr(exp(W ∘ W)) - d`.
pub fn acyclicity_h(w: &Matrix) -> Result<f64> {
    let e = matrix_exp(&w.component_mul(w))?;
    Ok((e.trace() - w.nrows() as f64).max(0.0))
}

/// Gradient of [`acyclicity_h`]: `exp(W ∘ W)ᵀ ∘ 2W`.
pub fn acyclicity_grad(w: &Matrix) -> Result<Matrix> {
    Ok(acyclicity_with_grad(w)?.1)
}

/// Value and gradient of the acyclicity function sharing one exponential.
pub fn acyclicity_with_grad(w: &Matrix) -> Result<(f64, Matrix)> {
    let e = matrix_exp(&w.component_mul(w))?;
    // The raw trace difference can dip a few ulps below zero for acyclic W.
    let h = (e.trace() - w.nrows() as f64).max(0.0);
    let grad = e.transpose().component_mul(w) * 2.0;
    Ok((h, grad))
}
