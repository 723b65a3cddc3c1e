//! Small least-squares fits used by the diagnostics.

use nalgebra::{DMatrix, DVector};

/// Ordinary least squares for a small design matrix (rows = observations,
/// columns = regressors), solved by normal equations with nalgebra's dense
/// Cholesky. Panics on rank deficiency (callers control their regressors).
#[must_use]
pub fn lstsq(design: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let m = design.len();
    let k = design[0].len();
    assert!(m >= k, "least squares needs at least as many rows as columns");
    let a = DMatrix::from_fn(m, k, |i, j| design[i][j]);
    let b = DVector::from_column_slice(rhs);
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    let chol = ata.cholesky().expect("normal equations not positive definite");
    chol.solve(&atb).iter().copied().collect()
}

/// Fit of `log(deficit)` against regressors `(1, r, ln r, 1/r)` on a tail
/// window. Returns `(rate, kappa)` in the model
/// `deficit ~ C r^{-kappa} e^{-rate r} (1 + O(1/r))`. The `ln r` regressor
/// absorbs the algebraic (Bessel-type) prefactors that otherwise bias a plain
/// linear fit by up to 15% over windows reachable in f64; the `1/r` regressor
/// absorbs the next-order tail correction, which still costs several percent
/// when the forcing and homogeneous decays compete.
#[must_use]
pub fn fit_exponential_rate(r: &[f64], deficit: &[f64]) -> (f64, f64) {
    assert!(r.len() == deficit.len() && r.len() >= 5, "need >= 5 tail samples");
    let design: Vec<Vec<f64>> =
        r.iter().map(|&ri| vec![1.0, ri, ri.ln(), 1.0 / ri]).collect();
    let logs: Vec<f64> = deficit.iter().map(|&d| d.ln()).collect();
    let c = lstsq(&design, &logs);
    (-c[1], -c[2])
}

/// Least-squares slope of `log(err)` against `log(h)`: the observed
/// convergence order of a refinement ladder.
#[must_use]
pub fn fitted_order(h: &[f64], err: &[f64]) -> f64 {
    assert!(h.len() == err.len() && h.len() >= 2);
    let design: Vec<Vec<f64>> = h.iter().map(|&hi| vec![1.0, hi.ln()]).collect();
    let logs: Vec<f64> = err.iter().map(|&e| e.max(1e-300).ln()).collect();
    lstsq(&design, &logs)[1]
}
