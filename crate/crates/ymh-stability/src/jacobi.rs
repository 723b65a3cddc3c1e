//! The second-variation (Jacobi) operator of the profile surface, on
//! truncations where the area weight stays below a cutoff radius.
//!
//! The surface is covered by the chart `(s, theta)` with `s` in `(0, pi/2)`
//! and `theta` `2*pi`-periodic; the area element is `rho^4 ds dtheta` with
//! `rho = (sin 2s)^{-1/2}`. A normal field has two components `(k1, k2)`
//! along the orthonormal normal frame. Writing `sigma = sin 2s` and
//! `c = cos 2s`, the operator acts componentwise as
//!
//! ```text
//! L k1 = sigma^2 (sigma k1_s)_s + sigma k1_tt - 2 sigma c k2_t + sigma (2 sigma^2 - c^2) k1
//! L k2 = sigma^2 (sigma k2_s)_s + sigma k2_tt + 2 sigma c k1_t + sigma (2 sigma^2 - c^2) k2
//! ```
//!
//! with subscripts for chart derivatives. The first-order `s`-terms are kept
//! in conservative form (`sigma^3 k_ss + 2 sigma^2 c k_s = sigma^2 (sigma k_s)_s`
//! exactly), so the flux-form grid operator is self-adjoint in the area
//! pairing to machine precision. The six bounded fields of
//! [`crate::surface::jacobi_fields`] are annihilated by `L`; the
//! kernel-residual ladder verifies that at second order in the grid step.
//!
//! The truncation keeping `rho < R` is the `s`-window
//! `(asin(R^-2)/2, pi/2 - asin(R^-2)/2)`. On it the module evaluates the
//! second-variation quadratic form and solves the generalized eigenproblem
//! `-L N = mu rho^{-6} N` with Dirichlet ends. Because the coefficients do
//! not depend on `theta`, the problem splits into one symmetric 2x2 block
//! system per angular mode `m` (pattern `k1 = p(s) cos m theta`,
//! `k2 = q(s) sin m theta`; the partner pattern is isospectral), which is
//! solved by shift-invert iteration validated against a dense solve.

use crate::numerics::eigen::{dense_eigenvalues, smallest_eigenpairs, EigenOpts, SymBanded};
use crate::numerics::fd::trig_diff_matrices;
use crate::surface::jacobi_fields;
use crate::{Error, Result};
use std::f64::consts::{FRAC_PI_2, TAU};

/// Uniform grid on the truncated surface `{rho < R}`.
///
/// Nodes are `s_i = s_min + i h` for `i = 0..=n_s` (both Dirichlet ends
/// included) and `theta_l = 2 pi l / n_theta` (periodic). Fields are stored
/// row-major, `i * n_theta + l`.
#[derive(Clone, Debug)]
pub struct TruncatedGrid {
    /// Cutoff radius `R` in units of the area weight `rho`.
    pub truncation: f64,
    /// Number of `s` intervals; there are `n_s + 1` node rows.
    pub n_s: usize,
    /// Number of periodic `theta` nodes (even).
    pub n_theta: usize,
    /// Lower `s` endpoint, `asin(R^-2) / 2`.
    pub s_min: f64,
    /// Grid step in `s`.
    pub h: f64,
}

/// `(s_min, h)` for the window where `sin 2s > R^-2`.
fn s_window(truncation: f64, n_s: usize) -> Result<(f64, f64)> {
    if !(truncation > 1.0) || !truncation.is_finite() {
        return Err(Error::InvalidInput(format!(
            "truncation radius must exceed 1, got {truncation}"
        )));
    }
    if n_s < 4 {
        return Err(Error::InvalidInput(format!("need at least 4 s-intervals, got {n_s}")));
    }
    let s_min = 0.5 * truncation.powi(-2).asin();
    let h = (FRAC_PI_2 - 2.0 * s_min) / n_s as f64;
    Ok((s_min, h))
}

impl TruncatedGrid {
    pub fn new(truncation: f64, n_s: usize, n_theta: usize) -> Result<Self> {
        let (s_min, h) = s_window(truncation, n_s)?;
        if n_theta < 4 || n_theta % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "theta node count must be even and at least 4, got {n_theta}"
            )));
        }
        Ok(Self { truncation, n_s, n_theta, s_min, h })
    }

    #[inline]
    #[must_use]
    pub fn s(&self, i: usize) -> f64 {
        self.s_min + i as f64 * self.h
    }

    #[inline]
    #[must_use]
    pub fn theta(&self, l: usize) -> f64 {
        TAU * l as f64 / self.n_theta as f64
    }

    /// Area weight `rho = (sin 2 s_i)^{-1/2}` at node row `i`.
    #[inline]
    #[must_use]
    pub fn rho(&self, i: usize) -> f64 {
        1.0 / (2.0 * self.s(i)).sin().sqrt()
    }

    #[inline]
    #[must_use]
    pub fn node_count(&self) -> usize {
        (self.n_s + 1) * self.n_theta
    }

    #[inline]
    #[must_use]
    pub fn idx(&self, i: usize, l: usize) -> usize {
        i * self.n_theta + l
    }

    /// Samples a closed-form field `(s, theta) -> (k1, k2)` on every node.
    pub fn sample<F: Fn(f64, f64) -> (f64, f64)>(&self, f: F) -> NormalField {
        let mut out = NormalField::zeros(self.node_count());
        for i in 0..=self.n_s {
            let s = self.s(i);
            for l in 0..self.n_theta {
                let (k1, k2) = f(s, self.theta(l));
                let at = self.idx(i, l);
                out.k1[at] = k1;
                out.k2[at] = k2;
            }
        }
        out
    }

    /// Samples one of the six bounded kernel fields (translations 1-4,
    /// dilation 5, rotation 6).
    pub fn symmetry_field(&self, index: usize) -> Result<NormalField> {
        let mut out = NormalField::zeros(self.node_count());
        for i in 0..=self.n_s {
            let s = self.s(i);
            for l in 0..self.n_theta {
                let (k1, k2) = jacobi_fields(index, s, self.theta(l))?;
                let at = self.idx(i, l);
                out.k1[at] = k1;
                out.k2[at] = k2;
            }
        }
        Ok(out)
    }
}

/// A normal field on a [`TruncatedGrid`]: components along the normal frame,
/// stored row-major over `(s, theta)` nodes.
#[derive(Clone, Debug)]
pub struct NormalField {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
}

impl NormalField {
    #[must_use]
    pub fn zeros(nodes: usize) -> Self {
        Self { k1: vec![0.0; nodes], k2: vec![0.0; nodes] }
    }

    #[must_use]
    pub fn sup_norm(&self) -> f64 {
        let mut sup = 0.0f64;
        for (a, b) in self.k1.iter().zip(&self.k2) {
            sup = sup.max(a.abs()).max(b.abs());
        }
        sup
    }
}

/// Smooth radial cutoff: 1 where `rho <= inner`, 0 where `rho >= outer`,
/// quintic smoothstep (C^2 at both ends) in between.
#[must_use]
pub fn radial_cutoff(rho: f64, inner: f64, outer: f64) -> f64 {
    assert!(inner < outer, "cutoff needs inner < outer, got {inner} >= {outer}");
    if rho <= inner {
        1.0
    } else if rho >= outer {
        0.0
    } else {
        let t = (rho - inner) / (outer - inner);
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// Applies the surface stability operator on the grid: flux-form centered
/// stencils in `s` (second order), trigonometric differentiation matrices in
/// `theta` (exact on the harmonics resolved by the grid). Output boundary
/// rows are zero; the operator value is defined on interior rows only.
pub fn apply_jacobi(grid: &TruncatedGrid, field: &NormalField) -> Result<NormalField> {
    let nodes = grid.node_count();
    if field.k1.len() != nodes || field.k2.len() != nodes {
        return Err(Error::InvalidInput(format!(
            "field has {}/{} component values, grid has {nodes} nodes",
            field.k1.len(),
            field.k2.len()
        )));
    }
    let nt = grid.n_theta;
    let (d1, d2) = trig_diff_matrices(nt);
    let h = grid.h;
    let mut out = NormalField::zeros(nodes);
    let mut k1t = vec![0.0; nt];
    let mut k1tt = vec![0.0; nt];
    let mut k2t = vec![0.0; nt];
    let mut k2tt = vec![0.0; nt];
    for i in 1..grid.n_s {
        let s = grid.s(i);
        let sigma = (2.0 * s).sin();
        let c = (2.0 * s).cos();
        let flux_up = (2.0 * (s + 0.5 * h)).sin();
        let flux_dn = (2.0 * (s - 0.5 * h)).sin();
        let base = grid.idx(i, 0);
        let up = base + nt;
        let dn = base - nt;
        for l in 0..nt {
            let row = &d1[l * nt..(l + 1) * nt];
            let row2 = &d2[l * nt..(l + 1) * nt];
            let mut a1 = 0.0;
            let mut a2 = 0.0;
            let mut b1 = 0.0;
            let mut b2 = 0.0;
            for (m, (&w1, &w2)) in
                field.k1[base..base + nt].iter().zip(&field.k2[base..base + nt]).enumerate()
            {
                a1 += row[m] * w1;
                a2 += row2[m] * w1;
                b1 += row[m] * w2;
                b2 += row2[m] * w2;
            }
            k1t[l] = a1;
            k1tt[l] = a2;
            k2t[l] = b1;
            k2tt[l] = b2;
        }
        let potential = sigma * (2.0 * sigma * sigma - c * c);
        let scale = sigma * sigma / (h * h);
        for l in 0..nt {
            let s1 = scale
                * (flux_up * (field.k1[up + l] - field.k1[base + l])
                    - flux_dn * (field.k1[base + l] - field.k1[dn + l]));
            let s2 = scale
                * (flux_up * (field.k2[up + l] - field.k2[base + l])
                    - flux_dn * (field.k2[base + l] - field.k2[dn + l]));
            out.k1[base + l] =
                s1 + sigma * k1tt[l] - 2.0 * sigma * c * k2t[l] + potential * field.k1[base + l];
            out.k2[base + l] =
                s2 + sigma * k2tt[l] + 2.0 * sigma * c * k1t[l] + potential * field.k2[base + l];
        }
    }
    Ok(out)
}

/// Pairing `integral of <f, g>` against the area element `rho^4 ds dtheta`:
/// trapezoid in `s`, uniform weights in `theta`.
#[must_use]
pub fn area_inner(grid: &TruncatedGrid, f: &NormalField, g: &NormalField) -> f64 {
    assert_eq!(f.k1.len(), grid.node_count(), "field does not match grid");
    assert_eq!(g.k1.len(), grid.node_count(), "field does not match grid");
    let dtheta = TAU / grid.n_theta as f64;
    let mut total = 0.0;
    for i in 0..=grid.n_s {
        let sigma = (2.0 * grid.s(i)).sin();
        let ws = if i == 0 || i == grid.n_s { 0.5 * grid.h } else { grid.h };
        let w = ws * dtheta / (sigma * sigma);
        let mut row = 0.0;
        for l in 0..grid.n_theta {
            let at = grid.idx(i, l);
            row += f.k1[at] * g.k1[at] + f.k2[at] * g.k2[at];
        }
        total += row * w;
    }
    total
}

/// Squared norm against the eigenproblem weight `rho^{-6}` times the area
/// element, i.e. `integral of sigma |f|^2 ds dtheta`.
#[must_use]
pub fn weight_norm_sq(grid: &TruncatedGrid, f: &NormalField) -> f64 {
    assert_eq!(f.k1.len(), grid.node_count(), "field does not match grid");
    let dtheta = TAU / grid.n_theta as f64;
    let mut total = 0.0;
    for i in 0..=grid.n_s {
        let sigma = (2.0 * grid.s(i)).sin();
        let ws = if i == 0 || i == grid.n_s { 0.5 * grid.h } else { grid.h };
        let w = ws * dtheta * sigma;
        let mut row = 0.0;
        for l in 0..grid.n_theta {
            let at = grid.idx(i, l);
            row += f.k1[at] * f.k1[at] + f.k2[at] * f.k2[at];
        }
        total += row * w;
    }
    total
}

/// Second-variation quadratic form of a field vanishing at the truncation
/// boundary. Per `ds dtheta` the integrand is
///
/// ```text
/// sigma (k1_s^2 + k2_s^2) + sigma^{-1} (k1_t^2 + k2_t^2)
///   + 2 sigma^{-1} c (k1 k2_t - k2 k1_t)
///   - sigma^{-1} (2 sigma^2 - c^2) (k1^2 + k2^2)
/// ```
///
/// The sign of the first-order coupling term is tied to the coupling signs
/// in [`apply_jacobi`]: integration by parts gives exactly
/// `Q(N) = -integral of <L N, N>` against the area element, and the tests
/// enforce that identity.
pub fn quadratic_form(grid: &TruncatedGrid, field: &NormalField) -> Result<f64> {
    let nodes = grid.node_count();
    if field.k1.len() != nodes || field.k2.len() != nodes {
        return Err(Error::InvalidInput(format!(
            "field has {}/{} component values, grid has {nodes} nodes",
            field.k1.len(),
            field.k2.len()
        )));
    }
    let sup = field.sup_norm();
    let mut boundary = 0.0f64;
    for l in 0..grid.n_theta {
        let top = grid.idx(grid.n_s, l);
        boundary = boundary
            .max(field.k1[l].abs())
            .max(field.k2[l].abs())
            .max(field.k1[top].abs())
            .max(field.k2[top].abs());
    }
    if boundary > 1e-12 * (1.0 + sup) {
        return Err(Error::InvalidInput(format!(
            "field does not vanish at the truncation boundary (worst value {boundary:.3e})"
        )));
    }
    let nt = grid.n_theta;
    let (d1, _) = trig_diff_matrices(nt);
    let h = grid.h;
    let mut total = 0.0;
    for i in 1..grid.n_s {
        let s = grid.s(i);
        let sigma = (2.0 * s).sin();
        let c = (2.0 * s).cos();
        let base = grid.idx(i, 0);
        let up = base + nt;
        let dn = base - nt;
        let mut row_sum = 0.0;
        for l in 0..nt {
            let row = &d1[l * nt..(l + 1) * nt];
            let mut k1t = 0.0;
            let mut k2t = 0.0;
            for (m, (&w1, &w2)) in
                field.k1[base..base + nt].iter().zip(&field.k2[base..base + nt]).enumerate()
            {
                k1t += row[m] * w1;
                k2t += row[m] * w2;
            }
            let k1 = field.k1[base + l];
            let k2 = field.k2[base + l];
            let k1s = (field.k1[up + l] - field.k1[dn + l]) / (2.0 * h);
            let k2s = (field.k2[up + l] - field.k2[dn + l]) / (2.0 * h);
            row_sum += sigma * (k1s * k1s + k2s * k2s)
                + (k1t * k1t + k2t * k2t) / sigma
                + 2.0 * c / sigma * (k1 * k2t - k2 * k1t)
                - (2.0 * sigma * sigma - c * c) / sigma * (k1 * k1 + k2 * k2);
        }
        total += row_sum;
    }
    Ok(total * h * TAU / nt as f64)
}

/// One rung of a kernel-residual refinement ladder.
#[derive(Clone, Copy, Debug)]
pub struct ConvergenceRow {
    pub h: f64,
    pub residual: f64,
}

/// Sup-norm of the operator applied to symmetry field `index` on each grid
/// of a refinement ladder (at least three nested grids).
pub fn kernel_residual_ladder(
    truncation: f64,
    index: usize,
    ladder: &[usize],
    n_theta: usize,
) -> Result<Vec<ConvergenceRow>> {
    if ladder.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "refinement ladder needs at least 3 grids, got {}",
            ladder.len()
        )));
    }
    let mut rows = Vec::with_capacity(ladder.len());
    for &n_s in ladder {
        let grid = TruncatedGrid::new(truncation, n_s, n_theta)?;
        let field = grid.symmetry_field(index)?;
        let residual = apply_jacobi(&grid, &field)?.sup_norm();
        rows.push(ConvergenceRow { h: grid.h, residual });
    }
    Ok(rows)
}

/// One reported eigenpair of the truncated problem.
#[derive(Clone, Copy, Debug)]
pub struct SpectrumEntry {
    /// Angular mode of the 2x2 block the pair came from.
    pub mode: usize,
    pub eigenvalue: f64,
    /// `||A v - mu B v||_2` with `v` normalized to `v^T B v = 1`.
    pub residual: f64,
}

/// Smallest generalized eigenvalues on a truncated surface, gathered over
/// angular modes and sorted ascending.
#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub truncation: f64,
    pub n_s: usize,
    /// True when the shift-invert path reproduced a dense solve on the
    /// coarse validation grid for every requested mode.
    pub dense_validated: bool,
    pub entries: Vec<SpectrumEntry>,
}

impl SpectrumReport {
    /// The smallest reported eigenpair.
    #[must_use]
    pub fn smallest(&self) -> SpectrumEntry {
        self.entries[0]
    }
}

/// Assembles the symmetric 2x2 block pencil `(A, B)` of angular mode `mode`
/// at the interior `s` nodes, Dirichlet ends eliminated, unknowns interleaved
/// `p_1, q_1, p_2, q_2, ...` (bandwidth 2). `A` is the negative of the
/// operator against the area element; `B` is the `rho^{-6}` weight against
/// the area element, i.e. `diag(sigma)` per component.
fn mode_matrices(truncation: f64, n_s: usize, mode: usize) -> Result<(SymBanded, Vec<f64>)> {
    let (s_min, h) = s_window(truncation, n_s)?;
    let interior = n_s - 1;
    let mut a = SymBanded::zeros(2 * interior, 2);
    let mut b = vec![0.0; 2 * interior];
    let m = mode as f64;
    for i in 0..interior {
        let s = s_min + (i + 1) as f64 * h;
        let sigma = (2.0 * s).sin();
        let c = (2.0 * s).cos();
        let flux_up = (2.0 * (s + 0.5 * h)).sin();
        let flux_dn = (2.0 * (s - 0.5 * h)).sin();
        let diag = (flux_up + flux_dn) / (h * h) + (m * m + c * c) / sigma - 2.0 * sigma;
        let p = 2 * i;
        let q = p + 1;
        a.add(p, p, diag);
        a.add(q, q, diag);
        if mode > 0 {
            a.add(p, q, 2.0 * m * c / sigma);
        }
        if i + 1 < interior {
            let off = -flux_up / (h * h);
            a.add(p, p + 2, off);
            a.add(q, q + 2, off);
        }
        b[p] = sigma;
        b[q] = sigma;
    }
    Ok((a, b))
}

/// Number of `s` intervals of the coarse grid used to validate the
/// shift-invert eigensolver against a dense solve.
const VALIDATION_INTERVALS: usize = 48;

/// Smallest `per_mode` eigenpairs of `-L N = mu rho^{-6} N` on `{rho < R}`
/// for each angular mode in `modes`, sorted ascending over all modes.
///
/// Every mode is first solved on a coarse validation grid by both the
/// shift-invert iteration and a dense reference; a disagreement beyond
/// `1e-8` aborts the run rather than reporting unvalidated numbers.
pub fn smallest_eigenvalues(
    truncation: f64,
    n_s: usize,
    modes: &[usize],
    per_mode: usize,
    seed: u64,
) -> Result<SpectrumReport> {
    if !(truncation > 2.0) {
        return Err(Error::InvalidInput(format!(
            "truncated eigenproblem needs radius above 2, got {truncation}"
        )));
    }
    if modes.is_empty() || per_mode == 0 {
        return Err(Error::InvalidInput("need at least one mode and one pair per mode".into()));
    }
    if n_s < 2 * VALIDATION_INTERVALS {
        return Err(Error::InvalidInput(format!(
            "production grid must refine the validation grid: n_s >= {}, got {n_s}",
            2 * VALIDATION_INTERVALS
        )));
    }
    let mut entries = Vec::with_capacity(modes.len() * per_mode);
    for &mode in modes {
        let mode_seed = seed ^ (mode as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let opts = EigenOpts { k: per_mode, seed: mode_seed, tol: 1e-12, ..Default::default() };

        let (av, bv) = mode_matrices(truncation, VALIDATION_INTERVALS, mode)?;
        let dense = dense_eigenvalues(&av, &bv);
        let trial = smallest_eigenpairs(&av, &bv, &opts)?;
        for (rank, pair) in trial.iter().enumerate() {
            let gap = (pair.value - dense[rank]).abs();
            if gap > 1e-8 * (1.0 + dense[rank].abs()) {
                return Err(Error::Linalg(format!(
                    "mode {mode} eigenvalue {rank}: iterative {:.12e} vs dense {:.12e} on the validation grid",
                    pair.value, dense[rank]
                )));
            }
        }

        let (a, b) = mode_matrices(truncation, n_s, mode)?;
        let pairs = smallest_eigenpairs(&a, &b, &opts)?;
        for pair in pairs {
            entries.push(SpectrumEntry { mode, eigenvalue: pair.value, residual: pair.residual });
        }
    }
    entries.sort_by(|x, y| x.eigenvalue.partial_cmp(&y.eigenvalue).unwrap());
    Ok(SpectrumReport { truncation, n_s, dense_validated: true, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fit::fitted_order;

    /// Smooth even bump in `s`: quintic ramps over `[0.12, 0.7]` and the
    /// mirror window, identically 1 in the middle and 0 near both ends of
    /// the chart. Gentle slopes keep stencil error small on test grids.
    fn arc_bump(s: f64) -> f64 {
        let ramp = |t: f64| {
            if t <= 0.0 {
                0.0
            } else if t >= 1.0 {
                1.0
            } else {
                t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
            }
        };
        ramp((s - 0.12) / 0.58) * ramp((FRAC_PI_2 - 0.12 - s) / 0.58)
    }

    fn combo_field(grid: &TruncatedGrid, weights: &[(usize, f64)], bump: bool) -> NormalField {
        let mut out = NormalField::zeros(grid.node_count());
        for i in 0..=grid.n_s {
            let s = grid.s(i);
            let chi = if bump { arc_bump(s) } else { 1.0 };
            for l in 0..grid.n_theta {
                let theta = grid.theta(l);
                let mut k1 = 0.0;
                let mut k2 = 0.0;
                for &(index, w) in weights {
                    let (a, b) = jacobi_fields(index, s, theta).expect("valid index");
                    k1 += w * a;
                    k2 += w * b;
                }
                let at = grid.idx(i, l);
                out.k1[at] = chi * k1;
                out.k2[at] = chi * k2;
            }
        }
        out
    }

    #[test]
    fn constant_field_reduces_to_the_potential_term() {
        let grid = TruncatedGrid::new(5.0, 64, 8).expect("grid");
        let field = grid.sample(|_, _| (1.0, 0.0));
        let out = apply_jacobi(&grid, &field).expect("apply");
        for i in 1..grid.n_s {
            let s = grid.s(i);
            let sigma = (2.0 * s).sin();
            let c = (2.0 * s).cos();
            let want = sigma * (2.0 * sigma * sigma - c * c);
            for l in 0..grid.n_theta {
                let at = grid.idx(i, l);
                let gap1 = (out.k1[at] - want).abs();
                assert!(gap1 < 1e-12, "row s={s:.4}: k1 value off by {gap1:.3e}");
                assert!(
                    out.k2[at].abs() < 1e-12,
                    "row s={s:.4}: k2 should vanish, got {:.3e}",
                    out.k2[at]
                );
            }
        }
    }

    #[test]
    fn grid_and_field_preconditions_are_enforced() {
        assert!(TruncatedGrid::new(0.9, 32, 8).is_err(), "radius below 1 must be rejected");
        assert!(TruncatedGrid::new(5.0, 2, 8).is_err(), "too few s-intervals must be rejected");
        assert!(TruncatedGrid::new(5.0, 32, 7).is_err(), "odd theta count must be rejected");
        let grid = TruncatedGrid::new(5.0, 32, 8).expect("grid");
        let wrong = NormalField::zeros(10);
        assert!(apply_jacobi(&grid, &wrong).is_err(), "size mismatch must be rejected");
        assert!(quadratic_form(&grid, &wrong).is_err(), "size mismatch must be rejected");
        assert!(
            smallest_eigenvalues(1.5, 128, &[0], 1, 1).is_err(),
            "eigenproblem below the minimum radius must be rejected"
        );
        assert!(
            smallest_eigenvalues(5.0, 128, &[], 1, 1).is_err(),
            "empty mode list must be rejected"
        );
    }

    #[test]
    fn all_six_symmetry_fields_are_discrete_kernels() {
        let ladder = [100usize, 200, 400];
        for index in 1..=6 {
            let rows = kernel_residual_ladder(5.0, index, &ladder, 16).expect("ladder");
            let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
            let sups: Vec<f64> = rows.iter().map(|r| r.residual).collect();
            let order = fitted_order(&hs, &sups);
            assert!(
                (1.8..=2.2).contains(&order),
                "field {index}: fitted order {order:.3} from residuals {sups:?}"
            );
            assert!(
                sups[2] < 1e-4,
                "field {index}: finest residual {:.3e} should be below 1e-4",
                sups[2]
            );
        }
    }

    #[test]
    fn stretched_weight_field_is_not_a_kernel() {
        // Same shape as the dilation field but with exponent 0.6 instead of
        // 1/2; the operator must see it at order one on every grid.
        let ladder = [100usize, 200, 400];
        for &n_s in &ladder {
            let grid = TruncatedGrid::new(5.0, n_s, 8).expect("grid");
            let field = grid.sample(|s, _| ((2.0 * s).sin().powf(0.6), 0.0));
            let residual = apply_jacobi(&grid, &field).expect("apply").sup_norm();
            assert!(
                residual > 1e-2,
                "negative control at n_s={n_s}: residual {residual:.3e} is too small"
            );
        }
    }

    #[test]
    fn by_parts_ties_the_form_to_the_operator() {
        let grid = TruncatedGrid::new(5.0, 1024, 16).expect("grid");
        let field = combo_field(&grid, &[(1, 0.25), (6, 0.1), (3, 0.05)], true);
        let q = quadratic_form(&grid, &field).expect("form");
        let lf = apply_jacobi(&grid, &field).expect("apply");
        let paired = -area_inner(&grid, &lf, &field);
        let gap = (q - paired).abs();
        assert!(
            gap < 1e-4,
            "form {q:.8e} vs operator pairing {paired:.8e}, gap {gap:.3e}"
        );

        // The identity has to pin the sign of the first-order coupling term:
        // negating k2 flips that term and nothing else, so the two form
        // values must differ by a visible amount.
        let mut flipped = field.clone();
        for v in &mut flipped.k2 {
            *v = -*v;
        }
        let q_flipped = quadratic_form(&grid, &flipped).expect("form");
        let cross = 0.5 * (q - q_flipped).abs();
        assert!(
            cross > 1e-3,
            "coupling contribution {cross:.3e} too small for the identity to discriminate"
        );
    }

    #[test]
    fn cutoff_kernel_fields_have_nonnegative_energy() {
        let grid = TruncatedGrid::new(5.0, 1024, 8).expect("grid");
        let zero = NormalField::zeros(grid.node_count());
        let q0 = quadratic_form(&grid, &zero).expect("form");
        assert_eq!(q0, 0.0, "zero field must give exactly zero");

        for &(index, label) in &[(5usize, "dilation"), (1usize, "translation")] {
            let mut field = grid.symmetry_field(index).expect("field");
            for i in 0..=grid.n_s {
                let chi = radial_cutoff(grid.rho(i), 2.5, 4.75);
                for l in 0..grid.n_theta {
                    let at = grid.idx(i, l);
                    field.k1[at] *= chi;
                    field.k2[at] *= chi;
                }
            }
            let q = quadratic_form(&grid, &field).expect("form");
            let floor = -1e-6 * weight_norm_sq(&grid, &field);
            assert!(q >= floor, "{label}: form value {q:.6e} below stability floor {floor:.3e}");
        }
    }

    #[test]
    fn boundary_nonzero_fields_are_rejected() {
        let grid = TruncatedGrid::new(5.0, 64, 8).expect("grid");
        let field = grid.symmetry_field(5).expect("field");
        let err = quadratic_form(&grid, &field);
        assert!(err.is_err(), "dilation field does not vanish at rho = R and must be rejected");
    }

    #[test]
    fn grid_operator_is_self_adjoint_in_the_area_pairing() {
        let grid = TruncatedGrid::new(5.0, 256, 16).expect("grid");
        let f = combo_field(&grid, &[(1, 1.0), (6, 0.3)], true);
        let g = grid.sample(|s, theta| {
            let chi = arc_bump(s);
            let sin_s = s.sin();
            (chi * sin_s * sin_s * (2.0 * theta).cos(), chi * s.cos() * (2.0 * theta).sin())
        });
        let lf = apply_jacobi(&grid, &f).expect("apply");
        let lg = apply_jacobi(&grid, &g).expect("apply");
        let forward = area_inner(&grid, &lf, &g);
        let backward = area_inner(&grid, &f, &lg);
        let scale = (area_inner(&grid, &f, &f) * area_inner(&grid, &g, &g)).sqrt();
        assert!(
            (forward - backward).abs() <= 1e-8 * scale,
            "adjoint defect {:.3e} against scale {scale:.3e}",
            (forward - backward).abs()
        );
    }

    #[test]
    fn smallest_eigenvalue_is_stable_and_decreases_with_truncation() {
        let modes = [0usize, 1, 2, 3, 4];
        let mut smallest = Vec::new();
        for &truncation in &[5.0f64, 10.0, 20.0] {
            let report = smallest_eigenvalues(truncation, 400, &modes, 2, 7).expect("spectrum");
            assert!(report.dense_validated, "R={truncation}: dense validation must have run");
            for pair in report.entries.windows(2) {
                assert!(
                    pair[0].eigenvalue <= pair[1].eigenvalue,
                    "entries must be sorted ascending"
                );
            }
            for entry in &report.entries {
                assert!(
                    entry.residual < 1e-8,
                    "R={truncation} mode {}: eigenpair residual {:.3e}",
                    entry.mode,
                    entry.residual
                );
            }
            let min = report.smallest();
            assert!(
                min.eigenvalue >= -1e-6,
                "R={truncation}: smallest eigenvalue {:.6e} violates stability",
                min.eigenvalue
            );
            smallest.push(min.eigenvalue);
        }
        assert!(
            smallest[1] <= smallest[0] + 1e-10 && smallest[2] <= smallest[1] + 1e-10,
            "smallest eigenvalue must not increase with the truncation radius: {smallest:?}"
        );
        assert!(
            smallest[2] < smallest[0],
            "growing the domain must strictly lower the smallest eigenvalue: {smallest:?}"
        );
        assert!(
            smallest[2] < 0.1,
            "R=20 smallest eigenvalue {:.6e} should already be close to zero",
            smallest[2]
        );
    }

    #[test]
    fn cutoff_dilation_field_bounds_the_smallest_eigenvalue() {
        // Discrete variational bound: the Rayleigh quotient of any interior
        // vector in the assembled mode-0 pencil dominates the reported
        // smallest eigenvalue.
        let truncation = 20.0;
        let n_s = 400;
        let report = smallest_eigenvalues(truncation, n_s, &[0, 1], 2, 11).expect("spectrum");
        let (a, b) = mode_matrices(truncation, n_s, 0).expect("pencil");
        let (s_min, h) = s_window(truncation, n_s).expect("window");
        let interior = n_s - 1;
        let mut v = vec![0.0; 2 * interior];
        for i in 0..interior {
            let s = s_min + (i + 1) as f64 * h;
            let sigma = (2.0 * s).sin();
            v[2 * i] = radial_cutoff(1.0 / sigma.sqrt(), 10.0, 19.0) * sigma.sqrt();
        }
        let mut av = vec![0.0; v.len()];
        a.matvec(&v, &mut av);
        let num: f64 = v.iter().zip(&av).map(|(x, y)| x * y).sum();
        let den: f64 = v.iter().zip(&b).map(|(x, w)| x * x * w).sum();
        let rayleigh = num / den;
        let min = report.smallest().eigenvalue;
        assert!(
            min <= rayleigh + 1e-10,
            "smallest eigenvalue {min:.6e} exceeds the cutoff-field bound {rayleigh:.6e}"
        );
        assert!(rayleigh > 0.0, "cutoff-field Rayleigh quotient should be positive");
    }

    #[test]
    fn mode_blocks_decouple() {
        // The union of the per-mode spectra must equal the spectrum of the
        // jointly assembled block operator.
        let truncation = 5.0;
        let n_s = VALIDATION_INTERVALS;
        let modes = [0usize, 1, 2, 3, 4];
        let interior = n_s - 1;
        let block = 2 * interior;
        let mut joint = SymBanded::zeros(modes.len() * block, 2);
        let mut joint_b = vec![0.0; modes.len() * block];
        let mut separate = Vec::new();
        for (slot, &mode) in modes.iter().enumerate() {
            let (a, b) = mode_matrices(truncation, n_s, mode).expect("pencil");
            separate.extend(dense_eigenvalues(&a, &b));
            let at = slot * block;
            for i in 0..block {
                joint_b[at + i] = b[i];
                for j in i..(i + 3).min(block) {
                    let v = a.get(i, j);
                    if v != 0.0 {
                        joint.add(at + i, at + j, v);
                    }
                }
            }
        }
        separate.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let jointly = dense_eigenvalues(&joint, &joint_b);
        assert_eq!(separate.len(), jointly.len());
        for (i, (&lone, &full)) in separate.iter().zip(&jointly).enumerate() {
            assert!(
                (lone - full).abs() <= 1e-10 * (1.0 + lone.abs()),
                "eigenvalue {i}: separate {lone:.12e} vs joint {full:.12e}"
            );
        }
    }

    #[test]
    fn cutoff_is_smooth_and_clamped() {
        assert_eq!(radial_cutoff(1.0, 2.0, 4.0), 1.0);
        assert_eq!(radial_cutoff(5.0, 2.0, 4.0), 0.0);
        let mid = radial_cutoff(3.0, 2.0, 4.0);
        assert!((mid - 0.5).abs() < 1e-14, "midpoint value {mid}");
        // C^2 matching at the ends: values and difference quotients flatten.
        let eps = 1e-4;
        let near_one = 1.0 - radial_cutoff(2.0 + eps, 2.0, 4.0);
        let near_zero = radial_cutoff(4.0 - eps, 2.0, 4.0);
        assert!(near_one < 1e-10, "lower end not flat: {near_one:.3e}");
        assert!(near_zero < 1e-10, "upper end not flat: {near_zero:.3e}");
    }
}
