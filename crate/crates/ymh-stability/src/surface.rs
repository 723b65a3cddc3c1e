//! Geometry of the core surface in R^4: the holomorphic curve, its unit
//! normal frame, Fermi coordinates on a tubular neighborhood, the closed-form
//! tube metric with its small-epsilon inverse expansion, the area weight, and
//! the six rigid-motion normal fields.
//!
//! R^4 is identified with C^2 through (x1, x2, x3, x4) = (Re z1, Im z1,
//! Re z2, Im z2). The curve at unit scale is
//!
//! ```text
//! Gamma(s, theta) = (e^{is} / sqrt(sin 2s)) (cos theta, sin theta),   0 < s < pi/2,
//! ```
//!
//! and the rescaled family is `Gamma_eps(st, tt) = Gamma(eps st, eps tt) / eps`
//! in the stretched variables `st = s/eps`, `tt = theta/eps`. Points of the
//! tube carry coordinates `y = (st, tt, a, b)` where `(a, b)` are offsets
//! along the unit normals `(m, n)`; the chart is valid while
//! `a^2 + b^2 < 1 / (eps sin 2 eps st)`.

use nalgebra::Matrix4;
use rand::Rng;
use std::f64::consts::{FRAC_PI_2, TAU};

use crate::{Error, Result};

/// A point of the unit-scale curve together with its moving frame.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePoint {
    /// Position in R^4.
    pub position: [f64; 4],
    /// First unit normal.
    pub m: [f64; 4],
    /// Second unit normal.
    pub n: [f64; 4],
    /// Derivative of the position in `s` (length `(sin 2s)^{-3/2}`).
    pub tangent_s: [f64; 4],
    /// Derivative of the position in `theta` (length `(sin 2s)^{-1/2}`).
    pub tangent_theta: [f64; 4],
}

fn check_arc(s: f64) -> Result<()> {
    if !s.is_finite() || s <= 0.0 || s >= FRAC_PI_2 {
        return Err(Error::ChartBounds(format!(
            "arc parameter {s} outside (0, pi/2)"
        )));
    }
    Ok(())
}

/// Unit normal pair at the unscaled parameters `(s, theta)`.
///
/// In complex form `m = i e^{-is} (cos theta, sin theta)` and
/// `n = i e^{is} (-sin theta, cos theta)`.
fn normal_frame(s: f64, theta: f64) -> ([f64; 4], [f64; 4]) {
    let (sin_s, cos_s) = s.sin_cos();
    let (sin_t, cos_t) = theta.sin_cos();
    let m = [
        sin_s * cos_t,
        cos_s * cos_t,
        sin_s * sin_t,
        cos_s * sin_t,
    ];
    let n = [
        sin_s * sin_t,
        -cos_s * sin_t,
        -sin_s * cos_t,
        cos_s * cos_t,
    ];
    (m, n)
}

/// Evaluates the unit-scale curve, its normal frame, and its coordinate
/// tangent vectors at `(s, theta)`.
pub fn gamma_point(s: f64, theta: f64) -> Result<SurfacePoint> {
    check_arc(s)?;
    if !theta.is_finite() {
        return Err(Error::ChartBounds(format!("angle {theta} not finite")));
    }
    let sigma = (2.0 * s).sin();
    let rho = 1.0 / sigma.sqrt();
    let (sin_s, cos_s) = s.sin_cos();
    let (sin_t, cos_t) = theta.sin_cos();
    let position = [
        rho * cos_s * cos_t,
        rho * sin_s * cos_t,
        rho * cos_s * sin_t,
        rho * sin_s * sin_t,
    ];
    // d/ds [cos s (sin 2s)^{-1/2}] = -cos s (sin 2s)^{-3/2} and
    // d/ds [sin s (sin 2s)^{-1/2}] =  sin s (sin 2s)^{-3/2}.
    let q = rho * rho * rho;
    let tangent_s = [
        -q * cos_s * cos_t,
        q * sin_s * cos_t,
        -q * cos_s * sin_t,
        q * sin_s * sin_t,
    ];
    let tangent_theta = [
        -rho * cos_s * sin_t,
        -rho * sin_s * sin_t,
        rho * cos_s * cos_t,
        rho * sin_s * cos_t,
    ];
    let (m, n) = normal_frame(s, theta);
    Ok(SurfacePoint {
        position,
        m,
        n,
        tangent_s,
        tangent_theta,
    })
}

/// Tabulated normal perturbations of the center surface, stored row-major
/// over the chart's `(s, theta)` grid. Carried as data for downstream
/// consumers; the geometric operations below describe the unperturbed tube.
#[derive(Clone, Debug, Default)]
pub struct Perturbations {
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

/// Fermi chart of the tube around the rescaled surface.
#[derive(Clone, Debug)]
pub struct FermiChart {
    pub epsilon: f64,
    /// Stretched arc nodes `st` (unscaled arc is `eps * st`).
    pub s_grid: Vec<f64>,
    /// Stretched angular nodes `tt`.
    pub theta_grid: Vec<f64>,
    /// Polar radii of the fiber grid: offsets are `a = r cos phi`, `b = r sin phi`.
    pub fiber_radii: Vec<f64>,
    /// Polar angles of the fiber grid.
    pub fiber_angles: Vec<f64>,
    pub perturbations: Option<Perturbations>,
}

/// Exact tube metric at the unscaled point `(s, a, b)`, in coordinates
/// `(st, tt, a, b)`. The upper-left block is
///
/// ```text
/// [ (eps a - sg^{-3/2})^2 + eps^2 b^2     -2 b eps sg^{-1/2}                    ]
/// [ -2 b eps sg^{-1/2}                    eps^2 (a^2+b^2) + sg^{-1} + 2 a eps sg^{1/2} ]
/// ```
///
/// with `sg = sin 2s`; the only off-block entries couple `tt` to `(a, b)`
/// through `-+ (b, a) eps cos 2s`, and the lower-right block is the identity.
fn metric_matrix(epsilon: f64, s: f64, a: f64, b: f64) -> Matrix4<f64> {
    let sigma = (2.0 * s).sin();
    let cbar = (2.0 * s).cos();
    let sq = sigma.sqrt();
    let a11 = (epsilon * a - 1.0 / (sigma * sq)).powi(2) + epsilon * epsilon * b * b;
    let a12 = -2.0 * b * epsilon / sq;
    let a22 = epsilon * epsilon * (a * a + b * b) + 1.0 / sigma + 2.0 * a * epsilon * sq;
    let g23 = -b * epsilon * cbar;
    let g24 = a * epsilon * cbar;
    Matrix4::new(
        a11, a12, 0.0, 0.0, //
        a12, a22, g23, g24, //
        0.0, g23, 1.0, 0.0, //
        0.0, g24, 0.0, 1.0,
    )
}

/// Metric matrix and determinant at a tube point.
#[derive(Clone, Copy, Debug)]
pub struct MetricData {
    pub g: Matrix4<f64>,
    pub det: f64,
}

impl FermiChart {
    /// Builds a chart from explicit grids, validating the tube bound and the
    /// positivity of the metric at every grid point.
    pub fn new(
        epsilon: f64,
        s_grid: Vec<f64>,
        theta_grid: Vec<f64>,
        fiber_radii: Vec<f64>,
        fiber_angles: Vec<f64>,
        perturbations: Option<Perturbations>,
    ) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if s_grid.is_empty() || theta_grid.is_empty() {
            return Err(Error::InvalidInput("empty surface grid".into()));
        }
        let half_span = FRAC_PI_2 / epsilon;
        for pair in s_grid.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidInput("arc grid must increase".into()));
            }
        }
        for &st in &s_grid {
            if !(st > 0.0 && st < half_span) {
                return Err(Error::ChartBounds(format!(
                    "arc node {st} outside (0, {half_span})"
                )));
            }
        }
        for &tt in &theta_grid {
            if !tt.is_finite() {
                return Err(Error::InvalidInput("angular node not finite".into()));
            }
        }
        for &r in &fiber_radii {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::InvalidInput(format!("fiber radius {r} invalid")));
            }
        }
        if let Some(p) = &perturbations {
            let want = s_grid.len() * theta_grid.len();
            if p.f1.len() != want || p.f2.len() != want {
                return Err(Error::InvalidInput(format!(
                    "perturbation tables must have {want} entries, got {} and {}",
                    p.f1.len(),
                    p.f2.len()
                )));
            }
        }
        let chart = Self {
            epsilon,
            s_grid,
            theta_grid,
            fiber_radii,
            fiber_angles,
            perturbations,
        };
        // Tube bound and metric positivity at every (arc, fiber) node; the
        // metric does not depend on the angular surface coordinate.
        for &st in &chart.s_grid {
            let bound = chart.tube_radius(st)?;
            for &r in &chart.fiber_radii {
                if r >= bound {
                    return Err(Error::ChartBounds(format!(
                        "fiber radius {r} reaches the tube boundary {bound} at arc node {st}"
                    )));
                }
                for &phi in &chart.fiber_angles {
                    let md = chart.metric_at(st, 0.0, r * phi.cos(), r * phi.sin())?;
                    if !(md.det > 0.0) {
                        return Err(Error::ChartBounds(format!(
                            "metric determinant {} not positive at st={st}, r={r}, phi={phi}",
                            md.det
                        )));
                    }
                }
            }
        }
        Ok(chart)
    }

    /// Uniform chart for the truncation at weight level `truncation_rho`:
    /// the arc range is `[s_min, pi/2 - s_min]` with `sin 2 s_min =
    /// truncation_rho^{-2}`, sampled at `n_s + 1` stretched nodes (`n_s`
    /// even, ready for Simpson weights); the angular grid has `n_theta`
    /// periodic nodes; the fiber holds `n_fiber_r` midpoint radii up to
    /// `fiber_radius` and `n_fiber_phi` periodic angles.
    pub fn uniform(
        epsilon: f64,
        truncation_rho: f64,
        n_s: usize,
        n_theta: usize,
        fiber_radius: f64,
        n_fiber_r: usize,
        n_fiber_phi: usize,
    ) -> Result<Self> {
        if !(truncation_rho > 1.0) || !truncation_rho.is_finite() {
            return Err(Error::InvalidInput(format!(
                "truncation weight must exceed 1, got {truncation_rho}"
            )));
        }
        if n_s < 2 || n_s % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "arc node count must be even and at least 2, got {n_s}"
            )));
        }
        if n_theta < 2 || n_fiber_r == 0 || n_fiber_phi < 2 {
            return Err(Error::InvalidInput(
                "angular and fiber grids need at least two nodes".into(),
            ));
        }
        let s_min = 0.5 * truncation_rho.powi(-2).asin();
        let lo = s_min / epsilon;
        let hi = (FRAC_PI_2 - s_min) / epsilon;
        let hs = (hi - lo) / n_s as f64;
        let s_grid = (0..=n_s).map(|i| lo + i as f64 * hs).collect();
        let theta_grid = (0..n_theta)
            .map(|i| i as f64 * TAU / (epsilon * n_theta as f64))
            .collect();
        let hr = fiber_radius / n_fiber_r as f64;
        let fiber_radii = (0..n_fiber_r).map(|k| (k as f64 + 0.5) * hr).collect();
        let fiber_angles = (0..n_fiber_phi)
            .map(|l| l as f64 * TAU / n_fiber_phi as f64)
            .collect();
        Self::new(epsilon, s_grid, theta_grid, fiber_radii, fiber_angles, None)
    }

    fn check_point(&self, s_t: f64, a: f64, b: f64) -> Result<f64> {
        let s = self.epsilon * s_t;
        check_arc(s)?;
        let bound = self.tube_radius(s_t)?;
        let r2 = a * a + b * b;
        if r2 >= bound * bound {
            return Err(Error::ChartBounds(format!(
                "offset radius {} reaches the tube boundary {bound}",
                r2.sqrt()
            )));
        }
        Ok(s)
    }

    /// Radius of the tube cross-section at stretched arc `s_t`:
    /// `(eps sin 2 eps s_t)^{-1/2}`.
    pub fn tube_radius(&self, s_t: f64) -> Result<f64> {
        let s = self.epsilon * s_t;
        check_arc(s)?;
        Ok(1.0 / (self.epsilon * (2.0 * s).sin()).sqrt())
    }

    /// Maps tube coordinates to R^4: the rescaled surface point plus the
    /// normal offset `a m + b n`.
    pub fn fermi_map(&self, s_t: f64, theta_t: f64, a: f64, b: f64) -> Result<[f64; 4]> {
        let s = self.check_point(s_t, a, b)?;
        let theta = self.epsilon * theta_t;
        let center = gamma_point(s, theta)?;
        let (m, n) = (center.m, center.n);
        let mut y = [0.0; 4];
        for i in 0..4 {
            y[i] = center.position[i] / self.epsilon + a * m[i] + b * n[i];
        }
        Ok(y)
    }

    /// Exact closed-form metric at tube coordinates `(s_t, theta_t, a, b)`.
    /// The matrix does not depend on `theta_t`.
    pub fn metric_at(&self, s_t: f64, theta_t: f64, a: f64, b: f64) -> Result<MetricData> {
        if !theta_t.is_finite() {
            return Err(Error::ChartBounds(format!("angle {theta_t} not finite")));
        }
        let s = self.check_point(s_t, a, b)?;
        let g = metric_matrix(self.epsilon, s, a, b);
        let det = g.determinant();
        Ok(MetricData { g, det })
    }

    /// Area weight `rho = (sin 2 eps s_t)^{-1/2}`; equals 1 at the waist
    /// `s_t = pi/(4 eps)` and satisfies `rho^{-6} = g^{st,st}` and
    /// `rho^{-2} = g^{tt,tt}` on the center surface at unit scale.
    pub fn weight_rho(&self, s_t: f64) -> Result<f64> {
        let s = self.epsilon * s_t;
        check_arc(s)?;
        Ok(1.0 / (2.0 * s).sin().sqrt())
    }

    /// Reciprocal-sine weight `(sin 2 eps s_t)^{-1}`, the square of
    /// [`FermiChart::weight_rho`]. Some normalizations are written against
    /// this variant; the operators in this crate use the square-root form,
    /// which is the one with linear growth in the ambient distance.
    pub fn weight_inverse_sine(&self, s_t: f64) -> Result<f64> {
        let s = self.epsilon * s_t;
        check_arc(s)?;
        Ok(1.0 / (2.0 * s).sin())
    }
}

/// Zeroth-plus-first-order part of the inverse tube metric at the unscaled
/// point `(s, a, b)`, with `rho = (sin 2s)^{-1/2}` and `cb = cos 2s`:
///
/// ```text
/// [ rho^-6 + 2 a eps rho^-9   2 b eps rho^-7            0                    0                  ]
/// [ 2 b eps rho^-7            rho^-2 - 2 a eps rho^-5   b eps rho^-2 cb      -a eps rho^-2 cb   ]
/// [ 0                        b eps rho^-2 cb            1                    0                  ]
/// [ 0                        -a eps rho^-2 cb           0                    1                  ]
/// ```
#[must_use]
pub fn inverse_metric_first_order(epsilon: f64, s: f64, a: f64, b: f64) -> Matrix4<f64> {
    let sigma = (2.0 * s).sin();
    let cb = (2.0 * s).cos();
    let rho = 1.0 / sigma.sqrt();
    let e = epsilon;
    let g11 = rho.powi(-6) + 2.0 * a * e * rho.powi(-9);
    let g12 = 2.0 * b * e * rho.powi(-7);
    let g22 = rho.powi(-2) - 2.0 * a * e * rho.powi(-5);
    let g23 = b * e * rho.powi(-2) * cb;
    let g24 = -a * e * rho.powi(-2) * cb;
    Matrix4::new(
        g11, g12, 0.0, 0.0, //
        g12, g22, g23, g24, //
        0.0, g23, 1.0, 0.0, //
        0.0, g24, 0.0, 1.0,
    )
}

/// Second-order (`eps^2`) correction to the inverse tube metric.
///
/// Every entry comes from the Schur-complement inversion of the block
/// metric. The `(1,3)` and `(1,4)` entries are `2 b^2 eps^2 rho^-7 cb` and
/// `-2 a b eps^2 rho^-7 cb`: the factor 2 is inherited from the surface
/// block's off-diagonal entry `-2 b eps rho`, and exact numerical inversion
/// confirms it (with a unit coefficient the remainder after this term would
/// stall at O(eps^2)).
#[must_use]
pub fn inverse_metric_second_order(epsilon: f64, s: f64, a: f64, b: f64) -> Matrix4<f64> {
    let sigma = (2.0 * s).sin();
    let cb = (2.0 * s).cos();
    let rho = 1.0 / sigma.sqrt();
    let e2 = epsilon * epsilon;
    let r2 = a * a + b * b;
    let g11 = 3.0 * r2 * e2 * rho.powi(-12);
    let g22 = 3.0 * r2 * e2 * rho.powi(-8);
    let g13 = 2.0 * b * b * e2 * rho.powi(-7) * cb;
    let g14 = -2.0 * a * b * e2 * rho.powi(-7) * cb;
    let g23 = -2.0 * a * b * e2 * rho.powi(-5) * cb;
    let g24 = 2.0 * a * a * e2 * rho.powi(-5) * cb;
    let g33 = b * b * e2 * rho.powi(-2) * cb * cb;
    let g34 = -a * b * e2 * rho.powi(-2) * cb * cb;
    let g44 = a * a * e2 * rho.powi(-2) * cb * cb;
    Matrix4::new(
        g11, 0.0, g13, g14, //
        0.0, g22, g23, g24, //
        g13, g23, g33, g34, //
        g14, g24, g34, g44,
    )
}

/// One row of the inverse-expansion comparison table.
#[derive(Clone, Copy, Debug)]
pub struct ExpansionGap {
    pub epsilon: f64,
    /// Max entry gap between the exact inverse and the first-order part.
    pub gap_first: f64,
    /// Max entry gap after also subtracting the second-order correction.
    pub gap_second: f64,
    /// `gap_second / epsilon^3`; steadies to a constant when the remainder
    /// is genuinely third order.
    pub gap_second_over_eps3: f64,
}

/// Compares the exact numerical inverse of the tube metric against its
/// first- and second-order expansions over a list of scales.
///
/// The surface point is held fixed in the UNSCALED variables `(s, a, b)`
/// while `epsilon` varies, so the expansion coefficients stay constant and
/// the remainder exhibits its pure power law; holding the stretched arc
/// fixed instead would drag the weight `rho` along with `epsilon` and mix
/// the orders.
pub fn inverse_metric_expansion_check(
    s: f64,
    _theta: f64,
    a: f64,
    b: f64,
    epsilons: &[f64],
) -> Result<Vec<ExpansionGap>> {
    check_arc(s)?;
    if epsilons.is_empty() {
        return Err(Error::InvalidInput("need at least one scale".into()));
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidInput(format!("scale {eps} invalid")));
        }
        let bound2 = 1.0 / (eps * (2.0 * s).sin());
        if a * a + b * b >= bound2 {
            return Err(Error::ChartBounds(format!(
                "offset ({a}, {b}) outside the tube at scale {eps}"
            )));
        }
        let g = metric_matrix(eps, s, a, b);
        let inv = g
            .try_inverse()
            .ok_or_else(|| Error::Linalg(format!("tube metric singular at scale {eps}")))?;
        let e1 = inverse_metric_first_order(eps, s, a, b);
        let e2 = inverse_metric_second_order(eps, s, a, b);
        let mut gap_first = 0.0f64;
        let mut gap_second = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                gap_first = gap_first.max((inv[(i, j)] - e1[(i, j)]).abs());
                gap_second = gap_second.max((inv[(i, j)] - e1[(i, j)] - e2[(i, j)]).abs());
            }
        }
        rows.push(ExpansionGap {
            epsilon: eps,
            gap_first,
            gap_second,
            gap_second_over_eps3: gap_second / (eps * eps * eps),
        });
    }
    Ok(rows)
}

/// The six bounded normal fields generated by rigid motions, as components
/// `(k1, k2)` along the frame `(m, n)` at `(s, theta)`:
///
/// indices 1-4 come from ambient translations, 5 from dilation, and 6 from
/// the rotation `(z1, z2) -> (i z1, -i z2)` that preserves the curve's
/// asymptotic planes.
pub fn jacobi_fields(index: usize, s: f64, theta: f64) -> Result<(f64, f64)> {
    check_arc(s)?;
    let (sin_s, cos_s) = s.sin_cos();
    let (sin_t, cos_t) = theta.sin_cos();
    let root = (2.0 * s).sin().sqrt();
    match index {
        1 => Ok((cos_t * sin_s, sin_t * sin_s)),
        2 => Ok((sin_t * sin_s, -cos_t * sin_s)),
        3 => Ok((cos_t * cos_s, -sin_t * cos_s)),
        4 => Ok((sin_t * cos_s, cos_t * cos_s)),
        5 => Ok((root, 0.0)),
        6 => Ok((0.0, root)),
        _ => Err(Error::InvalidInput(format!(
            "normal field index must be 1..=6, got {index}"
        ))),
    }
}

/// Inner product of two one-forms under a tube metric: `g^{ij} c1_i c2_j`.
pub fn form_inner(c1: &[f64; 4], c2: &[f64; 4], g: &Matrix4<f64>) -> Result<f64> {
    let inv = g
        .try_inverse()
        .ok_or_else(|| Error::Linalg("metric not invertible".into()))?;
    let mut total = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            total += inv[(i, j)] * c1[i] * c2[j];
        }
    }
    Ok(total)
}

/// Draws a tube point with arc away from the chart ends and offset radius
/// within the stated fraction of the local tube radius.
pub fn sample_tube_point<R: Rng>(
    rng: &mut R,
    epsilon: f64,
    radius_fraction: f64,
) -> (f64, f64, f64, f64) {
    let s = rng.gen_range(0.2..FRAC_PI_2 - 0.2);
    let theta = rng.gen_range(0.0..TAU);
    let bound = 1.0 / (epsilon * (2.0 * s).sin()).sqrt();
    let r = rng.gen_range(0.0..radius_fraction * bound);
    let phi = rng.gen_range(0.0..TAU);
    (
        s / epsilon,
        theta / epsilon,
        r * phi.cos(),
        r * phi.sin(),
    )
}
