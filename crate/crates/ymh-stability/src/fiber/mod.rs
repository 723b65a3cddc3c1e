//! Linearized operator of the planar vortex, on the cross-sectional plane.
//!
//! The second variation of the abelian Higgs energy at a degree-`j` vortex
//! acts on pairs `(xi, B)` where `xi` is a complex scalar (the Higgs
//! perturbation) and `B` a real 1-form (the gauge perturbation).  After
//! adding the gauge-fixing term the operator reads
//!
//! ```text
//! L (xi, B) = ( -Lap_A xi + 2i<B, grad_A psi> + (lambda-1)/2 psi^2 conj(xi)
//!                 + (lambda + 1/2)|psi|^2 xi - lambda/2 xi,
//!               Hodge_Lap B + 2 Im(conj(grad_A psi) xi) + |psi|^2 B )
//! ```
//!
//! with `psi = U(r) e^{ij phi}` and `A = j V(r) dphi`.
//!
//! Submodules:
//! * [`kernels`]: the explicit zero modes generated by translations and the
//!   quadrature identities their norms satisfy.
//! * [`operator`]: a pointwise second-order discretization of `L` on a polar
//!   grid, used for residual checks and for verifying solved corrections.
//! * [`modes`]: the exact Fourier-block reduction of `L` to radial systems,
//!   assembled symmetrically for eigenvalue computations.
//! * [`correction`]: the radial two-field system for the first-order
//!   correction sourced by the curvature of an ambient surface.

pub mod correction;
pub mod kernels;
pub mod modes;
pub mod operator;

pub use correction::{solve_first_correction, CorrectionSolution};
pub use kernels::{kernel_identities, BForm, IdentityCheck, IdentityReport, KernelHarmonics, VortexKernels};
pub use modes::{fiber_spectrum, ModeBlock, ModeSpectrum, SpectrumOpts, SpectrumReport};
pub use operator::{FiberField, FiberGrid};

use crate::numerics::fd;
use crate::vortex::VortexProfile;

/// Residual of the radial identity obeyed by the derivative of the gauge
/// profile.
///
/// Differentiating the gauge ODE `-V'' + V'/r - U^2 (1 - V) = 0` once gives
///
/// ```text
/// -V''' + V''/r - V'/r^2 - 2 U U' (1 - V) + U^2 V' = 0,
/// ```
///
/// an identity that must hold along any exact profile.  The check recomputes
/// `V''` and `V'''` from the stored first-derivative array with fourth-order
/// centered stencils, so it does not reuse the solver's own second
/// derivatives and is sensitive to sign errors in any of the five terms.
#[derive(Debug, Clone)]
pub struct OdeDerivativeCheck {
    /// Largest absolute residual over the checked window.
    pub max_residual: f64,
    /// Radius at which the largest residual occurred.
    pub argmax_radius: f64,
    /// Number of nodes checked.
    pub nodes_checked: usize,
    /// Radial window `[r_lo, r_hi]` of the check.
    pub window: (f64, f64),
}

/// Evaluates the differentiated gauge-field identity along a solved profile.
///
/// The window starts at `r = 0.5`: below that the individually singular terms
/// `V''/r` and `V'/r^2` amplify finite-difference noise even though their sum
/// stays bounded.  The upper end stops four nodes short of the boundary so
/// that centered stencils apply.
#[must_use]
pub fn check_ode_derivative_identity(profile: &VortexProfile) -> OdeDerivativeCheck {
    let h = profile.r[1] - profile.r[0];
    let n = profile.r.len();
    let mut max_residual = 0.0f64;
    let mut argmax_radius = 0.0f64;
    let mut nodes_checked = 0usize;
    let mut r_lo = f64::MAX;
    let mut r_hi = 0.0f64;
    for i in 2..n - 2 {
        let r = profile.r[i];
        if r < 0.5 {
            continue;
        }
        let u = profile.u[i];
        let du = profile.du[i];
        let dv = profile.dv[i];
        let v = profile.v[i];
        // V'' and V''' from the first-derivative array alone.
        let d2v = fd::slice_d1_c4(&profile.dv, i, h);
        let d3v = fd::slice_d2_c4(&profile.dv, i, h);
        let res = -d3v + d2v / r - dv / (r * r) - 2.0 * u * du * (1.0 - v) + u * u * dv;
        if res.abs() > max_residual {
            max_residual = res.abs();
            argmax_radius = r;
        }
        nodes_checked += 1;
        r_lo = r_lo.min(r);
        r_hi = r_hi.max(r);
    }
    OdeDerivativeCheck {
        max_residual,
        argmax_radius,
        nodes_checked,
        window: (r_lo, r_hi),
    }
}
