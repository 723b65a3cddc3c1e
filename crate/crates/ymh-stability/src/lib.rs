//! Numerics for degree-`j` vortex solutions of the planar U(1) Yang-Mills-Higgs
//! (abelian Higgs / Ginzburg-Landau) model and for the stability analysis of the
//! four-dimensional solutions built by gluing a vortex fiber onto a holomorphic
//! profile surface in R^4.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`] - banded linear algebra, quadrature, interpolation, stencils,
//!   small least-squares fits, and a shift-invert Lanczos eigensolver.
//! * [`vortex`] - the radial profile system for the degree-`j` vortex:
//!   solver, independent residual oracle, decay-rate fits, interpolation.
//! * [`fiber`] - the linearized (gauge-augmented) vortex operator on the plane:
//!   translation kernels, quadrature identities, grid operator, per-mode
//!   spectra, and the first radial correction system.
//! * [`surface`] - the profile surface: chart, Fermi coordinates, closed-form
//!   metric with its inverse expansion, and the six geometric Jacobi fields.
//! * [`jacobi`] - the surface stability operator: grid apply, quadratic form,
//!   kernel residuals, and smallest eigenvalues on truncated surfaces.
//! * [`fields`] - the glued 4D fields: approximate solution, pointwise residual
//!   scan, 4D quadratic form, normal-field lifts, energy comparison, fiber
//!   projection, and symmetry kernels.
//! * [`config`] / [`runner`] - TOML-driven experiment runner with deterministic
//!   CSV and manifest output.
//!
//! Everything is `f64`; all accumulation orders are fixed so that a given
//! binary, config, and seed reproduce output files byte for byte.

pub mod config;
pub mod fiber;
pub mod fields;
pub mod jacobi;
pub mod numerics;
pub mod report;
pub mod runner;
pub mod surface;
pub mod vortex;

/// Crate-level error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid parameter or configuration value.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A point fell outside the Fermi chart domain.
    #[error("point outside chart domain: {0}")]
    ChartBounds(String),
    /// An iterative method failed to converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),
    /// Linear algebra failure (singular factor, size mismatch).
    #[error("linear algebra: {0}")]
    Linalg(String),
    /// Configuration file problems.
    #[error("config: {0}")]
    Config(String),
    /// I/O while writing run artifacts.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
