//! Shared numerical kernels: banded linear algebra, eigensolvers, quadrature,
//! interpolation, pointwise stencils, and small least-squares fits.

pub mod banded;
pub mod eigen;
pub mod fd;
pub mod fit;
pub mod interp;
pub mod quad;
