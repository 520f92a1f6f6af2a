//! Fine-grid Q1 finite elements and the linear-algebra kernels behind them.

mod assembly;
mod dense;
mod eig;
mod solve;
mod sparse;

pub use assembly::{
    assemble_cellwise, assemble_load, assemble_stiffness, assemble_weighted_mass, element_mass,
    element_stiffness,
};
pub use dense::{dot, norm2, norm_inf, DenseMatrix};
pub use eig::{generalized_eig, symmetric_jacobi, EigenPairs, SYMMETRY_TOL};
pub use solve::{pcg, solve_spd, CgStats, Cholesky, EnvelopeMatrix, DENSE_FALLBACK_MAX_DIM};
pub use sparse::CsrMatrix;
