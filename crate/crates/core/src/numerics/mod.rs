//! Quadrature, matrix utilities, derivative machinery and closed-form
//! auxiliary bounds shared by the other modules.

pub mod bounds;
pub mod finite_diff;
pub mod jet;
pub mod matrix;
pub mod multi_index;
pub mod quadrature;

pub use bounds::{
    bell_number, box_polar_integral, fl1_bound, lattice_series_bound, lattice_series_bruteforce, lattice_tail_bound,
    reciprocal_constant, reciprocal_constant_estimate, reciprocal_derivative_bound, BoxPolarIntegral,
    LatticeSeriesBounds,
};
pub use matrix::{lp_norm, schur_norm, schur_test_check, DenseMatrix, LpExponent};
pub use quadrature::{integrate_over_base_set, lp_norm_on_set, NodeSet, QuadratureRule, Region};

use nalgebra::DMatrix;

/// Spectral norm of a small dense matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone().svd(false, false).singular_values.max()
}
