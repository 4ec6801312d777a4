//! Closed-form auxiliary bounds: box-polar integrals, the ℱL¹ Sobolev bound,
//! reciprocal-derivative constants via Bell numbers, and lattice series.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::multi_index::fl1_index_set;
use crate::error::{Error, Result};

/// Value of `∫_{ℝ^d} max{c, ‖x‖_∞}^{-α} dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoxPolarIntegral {
    Value(f64),
    Divergent,
}

impl BoxPolarIntegral {
    pub fn value(self) -> Option<f64> {
        match self {
            BoxPolarIntegral::Value(v) => Some(v),
            BoxPolarIntegral::Divergent => None,
        }
    }
}

/// `2^d / (1 − d/α) · c^{d−α}` when `α > d`, divergent otherwise.
pub fn box_polar_integral(d: usize, alpha: f64, c: f64) -> Result<BoxPolarIntegral> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("box-polar cutoff must be positive, got {c}")));
    }
    let df = d as f64;
    if alpha <= df {
        return Ok(BoxPolarIntegral::Divergent);
    }
    Ok(BoxPolarIntegral::Value(
        2f64.powi(d as i32) / (1.0 - df / alpha) * c.powf(df - alpha),
    ))
}

/// `(d+1)/π^d · max_{θ ∈ {0} ∪ {(d+1)e_ℓ}} ‖∂^θ f‖_{L¹}` from a table of
/// derivative L¹ norms keyed by multi-index.
pub fn fl1_bound(table: &[(Vec<u32>, f64)], d: usize) -> Result<f64> {
    let mut max: f64 = 0.0;
    for theta in fl1_index_set(d) {
        let v = table
            .iter()
            .find(|(k, _)| *k == theta)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::MissingMultiIndex(theta.clone()))?;
        max = max.max(v);
    }
    Ok((d as f64 + 1.0) / std::f64::consts::PI.powi(d as i32) * max)
}

/// Bell number `B_m` via the Bell triangle.
pub fn bell_number(m: u32) -> u128 {
    let mut row: Vec<u128> = vec![1];
    for _ in 0..m {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for v in &row {
            let prev = *next.last().unwrap();
            next.push(prev + v);
        }
        row = next;
    }
    row[0]
}

pub fn factorial(m: u32) -> u128 {
    (1..=u128::from(m)).product()
}

/// `C_m = m! · B_m`.
pub fn reciprocal_constant(m: u32) -> f64 {
    (factorial(m) * bell_number(m)) as f64
}

/// Printed upper estimate `3√m · ((0.8/e · m²) / ln(1+m))^m` for `C_m`.
pub fn reciprocal_constant_estimate(m: u32) -> f64 {
    let mf = f64::from(m);
    3.0 * mf.sqrt() * ((0.8 / std::f64::consts::E * mf * mf) / (1.0 + mf).ln()).powf(mf)
}

/// `C_m · A · max{AK, (AK)^ℓ}` bounding `|(1/f)^{(ℓ)}(x₀)|` when
/// `|f(x₀)| ≥ 1/A` and `|f^{(k)}(x₀)| ≤ K` for `1 ≤ k ≤ m`.
pub fn reciprocal_derivative_bound(m: u32, a: f64, k: f64, l: u32) -> Result<f64> {
    if l == 0 || l > m {
        return Err(Error::InvalidArgument(format!("derivative order {l} must lie in 1..={m}")));
    }
    if !(a > 0.0) || !(k >= 0.0) {
        return Err(Error::InvalidArgument(format!("need A > 0 and K ≥ 0 (got {a}, {k})")));
    }
    let ak = a * k;
    Ok(reciprocal_constant(m) * a * ak.max(ak.powi(l as i32)))
}

/// Bounds for `Σ_k (1+|η+Ak|)^{-(d+1)}` over all of `ℤ^d` and over `ℤ^d∖{0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSeriesBounds {
    pub full: f64,
    pub nonzero: f64,
}

/// Closed-form lattice series bounds given `‖A^{-1}‖` and `|η|`.
pub fn lattice_series_bound(d: usize, a_inv_norm: f64, eta_norm: f64) -> LatticeSeriesBounds {
    let df = d as f64;
    let full = (df + 1.0) * 2f64.powi(1 + 2 * d as i32) * 1f64.max(a_inv_norm.powf(df + 1.0));
    let nonzero =
        (df + 1.0) * 2f64.powi(3 + 4 * d as i32) * (1.0 + eta_norm) * a_inv_norm.max(a_inv_norm.powf(df + 1.0));
    LatticeSeriesBounds { full, nonzero }
}

/// Brute-force partial sums over `‖k‖_∞ ≤ radius`.
pub fn lattice_series_bruteforce(a: &DMatrix<f64>, eta: &[f64], radius: i64) -> Result<LatticeSeriesBounds> {
    let d = eta.len();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::InvalidArgument("lattice matrix dimension mismatch".into()));
    }
    if a.clone().try_inverse().is_none() || a.determinant().abs() < 1e-300 {
        return Err(Error::SingularMatrix);
    }
    let side = (2 * radius + 1) as usize;
    let total = side.pow(d as u32);
    let mut k = vec![-radius; d];
    let mut full = 0.0;
    let mut zero_term = 0.0;
    let exponent = -(d as f64 + 1.0);
    let mut y = vec![0.0; d];
    for _ in 0..total {
        for r in 0..d {
            y[r] = eta[r];
            for c in 0..d {
                y[r] += a[(r, c)] * k[c] as f64;
            }
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let term = (1.0 + norm).powf(exponent);
        full += term;
        if k.iter().all(|&v| v == 0) {
            zero_term = term;
        }
        for r in (0..d).rev() {
            k[r] += 1;
            if k[r] <= radius {
                break;
            }
            k[r] = -radius;
        }
    }
    Ok(LatticeSeriesBounds {
        full,
        nonzero: full - zero_term,
    })
}

/// Upper bound for the omitted tail `Σ_{‖k‖_∞ > radius}` of the lattice
/// series, via a box-polar integral. `None` when `radius` is too small for
/// the estimate (`radius < 2‖A^{-1}‖|η| + 1`).
pub fn lattice_tail_bound(d: usize, a_inv_norm: f64, eta_norm: f64, radius: i64) -> Option<f64> {
    let r = radius as f64;
    if r < 2.0 * a_inv_norm * eta_norm + 1.0 {
        return None;
    }
    // For ‖k‖_∞ ≥ R+1: 1 + |η + Ak| ≥ ‖k‖_∞/‖A^{-1}‖ − |η| ≥ ‖k‖_∞ / (2‖A^{-1}‖).
    let alpha = d as f64 + 1.0;
    let c = r + 0.5;
    let whole = box_polar_integral(d, alpha, c).ok()?.value()?;
    let inner = 2f64.powi(d as i32) * c.powf(d as f64 - alpha);
    let outer = (whole - inner).max(0.0);
    Some((2.0 * a_inv_norm.max(1.0)).powf(alpha) * (c / r).powf(alpha) * outer)
}
