//! Labelled dense matrices and Schur-type bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Exponent of an `ℓ^p` norm restricted to the cases Schur's test is checked on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LpExponent {
    One,
    Two,
    Infinity,
    Finite(f64),
}

impl LpExponent {
    pub fn from_f64(p: f64) -> Self {
        if p.is_infinite() {
            LpExponent::Infinity
        } else if p == 1.0 {
            LpExponent::One
        } else if p == 2.0 {
            LpExponent::Two
        } else {
            LpExponent::Finite(p)
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            LpExponent::One => 1.0,
            LpExponent::Two => 2.0,
            LpExponent::Infinity => f64::INFINITY,
            LpExponent::Finite(p) => *p,
        }
    }
}

/// `‖x‖_{ℓ^p}`; `p = ∞` is the max norm.
pub fn lp_norm(values: impl IntoIterator<Item = f64>, p: f64) -> f64 {
    if p.is_infinite() {
        values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        values.into_iter().map(f64::abs).sum()
    } else {
        values.into_iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Dense real matrix with row and column labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(row_labels: Vec<String>, col_labels: Vec<String>) -> Self {
        let n = row_labels.len() * col_labels.len();
        Self {
            row_labels,
            col_labels,
            data: vec![0.0; n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(
            (0..nr).map(|i| i.to_string()).collect(),
            (0..nc).map(|j| j.to_string()).collect(),
        );
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), nc, "ragged rows");
            m.data[i * nc..(i + 1) * nc].copy_from_slice(row);
        }
        m
    }

    pub fn from_fn(row_labels: Vec<String>, col_labels: Vec<String>, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(row_labels, col_labels);
        let nc = m.ncols();
        for i in 0..m.nrows() {
            for j in 0..nc {
                m.data[i * nc + j] = f(i, j);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        Self::from_fn(labels.clone(), labels, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn nrows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn ncols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let nc = self.ncols();
        self.data[i * nc + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nc = self.ncols();
        &self.data[i * nc..(i + 1) * nc]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.col_labels.clone(), self.row_labels.clone(), |i, j| self.get(j, i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `M x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols());
        (0..self.nrows())
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Writes `row label, col label, value` records.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "col", "value"])?;
        for i in 0..self.nrows() {
            for j in 0..self.ncols() {
                w.write_record([
                    self.row_labels[i].as_str(),
                    self.col_labels[j].as_str(),
                    &format!("{:e}", self.get(i, j)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `max(max_i Σ_j |M_ij|, max_j Σ_i |M_ij|)`.
pub fn schur_norm(m: &DenseMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        log::warn!("Schur norm of an empty matrix is taken as 0");
        return 0.0;
    }
    let row_max = (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut col_sums = vec![0.0; m.ncols()];
    for i in 0..m.nrows() {
        for (s, v) in col_sums.iter_mut().zip(m.row(i)) {
            *s += v.abs();
        }
    }
    let col_max = col_sums.into_iter().fold(0.0, f64::max);
    row_max.max(col_max)
}

/// Samples `trials` random vectors (seeded) and checks
/// `‖Mx‖_p ≤ ‖M‖_Schur ‖x‖_p` on each.
pub fn schur_test_check(m: &DenseMatrix, p: LpExponent, trials: usize, seed: u64) -> bool {
    let bound = schur_norm(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pv = p.value();
    (0..trials.max(1)).all(|_| {
        let x: Vec<f64> = (0..m.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs = lp_norm(m.apply(&x), pv);
        let rhs = bound * lp_norm(x.iter().copied(), pv);
        lhs <= rhs * (1.0 + 1e-12) + 1e-300
    })
}
