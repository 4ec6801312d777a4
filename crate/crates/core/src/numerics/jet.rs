//! Truncated multivariate Taylor polynomials ("jets") for exact partial
//! derivatives of the built-in generators and their affine compositions.
//!
//! A jet of degree `D` in `d` variables stores the Taylor coefficients
//! `c_α = ∂^α f(x₀) / α!` for all `|α| ≤ D`, in the order of
//! [`multi_indices`](super::multi_index::multi_indices).

use std::collections::HashMap;

use super::multi_index::{factorial, multi_indices, order};

#[derive(Debug, Clone)]
pub struct JetSpace {
    nvar: usize,
    degree: u32,
    monomials: Vec<Vec<u32>>,
    factorials: Vec<f64>,
    // (a, b, a+b) for every pair whose product stays within the degree.
    products: Vec<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub coeffs: Vec<f64>,
}

impl JetSpace {
    pub fn new(nvar: usize, degree: u32) -> Self {
        let monomials = multi_indices(nvar, degree);
        let lookup: HashMap<Vec<u32>, usize> = monomials.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        let mut products = Vec::new();
        for (a, ma) in monomials.iter().enumerate() {
            for (b, mb) in monomials.iter().enumerate() {
                if order(ma) + order(mb) <= degree {
                    let sum: Vec<u32> = ma.iter().zip(mb).map(|(x, y)| x + y).collect();
                    products.push((a, b, lookup[&sum]));
                }
            }
        }
        let factorials = monomials.iter().map(|m| factorial(m)).collect();
        Self {
            nvar,
            degree,
            monomials,
            factorials,
            products,
        }
    }

    pub fn nvar(&self) -> usize {
        self.nvar
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[Vec<u32>] {
        &self.monomials
    }

    pub fn constant(&self, v: f64) -> Jet {
        let mut coeffs = vec![0.0; self.len()];
        coeffs[0] = v;
        Jet { coeffs }
    }

    /// The coordinate functions `x_k` expanded at `point`.
    pub fn variables(&self, point: &[f64]) -> Vec<Jet> {
        assert_eq!(point.len(), self.nvar);
        (0..self.nvar)
            .map(|k| {
                let mut j = self.constant(point[k]);
                if self.degree >= 1 {
                    j.coeffs[1 + k] = 1.0;
                }
                j
            })
            .collect()
    }

    /// `y = M x + c` applied to a vector of jets (`M` row-major, square).
    pub fn affine(&self, matrix: &[f64], shift: &[f64], x: &[Jet]) -> Vec<Jet> {
        let n = x.len();
        (0..n)
            .map(|r| {
                let mut out = self.constant(shift[r]);
                for (c, xc) in x.iter().enumerate() {
                    let m = matrix[r * n + c];
                    if m != 0.0 {
                        for (o, v) in out.coeffs.iter_mut().zip(&xc.coeffs) {
                            *o += m * v;
                        }
                    }
                }
                out
            })
            .collect()
    }

    pub fn add(&self, a: &Jet, b: &Jet) -> Jet {
        Jet {
            coeffs: a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x + y).collect(),
        }
    }

    pub fn scale(&self, a: &Jet, s: f64) -> Jet {
        Jet {
            coeffs: a.coeffs.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add_constant(&self, a: &Jet, s: f64) -> Jet {
        let mut out = a.clone();
        out.coeffs[0] += s;
        out
    }

    pub fn mul(&self, a: &Jet, b: &Jet) -> Jet {
        let mut coeffs = vec![0.0; self.len()];
        for &(i, j, k) in &self.products {
            coeffs[k] += a.coeffs[i] * b.coeffs[j];
        }
        Jet { coeffs }
    }

    /// `f ∘ a` for a univariate `f` given by its derivatives
    /// `f^{(n)}(a₀)`, `n = 0..=degree`.
    pub fn compose(&self, a: &Jet, derivs: &[f64]) -> Jet {
        debug_assert!(derivs.len() > self.degree as usize);
        let mut eps = a.clone();
        eps.coeffs[0] = 0.0;
        let mut out = self.constant(derivs[0]);
        let mut power = self.constant(1.0);
        let mut fact = 1.0;
        for (n, d) in derivs.iter().enumerate().take(self.degree as usize + 1).skip(1) {
            power = self.mul(&power, &eps);
            fact *= n as f64;
            let c = d / fact;
            if c != 0.0 {
                for (o, p) in out.coeffs.iter_mut().zip(&power.coeffs) {
                    *o += c * p;
                }
            }
        }
        out
    }

    pub fn exp(&self, a: &Jet) -> Jet {
        let e = a.coeffs[0].exp();
        self.compose(a, &vec![e; self.degree as usize + 1])
    }

    /// `a^p` for `a₀ > 0`.
    pub fn powf(&self, a: &Jet, p: f64) -> Jet {
        let x = a.coeffs[0];
        let mut derivs = Vec::with_capacity(self.degree as usize + 1);
        let mut coef = 1.0;
        for n in 0..=self.degree {
            derivs.push(coef * x.powf(p - n as f64));
            coef *= p - n as f64;
        }
        self.compose(a, &derivs)
    }

    pub fn recip(&self, a: &Jet) -> Jet {
        let x = a.coeffs[0];
        let mut derivs = Vec::with_capacity(self.degree as usize + 1);
        let mut coef = 1.0;
        for n in 0..=self.degree {
            derivs.push(coef / x.powi(n as i32 + 1));
            coef *= -(n as f64 + 1.0);
        }
        self.compose(a, &derivs)
    }

    /// `Σ_k x_k²`
    pub fn squared_norm(&self, x: &[Jet]) -> Jet {
        let mut out = self.constant(0.0);
        for xk in x {
            out = self.add(&out, &self.mul(xk, xk));
        }
        out
    }

    /// Partial derivatives `∂^α f(x₀)` in monomial order.
    pub fn partials(&self, a: &Jet) -> Vec<f64> {
        a.coeffs.iter().zip(&self.factorials).map(|(c, f)| c * f).collect()
    }

    /// `max_{|α| ≤ degree} |∂^α f(x₀)|`
    pub fn max_abs_partial(&self, a: &Jet) -> f64 {
        a.coeffs
            .iter()
            .zip(&self.factorials)
            .fold(0.0, |m, (c, f)| m.max((c * f).abs()))
    }
}
