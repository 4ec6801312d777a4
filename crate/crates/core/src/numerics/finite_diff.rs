//! Central finite-difference partial derivatives with one Richardson step.

use std::ops::{Add, Mul, Sub};

/// Default step for derivative estimates of user-supplied functions.
pub const DEFAULT_STEP: f64 = 1e-3;

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Second-order central difference `∂^α f(x)` with step `h`.
pub fn central_partial<T, F>(f: &F, x: &[f64], alpha: &[u32], h: f64) -> T
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    F: Fn(&[f64]) -> T,
{
    let d = x.len();
    // Per-axis stencils: offsets (in units of h) and weights.
    let stencils: Vec<Vec<(f64, f64)>> = alpha
        .iter()
        .map(|&m| {
            (0..=m)
                .map(|k| {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    (f64::from(m) / 2.0 - f64::from(k), sign * binomial(m, k))
                })
                .collect()
        })
        .collect();
    let mut idx = vec![0usize; d];
    let total: usize = stencils.iter().map(Vec::len).product();
    let mut point = x.to_vec();
    let mut acc = T::default();
    for _ in 0..total {
        let mut w = 1.0;
        for a in 0..d {
            let (off, c) = stencils[a][idx[a]];
            point[a] = x[a] + off * h;
            w *= c;
        }
        acc = acc + f(&point) * w;
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < stencils[a].len() {
                break;
            }
            idx[a] = 0;
        }
    }
    let ord: u32 = alpha.iter().sum();
    acc * (1.0 / h.powi(ord as i32))
}

/// Richardson-extrapolated central difference:
/// `(4 D(h/2) − D(h)) / 3`.
pub fn richardson_partial<T, F>(f: &F, x: &[f64], alpha: &[u32], h: f64) -> T
where
    T: Copy + Default + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
    F: Fn(&[f64]) -> T,
{
    if alpha.iter().all(|&a| a == 0) {
        return f(x);
    }
    let coarse: T = central_partial(f, x, alpha, h);
    let fine: T = central_partial(f, x, alpha, h / 2.0);
    fine * (4.0 / 3.0) - coarse * (1.0 / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn sine_derivatives() {
        let f = |x: &[f64]| x[0].sin();
        for m in 0..=4u32 {
            let v: f64 = richardson_partial(&f, &[0.7], &[m], 1e-2);
            let exact = match m % 4 {
                0 => 0.7f64.sin(),
                1 => 0.7f64.cos(),
                2 => -0.7f64.sin(),
                _ => -0.7f64.cos(),
            };
            assert!((v - exact).abs() < 1e-7, "m={m}: {v} vs {exact}");
        }
    }

    #[test]
    fn mixed_partial_complex() {
        let f = |x: &[f64]| Complex64::new(0.0, x[0] * x[1]).exp();
        let p = [0.3, 0.4];
        let v: Complex64 = richardson_partial(&f, &p, &[1, 1], 1e-3);
        // ∂x∂y e^{ixy} = (i - xy) e^{ixy}
        let exact = (Complex64::i() - p[0] * p[1]) * f(&p);
        assert!((v - exact).norm() < 1e-8);
    }
}
