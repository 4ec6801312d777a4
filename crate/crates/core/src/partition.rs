//! Regular partitions of unity `φ_i = ρ_i∘S_i⁻¹ / Σ_ℓ ρ_ℓ∘S_ℓ⁻¹` subordinate
//! to a cover, and numerical estimates of their constants.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cover::{box_grid, BaseSet, Cover};
use crate::error::{Error, Result};
use crate::numerics::finite_diff::{richardson_partial, DEFAULT_STEP};
use crate::numerics::multi_index::{fl1_index_set, multi_indices};
use crate::numerics::{fl1_bound, QuadratureRule, Region};

/// Smallest admissible value of `Σ_ℓ ρ_ℓ(S_ℓ⁻¹ξ)` at covered points.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

fn glue(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// `C^∞` step rising from 0 on `(−∞, 0]` to 1 on `[1, ∞)`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = glue(t);
        a / (a + glue(1.0 - t))
    }
}

/// Bump `ρ` on a base set: `≡ 1` on the inner set, `≡ 0` off the outer set.
/// Balls use a radial profile, boxes a per-axis product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    /// Plateau fraction used when a base set has no inner set.
    pub inner_fraction: f64,
}

impl Default for BumpProfile {
    fn default() -> Self {
        Self { inner_fraction: 0.75 }
    }
}

impl BumpProfile {
    pub fn new(inner_fraction: f64) -> Result<Self> {
        if !(inner_fraction > 0.0 && inner_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bump plateau fraction must lie in (0,1), got {inner_fraction}"
            )));
        }
        Ok(Self { inner_fraction })
    }

    /// One-dimensional profile: 1 on `[0, a]`, 0 on `[1, ∞)`.
    fn radial(t: f64, a: f64) -> f64 {
        1.0 - smooth_step((t - a) / (1.0 - a))
    }

    /// `ρ(x)` for `x` in base-set coordinates.
    pub fn value(&self, base: &BaseSet, x: &[f64]) -> f64 {
        match (&base.outer, &base.inner) {
            (Region::Ball { radius, .. }, inner) => {
                let a = match inner {
                    Some(Region::Ball { radius: ri, .. }) => ri / radius,
                    _ => self.inner_fraction,
                };
                let t = x.iter().map(|v| v * v).sum::<f64>().sqrt() / radius;
                Self::radial(t, a)
            }
            (Region::Box { halfwidths }, inner) => {
                let mut prod = 1.0;
                for (k, h) in halfwidths.iter().enumerate() {
                    let a = match inner {
                        Some(Region::Box { halfwidths: hi }) => hi[k] / h,
                        _ => self.inner_fraction,
                    };
                    prod *= Self::radial(x[k].abs() / h, a);
                    if prod == 0.0 {
                        break;
                    }
                }
                prod
            }
        }
    }
}

/// Regular partition of unity subordinate to a cover.
#[derive(Debug, Clone)]
pub struct Partition {
    cover: Arc<Cover>,
    profile: BumpProfile,
}

impl Partition {
    pub fn cover(&self) -> &Cover {
        &self.cover
    }

    pub fn cover_arc(&self) -> &Arc<Cover> {
        &self.cover
    }

    pub fn profile(&self) -> BumpProfile {
        self.profile
    }

    /// `ρ_i(S_i⁻¹ξ)`.
    pub fn rho(&self, i: usize, xi: &[f64]) -> f64 {
        let e = self.cover.element(i);
        self.profile.value(&e.base, &e.map.apply_inverse(xi))
    }

    /// `Σ_ℓ ρ_ℓ(S_ℓ⁻¹ξ)`.
    pub fn denominator(&self, xi: &[f64]) -> f64 {
        self.cover.candidates(xi).into_iter().map(|l| self.rho(l, xi)).sum()
    }

    /// `φ_i(ξ)`; zero outside `Q_i`.
    pub fn phi(&self, i: usize, xi: &[f64]) -> f64 {
        let num = self.rho(i, xi);
        if num == 0.0 {
            return 0.0;
        }
        let den: f64 = self.cover.neighbor_positions(i).iter().map(|&l| self.rho(l, xi)).sum();
        num / den
    }

    /// `φ_i^♭(x) = φ_i(S_i x)`.
    pub fn phi_flat(&self, i: usize, x: &[f64]) -> f64 {
        let e = self.cover.element(i);
        let num = self.profile.value(&e.base, x);
        if num == 0.0 {
            return 0.0;
        }
        let xi = e.map.apply(x);
        let den: f64 = self.cover.neighbor_positions(i).iter().map(|&l| self.rho(l, &xi)).sum();
        num / den
    }

    /// All nonzero `φ_i(ξ)` as `(position, value)`.
    pub fn values_at(&self, xi: &[f64]) -> Vec<(usize, f64)> {
        let rhos: Vec<(usize, f64)> = self
            .cover
            .candidates(xi)
            .into_iter()
            .map(|l| (l, self.rho(l, xi)))
            .filter(|(_, r)| *r > 0.0)
            .collect();
        let den: f64 = rhos.iter().map(|(_, r)| r).sum();
        rhos.into_iter().map(|(l, r)| (l, r / den)).collect()
    }

    /// Verification grid: safe-region samples of a built-in cover, or the
    /// inner sets of a custom cover.
    fn verification_points(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let cover = &self.cover;
        let interior = cover.interior();
        let mut out = Vec::new();
        for &i in &interior {
            let e = cover.element(i);
            let half = e.base.outer.bounding_halfwidths();
            let lo: Vec<f64> = half.iter().map(|h| -h).collect();
            for x in box_grid(&lo, &half, per_axis) {
                let xi = e.map.apply(&x);
                if e.base.outer.contains(&x) && (cover.truncation().is_some() || e.inner_contains(&xi)) {
                    out.push(xi);
                }
            }
        }
        out
    }

    pub fn fingerprint(&self) -> String {
        let profile = serde_json::to_string(&self.profile).unwrap_or_default();
        crate::fingerprint(format!("{}|{}", self.cover.fingerprint(), profile).as_bytes())
    }
}

/// Builds the partition and checks its denominators on a verification grid.
pub fn build_regular_partition(cover: Arc<Cover>, profile: BumpProfile) -> Result<Partition> {
    let partition = Partition { cover, profile };
    let per_axis = match partition.cover.dimension() {
        1 => 41,
        2 => 13,
        _ => 5,
    };
    for xi in partition.verification_points(per_axis) {
        let den = partition.denominator(&xi);
        if !(den >= DENOMINATOR_FLOOR) {
            return Err(Error::PartitionDenominator { point: xi, value: den });
        }
    }
    Ok(partition)
}

/// Numerically estimated partition constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConstants {
    /// `C_{Q,Φ,α} = sup_i ‖∂^α φ_i^♭‖_∞` for `|α| ≤ d+1`.
    pub c_q_phi: Vec<MultiIndexValue>,
    /// Upper estimate of `C_Φ = sup_i ‖ℱ⁻¹φ_i‖_{L¹}` via the ℱL¹ Sobolev bound.
    pub c_phi: f64,
    pub c_phi_is_upper_estimate: bool,
    pub profile: BumpProfile,
    pub fd_step: f64,
    pub grid_per_axis: usize,
    pub edges_included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiIndexValue {
    pub alpha: Vec<u32>,
    pub value: f64,
}

impl PartitionConstants {
    /// `max_{|α| ≤ d+1} C_{Q,Φ,α}`
    pub fn max_c_q_phi(&self) -> f64 {
        self.c_q_phi.iter().map(|e| e.value).fold(0.0, f64::max)
    }

    pub fn get(&self, alpha: &[u32]) -> Option<f64> {
        self.c_q_phi.iter().find(|e| e.alpha == alpha).map(|e| e.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConstantsOptions {
    pub fd_step: f64,
    pub grid_per_axis: usize,
    pub rule: QuadratureRule,
    pub include_edges: bool,
}

impl Default for PartitionConstantsOptions {
    fn default() -> Self {
        Self {
            fd_step: DEFAULT_STEP,
            grid_per_axis: 0,
            rule: QuadratureRule::default(),
            include_edges: false,
        }
    }
}

fn default_grid(d: usize) -> usize {
    match d {
        1 => 401,
        2 => 61,
        _ => 17,
    }
}

pub fn partition_constants(partition: &Partition, fd_step: f64, grid_per_axis: usize) -> Result<PartitionConstants> {
    partition_constants_with(
        partition,
        &PartitionConstantsOptions {
            fd_step,
            grid_per_axis,
            ..Default::default()
        },
    )
}

pub fn partition_constants_with(partition: &Partition, opts: &PartitionConstantsOptions) -> Result<PartitionConstants> {
    if !(opts.fd_step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {}", opts.fd_step)));
    }
    let cover = partition.cover();
    let d = cover.dimension();
    let per_axis = if opts.grid_per_axis == 0 { default_grid(d) } else { opts.grid_per_axis };
    let rows: Vec<usize> = if opts.include_edges { (0..cover.len()).collect() } else { cover.interior() };
    let rows = if rows.is_empty() { (0..cover.len()).collect() } else { rows };
    let alphas = multi_indices(d, d as u32 + 1);
    let fl1_set = fl1_index_set(d);
    let h = opts.fd_step;

    let per_element: Vec<Result<(Vec<f64>, f64)>> = rows
        .par_iter()
        .map(|&i| {
            let e = cover.element(i);
            let f = |x: &[f64]| partition.phi_flat(i, x);
            let half = e.base.outer.bounding_halfwidths();
            let lo: Vec<f64> = half.iter().map(|v| -v).collect();
            let grid = box_grid(&lo, &half, per_axis);
            let mut maxima = vec![0.0f64; alphas.len()];
            for x in &grid {
                for (k, alpha) in alphas.iter().enumerate() {
                    let v: f64 = richardson_partial(&f, x, alpha, h);
                    maxima[k] = maxima[k].max(v.abs());
                }
            }
            let nodes = opts.rule.nodes(&e.base.outer);
            let mut table = Vec::with_capacity(fl1_set.len());
            for theta in &fl1_set {
                let norm = nodes.integrate(|x| richardson_partial::<f64, _>(&f, x, theta, h).abs())?;
                table.push((theta.clone(), norm));
            }
            Ok((maxima, fl1_bound(&table, d)?))
        })
        .collect();

    let mut maxima = vec![0.0f64; alphas.len()];
    let mut c_phi: f64 = 0.0;
    for r in per_element {
        let (m, b) = r?;
        for (acc, v) in maxima.iter_mut().zip(m) {
            *acc = acc.max(v);
        }
        c_phi = c_phi.max(b);
    }
    Ok(PartitionConstants {
        c_q_phi: alphas
            .into_iter()
            .zip(maxima)
            .map(|(alpha, value)| MultiIndexValue { alpha, value })
            .collect(),
        c_phi,
        c_phi_is_upper_estimate: true,
        profile: partition.profile(),
        fd_step: h,
        grid_per_axis: per_axis,
        edges_included: opts.include_edges,
    })
}

/// Direct quadrature of `‖ℱ⁻¹φ_i^♭‖_{L¹}` in `d = 1` over `|x| ≤ x_max`
/// (a lower estimate of the full norm; cross-check only).
pub fn direct_fl1_norm_1d(partition: &Partition, i: usize, x_max: f64, x_step: f64) -> Result<f64> {
    let cover = partition.cover();
    if cover.dimension() != 1 {
        return Err(Error::InvalidArgument("direct ℱL¹ cross-check is one-dimensional".into()));
    }
    let e = cover.element(i);
    let rule = QuadratureRule::new(8, ((x_max * e.base.outer.sup_norm() * 4.0).ceil() as usize).max(32))?;
    let nodes = rule.nodes(&e.base.outer);
    let samples: Vec<(f64, f64)> = nodes.iter().map(|(x, w)| (x[0], w * partition.phi_flat(i, x))).collect();
    let n = (x_max / x_step).ceil() as i64;
    let total: f64 = (-n..=n)
        .into_par_iter()
        .map(|k| {
            let x = k as f64 * x_step;
            let (mut re, mut im) = (0.0, 0.0);
            for &(xi, v) in &samples {
                let (s, c) = (2.0 * std::f64::consts::PI * x * xi).sin_cos();
                re += v * c;
                im += v * s;
            }
            (re * re + im * im).sqrt()
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    Ok(total * x_step)
}
