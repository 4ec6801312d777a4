//! Fourier-domain laboratory for the frame operator of a truncated system.
//!
//! Signals are samples of `f̂` on a uniform grid `ξ_k = −Ξ + k·h` and all
//! inner products are Riemann sums with cell volume `h^d`. The frame operator
//! is applied two independent ways: through the Walnut representation
//! `Ŝf(ξ) = Σ_{α∈Λ} t_α(ξ−α) f̂(ξ−α)` with exact grid shifts, and directly as
//! synthesis after analysis with the time-side coefficients
//! `⟨f, T_{C_j k} g_j⟩`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::cover::Weight;
use crate::error::{Error, Result};
use crate::numerics::lp_norm;
use crate::partition::Partition;
use crate::system::StructuredSystem;

/// Values below this are treated as zero at the grid boundary.
pub const BOUNDARY_THRESHOLD: f64 = 1e-10;

/// `t_0 < T0_FLOOR · max t_0` is treated as a zero of `t_0`. Round-off in
/// `S f` is about `1e-16` relative, so division by smaller values would
/// only amplify noise.
pub const T0_FLOOR: f64 = 1e-8;

/// Default tolerance for lattice membership `‖C_j^t α − round(C_j^t α)‖_∞`.
pub const LATTICE_TOL: f64 = 1e-9;

/// Truncated coefficient energy (relative) above which `apply_direct` flags.
pub const COEFFICIENT_TAIL: f64 = 1e-8;

/// Uniform frequency grid `ξ_k = −Ξ + k h`, `h = 2Ξ/n`, `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqGrid {
    pub d: usize,
    pub halfwidth: f64,
    pub n: usize,
}

impl FreqGrid {
    pub fn new(d: usize, halfwidth: f64, n: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("grid dimension must be positive".into()));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidArgument(format!("grid size must be even and at least 8, got {n}")));
        }
        if !(halfwidth > 0.0) || !halfwidth.is_finite() {
            return Err(Error::InvalidArgument(format!("grid halfwidth must be positive, got {halfwidth}")));
        }
        Ok(Self { d, halfwidth, n })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.halfwidth / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Per-axis indices of a flat (row-major) index.
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.d];
        for a in (0..self.d).rev() {
            idx[a] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.halfwidth + i as f64 * self.spacing()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.unflatten(flat).into_iter().map(|i| self.coordinate(i)).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// Flat index of `idx + shift`, or `None` off the grid.
    pub fn shifted(&self, flat: usize, shift: &[i64]) -> Option<usize> {
        let idx = self.unflatten(flat);
        let mut out = 0usize;
        for (a, &i) in idx.iter().enumerate() {
            let j = i as i64 + shift[a];
            if j < 0 || j >= self.n as i64 {
                return None;
            }
            out = out * self.n + j as usize;
        }
        Some(out)
    }

    /// `α / h` as integer steps, or an error naming `α` and a compatible `n`.
    pub fn steps(&self, alpha: &[f64]) -> Result<Vec<i64>> {
        let h = self.spacing();
        let mut out = Vec::with_capacity(alpha.len());
        for &a in alpha {
            let s = a / h;
            if (s - s.round()).abs() > 1e-9 * s.abs().max(1.0) {
                return Err(Error::OffGridLattice {
                    alpha: alpha.to_vec(),
                    spacing: h,
                    suggested_n: self.compatible_n(std::slice::from_ref(&alpha.to_vec())),
                });
            }
            out.push(s.round() as i64);
        }
        Ok(out)
    }

    /// Smallest even `n′ ≥ n` (searched up to `64 n`) whose spacing divides
    /// every coordinate of every `α`; `n` itself if none is found.
    pub fn compatible_n(&self, alphas: &[Vec<f64>]) -> usize {
        let mut m = self.n + self.n % 2;
        while m <= 64 * self.n.max(8) {
            let h = 2.0 * self.halfwidth / m as f64;
            let ok = alphas
                .iter()
                .flatten()
                .all(|a| ((a / h) - (a / h).round()).abs() <= 1e-9 * (a / h).abs().max(1.0));
            if ok {
                return m;
            }
            m += 2;
        }
        self.n
    }

    /// Whether a point lies within `margin` of the grid edge.
    pub fn near_edge(&self, flat: usize, margin: f64) -> bool {
        let top = self.coordinate(self.n - 1);
        self.unflatten(flat).into_iter().any(|i| {
            let x = self.coordinate(i);
            x < -self.halfwidth + margin || x > top - margin
        })
    }
}

/// Samples of `f̂` on a [`FreqGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSignal {
    pub grid: FreqGrid,
    pub values: Vec<Complex64>,
}

impl GridSignal {
    pub fn new(grid: FreqGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "signal has {} samples for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidArgument("signal has non-finite samples".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: FreqGrid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn(grid: FreqGrid, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.len()).map(|k| f(&grid.point(k))).collect();
        Self { grid, values }
    }

    /// `(∫|f̂|²)^{1/2}` as a Riemann sum.
    pub fn norm(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// `∫ f̂ conj(ĝ)`
    pub fn inner(&self, other: &GridSignal) -> Complex64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum::<Complex64>() * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn scaled(&self, c: Complex64) -> GridSignal {
        GridSignal {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &GridSignal) -> GridSignal {
        GridSignal {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &GridSignal) -> GridSignal {
        GridSignal {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn multiplied(&self, m: &[f64]) -> GridSignal {
        GridSignal {
            grid: self.grid,
            values: self.values.iter().zip(m).map(|(a, b)| a * b).collect(),
        }
    }

    /// `‖a − b‖ / ‖b‖`
    pub fn relative_distance(&self, reference: &GridSignal) -> f64 {
        let diff = self.sub(reference).norm();
        let base = reference.norm();
        if base == 0.0 {
            diff
        } else {
            diff / base
        }
    }

    /// CSV with columns `i0..i{d−1}, re, im`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.grid.d).map(|a| format!("i{a}")).collect();
        header.push("re".into());
        header.push("im".into());
        w.write_record(&header)?;
        for (k, v) in self.values.iter().enumerate() {
            let mut rec: Vec<String> = self.grid.unflatten(k).iter().map(|i| i.to_string()).collect();
            rec.push(format!("{:e}", v.re));
            rec.push(format!("{:e}", v.im));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(grid: FreqGrid, reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
        let mut seen = vec![false; grid.len()];
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != grid.d + 2 {
                return Err(Error::Format(format!("expected {} columns, got {}", grid.d + 2, rec.len())));
            }
            let parse_idx = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::Format(format!("index {s}: {e}")));
            let parse_val = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("value {s}: {e}")));
            let idx: Vec<usize> = (0..grid.d).map(|a| parse_idx(&rec[a])).collect::<Result<_>>()?;
            if idx.iter().any(|&i| i >= grid.n) {
                return Err(Error::Format(format!("index {idx:?} outside a grid of {} per axis", grid.n)));
            }
            let k = grid.flatten(&idx);
            values[k] = Complex64::new(parse_val(&rec[grid.d])?, parse_val(&rec[grid.d + 1])?);
            seen[k] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("missing sample {:?}", grid.unflatten(missing))));
        }
        GridSignal::new(grid, values)
    }

    /// Binary layout: `d: u64, Ξ: f64, n: u64`, then `(re, im)` pairs, all
    /// little-endian, row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.grid.d as u64).to_le_bytes())?;
        w.write_all(&self.grid.halfwidth.to_le_bytes())?;
        w.write_all(&(self.grid.n as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut buf)?;
            Ok(buf)
        };
        let d = u64::from_le_bytes(next(&mut r)?) as usize;
        let halfwidth = f64::from_le_bytes(next(&mut r)?);
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        if d == 0 || d > 6 {
            return Err(Error::Format(format!("unsupported signal dimension {d}")));
        }
        let grid = FreqGrid::new(d, halfwidth, n)?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            let re = f64::from_le_bytes(next(&mut r)?);
            let im = f64::from_le_bytes(next(&mut r)?);
            values.push(Complex64::new(re, im));
        }
        GridSignal::new(grid, values)
    }

    pub fn read_path(path: &Path, grid: Option<FreqGrid>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        match (path.extension().and_then(|e| e.to_str()), grid) {
            (Some("csv"), Some(g)) => Self::read_csv(g, std::io::BufReader::new(file)),
            (Some("csv"), None) => Err(Error::InvalidArgument("reading a CSV signal needs the grid".into())),
            _ => Self::read_binary(std::io::BufReader::new(file)),
        }
    }
}

/// Errors unless `|f̂| ≤ 1e-10 · max(1, max|f̂|)` within `margin` of the
/// grid edge.
pub fn check_boundary(f: &GridSignal, margin: f64) -> Result<()> {
    let limit = BOUNDARY_THRESHOLD * f.max_abs().max(1.0);
    for (k, v) in f.values.iter().enumerate() {
        if v.norm() > limit && f.grid.near_edge(k, margin) {
            return Err(Error::BoundaryViolation {
                index: k,
                value: v.norm(),
                margin,
            });
        }
    }
    Ok(())
}

/// Truncation `Λ ∩ B_radius` of the union lattice with lattice memberships.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSet {
    /// `0` first, then by increasing norm.
    pub alphas: Vec<Vec<f64>>,
    /// `κ(α)` for each entry of `alphas`.
    pub members: Vec<Vec<usize>>,
    pub radius: f64,
    pub tol: f64,
}

impl LambdaSet {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn position(&self, alpha: &[f64]) -> Option<usize> {
        self.alphas
            .iter()
            .position(|a| a.iter().zip(alpha).all(|(x, y)| (x - y).abs() <= self.tol * x.abs().max(1.0)))
    }
}

fn euclid(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn lattice_member(system: &StructuredSystem, j: usize, alpha: &[f64], tol: f64) -> bool {
    let ct = system.lattice(j).transpose();
    let d = alpha.len();
    (0..d).all(|r| {
        let v: f64 = (0..d).map(|c| ct[(r, c)] * alpha[c]).sum();
        (v - v.round()).abs() < tol
    })
}

/// `κ(α) = {j : α ∈ C_j^{-t} ℤ^d}`
pub fn kappa(system: &StructuredSystem, alpha: &[f64], tol: f64) -> Vec<usize> {
    (0..system.len()).filter(|&j| lattice_member(system, j, alpha, tol)).collect()
}

/// All `α ∈ ⋃_j C_j^{-t}ℤ^d` with `|α| ≤ radius`, with memberships.
pub fn lambda_set(system: &StructuredSystem, radius: f64, tol: f64) -> Result<LambdaSet> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("Λ radius must be positive, got {radius}")));
    }
    if !(tol > 0.0 && tol < 0.25) {
        return Err(Error::LatticeTolerance(tol));
    }
    let d = system.dim();
    let key_scale = 1e-7 * radius.max(1.0);
    let mut found: BTreeMap<Vec<i64>, Vec<f64>> = BTreeMap::new();
    for j in 0..system.len() {
        let c = system.lattice(j);
        let ct = c.transpose();
        let inv_t = ct
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix)?;
        let reach = (crate::numerics::spectral_norm(&ct) * radius).floor() as i64;
        for m in crate::cover::lattice_labels(d, reach) {
            let alpha: Vec<f64> = (0..d).map(|r| (0..d).map(|k| inv_t[(r, k)] * m[k] as f64).sum()).collect();
            if euclid(&alpha) <= radius * (1.0 + 1e-12) {
                let key: Vec<i64> = alpha.iter().map(|a| (a / key_scale).round() as i64).collect();
                found.entry(key).or_insert(alpha);
            }
        }
    }
    let mut alphas: Vec<Vec<f64>> = found.into_values().collect();
    alphas.sort_by(|a, b| {
        euclid(a)
            .partial_cmp(&euclid(b))
            .unwrap()
            .then_with(|| a.partial_cmp(b).unwrap())
    });
    // Distinct lattice points closer than the tolerance would be merged by
    // the membership test.
    let min_gap = min_separation(&alphas);
    if min_gap.is_finite() && min_gap <= 2.0 * tol {
        return Err(Error::LatticeTolerance(tol));
    }
    let members = alphas.iter().map(|a| kappa(system, a, tol)).collect();
    Ok(LambdaSet {
        alphas,
        members,
        radius,
        tol,
    })
}

fn min_separation(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    for (i, a) in sorted.iter().enumerate() {
        for b in sorted.iter().skip(i + 1) {
            if b[0] - a[0] >= best {
                break;
            }
            best = best.min(euclid(&a.iter().zip(b.iter()).map(|(x, y)| x - y).collect::<Vec<_>>()));
        }
    }
    best
}

/// `t_α(ξ) = Σ_{j∈κ(α)} |det C_j|^{-1} conj(ĝ_j(ξ)) ĝ_j(ξ+α)`
pub fn t_alpha(system: &StructuredSystem, alpha: &[f64], xi: &[f64]) -> Complex64 {
    t_alpha_with(system, &kappa(system, alpha, LATTICE_TOL), alpha, xi)
}

/// [`t_alpha`] with a precomputed `κ(α)`.
pub fn t_alpha_with(system: &StructuredSystem, members: &[usize], alpha: &[f64], xi: &[f64]) -> Complex64 {
    let shifted: Vec<f64> = xi.iter().zip(alpha).map(|(x, a)| x + a).collect();
    members
        .iter()
        .map(|&j| system.ghat_j(j, xi).conj() * system.ghat_j(j, &shifted) / system.lattice_det(j))
        .sum()
}

/// Radius beyond which `max_{|α|≤d+1}|∂^αĝ|` stays below `tol` relative to
/// its value at the origin, searched along the coordinate axes.
pub fn generator_radius(system: &StructuredSystem, tol: f64) -> f64 {
    let g = system.generator();
    if let Some(r) = g.support_radius() {
        return r;
    }
    let d = system.dim();
    let peak = g.ghat(&vec![0.0; d]).norm().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for a in 0..d {
        for sign in [-1.0, 1.0] {
            let mut r = 0.5;
            let at = |r: f64| {
                let mut x = vec![0.0; d];
                x[a] = sign * r;
                g.ghat(&x).norm()
            };
            while at(r) > tol * peak && r < 1e6 {
                r *= 1.25;
            }
            worst = worst.max(r);
        }
    }
    worst
}

/// Default `Λ` radius: twice the largest effective frequency extent of a
/// `ĝ_j`, so that `ĝ_j(ξ) ĝ_j(ξ+α)` is negligible beyond it.
pub fn default_alpha_max(system: &StructuredSystem) -> f64 {
    let r = generator_radius(system, 1e-9);
    let stretch = (0..system.len())
        .map(|j| crate::numerics::spectral_norm(system.cover().element(j).map.matrix()))
        .fold(0.0, f64::max);
    2.0 * r * stretch
}

/// `ĝ_j` sampled on the grid, with the indices where it does not vanish.
struct Samples {
    values: Vec<Vec<Complex64>>,
    support: Vec<Vec<usize>>,
}

fn sample_generators(system: &StructuredSystem, grid: &FreqGrid) -> Samples {
    let points = grid.points();
    let per_j: Vec<(Vec<Complex64>, Vec<usize>)> = (0..system.len())
        .into_par_iter()
        .map(|j| {
            let vals: Vec<Complex64> = points.iter().map(|p| system.ghat_j(j, p)).collect();
            let supp = vals
                .iter()
                .enumerate()
                .filter(|(_, v)| v.norm() > 0.0)
                .map(|(k, _)| k)
                .collect();
            (vals, supp)
        })
        .collect();
    let (values, support) = per_j.into_iter().unzip();
    Samples { values, support }
}

/// `t_0` on the grid, from the same samples the operators use.
pub fn t0_on_grid(system: &StructuredSystem, grid: &FreqGrid) -> Vec<f64> {
    let samples = sample_generators(system, grid);
    t0_from_samples(system, &samples, grid.len())
}

fn t0_from_samples(system: &StructuredSystem, samples: &Samples, len: usize) -> Vec<f64> {
    let mut t0 = vec![0.0; len];
    for j in 0..system.len() {
        let inv = 1.0 / system.lattice_det(j);
        for &k in &samples.support[j] {
            t0[k] += inv * samples.values[j][k].norm_sqr();
        }
    }
    t0
}

/// `Ŝf(ξ) = Σ_{α∈Λ, |α|≤α_max} t_α(ξ−α) f̂(ξ−α)` with exact grid shifts.
pub fn apply_walnut(system: &StructuredSystem, f: &GridSignal, alpha_max: f64) -> Result<GridSignal> {
    let lambda = lambda_set(system, alpha_max, LATTICE_TOL)?;
    apply_walnut_with(system, f, &lambda)
}

pub fn apply_walnut_with(system: &StructuredSystem, f: &GridSignal, lambda: &LambdaSet) -> Result<GridSignal> {
    check_dimension(system, &f.grid)?;
    let grid = f.grid;
    let steps: Vec<Vec<i64>> = lambda
        .alphas
        .iter()
        .map(|a| grid.steps(a))
        .collect::<Result<_>>()
        .map_err(|e| match e {
            Error::OffGridLattice { alpha, spacing, .. } => Error::OffGridLattice {
                alpha,
                spacing,
                suggested_n: grid.compatible_n(&lambda.alphas),
            },
            other => other,
        })?;
    check_boundary(f, lambda.radius)?;
    let samples = sample_generators(system, &grid);
    let dets: Vec<f64> = (0..system.len()).map(|j| 1.0 / system.lattice_det(j)).collect();
    let values: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, members) in lambda.members.iter().enumerate() {
                let Some(src) = grid.shifted(k, &steps[a].iter().map(|s| -s).collect::<Vec<_>>()) else {
                    continue;
                };
                let fv = f.values[src];
                if fv == Complex64::new(0.0, 0.0) {
                    continue;
                }
                // t_α(ξ_k − α) = Σ_j |det C_j|^{-1} conj(ĝ_j(ξ_k − α)) ĝ_j(ξ_k)
                let mut t = Complex64::new(0.0, 0.0);
                for &j in members {
                    let gk = samples.values[j][k];
                    if gk != Complex64::new(0.0, 0.0) {
                        t += dets[j] * samples.values[j][src].conj() * gk;
                    }
                }
                acc += t * fv;
            }
            acc
        })
        .collect();
    Ok(GridSignal { grid, values })
}

fn check_dimension(system: &StructuredSystem, grid: &FreqGrid) -> Result<()> {
    if system.dim() != grid.d {
        return Err(Error::InvalidArgument(format!(
            "grid dimension {} does not match system dimension {}",
            grid.d,
            system.dim()
        )));
    }
    Ok(())
}

/// Coefficients `c_{j,k} = ⟨f, T_{C_j k} g_j⟩` of one generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBlock {
    pub j: usize,
    pub label: String,
    pub ks: Vec<Vec<i64>>,
    pub values: Vec<Complex64>,
    pub kmax: usize,
    /// Energy on the outermost shell relative to the block total.
    pub tail_fraction: f64,
}

impl CoefficientBlock {
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub grid: FreqGrid,
    pub blocks: Vec<CoefficientBlock>,
}

impl Coefficients {
    pub fn energy(&self) -> f64 {
        self.blocks.iter().map(CoefficientBlock::energy).sum()
    }

    /// The outer shells carry more than `1e-8` of the total energy. Blocks
    /// with negligible energy of their own do not trip the flag.
    pub fn truncation_flagged(&self) -> bool {
        let total = self.energy();
        let shell: f64 = self.blocks.iter().map(|b| b.tail_fraction * b.energy()).sum();
        total > 0.0 && shell > COEFFICIENT_TAIL * total
    }
}

/// Largest `|C_j k|_∞` whose oscillation is resolved by four grid cells.
fn resolved(system: &StructuredSystem, grid: &FreqGrid, j: usize, kmax: usize) -> Result<()> {
    let c = system.lattice(j);
    let d = grid.d;
    let row_sums = (0..d).map(|r| (0..d).map(|col| c[(r, col)].abs()).sum::<f64>()).fold(0.0, f64::max);
    let top = row_sums * kmax as f64;
    if top > 1.0 / (4.0 * grid.spacing()) {
        let needed = (8.0 * grid.halfwidth * top).ceil() as usize;
        return Err(Error::InvalidArgument(format!(
            "k radius {kmax} is not resolved by the grid for label {}: need n ≥ {}",
            system.cover().element(j).label,
            needed + needed % 2
        )));
    }
    Ok(())
}

fn k_ball(d: usize, kmax: usize) -> Vec<Vec<i64>> {
    crate::cover::lattice_labels(d, kmax as i64)
        .into_iter()
        .filter(|k| k.iter().map(|v| (v * v) as f64).sum::<f64>().sqrt() <= kmax as f64 + 1e-9)
        .collect()
}

/// `e^{i k θ_a}` for `k ∈ [−K, K]` on each axis, by recurrence.
fn phase_tables(theta: &[f64], kmax: usize) -> Vec<Vec<Complex64>> {
    theta
        .iter()
        .map(|&t| {
            let step = Complex64::cis(t);
            let mut z = Complex64::cis(-(kmax as f64) * t);
            let mut row = Vec::with_capacity(2 * kmax + 1);
            for i in 0..=2 * kmax {
                // Re-anchor periodically to keep the rounding drift small.
                if i % 64 == 0 {
                    z = Complex64::cis((i as f64 - kmax as f64) * t);
                }
                row.push(z);
                z *= step;
            }
            row
        })
        .collect()
}

/// `2π C^t ξ`, so that `2π ξ·Ck = Σ_a k_a θ_a`.
fn lattice_phases(c: &nalgebra::DMatrix<f64>, xi: &[f64]) -> Vec<f64> {
    let d = xi.len();
    (0..d)
        .map(|col| 2.0 * std::f64::consts::PI * (0..d).map(|r| c[(r, col)] * xi[r]).sum::<f64>())
        .collect()
}

fn phase_of(tables: &[Vec<Complex64>], k: &[i64], kmax: usize) -> Complex64 {
    k.iter()
        .zip(tables)
        .map(|(&ka, row)| row[(ka + kmax as i64) as usize])
        .product()
}

/// Support points per partial sum; fixed so that the reduction order does
/// not depend on the thread count.
const CHUNK: usize = 256;

fn analysis_block(
    system: &StructuredSystem,
    f: &GridSignal,
    samples: &Samples,
    j: usize,
    kmax: usize,
) -> Result<CoefficientBlock> {
    resolved(system, &f.grid, j, kmax)?;
    let grid = f.grid;
    let c = system.lattice(j);
    let cell = grid.cell_volume();
    let support: Vec<usize> = samples.support[j]
        .iter()
        .copied()
        .filter(|&m| f.values[m] != Complex64::new(0.0, 0.0))
        .collect();
    let ks = k_ball(grid.d, kmax);
    let partials: Vec<Vec<Complex64>> = support
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![Complex64::new(0.0, 0.0); ks.len()];
            for &m in chunk {
                let v = f.values[m] * samples.values[j][m].conj();
                let tables = phase_tables(&lattice_phases(&c, &grid.point(m)), kmax);
                for (slot, k) in acc.iter_mut().zip(&ks) {
                    *slot += v * phase_of(&tables, k, kmax);
                }
            }
            acc
        })
        .collect();
    let mut values = vec![Complex64::new(0.0, 0.0); ks.len()];
    for part in partials {
        for (v, p) in values.iter_mut().zip(part) {
            *v += p;
        }
    }
    values.iter_mut().for_each(|v| *v *= cell);
    let total: f64 = values.iter().map(|v| v.norm_sqr()).sum();
    let shell: f64 = ks
        .iter()
        .zip(&values)
        .filter(|(k, _)| k.iter().map(|v| (v * v) as f64).sum::<f64>().sqrt() > kmax as f64 - 1.0)
        .map(|(_, v)| v.norm_sqr())
        .sum();
    Ok(CoefficientBlock {
        j,
        label: system.cover().element(j).label.to_string(),
        ks,
        values,
        kmax,
        tail_fraction: if total > 0.0 { shell / total } else { 0.0 },
    })
}

/// `c_{j,k} = ∫ f̂ conj(ĝ_j) e^{2πi C_j k·ξ} dξ` for `k ∈ ℤ^d`, `|k| ≤ kmax`.
pub fn analysis_coefficients(system: &StructuredSystem, f: &GridSignal, j: usize, kmax: usize) -> Result<CoefficientBlock> {
    check_dimension(system, &f.grid)?;
    let samples = sample_generators(system, &f.grid);
    analysis_block(system, f, &samples, j, kmax)
}

/// Coefficients of every generator whose samples meet the support of `f̂`.
pub fn analysis(system: &StructuredSystem, f: &GridSignal, kmax: usize) -> Result<Coefficients> {
    check_dimension(system, &f.grid)?;
    let samples = sample_generators(system, &f.grid);
    analysis_with(system, f, &samples, kmax)
}

fn analysis_with(system: &StructuredSystem, f: &GridSignal, samples: &Samples, kmax: usize) -> Result<Coefficients> {
    let blocks: Vec<Result<CoefficientBlock>> = (0..system.len())
        .into_par_iter()
        .map(|j| analysis_block(system, f, samples, j, kmax))
        .collect();
    Ok(Coefficients {
        grid: f.grid,
        blocks: blocks.into_iter().collect::<Result<_>>()?,
    })
}

/// `Σ_{j,k} c_{j,k} e^{−2πi C_j k·ξ} ĝ_j(ξ)` on the grid.
pub fn synthesize(system: &StructuredSystem, coeffs: &Coefficients) -> GridSignal {
    let samples = sample_generators(system, &coeffs.grid);
    synthesize_with(system, coeffs, &samples)
}

fn synthesize_with(system: &StructuredSystem, coeffs: &Coefficients, samples: &Samples) -> GridSignal {
    let grid = coeffs.grid;
    let mut out = GridSignal::zeros(grid);
    // Blocks are added in label order.
    for b in &coeffs.blocks {
        let c = system.lattice(b.j);
        let terms: Vec<(&Vec<i64>, Complex64)> = b
            .ks
            .iter()
            .zip(&b.values)
            .filter(|(_, v)| **v != Complex64::new(0.0, 0.0))
            .map(|(k, v)| (k, *v))
            .collect();
        if terms.is_empty() {
            continue;
        }
        let part: Vec<Complex64> = samples.support[b.j]
            .par_iter()
            .map(|&m| {
                let theta: Vec<f64> = lattice_phases(&c, &grid.point(m)).into_iter().map(|t| -t).collect();
                let tables = phase_tables(&theta, b.kmax);
                let s: Complex64 = terms.iter().map(|(k, v)| v * phase_of(&tables, k, b.kmax)).sum();
                s * samples.values[b.j][m]
            })
            .collect();
        for (&m, v) in samples.support[b.j].iter().zip(part) {
            out.values[m] += v;
        }
    }
    out
}

/// Result of applying the frame operator through analysis and synthesis.
#[derive(Debug, Clone)]
pub struct DirectResult {
    pub signal: GridSignal,
    pub coefficients: Coefficients,
    /// Truncated coefficient energy exceeded `1e-8` for some generator.
    pub flagged: bool,
}

/// `S f` as synthesis of the analysis coefficients, `|k| ≤ kmax`.
pub fn apply_direct(system: &StructuredSystem, f: &GridSignal, kmax: usize) -> Result<DirectResult> {
    check_dimension(system, &f.grid)?;
    let samples = sample_generators(system, &f.grid);
    let coefficients = analysis_with(system, f, &samples, kmax)?;
    let signal = synthesize_with(system, &coefficients, &samples);
    let flagged = coefficients.truncation_flagged();
    if flagged {
        log::warn!("coefficient truncation at k radius {kmax} leaves more than 1e-8 of the energy");
    }
    Ok(DirectResult {
        signal,
        coefficients,
        flagged,
    })
}

/// Largest `k` radius the grid resolves for generator `j`.
fn resolvable_kmax(system: &StructuredSystem, grid: &FreqGrid, j: usize) -> usize {
    let c = system.lattice(j);
    let d = grid.d;
    let row_sums = (0..d).map(|r| (0..d).map(|col| c[(r, col)].abs()).sum::<f64>()).fold(0.0, f64::max);
    (1.0 / (4.0 * grid.spacing() * row_sums)).floor() as usize
}

/// Shell energy fraction at which [`apply_direct_auto`] stops growing `k`;
/// the reconstruction error scales like its square root.
pub const AUTO_TAIL: f64 = 1e-24;

/// Direct application with the `k` radius chosen per generator: starting at
/// `start`, doubled until the outer shell carries at most [`AUTO_TAIL`] of
/// the block energy or the grid resolution is reached.
pub fn apply_direct_auto(system: &StructuredSystem, f: &GridSignal, start: usize) -> Result<DirectResult> {
    check_dimension(system, &f.grid)?;
    let samples = sample_generators(system, &f.grid);
    let blocks: Vec<Result<CoefficientBlock>> = (0..system.len())
        .map(|j| {
            let limit = resolvable_kmax(system, &f.grid, j).max(1);
            let mut kmax = start.clamp(1, limit);
            loop {
                let block = analysis_block(system, f, &samples, j, kmax)?;
                if block.tail_fraction <= AUTO_TAIL || kmax == limit {
                    return Ok(block);
                }
                kmax = (2 * kmax).min(limit);
            }
        })
        .collect();
    let coefficients = Coefficients {
        grid: f.grid,
        blocks: blocks.into_iter().collect::<Result<_>>()?,
    };
    let signal = synthesize_with(system, &coefficients, &samples);
    let flagged = coefficients.truncation_flagged();
    Ok(DirectResult {
        signal,
        coefficients,
        flagged,
    })
}

/// `ℱ⁻¹(t_0 f̂)`
pub fn apply_t0(system: &StructuredSystem, f: &GridSignal) -> Result<GridSignal> {
    check_dimension(system, &f.grid)?;
    Ok(f.multiplied(&t0_on_grid(system, &f.grid)))
}

/// `ℱ⁻¹(t_0⁻¹ f̂)`. Where `t_0 < 1e-8 max t_0` the signal must vanish too
/// (to `1e-8` relative); it is then left at zero, i.e. the inverse acts on
/// the range of `T_0`.
pub fn apply_t0_inv(system: &StructuredSystem, f: &GridSignal) -> Result<GridSignal> {
    check_dimension(system, &f.grid)?;
    let t0 = t0_on_grid(system, &f.grid);
    t0_inv_with(&t0, f)
}

fn t0_inv_with(t0: &[f64], f: &GridSignal) -> Result<GridSignal> {
    let scale = f.max_abs();
    let floor = T0_FLOOR * t0.iter().copied().fold(0.0, f64::max);
    let mut values = Vec::with_capacity(f.values.len());
    for (k, (v, t)) in f.values.iter().zip(t0).enumerate() {
        if *t < floor || *t == 0.0 {
            if v.norm() > T0_FLOOR * scale {
                return Err(Error::MultiplierVanishes {
                    point: f.grid.point(k),
                    value: *t,
                });
            }
            values.push(Complex64::new(0.0, 0.0));
        } else {
            values.push(v / t);
        }
    }
    Ok(GridSignal { grid: f.grid, values })
}

/// How the frame operator is applied inside the Neumann iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ApplyMode {
    Walnut { alpha_max: f64 },
    Direct { kmax: usize },
}

/// Reusable frame-operator application on one grid.
pub struct FrameOperator<'a> {
    system: &'a StructuredSystem,
    grid: FreqGrid,
    mode: ApplyMode,
    lambda: Option<LambdaSet>,
    samples: Samples,
    t0: Vec<f64>,
}

impl<'a> FrameOperator<'a> {
    pub fn new(system: &'a StructuredSystem, grid: FreqGrid, mode: ApplyMode) -> Result<Self> {
        check_dimension(system, &grid)?;
        let lambda = match mode {
            ApplyMode::Walnut { alpha_max } => {
                let l = lambda_set(system, alpha_max, LATTICE_TOL)?;
                for a in &l.alphas {
                    grid.steps(a).map_err(|_| Error::OffGridLattice {
                        alpha: a.clone(),
                        spacing: grid.spacing(),
                        suggested_n: grid.compatible_n(&l.alphas),
                    })?;
                }
                Some(l)
            }
            ApplyMode::Direct { kmax } => {
                for j in 0..system.len() {
                    resolved(system, &grid, j, kmax)?;
                }
                None
            }
        };
        let samples = sample_generators(system, &grid);
        let t0 = t0_from_samples(system, &samples, grid.len());
        Ok(Self {
            system,
            grid,
            mode,
            lambda,
            samples,
            t0,
        })
    }

    pub fn t0(&self) -> &[f64] {
        &self.t0
    }

    pub fn grid(&self) -> FreqGrid {
        self.grid
    }

    pub fn apply(&self, f: &GridSignal) -> Result<GridSignal> {
        if f.grid != self.grid {
            return Err(Error::InvalidArgument("signal grid differs from the operator grid".into()));
        }
        match (&self.mode, &self.lambda) {
            (ApplyMode::Walnut { .. }, Some(l)) => apply_walnut_with(self.system, f, l),
            (ApplyMode::Direct { kmax }, _) => {
                let c = analysis_with(self.system, f, &self.samples, *kmax)?;
                Ok(synthesize_with(self.system, &c, &self.samples))
            }
            _ => unreachable!("walnut mode always carries its Λ"),
        }
    }

    pub fn apply_t0(&self, f: &GridSignal) -> GridSignal {
        f.multiplied(&self.t0)
    }

    pub fn apply_t0_inv(&self, f: &GridSignal) -> Result<GridSignal> {
        t0_inv_with(&self.t0, f)
    }

    /// `‖T_0⁻¹(S − T_0) f‖ / ‖f‖`
    pub fn perturbation_ratio(&self, f: &GridSignal) -> Result<f64> {
        let r = self.apply(f)?.sub(&self.apply_t0(f));
        Ok(self.apply_t0_inv(&r)?.norm() / f.norm())
    }
}

#[derive(Debug, Clone)]
pub struct NeumannResult {
    pub u: GridSignal,
    /// Relative residuals `‖g − S u_n‖/‖g‖`, starting with `u_0`.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Largest ratio of consecutive residuals.
    pub contraction_ratio: f64,
}

impl NeumannResult {
    /// Applications of `T_0⁻¹`, the initial guess `u_0 = T_0⁻¹ g` included.
    pub fn iterations(&self) -> usize {
        self.residual_history.len()
    }

    pub fn write_history_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "relative_residual"])?;
        for (i, r) in self.residual_history.iter().enumerate() {
            w.write_record([i.to_string(), format!("{r:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves `S u = g` by `u ← u + T_0⁻¹(g − S u)` from `u_0 = T_0⁻¹ g`.
pub fn neumann_invert(
    system: &StructuredSystem,
    g: &GridSignal,
    tol: f64,
    max_iter: usize,
    mode: ApplyMode,
) -> Result<NeumannResult> {
    let op = FrameOperator::new(system, g.grid, mode)?;
    neumann_with(&op, g, tol, max_iter)
}

pub fn neumann_with(op: &FrameOperator<'_>, g: &GridSignal, tol: f64, max_iter: usize) -> Result<NeumannResult> {
    let gnorm = g.norm();
    if gnorm == 0.0 {
        return Ok(NeumannResult {
            u: GridSignal::zeros(g.grid),
            residual_history: vec![0.0],
            converged: true,
            contraction_ratio: 0.0,
        });
    }
    let mut u = op.apply_t0_inv(g)?;
    let mut history = Vec::new();
    let mut ratio: f64 = 0.0;
    let mut stalled = 0;
    loop {
        let r = g.sub(&op.apply(&u)?);
        let rel = r.norm() / gnorm;
        if let Some(&prev) = history.last() {
            let q = rel / prev;
            ratio = ratio.max(q);
            stalled = if rel >= prev { stalled + 1 } else { 0 };
        }
        history.push(rel);
        if rel < tol {
            return Ok(NeumannResult {
                u,
                residual_history: history,
                converged: true,
                contraction_ratio: ratio,
            });
        }
        if stalled >= 5 {
            return Err(Error::ContractionFailed { ratio, history });
        }
        if history.len() > max_iter {
            return Ok(NeumannResult {
                u,
                residual_history: history,
                converged: false,
                contraction_ratio: ratio,
            });
        }
        u = u.add(&op.apply_t0_inv(&r)?);
    }
}

/// `max_f ‖T_0⁻¹(S − T_0) f‖/‖f‖` over the corpus and a few power iterates
/// of each member.
pub fn contraction_surrogate(op: &FrameOperator<'_>, corpus: &[GridSignal], power_steps: usize) -> Result<f64> {
    let mut best: f64 = 0.0;
    for f in corpus {
        let mut x = f.clone();
        for _ in 0..=power_steps {
            let r = op.apply(&x)?.sub(&op.apply_t0(&x));
            let y = op.apply_t0_inv(&r)?;
            let nx = x.norm();
            if nx == 0.0 {
                break;
            }
            best = best.max(y.norm() / nx);
            let ny = y.norm();
            if ny == 0.0 {
                break;
            }
            x = y.scaled(Complex64::new(1.0 / ny, 0.0));
        }
    }
    Ok(best)
}

/// Discrete `‖ℱ⁻¹ F‖_{L^p}` of grid samples `F`: one period of the
/// trigonometric polynomial with spatial spacing `1/(2Ξ)`.
pub fn spatial_lp_norm(grid: &FreqGrid, values: &[Complex64], p: f64) -> f64 {
    let spatial = inverse_transform(grid, values);
    let dx = (1.0 / (2.0 * grid.halfwidth)).powi(grid.d as i32);
    if p.is_infinite() {
        lp_norm(spatial.iter().map(|v| v.norm()), p)
    } else {
        lp_norm(spatial.iter().map(|v| v.norm()), p) * dx.powf(1.0 / p)
    }
}

/// `x_m ↦ h^d Σ_k F_k e^{2πi x_m ξ_k}` at `x_m = m/(2Ξ)`, up to a unimodular
/// phase per sample.
fn inverse_transform(grid: &FreqGrid, values: &[Complex64]) -> Vec<Complex64> {
    let n = grid.n;
    let mut data = values.to_vec();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    let stride_count = grid.len() / n;
    for axis in 0..grid.d {
        let stride = n.pow((grid.d - 1 - axis) as u32);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for start in 0..stride_count {
            // `start` enumerates the lines along `axis`.
            let outer = start / stride;
            let inner = start % stride;
            let base = outer * stride * n + inner;
            for (t, l) in line.iter_mut().enumerate() {
                *l = data[base + t * stride];
            }
            fft.process(&mut line);
            for (t, l) in line.iter().enumerate() {
                data[base + t * stride] = *l;
            }
        }
    }
    let cell = grid.cell_volume();
    data.iter_mut().for_each(|v| *v *= cell);
    data
}

/// `‖(w_i ‖ℱ⁻¹(φ_i f̂)‖_{L^p})_i‖_{ℓ^q}` over non-edge labels.
pub fn decomposition_norm(partition: &Partition, f: &GridSignal, p: f64, q: f64, w: Option<&Weight>) -> Result<f64> {
    let cover = partition.cover();
    if cover.dimension() != f.grid.d {
        return Err(Error::InvalidArgument("partition and signal dimensions differ".into()));
    }
    let grid = f.grid;
    let mut pieces: Vec<Vec<Complex64>> = vec![Vec::new(); cover.len()];
    let labels = crate::certificate::sup_labels(cover);
    let mut wanted = vec![false; cover.len()];
    for &i in &labels {
        wanted[i] = true;
    }
    for (k, v) in f.values.iter().enumerate() {
        if *v == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (i, phi) in partition.values_at(&grid.point(k)) {
            if wanted[i] {
                if pieces[i].is_empty() {
                    pieces[i] = vec![Complex64::new(0.0, 0.0); grid.len()];
                }
                pieces[i][k] = v * phi;
            }
        }
    }
    let norms: Vec<f64> = labels
        .par_iter()
        .map(|&i| {
            if pieces[i].is_empty() {
                0.0
            } else {
                spatial_lp_norm(&grid, &pieces[i], p)
            }
        })
        .collect();
    Ok(lp_norm(
        labels.iter().zip(&norms).map(|(&i, n)| n * w.map_or(1.0, |w| w.values[i])),
        q,
    ))
}

/// `‖(v_j |det C_j|^{1/p − 1/2} ‖(c_{j,k})_k‖_{ℓ^p})_j‖_{ℓ^q}`
pub fn coefficient_space_norm(system: &StructuredSystem, coeffs: &Coefficients, p: f64, q: f64, v: Option<&Weight>) -> f64 {
    let inv_p = if p.is_infinite() { 0.0 } else { 1.0 / p };
    lp_norm(
        coeffs.blocks.iter().map(|b| {
            let vj = v.map_or(1.0, |v| v.values[b.j]);
            vj * system.lattice_det(b.j).powf(inv_p - 0.5) * lp_norm(b.values.iter().map(|c| c.norm()), p)
        }),
        q,
    )
}

/// Seeded corpus of smooth test signals: sums of three modulated Gaussian
/// bumps `a e^{−π|ξ−μ|²/σ²} e^{−2πi x·ξ}` with centres `|μ|_∞ ≤ centre_range`
/// and time shifts `|x|_∞ ≤ 2`.
pub fn gaussian_corpus(grid: &FreqGrid, count: usize, seed: u64, centre_range: f64) -> Vec<GridSignal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let bumps: Vec<(Complex64, Vec<f64>, f64, Vec<f64>)> = (0..3)
                .map(|_| {
                    let a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let mu: Vec<f64> = (0..grid.d).map(|_| rng.gen_range(-centre_range..=centre_range)).collect();
                    let sigma = rng.gen_range(0.5..1.5);
                    let x: Vec<f64> = (0..grid.d).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    (a, mu, sigma, x)
                })
                .collect();
            GridSignal::from_fn(*grid, |xi| {
                bumps
                    .iter()
                    .map(|(a, mu, sigma, x)| {
                        let r2: f64 = xi.iter().zip(mu).map(|(p, m)| (p - m) * (p - m)).sum();
                        let phase = -2.0 * std::f64::consts::PI * xi.iter().zip(x).map(|(p, s)| p * s).sum::<f64>();
                        a * (-std::f64::consts::PI * r2 / (sigma * sigma)).exp() * Complex64::cis(phase)
                    })
                    .sum()
            })
        })
        .collect()
}

/// `e^{−1/(1−t²)}` on `|t| < 1`, zero elsewhere.
fn smooth_bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Seeded corpus of signals supported in balls of radius `radius` around
/// the given centres, each a random combination of modulated smooth bumps.
pub fn bump_corpus(grid: &FreqGrid, count: usize, seed: u64, centres: &[Vec<f64>], radius: f64) -> Vec<GridSignal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let parts: Vec<(Complex64, &Vec<f64>, Vec<f64>)> = centres
                .iter()
                .map(|c| {
                    let a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let x: Vec<f64> = (0..grid.d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    (a, c, x)
                })
                .collect();
            GridSignal::from_fn(*grid, |xi| {
                parts
                    .iter()
                    .map(|(a, c, x)| {
                        let r = euclid(&xi.iter().zip(c.iter()).map(|(p, m)| p - m).collect::<Vec<_>>()) / radius;
                        if r >= 1.0 {
                            return Complex64::new(0.0, 0.0);
                        }
                        let phase = -2.0 * std::f64::consts::PI * xi.iter().zip(x).map(|(p, s)| p * s).sum::<f64>();
                        a * smooth_bump(r) * Complex64::cis(phase)
                    })
                    .sum()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cover::build_uniform_cover;
    use crate::partition::{build_regular_partition, BumpProfile};
    use crate::system::Generator;
    use proptest::prelude::{prop_assert, proptest};
    use std::sync::Arc;

    fn uniform(generator: Generator, radius: i64, delta: f64) -> StructuredSystem {
        let cover = Arc::new(build_uniform_cover(1, 1.0, radius).unwrap());
        StructuredSystem::new(cover, Arc::new(generator), delta).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = FreqGrid::new(2, 4.0, 16).unwrap();
        assert_eq!(g.spacing(), 0.5);
        assert_eq!(g.point(g.flatten(&[3, 5])), vec![-2.5, -1.5]);
        assert_eq!(g.unflatten(g.flatten(&[7, 1])), vec![7, 1]);
        assert_eq!(g.shifted(g.flatten(&[0, 0]), &[-1, 0]), None);
        assert!(FreqGrid::new(1, 1.0, 7).is_err());
        assert!(FreqGrid::new(1, 1.0, 6).is_err());
    }

    #[test]
    fn off_grid_lattice_suggests_compatible_size() {
        let grid = FreqGrid::new(1, 16.0, 1000).unwrap();
        let err = grid.steps(&[3.0]).unwrap_err();
        match err {
            Error::OffGridLattice { suggested_n, .. } => {
                assert_eq!(suggested_n, 1024);
                let h = 32.0 / suggested_n as f64;
                assert!(((3.0 / h) - (3.0 / h).round()).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lambda_sets_of_uniform_systems() {
        let sys = uniform(Generator::gaussian(1), 4, 1.0);
        let l = lambda_set(&sys, 3.0, LATTICE_TOL).unwrap();
        let alphas: Vec<f64> = l.alphas.iter().map(|a| a[0]).collect();
        assert_eq!(alphas, vec![0.0, -1.0, 1.0, -2.0, 2.0, -3.0, 3.0]);
        assert!(l.members.iter().all(|m| m.len() == sys.len()));
        let half = uniform(Generator::gaussian(1), 4, 0.5);
        let l = lambda_set(&half, 5.0, LATTICE_TOL).unwrap();
        let alphas: Vec<f64> = l.alphas.iter().map(|a| a[0]).collect();
        assert_eq!(alphas, vec![0.0, -2.0, 2.0, -4.0, 4.0]);
        for a in &l.alphas {
            let neg: Vec<f64> = a.iter().map(|x| -x).collect();
            assert!(l.position(&neg).is_some());
        }
        assert!(matches!(lambda_set(&sys, 3.0, 0.3), Err(Error::LatticeTolerance(_))));
    }

    #[test]
    fn t0_is_the_calderon_sum() {
        let sys = uniform(Generator::gaussian(1), 4, 0.5);
        for x in [-1.3, 0.0, 0.27, 2.9] {
            let a = t_alpha(&sys, &[0.0], &[x]).re;
            assert!((a - sys.calderon_t0(&[x])).abs() < 1e-12);
        }
        let grid = FreqGrid::new(1, 4.0, 64).unwrap();
        let t0 = t0_on_grid(&sys, &grid);
        for (k, t) in t0.iter().enumerate() {
            assert!((t - sys.calderon_t0(&grid.point(k))).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn t_alpha_hermitian_symmetry(m in -3i32..=3, x in -3.0f64..3.0) {
            let sys = uniform(Generator::gaussian(1), 4, 0.5);
            let alpha = 2.0 * m as f64;
            let lhs = t_alpha(&sys, &[alpha], &[x - alpha]);
            let rhs = t_alpha(&sys, &[-alpha], &[x]).conj();
            prop_assert!((lhs - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn painless_multipliers_vanish_off_zero() {
        let sys = uniform(Generator::compact_bump(1, 0.4).unwrap(), 4, 1.0);
        let l = lambda_set(&sys, 6.0, LATTICE_TOL).unwrap();
        for a in l.alphas.iter().skip(1) {
            for k in 0..200 {
                let x = -5.0 + 0.05 * k as f64;
                assert_eq!(t_alpha(&sys, a, &[x]).norm(), 0.0);
            }
        }
    }

    #[test]
    fn painless_direct_application_is_the_multiplier() {
        let sys = uniform(Generator::compact_bump(1, 0.4).unwrap(), 4, 1.0);
        let grid = FreqGrid::new(1, 2.0, 8000).unwrap();
        let centres = [vec![-1.0], vec![0.0], vec![1.0]];
        let t0 = t0_on_grid(&sys, &grid);
        for f in bump_corpus(&grid, 2, 17, &centres, 0.35) {
            let d = apply_direct(&sys, &f, 500).unwrap();
            let err = d.signal.relative_distance(&f.multiplied(&t0));
            assert!(err < 1e-10, "{err}");
            let auto = apply_direct_auto(&sys, &f, 16).unwrap();
            let err = auto.signal.relative_distance(&f.multiplied(&t0));
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn walnut_agrees_with_direct_for_gaussian() {
        let sys = uniform(Generator::gaussian(1), 6, 0.5);
        let grid = FreqGrid::new(1, 16.0, 2048).unwrap();
        for f in gaussian_corpus(&grid, 3, 11, 2.0) {
            let w = apply_walnut(&sys, &f, 8.0).unwrap();
            let d = apply_direct(&sys, &f, 32).unwrap();
            assert!(!d.flagged);
            let err = w.relative_distance(&d.signal);
            assert!(err < 1e-8, "{err}");
        }
    }

    #[test]
    fn frame_operator_is_self_adjoint_and_linear() {
        let sys = uniform(Generator::gaussian(1), 6, 0.5);
        let grid = FreqGrid::new(1, 16.0, 2048).unwrap();
        let fs = gaussian_corpus(&grid, 2, 5, 2.0);
        let op = FrameOperator::new(&sys, grid, ApplyMode::Direct { kmax: 24 }).unwrap();
        let sf = op.apply(&fs[0]).unwrap();
        let sg = op.apply(&fs[1]).unwrap();
        let gap = (sf.inner(&fs[1]) - fs[0].inner(&sg)).norm();
        assert!(gap < 1e-8 * fs[0].norm() * fs[1].norm(), "{gap}");
        let c = Complex64::new(0.3, -1.2);
        let lin = op.apply(&fs[0].scaled(c).add(&fs[1])).unwrap();
        assert!(lin.relative_distance(&sf.scaled(c).add(&sg)) < 1e-12);
        // Parseval: Σ|c_{j,k}|² = ⟨Sf, f⟩.
        let coeffs = analysis(&sys, &fs[0], 24).unwrap();
        assert!((coeffs.energy() - sf.inner(&fs[0]).re).abs() < 1e-9 * coeffs.energy());
    }

    #[test]
    fn inverse_multiplier_round_trip_and_bound() {
        let sys = uniform(Generator::gaussian(1), 6, 0.5);
        let grid = FreqGrid::new(1, 8.0, 256).unwrap();
        let a_raw = t0_on_grid(&sys, &grid).into_iter().fold(f64::INFINITY, f64::min);
        for f in gaussian_corpus(&grid, 5, 3, 2.0) {
            let back = apply_t0_inv(&sys, &apply_t0(&sys, &f).unwrap()).unwrap();
            assert!(back.relative_distance(&f) < 1e-12);
            assert!(apply_t0_inv(&sys, &f).unwrap().norm() <= f.norm() / a_raw * (1.0 + 1e-12));
        }
    }

    #[test]
    fn tight_painless_system_is_a_multiple_of_identity() {
        // Σ_j |ĝ_j|² = 1 on the interior, so S = δ^{-1} Id there.
        let sys = uniform(Generator::tight_bump(1), 6, 0.5);
        let grid = FreqGrid::new(1, 8.0, 256).unwrap();
        let f = &bump_corpus(&grid, 1, 9, &[vec![-1.0], vec![0.5]], 1.2)[0];
        let t0 = t0_on_grid(&sys, &grid);
        for (k, t) in t0.iter().enumerate() {
            if grid.point(k)[0].abs() <= 3.0 {
                assert!((t - 2.0).abs() < 1e-12, "{t}");
            }
        }
        let w = apply_walnut(&sys, f, 4.0).unwrap();
        assert!(w.relative_distance(&f.scaled(Complex64::new(2.0, 0.0))) < 1e-12);
        let l = lambda_set(&sys, 4.0, LATTICE_TOL).unwrap();
        for a in l.alphas.iter().skip(1) {
            for x in [-1.0, 0.1, 0.7] {
                assert!(t_alpha(&sys, a, &[x]).norm() < 1e-15);
            }
        }
        let res = neumann_invert(&sys, f, 1e-12, 10, ApplyMode::Walnut { alpha_max: 4.0 }).unwrap();
        assert!(res.converged && res.iterations() == 1);
        assert!(res.u.relative_distance(&f.scaled(Complex64::new(0.5, 0.0))) < 1e-12);
    }

    #[test]
    fn neumann_converges_for_gaussian() {
        // The cover reaches past the grid so that t_0 is bounded below on it.
        let sys = uniform(Generator::gaussian(1), 20, 0.5);
        let grid = FreqGrid::new(1, 16.0, 512).unwrap();
        let f = &gaussian_corpus(&grid, 1, 21, 2.0)[0];
        let op = FrameOperator::new(&sys, grid, ApplyMode::Walnut { alpha_max: 6.0 }).unwrap();
        let g = op.apply(f).unwrap();
        let res = neumann_with(&op, &g, 1e-10, 50).unwrap();
        assert!(res.converged, "{:?}", res.residual_history);
        assert!(res.u.relative_distance(f) < 1e-8);
    }

    #[test]
    fn boundary_violation_is_an_error() {
        let sys = uniform(Generator::gaussian(1), 6, 0.5);
        let grid = FreqGrid::new(1, 8.0, 256).unwrap();
        let f = GridSignal::from_fn(grid, |x| Complex64::new((-(x[0] - 7.5).powi(2)).exp(), 0.0));
        assert!(matches!(apply_walnut(&sys, &f, 4.0), Err(Error::BoundaryViolation { .. })));
    }

    #[test]
    fn signal_io_round_trips() {
        let grid = FreqGrid::new(2, 3.0, 8).unwrap();
        let f = gaussian_corpus(&grid, 1, 2, 1.0).remove(0);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 16 * 64);
        assert_eq!(GridSignal::read_binary(&buf[..]).unwrap(), f);
        let mut csv = Vec::new();
        f.write_csv(&mut csv).unwrap();
        let back = GridSignal::read_csv(grid, &csv[..]).unwrap();
        assert!(back.relative_distance(&f) < 1e-15);
    }

    #[test]
    fn decomposition_norm_identities() {
        // Balls of radius 0.6 leave |ξ| < 0.4 to label 0 alone.
        let cover = Arc::new(build_uniform_cover(1, 0.6, 4).unwrap());
        let partition = build_regular_partition(cover, BumpProfile::default()).unwrap();
        let grid = FreqGrid::new(1, 8.0, 512).unwrap();
        let f = &bump_corpus(&grid, 1, 4, &[vec![0.0]], 0.3)[0];
        let n = decomposition_norm(&partition, f, 2.0, 2.0, None).unwrap();
        assert!((n - f.norm()).abs() < 1e-9 * f.norm(), "{n} vs {}", f.norm());
        for g in gaussian_corpus(&grid, 4, 8, 1.5) {
            let a = decomposition_norm(&partition, &g, 2.0, 2.0, None).unwrap();
            let b = decomposition_norm(&partition, &g.scaled(Complex64::new(0.0, -3.0)), 2.0, 2.0, None).unwrap();
            assert!((b - 3.0 * a).abs() < 1e-12 * b);
            let q_inf = decomposition_norm(&partition, &g, 2.0, f64::INFINITY, None).unwrap();
            let q_one = decomposition_norm(&partition, &g, 2.0, 1.0, None).unwrap();
            assert!(q_inf <= q_one * (1.0 + 1e-12));
            // Σ φ_i = 1 and the triangle inequality.
            assert!(g.norm() <= q_one * (1.0 + 1e-9));
        }
    }

    #[test]
    fn coefficient_space_norm_examples() {
        let sys = uniform(Generator::gaussian(1), 2, 1.0);
        let grid = FreqGrid::new(1, 4.0, 64).unwrap();
        let block = |j: usize, values: Vec<Complex64>| CoefficientBlock {
            j,
            label: j.to_string(),
            ks: (0..values.len() as i64).map(|k| vec![k]).collect(),
            values,
            kmax: 1,
            tail_fraction: 0.0,
        };
        let coeffs = Coefficients {
            grid,
            blocks: vec![
                block(0, vec![Complex64::new(3.0, 0.0), Complex64::new(0.0, 4.0)]),
                block(1, vec![Complex64::new(12.0, 0.0)]),
            ],
        };
        assert!((coefficient_space_norm(&sys, &coeffs, 2.0, 2.0, None) - 13.0).abs() < 1e-12);
        let half = uniform(Generator::gaussian(1), 2, 0.25);
        let single = Coefficients {
            grid,
            blocks: vec![block(1, vec![Complex64::new(0.0, 2.0)])],
        };
        let v = Weight {
            values: vec![1.0, 5.0, 1.0, 1.0, 1.0],
        };
        let expected = 5.0 * 0.25f64.powf(1.0 - 0.5) * 2.0;
        assert!((coefficient_space_norm(&half, &single, 1.0, 3.0, Some(&v)) - expected).abs() < 1e-12);
    }
}
