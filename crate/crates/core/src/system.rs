//! Generators with derivative oracles, structured GSI systems
//! `g_j = |det A_j|^{1/2} M_{b_j}(g∘A_j^t)` with lattices `C_j = δ A_j^{-t}`,
//! and the Calderón sum `t_0`.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cover::{AffineMap, Cover};
use crate::error::{Error, Result};
use crate::numerics::finite_diff::{richardson_partial, DEFAULT_STEP};
use crate::numerics::jet::{Jet, JetSpace};
use crate::numerics::multi_index::multi_indices;

/// Decay `N_emp` above this is reported as super-polynomial.
pub const DECAY_CAP: f64 = 100.0;

/// Plateau and support half-widths of the tight bump profile.
const TIGHT_PLATEAU: f64 = 0.25;
const TIGHT_SUPPORT: f64 = 0.75;

/// Exponent magnitude beyond which `exp(−x)` is treated as exactly zero.
const UNDERFLOW: f64 = 700.0;

/// Generator description as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// `e^{−π|ξ|²}`
    Gaussian {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `(1+|ξ|²)^{−M}`
    Invpoly {
        m: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `exp(1 − 1/(1−|ξ|²/R²))` on the ball of radius `R`, zero outside.
    Bump {
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Per-axis profile whose integer translates have squares summing to one.
    TightBump {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// One-dimensional samples `(ξ, re, im)` from a CSV file, linearly
    /// interpolated and zero outside the sampled range.
    Table { path: String },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayBound {
    pub c: f64,
    pub n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub c: f64,
    pub r: f64,
}

type CustomFn = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Gaussian,
    InversePoly(f64),
    CompactBump(f64),
    TightBump,
    Table { xs: Vec<f64>, values: Vec<Complex64> },
    Custom(CustomFn),
}

impl fmt::Debug for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Gaussian => write!(f, "Gaussian"),
            Kind::InversePoly(m) => write!(f, "InversePoly({m})"),
            Kind::CompactBump(r) => write!(f, "CompactBump({r})"),
            Kind::TightBump => write!(f, "TightBump"),
            Kind::Table { xs, .. } => write!(f, "Table({} samples)", xs.len()),
            Kind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// A generator `ĝ` on `ℝ^d` with partial derivatives up to order `d+1`.
#[derive(Debug, Clone)]
pub struct Generator {
    dim: usize,
    kind: Kind,
    amplitude: f64,
    description: String,
    pub decay: Option<DecayBound>,
    pub lower: Option<LowerBound>,
    jets: Arc<JetSpace>,
    fd_step: f64,
}

impl Generator {
    fn with_kind(dim: usize, kind: Kind, amplitude: f64, description: String) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if !amplitude.is_finite() {
            return Err(Error::InvalidArgument("generator amplitude must be finite".into()));
        }
        Ok(Self {
            dim,
            kind,
            amplitude,
            description,
            decay: None,
            lower: None,
            jets: Arc::new(JetSpace::new(dim, dim as u32 + 1)),
            fd_step: DEFAULT_STEP,
        })
    }

    pub fn gaussian(dim: usize) -> Self {
        Self::with_kind(dim, Kind::Gaussian, 1.0, "gaussian".into()).expect("valid gaussian")
    }

    pub fn inverse_poly(dim: usize, m: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(Error::InvalidArgument(format!("invpoly exponent must be positive, got {m}")));
        }
        Self::with_kind(dim, Kind::InversePoly(m), 1.0, format!("invpoly(M={m})"))
    }

    pub fn compact_bump(dim: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!("bump radius must be positive, got {radius}")));
        }
        Self::with_kind(dim, Kind::CompactBump(radius), 1.0, format!("bump(R={radius})"))
    }

    pub fn tight_bump(dim: usize) -> Self {
        Self::with_kind(dim, Kind::TightBump, 1.0, "tight_bump".into()).expect("valid tight bump")
    }

    /// Generator given only by its values; derivatives by finite differences.
    pub fn custom(dim: usize, name: &str, f: impl Fn(&[f64]) -> Complex64 + Send + Sync + 'static) -> Self {
        Self::with_kind(dim, Kind::Custom(Arc::new(f)), 1.0, format!("custom({name})")).expect("valid custom")
    }

    /// One-dimensional table generator from `(ξ, re, im)` samples.
    pub fn table(samples: Vec<(f64, Complex64)>, name: &str) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Format("table generator needs at least two samples".into()));
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Format("table abscissae must be strictly increasing".into()));
        }
        if samples.iter().any(|(x, v)| !x.is_finite() || !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Format("table contains non-finite values".into()));
        }
        let (xs, values) = samples.into_iter().unzip();
        Self::with_kind(1, Kind::Table { xs, values }, 1.0, format!("table({name})"))
    }

    pub fn read_table_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let mut samples = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() != 3 {
                return Err(Error::Format(format!(
                    "table generator rows need columns xi,re,im (got {} fields)",
                    record.len()
                )));
            }
            let parse = |k: usize| -> Result<f64> {
                record[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad number {:?}: {e}", &record[k])))
            };
            samples.push((parse(0)?, Complex64::new(parse(1)?, parse(2)?)));
        }
        Self::table(samples, &path.display().to_string())
    }

    pub fn from_spec(spec: &GeneratorSpec, dim: usize, base_dir: &Path) -> Result<Self> {
        let g = match spec {
            GeneratorSpec::Gaussian { amplitude } => Self::gaussian(dim).scaled(*amplitude),
            GeneratorSpec::Invpoly { m, amplitude } => Self::inverse_poly(dim, *m)?.scaled(*amplitude),
            GeneratorSpec::Bump { radius, amplitude } => Self::compact_bump(dim, *radius)?.scaled(*amplitude),
            GeneratorSpec::TightBump { amplitude } => Self::tight_bump(dim).scaled(*amplitude),
            GeneratorSpec::Table { path } => {
                if dim != 1 {
                    return Err(Error::InvalidArgument("table generators are one-dimensional".into()));
                }
                Self::read_table_csv(&base_dir.join(path))?
            }
        };
        Ok(g)
    }

    /// `c · ĝ`
    pub fn scaled(mut self, c: f64) -> Self {
        self.amplitude *= c;
        if let Some(d) = &mut self.decay {
            d.c *= c.abs();
        }
        if let Some(l) = &mut self.lower {
            l.c *= c.abs();
        }
        self
    }

    pub fn with_decay(mut self, c: f64, n: f64) -> Self {
        self.decay = Some(DecayBound { c, n });
        self
    }

    pub fn with_lower(mut self, c: f64, r: f64) -> Self {
        self.lower = Some(LowerBound { c, r });
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn description(&self) -> String {
        if self.amplitude == 1.0 {
            self.description.clone()
        } else {
            format!("{}*{}", self.amplitude, self.description)
        }
    }

    /// Derivatives are exact (jets) rather than finite differences.
    pub fn has_exact_partials(&self) -> bool {
        !matches!(self.kind, Kind::Table { .. } | Kind::Custom(_))
    }

    /// `ĝ` is `C^∞`; false for piecewise-linear tables.
    pub fn is_smooth(&self) -> bool {
        !matches!(self.kind, Kind::Table { .. })
    }

    /// Vanishes outside a bounded set.
    pub fn support_radius(&self) -> Option<f64> {
        match self.kind {
            Kind::CompactBump(r) => Some(r),
            Kind::TightBump => Some(TIGHT_SUPPORT * (self.dim as f64).sqrt()),
            Kind::Table { ref xs, .. } => Some(xs[0].abs().max(xs[xs.len() - 1].abs())),
            _ => None,
        }
    }

    /// `min_{|ξ| ≤ r} |ĝ(ξ)|` for the radial built-ins.
    pub fn radial_lower_bound(&self, r: f64) -> Option<f64> {
        let mut x = vec![0.0; self.dim];
        x[0] = r;
        match self.kind {
            Kind::Gaussian | Kind::InversePoly(_) | Kind::CompactBump(_) => Some(self.ghat(&x).norm()),
            _ => None,
        }
    }

    pub fn ghat(&self, xi: &[f64]) -> Complex64 {
        match &self.kind {
            Kind::Table { xs, values } => interpolate(xs, values, xi[0]) * self.amplitude,
            Kind::Custom(f) => f(xi) * self.amplitude,
            _ => Complex64::new(self.real_value(xi), 0.0),
        }
    }

    fn real_value(&self, xi: &[f64]) -> f64 {
        let r2: f64 = xi.iter().map(|v| v * v).sum();
        let v = match self.kind {
            Kind::Gaussian => (-std::f64::consts::PI * r2).exp(),
            Kind::InversePoly(m) => (1.0 + r2).powf(-m),
            Kind::CompactBump(radius) => {
                let u = 1.0 - r2 / (radius * radius);
                if u <= 0.0 || 1.0 / u > UNDERFLOW {
                    0.0
                } else {
                    (1.0 - 1.0 / u).exp()
                }
            }
            Kind::TightBump => xi.iter().map(|&x| tight_profile(x)).product(),
            _ => unreachable!("real_value is only used for analytic kinds"),
        };
        v * self.amplitude
    }

    /// Jet of `ĝ` composed with the given coordinate jets (analytic kinds only).
    fn jet_of(&self, js: &JetSpace, y: &[Jet]) -> Jet {
        let jet = match self.kind {
            Kind::Gaussian => js.exp(&js.scale(&js.squared_norm(y), -std::f64::consts::PI)),
            Kind::InversePoly(m) => js.powf(&js.add_constant(&js.squared_norm(y), 1.0), -m),
            Kind::CompactBump(radius) => {
                let u = js.add_constant(&js.scale(&js.squared_norm(y), -1.0 / (radius * radius)), 1.0);
                if u.coeffs[0] <= 0.0 || 1.0 / u.coeffs[0] > UNDERFLOW {
                    js.constant(0.0)
                } else {
                    js.exp(&js.add_constant(&js.scale(&js.recip(&u), -1.0), 1.0))
                }
            }
            Kind::TightBump => {
                let mut acc = js.constant(1.0);
                for yk in y {
                    let p = tight_profile_jet(js, yk);
                    acc = js.mul(&acc, &p);
                    if acc.coeffs.iter().all(|c| *c == 0.0) {
                        break;
                    }
                }
                acc
            }
            _ => unreachable!("jets are only used for analytic kinds"),
        };
        js.scale(&jet, self.amplitude)
    }

    /// `∂^α ĝ(ξ)`.
    pub fn partial(&self, alpha: &[u32], xi: &[f64]) -> Complex64 {
        if self.has_exact_partials() {
            let js = &self.jets;
            let order: u32 = alpha.iter().sum();
            if order > js.degree() {
                let local = JetSpace::new(self.dim, order);
                let jet = self.jet_of(&local, &local.variables(xi));
                let pos = local.monomials().iter().position(|m| m == alpha).expect("monomial");
                return Complex64::new(local.partials(&jet)[pos], 0.0);
            }
            let jet = self.jet_of(js, &js.variables(xi));
            let pos = js.monomials().iter().position(|m| m == alpha).expect("monomial");
            Complex64::new(js.partials(&jet)[pos], 0.0)
        } else {
            richardson_partial(&|x: &[f64]| self.ghat(x), xi, alpha, self.fd_step)
        }
    }

    /// `max_{|α| ≤ d+1} |∂^α ĝ(η)|`.
    pub fn max_partial(&self, eta: &[f64]) -> f64 {
        if self.has_exact_partials() {
            let js = &self.jets;
            js.max_abs_partial(&self.jet_of(js, &js.variables(eta)))
        } else {
            let f = |x: &[f64]| self.ghat(x);
            multi_indices(self.dim, self.dim as u32 + 1)
                .iter()
                .map(|a| richardson_partial::<Complex64, _>(&f, eta, a, self.fd_step).norm())
                .fold(0.0, f64::max)
        }
    }

    /// `max_{|θ| ≤ d+1} |∂^θ [ĝ∘T](x)|` for an affine map `T`.
    pub fn max_partial_composed(&self, map: &AffineMap, x: &[f64]) -> f64 {
        if self.has_exact_partials() {
            let js = &self.jets;
            let vars = js.variables(x);
            let shift: Vec<f64> = map.shift().iter().copied().collect();
            let y = js.affine(&map.matrix_row_major(), &shift, &vars);
            js.max_abs_partial(&self.jet_of(js, &y))
        } else {
            let f = |p: &[f64]| self.ghat(&map.apply(p));
            multi_indices(self.dim, self.dim as u32 + 1)
                .iter()
                .map(|a| richardson_partial::<Complex64, _>(&f, x, a, self.fd_step).norm())
                .fold(0.0, f64::max)
        }
    }

    pub fn fingerprint(&self) -> String {
        let mut s = format!("{}|d={}", self.description(), self.dim);
        if let Kind::Table { xs, values } = &self.kind {
            for (x, v) in xs.iter().zip(values) {
                s.push_str(&format!("|{x:e},{:e},{:e}", v.re, v.im));
            }
        }
        crate::fingerprint(s.as_bytes())
    }
}

fn interpolate(xs: &[f64], values: &[Complex64], x: f64) -> Complex64 {
    let n = xs.len();
    if x < xs[0] || x > xs[n - 1] {
        return Complex64::new(0.0, 0.0);
    }
    let k = xs.partition_point(|&v| v <= x).clamp(1, n - 1);
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    values[k - 1] * (1.0 - t) + values[k] * t
}

fn glue(t: f64) -> f64 {
    if t <= 0.0 || 1.0 / t > UNDERFLOW {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// `u ∈ (0,1)` coordinate of the tight-bump transition (1 at the plateau edge).
fn tight_coordinate(x: f64) -> f64 {
    (TIGHT_SUPPORT - x.abs()) / (TIGHT_SUPPORT - TIGHT_PLATEAU)
}

/// `√(f(u) / (f(u) + f(1−u)))`, `f(t) = e^{−1/t}`.
fn tight_profile(x: f64) -> f64 {
    let u = tight_coordinate(x);
    if u >= 1.0 {
        1.0
    } else if u <= 0.0 {
        0.0
    } else {
        let a = glue(u);
        (a / (a + glue(1.0 - u))).sqrt()
    }
}

fn tight_profile_jet(js: &JetSpace, x: &Jet) -> Jet {
    let u0 = tight_coordinate(x.coeffs[0]);
    if u0 >= 1.0 {
        return js.constant(1.0);
    }
    if u0 <= 0.0 || 2.0 / u0 > 2.0 * UNDERFLOW {
        return js.constant(0.0);
    }
    let sign = x.coeffs[0].signum();
    let width = TIGHT_SUPPORT - TIGHT_PLATEAU;
    // u = (0.75 − sign·x) / 0.5 on the transition.
    let u = js.add_constant(&js.scale(x, -sign / width), TIGHT_SUPPORT / width);
    let glue_jet = |t: &Jet| {
        if t.coeffs[0] <= 0.0 || 1.0 / t.coeffs[0] > UNDERFLOW {
            js.constant(0.0)
        } else {
            js.exp(&js.scale(&js.recip(t), -1.0))
        }
    };
    let one_minus_u = js.add_constant(&js.scale(&u, -1.0), 1.0);
    let denom = js.add(&glue_jet(&u), &glue_jet(&one_minus_u));
    // e^{−1/(2u)} · (f(u) + f(1−u))^{−1/2}
    let half = js.exp(&js.scale(&js.recip(&u), -0.5));
    js.mul(&half, &js.powf(&denom, -0.5))
}

/// Structured system `(ĝ, cover, δ)`.
#[derive(Debug, Clone)]
pub struct StructuredSystem {
    cover: Arc<Cover>,
    generator: Arc<Generator>,
    delta: f64,
}

impl StructuredSystem {
    pub fn new(cover: Arc<Cover>, generator: Arc<Generator>, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!("δ must be positive, got {delta}")));
        }
        if cover.dimension() != generator.dim() {
            return Err(Error::InvalidArgument(format!(
                "cover dimension {} does not match generator dimension {}",
                cover.dimension(),
                generator.dim()
            )));
        }
        Ok(Self {
            cover,
            generator,
            delta,
        })
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.cover.clone(), self.generator.clone(), delta)
    }

    pub fn cover(&self) -> &Cover {
        &self.cover
    }

    pub fn cover_arc(&self) -> &Arc<Cover> {
        &self.cover
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn generator_arc(&self) -> &Arc<Generator> {
        &self.generator
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.cover.dimension()
    }

    pub fn len(&self) -> usize {
        self.cover.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cover.is_empty()
    }

    /// `C_j = δ A_j^{-t}`
    pub fn lattice(&self, j: usize) -> DMatrix<f64> {
        self.cover.element(j).map.inverse_matrix().transpose() * self.delta
    }

    /// `|det C_j| = δ^d / |det A_j|`
    pub fn lattice_det(&self, j: usize) -> f64 {
        self.delta.powi(self.dim() as i32) / self.cover.element(j).map.abs_det()
    }

    /// `ĝ_j(ξ) = |det A_j|^{-1/2} ĝ(S_j⁻¹ξ)`
    pub fn ghat_j(&self, j: usize, xi: &[f64]) -> Complex64 {
        let e = self.cover.element(j);
        self.generator.ghat(&e.map.apply_inverse(xi)) / e.map.abs_det().sqrt()
    }

    /// Positions `j` that can contribute at `ξ` (all of them unless `ĝ` has
    /// bounded support).
    pub fn active(&self, xi: &[f64]) -> Vec<usize> {
        match self.generator.support_radius() {
            Some(rad) => (0..self.len())
                .filter(|&j| {
                    let e = self.cover.element(j);
                    let y = e.map.apply_inverse(xi);
                    y.iter().map(|v| v * v).sum::<f64>().sqrt() < rad * (1.0 + 1e-12)
                })
                .collect(),
            None => (0..self.len()).collect(),
        }
    }

    /// `t_0(ξ) = δ^{−d} Σ_j |ĝ(S_j⁻¹ξ)|²`
    pub fn calderon_t0(&self, xi: &[f64]) -> f64 {
        let s: f64 = (0..self.len())
            .map(|j| self.generator.ghat(&self.cover.element(j).map.apply_inverse(xi)).norm_sqr())
            .sum();
        s / self.delta.powi(self.dim() as i32)
    }

    pub fn fingerprint(&self) -> String {
        crate::fingerprint(
            format!("{}|{}|{:e}", self.cover.fingerprint(), self.generator.fingerprint(), self.delta).as_bytes(),
        )
    }
}

/// `t_0` at `ξ` (free-function form).
pub fn calderon_t0(system: &StructuredSystem, xi: &[f64]) -> f64 {
    system.calderon_t0(xi)
}

/// Frame-bound envelope of `t_0` on a grid of the truncation-safe region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalderonBounds {
    pub a_raw: f64,
    pub b_raw: f64,
    /// `δ^d · A_raw` (independent of δ)
    pub a_prime: f64,
    /// `δ^d · B_raw`
    pub b_prime: f64,
    pub grid_points: usize,
    /// Re-evaluation on a doubled grid changed the values by less than 1%.
    pub doubling_stable: Option<bool>,
    pub argmin: Vec<f64>,
}

fn envelope(system: &StructuredSystem, points: &[Vec<f64>]) -> (f64, f64, Vec<f64>) {
    let values: Vec<f64> = points.par_iter().map(|p| system.calderon_t0(p)).collect();
    let mut a = f64::INFINITY;
    let mut b = f64::NEG_INFINITY;
    let mut arg = Vec::new();
    for (p, v) in points.iter().zip(values) {
        if v < a {
            a = v;
            arg = p.clone();
        }
        b = b.max(v);
    }
    (a, b, arg)
}

/// Min/max of `t_0` over the safe region sampled with `per_axis` points per
/// axis; with `double_check` the grid is refined and compared.
pub fn calderon_bounds(system: &StructuredSystem, per_axis: usize, double_check: bool) -> Result<CalderonBounds> {
    let points = system.cover().safe_grid(per_axis);
    calderon_bounds_on(system, &points, double_check.then(|| system.cover().safe_grid(2 * per_axis - 1)))
}

/// As [`calderon_bounds`] on explicit points.
pub fn calderon_bounds_on(
    system: &StructuredSystem,
    points: &[Vec<f64>],
    refined: Option<Vec<Vec<f64>>>,
) -> Result<CalderonBounds> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty Calderón grid (no non-edge cover elements)".into()));
    }
    let (a, b, argmin) = envelope(system, points);
    if !(a > 0.0) {
        return Err(Error::CalderonLowerBound(a));
    }
    let doubling_stable = refined.map(|pts| {
        let (a2, b2, _) = envelope(system, &pts);
        ((a2 - a) / a).abs() < 0.01 && ((b2 - b) / b).abs() < 0.01
    });
    let scale = system.delta().powi(system.dim() as i32);
    Ok(CalderonBounds {
        a_raw: a,
        b_raw: b,
        a_prime: a * scale,
        b_prime: b * scale,
        grid_points: points.len(),
        doubling_stable,
        argmin,
    })
}

/// Empirical polynomial decay of `max_{|α|≤d+1}|∂^α ĝ|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c: f64,
    /// `f64::INFINITY` for super-polynomial (or eventually vanishing) decay.
    #[serde(with = "infinite_as_string")]
    pub n_emp: f64,
}

impl DecayFit {
    pub fn is_superpolynomial(&self) -> bool {
        self.n_emp.is_infinite()
    }
}

impl fmt::Display for DecayFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_superpolynomial() {
            write!(f, "∞")
        } else {
            write!(f, "{:.3}", self.n_emp)
        }
    }
}

/// Serializes non-finite numbers as the string `"∞"`.
pub mod infinite_as_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            v.serialize(s)
        } else {
            "∞".serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(#[allow(dead_code)] String),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Num(v) => v,
            Repr::Str(_) => f64::INFINITY,
        })
    }
}

/// Least-squares fit of `log m(ρ)` against `log(1+ρ)` along the first axis
/// on `ρ ∈ [radius/2, radius]`, `m = max_{|α|≤d+1}|∂^α ĝ|`.
pub fn decay_fit(generator: &Generator, radius: f64, samples: usize) -> Result<DecayFit> {
    if radius < 50.0 {
        return Err(Error::InvalidArgument(format!("decay fit needs a radius of at least 50, got {radius}")));
    }
    let samples = samples.max(8);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..samples {
        let rho = radius * (0.5 + 0.5 * k as f64 / (samples - 1) as f64);
        let mut eta = vec![0.0; generator.dim()];
        eta[0] = rho;
        let m = generator.max_partial(&eta);
        if m > 0.0 && m.is_finite() {
            xs.push((1.0 + rho).ln());
            ys.push(m.ln());
        }
    }
    if xs.len() < 3 {
        return Ok(DecayFit {
            c: 0.0,
            n_emp: f64::INFINITY,
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let n_emp = -slope;
    if n_emp > DECAY_CAP {
        return Ok(DecayFit {
            c: 0.0,
            n_emp: f64::INFINITY,
        });
    }
    Ok(DecayFit {
        c: (my - slope * mx).exp(),
        n_emp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cover::{build_alpha_modulation_cover, build_dyadic_cover, build_uniform_cover, BaseSet, CoverElement, Label};
    use crate::numerics::finite_diff::central_partial;
    use crate::numerics::Region;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_system(generator: Generator, radius: i64, delta: f64) -> StructuredSystem {
        StructuredSystem::new(Arc::new(build_uniform_cover(1, 1.0, radius).unwrap()), Arc::new(generator), delta).unwrap()
    }

    /// Independent oracle: `Σ_k e^{−2π(ξ−k)²}` summed directly.
    fn theta(xi: f64) -> f64 {
        (-60..=60).map(|k| (-2.0 * std::f64::consts::PI * (xi - k as f64).powi(2)).exp()).sum()
    }

    #[test]
    fn ghat_j_examples() {
        let s = uniform_system(Generator::gaussian(1), 4, 1.0);
        let j = s.cover().position(&Label(vec![2])).unwrap();
        for xi in [-1.0, 0.3, 2.5] {
            assert!((s.ghat_j(j, &[xi]).re - (-std::f64::consts::PI * (xi - 2.0) * (xi - 2.0)).exp()).abs() < 1e-15);
        }
        // A_j = 2^j with b_j = 0.
        let e = CoverElement {
            label: Label(vec![3]),
            map: AffineMap::scalar(8.0, &[0.0]).unwrap(),
            base: BaseSet::new(Region::ball(1, 1.0), None).unwrap(),
            edge: false,
        };
        let cover = Cover::from_elements(1, vec![e]).unwrap();
        let s = StructuredSystem::new(Arc::new(cover), Arc::new(Generator::gaussian(1)), 1.0).unwrap();
        let g = Generator::gaussian(1);
        for xi in [-3.0, 0.0, 5.0] {
            let expected = 2f64.powf(-1.5) * g.ghat(&[xi / 8.0]).re;
            assert!((s.ghat_j(0, &[xi]).re - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_calderon_bounds_match_theta_series() {
        let s = uniform_system(Generator::gaussian(1), 8, 1.0);
        let b = calderon_bounds(&s, 16001, true).unwrap();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..=10_000 {
            let v = theta(k as f64 / 10_000.0);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!((b.a_prime - lo).abs() < 1e-4, "{} vs {lo}", b.a_prime);
        assert!((b.b_prime - hi).abs() < 1e-4, "{} vs {hi}", b.b_prime);
        assert!((lo - 0.41576).abs() < 1e-4 && (hi - 1.00374).abs() < 1e-4);
        assert_eq!(b.doubling_stable, Some(true));
    }

    #[test]
    fn t0_scales_with_delta() {
        let s = uniform_system(Generator::gaussian(1), 6, 1.0);
        let h = s.with_delta(0.5).unwrap();
        for xi in [0.0, 0.37, -2.2] {
            assert!((h.calderon_t0(&[xi]) - 2.0 * s.calderon_t0(&[xi])).abs() < 1e-14);
        }
    }

    #[test]
    fn painless_indicator_counts_elements() {
        let ind = Generator::custom(1, "indicator", |x: &[f64]| Complex64::new(if x[0].abs() < 1.0 { 1.0 } else { 0.0 }, 0.0));
        let s = uniform_system(ind, 5, 0.5);
        for xi in [0.25, 1.5, -2.75] {
            let count = s.cover().containing(&[xi]).len() as f64;
            assert_eq!(s.calderon_t0(&[xi]), 2.0 * count);
            assert!(s.calderon_t0(&[xi]) >= 2.0);
        }
    }

    #[test]
    fn tight_bump_is_tight() {
        for d in [1, 2] {
            let cover = Arc::new(build_uniform_cover(d, 1.0, 4).unwrap());
            let s = StructuredSystem::new(cover, Arc::new(Generator::tight_bump(d)), 0.5).unwrap();
            let b = calderon_bounds(&s, if d == 1 { 2001 } else { 81 }, false).unwrap();
            assert!((b.a_prime - 1.0).abs() < 1e-9 && (b.b_prime - 1.0).abs() < 1e-9, "{b:?}");
        }
    }

    #[test]
    fn alpha_zero_matches_uniform_calderon() {
        let u = uniform_system(Generator::gaussian(1), 6, 1.0);
        let a = StructuredSystem::new(
            Arc::new(build_alpha_modulation_cover(1, 0.0, 1.0, 6).unwrap()),
            Arc::new(Generator::gaussian(1)),
            1.0,
        )
        .unwrap();
        assert_eq!(calderon_bounds(&u, 1201, false).unwrap(), calderon_bounds(&a, 1201, false).unwrap());
    }

    #[test]
    fn relabeling_leaves_t0() {
        let cover = build_dyadic_cover(1, -2, 3).unwrap();
        let order: Vec<usize> = (0..cover.len()).rev().collect();
        let g = Arc::new(Generator::gaussian(1));
        let s = StructuredSystem::new(Arc::new(cover.clone()), g.clone(), 1.0).unwrap();
        let p = StructuredSystem::new(Arc::new(cover.permuted(&order).unwrap()), g, 1.0).unwrap();
        for xi in [0.1, 3.0, -7.5] {
            assert!((s.calderon_t0(&[xi]) - p.calderon_t0(&[xi])).abs() < 1e-14);
        }
    }

    #[test]
    fn calderon_lower_bound_failure() {
        let s = uniform_system(Generator::compact_bump(1, 0.4).unwrap(), 4, 1.0);
        assert!(matches!(calderon_bounds(&s, 401, false), Err(Error::CalderonLowerBound(_))));
    }

    /// Full Richardson table over central differences with steps `h/2^k`.
    fn richardson_table(f: &dyn Fn(&[f64]) -> f64, x: &[f64], alpha: &[u32], h: f64, levels: usize) -> f64 {
        let mut row: Vec<f64> = (0..levels)
            .map(|k| central_partial(&f, x, alpha, h / 2f64.powi(k as i32)))
            .collect();
        for m in 1..levels {
            let factor = 4f64.powi(m as i32);
            row = row.windows(2).map(|w| (factor * w[1] - w[0]) / (factor - 1.0)).collect();
        }
        row[0]
    }

    #[test]
    fn analytic_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gens = [
            Generator::gaussian(2),
            Generator::inverse_poly(2, 3.0).unwrap(),
            Generator::compact_bump(2, 1.5).unwrap(),
            Generator::tight_bump(2),
        ];
        for g in &gens {
            for _ in 0..50 {
                let x: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                // Keep stencils away from the points where the compactly
                // supported profiles stop being analytic.
                let dist = match g.kind {
                    Kind::TightBump => x
                        .iter()
                        .flat_map(|v| [TIGHT_PLATEAU, TIGHT_SUPPORT].map(|e| (v.abs() - e).abs()))
                        .fold(f64::INFINITY, f64::min),
                    Kind::CompactBump(r) => (r - (x[0] * x[0] + x[1] * x[1]).sqrt()).abs(),
                    _ => f64::INFINITY,
                };
                if dist < 0.1 {
                    continue;
                }
                let h = (dist / 4.0).min(2e-2);
                for alpha in multi_indices(2, 3) {
                    let exact = g.partial(&alpha, &x).re;
                    let f = |p: &[f64]| g.ghat(p).re;
                    let fd = richardson_table(&f, &x, &alpha, h, 4);
                    let scale = 1.0 + exact.abs();
                    assert!((exact - fd).abs() < 1e-6 * scale, "{g:?} {alpha:?} {x:?}: {exact} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn partials_near_support_edges_match_high_precision_values() {
        // Reference values from 50-digit arithmetic (mpmath.diff).
        let bump = Generator::compact_bump(2, 1.5).unwrap();
        let v = bump.partial(&[3, 0], &[0.9134936097864443, -0.1750058274489379]).re;
        assert!((v - 0.347_665_714_394_422_07).abs() < 1e-10, "{v}");
        let tight = Generator::tight_bump(2);
        let v = tight.partial(&[0, 3], &[0.4647909198618305, 0.700088208036497]).re;
        assert!((v + 605.687_028_918_150_94).abs() < 1e-8, "{v}");
    }

    #[test]
    fn composed_partials_follow_chain_rule() {
        let g = Generator::gaussian(1);
        let map = AffineMap::scalar(0.5, &[0.25]).unwrap();
        let x = [0.7];
        let y = map.apply(&x);
        let expected = [
            g.ghat(&y).re.abs(),
            0.5 * g.partial(&[1], &y).re.abs(),
            0.25 * g.partial(&[2], &y).re.abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        assert!((g.max_partial_composed(&map, &x) - expected).abs() < 1e-14);
    }

    #[test]
    fn decay_fits() {
        let f = decay_fit(&Generator::inverse_poly(1, 8.0).unwrap(), 200.0, 64).unwrap();
        assert!((f.n_emp - 16.0).abs() < 0.5, "{}", f.n_emp);
        assert!(decay_fit(&Generator::gaussian(1), 200.0, 64).unwrap().is_superpolynomial());
        assert!(decay_fit(&Generator::compact_bump(1, 1.0).unwrap(), 60.0, 64).unwrap().is_superpolynomial());
        let flat = Generator::custom(1, "flat", |_| Complex64::new(1.0, 0.0));
        assert!(decay_fit(&flat, 100.0, 16).unwrap().n_emp <= 0.0 + 1e-9);
        assert!(decay_fit(&Generator::gaussian(1), 10.0, 16).is_err());
        let json = serde_json::to_string(&decay_fit(&Generator::gaussian(1), 200.0, 16).unwrap()).unwrap();
        assert!(json.contains("∞"));
    }

    #[test]
    fn table_generator_interpolates() {
        let samples: Vec<(f64, Complex64)> = (-40..=40)
            .map(|k| {
                let x = k as f64 * 0.05;
                (x, Complex64::new((-std::f64::consts::PI * x * x).exp(), 0.0))
            })
            .collect();
        let t = Generator::table(samples, "gauss").unwrap();
        assert!(!t.is_smooth() && !t.has_exact_partials());
        assert!((t.ghat(&[0.3]).re - (-std::f64::consts::PI * 0.09f64).exp()).abs() < 2e-3);
        assert_eq!(t.ghat(&[3.0]).re, 0.0);
        assert!(Generator::table(vec![(0.0, Complex64::new(1.0, 0.0))], "x").is_err());
    }

    #[test]
    fn scaling_generator() {
        let g = Generator::gaussian(1).scaled(2.0);
        assert_eq!(g.ghat(&[0.0]).re, 2.0);
        assert!((g.max_partial(&[0.3]) - 2.0 * Generator::gaussian(1).max_partial(&[0.3])).abs() < 1e-14);
    }

    #[test]
    fn spec_round_trip() {
        let spec: GeneratorSpec = serde_json::from_str(r#"{"kind":"invpoly","m":8}"#).unwrap();
        let g = Generator::from_spec(&spec, 1, Path::new(".")).unwrap();
        assert_eq!(g.ghat(&[1.0]).re, 2f64.powi(-8));
        assert!(serde_json::from_str::<GeneratorSpec>(r#"{"kind":"gaussian","bogus":1}"#).is_err());
    }
}
