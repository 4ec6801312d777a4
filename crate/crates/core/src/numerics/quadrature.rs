//! Composite tensor-product Gauss–Legendre quadrature over balls and boxes.
//!
//! Balls are integrated as indicator-weighted bounding boxes: every panel node
//! outside the (open) ball is dropped. The integrands consumed by the
//! certificate are smooth inside the base sets, so the only loss of accuracy
//! comes from the ball boundary, which panel refinement controls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Composite Gauss–Legendre rule: `order` points per panel and `resolution`
/// panels per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub order: usize,
    pub resolution: usize,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self {
            order: 8,
            resolution: 32,
        }
    }
}

impl QuadratureRule {
    pub fn new(order: usize, resolution: usize) -> Result<Self> {
        if order == 0 || resolution == 0 {
            return Err(Error::InvalidArgument(format!(
                "quadrature order and resolution must be positive (got {order}, {resolution})"
            )));
        }
        Ok(Self { order, resolution })
    }

    /// The same rule with twice as many panels per axis.
    pub fn doubled(&self) -> Self {
        Self {
            order: self.order,
            resolution: 2 * self.resolution,
        }
    }

    /// Tensor nodes and weights for `region`.
    pub fn nodes(&self, region: &Region) -> NodeSet {
        NodeSet::build(self, region)
    }
}

/// A centered base region in `ℝ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Ball { dim: usize, radius: f64 },
    Box { halfwidths: Vec<f64> },
}

impl Region {
    pub fn ball(dim: usize, radius: f64) -> Self {
        Region::Ball { dim, radius }
    }

    pub fn cube(dim: usize, halfwidth: f64) -> Self {
        Region::Box {
            halfwidths: vec![halfwidth; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Ball { dim, .. } => *dim,
            Region::Box { halfwidths } => halfwidths.len(),
        }
    }

    /// Half-widths of the bounding box.
    pub fn bounding_halfwidths(&self) -> Vec<f64> {
        match self {
            Region::Ball { dim, radius } => vec![*radius; *dim],
            Region::Box { halfwidths } => halfwidths.clone(),
        }
    }

    /// Membership in the open region.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { radius, .. } => x.iter().map(|v| v * v).sum::<f64>() < radius * radius,
            Region::Box { halfwidths } => x.iter().zip(halfwidths).all(|(v, h)| v.abs() < *h),
        }
    }

    /// Closed-region membership, used for the inner sets whose closures must
    /// lie inside the outer sets.
    pub fn contains_closed(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { radius, .. } => x.iter().map(|v| v * v).sum::<f64>() <= radius * radius,
            Region::Box { halfwidths } => x.iter().zip(halfwidths).all(|(v, h)| v.abs() <= *h),
        }
    }

    /// `sup_{ξ ∈ region} |ξ|`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Region::Ball { radius, .. } => *radius,
            Region::Box { halfwidths } => halfwidths.iter().map(|h| h * h).sum::<f64>().sqrt(),
        }
    }

    /// Lebesgue measure.
    pub fn measure(&self) -> f64 {
        match self {
            Region::Ball { dim, radius } => unit_ball_volume(*dim) * radius.powi(*dim as i32),
            Region::Box { halfwidths } => halfwidths.iter().map(|h| 2.0 * h).product(),
        }
    }

    /// The region scaled by `factor` (same kind).
    pub fn scaled(&self, factor: f64) -> Region {
        match self {
            Region::Ball { dim, radius } => Region::Ball {
                dim: *dim,
                radius: radius * factor,
            },
            Region::Box { halfwidths } => Region::Box {
                halfwidths: halfwidths.iter().map(|h| h * factor).collect(),
            },
        }
    }

    fn is_degenerate(&self) -> bool {
        self.bounding_halfwidths().iter().any(|h| *h <= 0.0)
    }
}

fn unit_ball_volume(d: usize) -> f64 {
    // V_d = π^{d/2} / Γ(d/2 + 1), via the recurrence V_d = 2π/d · V_{d-2}.
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / d as f64 * unit_ball_volume(d - 2),
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite nodes on `[-a, a]` with `panels` panels.
fn composite_axis(a: f64, rule: &QuadratureRule) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(rule.order);
    let width = 2.0 * a / rule.resolution as f64;
    let mut xs = Vec::with_capacity(rule.order * rule.resolution);
    let mut ws = Vec::with_capacity(rule.order * rule.resolution);
    for p in 0..rule.resolution {
        let left = -a + p as f64 * width;
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(left + 0.5 * width * (x + 1.0));
            ws.push(0.5 * width * w);
        }
    }
    (xs, ws)
}

/// Precomputed quadrature nodes for one region, reusable across integrands.
#[derive(Debug, Clone)]
pub struct NodeSet {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl NodeSet {
    fn build(rule: &QuadratureRule, region: &Region) -> Self {
        let dim = region.dim();
        if region.is_degenerate() {
            log::warn!("degenerate integration region {region:?}; integrals evaluate to 0");
            return Self {
                dim,
                points: Vec::new(),
                weights: Vec::new(),
            };
        }
        let axes: Vec<(Vec<f64>, Vec<f64>)> = region
            .bounding_halfwidths()
            .iter()
            .map(|&a| composite_axis(a, rule))
            .collect();
        let per_axis = axes[0].0.len();
        let total = per_axis.pow(dim as u32);
        let mut points = Vec::with_capacity(total * dim);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        let mut x = vec![0.0; dim];
        for _ in 0..total {
            let mut w = 1.0;
            for a in 0..dim {
                x[a] = axes[a].0[idx[a]];
                w *= axes[a].1[idx[a]];
            }
            let inside = match region {
                Region::Ball { .. } => region.contains(&x),
                Region::Box { .. } => true,
            };
            if inside {
                points.extend_from_slice(&x);
                weights.push(w);
            }
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < per_axis {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self {
            dim,
            points,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.chunks_exact(self.dim.max(1)).zip(self.weights.iter().copied())
    }

    /// `Σ w_k f(x_k)`; errors on the first non-finite integrand value.
    pub fn integrate<F>(&self, mut f: F) -> Result<f64>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let mut sum = 0.0;
        for (x, w) in self.iter() {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand {
                    node: x.to_vec(),
                    value: v,
                });
            }
            sum += w * v;
        }
        Ok(sum)
    }
}

/// Composite tensor Gauss–Legendre estimate of `∫_region f`.
pub fn integrate_over_base_set<F>(f: F, region: &Region, rule: &QuadratureRule) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    rule.nodes(region).integrate(f)
}

/// `(∫_region |f|^p)^{1/p}` for `p ≥ 1`.
pub fn lp_norm_on_set<F>(mut f: F, region: &Region, p: f64, rule: &QuadratureRule) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("L^p exponent must be ≥ 1, got {p}")));
    }
    let integral = integrate_over_base_set(|x| f(x).abs().powf(p), region, rule)?;
    Ok(integral.powf(1.0 / p))
}
