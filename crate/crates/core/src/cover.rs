//! Affinely generated frequency covers `Q_i = A_i Q′_i + b_i`.
//!
//! Covers are finite truncations of countable families. Built-in families
//! (uniform, dyadic, α-modulation) know how to extend themselves beyond the
//! truncation, which is how boundary ("edge") labels are detected: a label is
//! an edge label when one of its neighbors in the infinite family was cut off.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{lp_norm, spectral_norm, Region};

/// Inner-set fraction used when a builder is not given one.
pub const DEFAULT_INNER_FRACTION: f64 = 0.75;

/// Outer half-width and inner fraction of the dyadic base box. Chosen so that
/// the inner boxes cover each dyadic shell while only adjacent scales overlap.
const DYADIC_HALFWIDTH: f64 = 0.875;
const DYADIC_INNER_FRACTION: f64 = 0.9;
const DYADIC_CENTER: f64 = 1.5;

/// Integer label of a cover element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub Vec<i64>);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() == 1 {
            write!(f, "{}", self.0[0])
        } else {
            let parts: Vec<String> = self.0.iter().map(i64::to_string).collect();
            write!(f, "({})", parts.join(","))
        }
    }
}

impl Label {
    pub fn euclidean_norm(&self) -> f64 {
        self.0.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt()
    }

    pub fn sup_norm(&self) -> i64 {
        self.0.iter().map(|v| v.abs()).max().unwrap_or(0)
    }
}

/// `ξ ↦ A ξ + b` with cached inverse.
#[derive(Debug, Clone)]
pub struct AffineMap {
    matrix: DMatrix<f64>,
    shift: DVector<f64>,
    inverse: DMatrix<f64>,
    det: f64,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let d = shift.len();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::InvalidArgument(format!(
                "affine map of dimension {d} needs a {d}x{d} matrix"
            )));
        }
        let det = matrix.determinant();
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(Error::SingularMatrix);
        }
        let inverse = matrix.clone().try_inverse().ok_or(Error::SingularMatrix)?;
        let check = &matrix * &inverse - DMatrix::identity(d, d);
        if check.amax() > 1e-12 * matrix.amax().max(1.0) * inverse.amax().max(1.0) {
            return Err(Error::SingularMatrix);
        }
        Ok(Self {
            matrix,
            shift,
            inverse,
            det,
        })
    }

    /// `s · id` followed by translation.
    pub fn scalar(scale: f64, shift: &[f64]) -> Result<Self> {
        let d = shift.len();
        Self::new(DMatrix::identity(d, d) * scale, DVector::from_column_slice(shift))
    }

    pub fn identity(d: usize) -> Self {
        Self::scalar(1.0, &vec![0.0; d]).expect("identity is invertible")
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn abs_det(&self) -> f64 {
        self.det.abs()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|r| self.shift[r] + (0..d).map(|c| self.matrix[(r, c)] * x[c]).sum::<f64>())
            .collect()
    }

    pub fn apply_inverse(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|r| (0..d).map(|c| self.inverse[(r, c)] * (y[c] - self.shift[c])).sum::<f64>())
            .collect()
    }

    /// `other⁻¹ ∘ self`, i.e. `ξ ↦ A_o⁻¹(A_s ξ + b_s − b_o)`.
    pub fn relative_to(&self, other: &AffineMap) -> AffineMap {
        let matrix = &other.inverse * &self.matrix;
        let shift = &other.inverse * (&self.shift - &other.shift);
        let inverse = &self.inverse * &other.matrix;
        let det = self.det / other.det;
        AffineMap {
            matrix,
            shift,
            inverse,
            det,
        }
    }

    /// `Some(s)` when the linear part is `s · id`.
    pub fn scalar_factor(&self) -> Option<f64> {
        let d = self.dim();
        let s = self.matrix[(0, 0)];
        for r in 0..d {
            for c in 0..d {
                let expected = if r == c { s } else { 0.0 };
                if self.matrix[(r, c)] != expected {
                    return None;
                }
            }
        }
        Some(s)
    }

    /// Row-major linear part.
    pub fn matrix_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| self.matrix[(r, c)]).collect()
    }
}

/// Base set `Q′` together with its inner set `Q″` (closure contained in `Q′`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSet {
    pub outer: Region,
    pub inner: Option<Region>,
}

impl BaseSet {
    pub fn new(outer: Region, inner: Option<Region>) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if outer.bounding_halfwidths().iter().any(|h| !(*h > 0.0)) {
            return bad("base set must have positive radius / half-widths");
        }
        if let Some(inner) = &inner {
            let ok = match (&outer, inner) {
                (Region::Ball { dim: d1, radius: r1 }, Region::Ball { dim: d2, radius: r2 }) => {
                    d1 == d2 && *r2 > 0.0 && r2 < r1
                }
                (Region::Box { halfwidths: h1 }, Region::Box { halfwidths: h2 }) => {
                    h1.len() == h2.len() && h1.iter().zip(h2).all(|(a, b)| *b > 0.0 && b < a)
                }
                _ => false,
            };
            if !ok {
                return bad("inner set must be a strictly smaller set of the same kind");
            }
        }
        Ok(Self { outer, inner })
    }

    /// Inner set scaled from the outer set by `fraction`.
    pub fn with_fraction(outer: Region, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("inner fraction must lie in (0,1), got {fraction}")));
        }
        let inner = outer.scaled(fraction);
        Self::new(outer, Some(inner))
    }
}

#[derive(Debug, Clone)]
pub struct CoverElement {
    pub label: Label,
    pub map: AffineMap,
    pub base: BaseSet,
    /// The element has a neighbor outside the truncation.
    pub edge: bool,
}

impl CoverElement {
    /// `ξ ∈ Q_i` (open).
    pub fn contains(&self, xi: &[f64]) -> bool {
        self.base.outer.contains(&self.map.apply_inverse(xi))
    }

    /// `ξ ∈ closure(S_i(Q″_i))`.
    pub fn inner_contains(&self, xi: &[f64]) -> bool {
        match &self.base.inner {
            Some(inner) => inner.contains_closed(&self.map.apply_inverse(xi)),
            None => false,
        }
    }

    /// Axis-aligned bounding box `(center, half-widths)` of `Q_i`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.map.dim();
        let a = self.map.matrix();
        let half = match &self.base.outer {
            Region::Ball { radius, .. } => (0..d)
                .map(|r| radius * (0..d).map(|c| a[(r, c)] * a[(r, c)]).sum::<f64>().sqrt())
                .collect(),
            Region::Box { halfwidths } => (0..d)
                .map(|r| (0..d).map(|c| a[(r, c)].abs() * halfwidths[c]).sum::<f64>())
                .collect(),
        };
        (self.map.shift().iter().copied().collect(), half)
    }
}

/// Parameters of the built-in cover families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CoverFamily {
    /// `A_j = id`, `b_j = j`, `‖j‖_∞ ≤ index_radius`, ball base of radius `r`.
    Uniform {
        dim: usize,
        r: f64,
        index_radius: i64,
        inner_fraction: f64,
    },
    /// `A = 2^j id`, `b = 1.5·2^j·c` with `c ∈ {−1,0,1}^d∖{0}`, box base;
    /// one low-pass box closes the family at the coarse end.
    Dyadic {
        dim: usize,
        min_scale: i64,
        max_scale: i64,
    },
    /// `A_j = |j|^{α₀} id`, `b_j = |j|^{α₀} j`, ball base of radius `r`,
    /// `α₀ = α/(1−α)`. The origin label is used only when `α = 0`.
    AlphaModulation {
        dim: usize,
        alpha: f64,
        r: f64,
        index_radius: i64,
        inner_fraction: f64,
    },
    Custom,
}

impl CoverFamily {
    pub fn name(&self) -> &'static str {
        match self {
            CoverFamily::Uniform { .. } => "uniform",
            CoverFamily::Dyadic { .. } => "dyadic",
            CoverFamily::AlphaModulation { .. } => "alpha_modulation",
            CoverFamily::Custom => "custom",
        }
    }

    fn truncation_cut(&self) -> Option<f64> {
        match self {
            CoverFamily::Uniform { index_radius, .. } | CoverFamily::AlphaModulation { index_radius, .. } => {
                Some(*index_radius as f64)
            }
            CoverFamily::Dyadic { max_scale, .. } => Some(*max_scale as f64),
            CoverFamily::Custom => None,
        }
    }

    /// The same family with its truncation cut enlarged by `extra` steps.
    fn extended(&self, extra: i64) -> CoverFamily {
        let mut f = self.clone();
        match &mut f {
            CoverFamily::Uniform { index_radius, .. } | CoverFamily::AlphaModulation { index_radius, .. } => {
                *index_radius += extra
            }
            CoverFamily::Dyadic { max_scale, .. } => *max_scale += extra,
            CoverFamily::Custom => {}
        }
        f
    }

    /// The same family with twice the truncation radius.
    pub fn doubled_truncation(&self) -> CoverFamily {
        match self {
            CoverFamily::Uniform { index_radius, .. } | CoverFamily::AlphaModulation { index_radius, .. } => {
                self.extended(*index_radius)
            }
            CoverFamily::Dyadic { min_scale, max_scale, .. } => self.extended((max_scale - min_scale + 1).max(1)),
            CoverFamily::Custom => CoverFamily::Custom,
        }
    }

    fn elements(&self) -> Result<Vec<(Label, AffineMap, BaseSet)>> {
        match self {
            CoverFamily::Uniform {
                dim,
                r,
                index_radius,
                inner_fraction,
            } => {
                let base = BaseSet::with_fraction(Region::ball(*dim, *r), *inner_fraction)?;
                lattice_labels(*dim, *index_radius)
                    .into_iter()
                    .map(|j| {
                        let shift: Vec<f64> = j.iter().map(|&v| v as f64).collect();
                        Ok((Label(j), AffineMap::scalar(1.0, &shift)?, base.clone()))
                    })
                    .collect()
            }
            CoverFamily::AlphaModulation {
                dim,
                alpha,
                r,
                index_radius,
                inner_fraction,
            } => {
                let alpha0 = alpha / (1.0 - alpha);
                let base = BaseSet::with_fraction(Region::ball(*dim, *r), *inner_fraction)?;
                lattice_labels(*dim, *index_radius)
                    .into_iter()
                    .filter(|j| *alpha == 0.0 || j.iter().any(|&v| v != 0))
                    .map(|j| {
                        let norm = Label(j.clone()).euclidean_norm();
                        let scale = if *alpha == 0.0 { 1.0 } else { norm.powf(alpha0) };
                        let shift: Vec<f64> = j.iter().map(|&v| scale * v as f64).collect();
                        Ok((Label(j), AffineMap::scalar(scale, &shift)?, base.clone()))
                    })
                    .collect()
            }
            CoverFamily::Dyadic {
                dim,
                min_scale,
                max_scale,
            } => {
                let base = BaseSet::with_fraction(Region::cube(*dim, DYADIC_HALFWIDTH), DYADIC_INNER_FRACTION)?;
                let mut out = Vec::new();
                let low = 2f64.powi(*min_scale as i32);
                let mut low_label = vec![min_scale - 1];
                low_label.extend(std::iter::repeat_n(0, *dim));
                out.push((Label(low_label), AffineMap::scalar(low, &vec![0.0; *dim])?, base.clone()));
                for j in *min_scale..=*max_scale {
                    let scale = 2f64.powi(j as i32);
                    for c in lattice_labels(*dim, 1) {
                        if c.iter().all(|&v| v == 0) {
                            continue;
                        }
                        let shift: Vec<f64> = c.iter().map(|&v| DYADIC_CENTER * scale * v as f64).collect();
                        let mut label = vec![j];
                        label.extend(&c);
                        out.push((Label(label), AffineMap::scalar(scale, &shift)?, base.clone()));
                    }
                }
                Ok(out)
            }
            CoverFamily::Custom => Ok(Vec::new()),
        }
    }

    /// Region on which the truncated family is required to cover.
    fn coverage_region(&self) -> Option<Region> {
        match self {
            CoverFamily::Uniform { dim, index_radius, .. } => Some(Region::cube(*dim, *index_radius as f64)),
            CoverFamily::AlphaModulation {
                dim,
                alpha,
                index_radius,
                ..
            } => {
                let alpha0 = alpha / (1.0 - alpha);
                let rad = (*index_radius as f64).powf(1.0 + alpha0);
                Some(Region::ball(*dim, rad))
            }
            CoverFamily::Dyadic { dim, max_scale, .. } => {
                Some(Region::cube(*dim, 2f64.powi(*max_scale as i32) * (DYADIC_CENTER + 0.5)))
            }
            CoverFamily::Custom => None,
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            CoverFamily::Uniform { dim, .. }
            | CoverFamily::Dyadic { dim, .. }
            | CoverFamily::AlphaModulation { dim, .. } => Some(*dim),
            CoverFamily::Custom => None,
        }
    }
}

/// All `j ∈ ℤ^d` with `‖j‖_∞ ≤ radius`, lexicographic.
pub fn lattice_labels(d: usize, radius: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut j = vec![-radius; d];
    if radius < 0 {
        return out;
    }
    loop {
        out.push(j.clone());
        let mut axis = d;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            j[axis] += 1;
            if j[axis] <= radius {
                break;
            }
            j[axis] = -radius;
        }
    }
}

/// Description of the omitted infinite tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub family: String,
    pub cut: f64,
}

/// Bucketed spatial index over element bounding boxes.
#[derive(Debug, Clone)]
struct ElementIndex {
    cell: f64,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
    oversized: Vec<usize>,
}

const MAX_CELLS_PER_ELEMENT: f64 = 4096.0;

impl ElementIndex {
    fn build(elements: &[CoverElement]) -> Self {
        let boxes: Vec<(Vec<f64>, Vec<f64>)> = elements.iter().map(CoverElement::bounding_box).collect();
        let mut sizes: Vec<f64> = boxes.iter().map(|(_, h)| h.iter().cloned().fold(0.0, f64::max)).collect();
        sizes.sort_by(f64::total_cmp);
        let cell = sizes.get(sizes.len() / 4).copied().unwrap_or(1.0).max(1e-9) * 2.0;
        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let mut oversized = Vec::new();
        for (i, (c, h)) in boxes.iter().enumerate() {
            let lo: Vec<i64> = c.iter().zip(h).map(|(c, h)| ((c - h) / cell).floor() as i64).collect();
            let hi: Vec<i64> = c.iter().zip(h).map(|(c, h)| ((c + h) / cell).floor() as i64).collect();
            let count: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a + 1) as f64).product();
            if count > MAX_CELLS_PER_ELEMENT {
                oversized.push(i);
                continue;
            }
            let mut k = lo.clone();
            loop {
                buckets.entry(k.clone()).or_default().push(i);
                let mut axis = k.len();
                let mut done = true;
                while axis > 0 {
                    axis -= 1;
                    k[axis] += 1;
                    if k[axis] <= hi[axis] {
                        done = false;
                        break;
                    }
                    k[axis] = lo[axis];
                }
                if done {
                    break;
                }
            }
        }
        Self {
            cell,
            buckets,
            oversized,
        }
    }

    fn candidates(&self, xi: &[f64]) -> impl Iterator<Item = usize> + '_ {
        let key: Vec<i64> = xi.iter().map(|v| (v / self.cell).floor() as i64).collect();
        self.buckets
            .get(&key)
            .into_iter()
            .flat_map(|v| v.iter().copied())
            .chain(self.oversized.iter().copied())
    }
}

/// Admissibility constants of a (truncated) cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverConstants {
    pub n_q: usize,
    pub c_q: f64,
    pub r_q: f64,
    pub c_wq: Option<f64>,
    /// Edge labels took part in the sup-type constants.
    pub edges_included: bool,
}

impl CoverConstants {
    /// `C_{w,Q} · N_Q`, the bound used for the clustering operator norm.
    pub fn clustering_bound(&self) -> f64 {
        self.c_wq.unwrap_or(1.0) * self.n_q as f64
    }
}

/// Finite truncation of an affinely generated cover.
#[derive(Debug, Clone)]
pub struct Cover {
    dimension: usize,
    family: CoverFamily,
    elements: Vec<CoverElement>,
    truncation: Option<Truncation>,
    lookup: HashMap<Label, usize>,
    neighbors: Vec<Vec<usize>>,
    index: ElementIndex,
}

impl Cover {
    /// Builds a built-in family, detects edge labels, computes neighbors and
    /// verifies the covering property on a sampled grid.
    pub fn build(family: CoverFamily) -> Result<Cover> {
        let dim = family
            .dim()
            .ok_or_else(|| Error::InvalidArgument("custom covers are built from explicit elements".into()))?;
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        match &family {
            CoverFamily::AlphaModulation { alpha, r, .. } if !(0.0..1.0).contains(alpha) || *r <= 0.0 => {
                return Err(Error::InvalidArgument(format!("need α ∈ [0,1) and r > 0 (got α={alpha}, r={r})")));
            }
            CoverFamily::Uniform { r, index_radius, .. } if *r <= 0.0 || *index_radius < 0 => {
                return Err(Error::InvalidArgument("need r > 0 and a nonnegative index radius".into()));
            }
            CoverFamily::Dyadic { min_scale, max_scale, .. } if min_scale > max_scale => {
                return Err(Error::InvalidArgument("empty scale range".into()));
            }
            _ => {}
        }
        let elements: Vec<CoverElement> = family
            .elements()?
            .into_iter()
            .map(|(label, map, base)| CoverElement {
                label,
                map,
                base,
                edge: false,
            })
            .collect();
        let mut cover = Cover::assemble(dim, family.clone(), elements)?;
        cover.mark_edges()?;
        cover.verify_covering()?;
        Ok(cover)
    }

    /// Builds a cover from explicit elements (`family = Custom`).
    pub fn from_elements(dimension: usize, elements: Vec<CoverElement>) -> Result<Cover> {
        Cover::assemble(dimension, CoverFamily::Custom, elements)
    }

    fn assemble(dimension: usize, family: CoverFamily, elements: Vec<CoverElement>) -> Result<Cover> {
        if elements.is_empty() {
            return Err(Error::InvalidArgument("cover has no elements".into()));
        }
        let mut lookup = HashMap::new();
        for (i, e) in elements.iter().enumerate() {
            if e.map.dim() != dimension || e.base.outer.dim() != dimension {
                return Err(Error::InvalidArgument(format!("element {} has the wrong dimension", e.label)));
            }
            if lookup.insert(e.label.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate label {}", e.label)));
            }
        }
        let truncation = family.truncation_cut().map(|cut| Truncation {
            family: family.name().to_string(),
            cut,
        });
        let index = ElementIndex::build(&elements);
        let neighbors = compute_neighbors(&elements, &elements, &index);
        Ok(Cover {
            dimension,
            family,
            elements,
            truncation,
            lookup,
            neighbors,
            index,
        })
    }

    fn mark_edges(&mut self) -> Result<()> {
        let margin = match &self.family {
            CoverFamily::Uniform { r, .. } | CoverFamily::AlphaModulation { r, .. } => (2.0 * r).ceil() as i64 + 2,
            CoverFamily::Dyadic { .. } => 2,
            CoverFamily::Custom => return Ok(()),
        };
        let extended: Vec<CoverElement> = self
            .family
            .extended(margin)
            .elements()?
            .into_iter()
            .map(|(label, map, base)| CoverElement {
                label,
                map,
                base,
                edge: false,
            })
            .collect();
        let ext_index = ElementIndex::build(&extended);
        let ext_neighbors = compute_neighbors(&self.elements, &extended, &ext_index);
        for (i, neigh) in ext_neighbors.iter().enumerate() {
            self.elements[i].edge = neigh.iter().any(|&l| !self.lookup.contains_key(&extended[l].label));
        }
        Ok(())
    }

    /// Checks that sampled frequencies of the family's coverage region lie in
    /// some `Q_i` and in some inner set `S_i(Q″_i)`.
    pub fn verify_covering(&self) -> Result<()> {
        let Some(region) = self.family.coverage_region() else {
            return Ok(());
        };
        let min_inner = self
            .elements
            .iter()
            .filter_map(|e| e.base.inner.as_ref().map(|r| (r, e.map.abs_det())))
            .map(|(r, det)| r.bounding_halfwidths().into_iter().fold(f64::INFINITY, f64::min) * det.powf(1.0 / self.dimension as f64))
            .fold(f64::INFINITY, f64::min);
        let half = region.bounding_halfwidths();
        let cap = match self.dimension {
            1 => 20_001,
            2 => 401,
            3 => 61,
            _ => 21,
        };
        let per_axis = ((2.0 * half[0] / (min_inner / 4.0)).ceil() as usize + 1).clamp(9, cap);
        for point in grid_points(&half, per_axis) {
            if !region.contains_closed(&point) {
                continue;
            }
            let mut in_outer = false;
            let mut in_inner = false;
            for i in self.index.candidates(&point) {
                let e = &self.elements[i];
                if !in_outer && e.contains(&point) {
                    in_outer = true;
                }
                if !in_inner && e.inner_contains(&point) {
                    in_inner = true;
                }
                if in_outer && in_inner {
                    break;
                }
            }
            if !in_outer || !in_inner {
                let what = if in_outer { " by any inner set" } else { "" };
                let hint = match &self.family {
                    CoverFamily::AlphaModulation { .. } => " (the α-modulation cover requires r ≥ r₀(d,α))",
                    _ => "",
                };
                return Err(Error::NotCovered {
                    point,
                    detail: format!("{what}{hint}"),
                });
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn family(&self) -> &CoverFamily {
        &self.family
    }

    pub fn truncation(&self) -> Option<&Truncation> {
        self.truncation.as_ref()
    }

    pub fn elements(&self) -> &[CoverElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, i: usize) -> &CoverElement {
        &self.elements[i]
    }

    pub fn position(&self, label: &Label) -> Result<usize> {
        self.lookup
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.elements.iter().map(|e| &e.label)
    }

    pub fn label_strings(&self) -> Vec<String> {
        self.labels().map(Label::to_string).collect()
    }

    /// Positions of the non-edge elements.
    pub fn interior(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.elements[i].edge).collect()
    }

    /// Positions `ℓ` with `Q_ℓ ∩ Q_i ≠ ∅` (always includes `i`).
    pub fn neighbor_positions(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// `i* = {ℓ : Q_ℓ ∩ Q_i ≠ ∅}` by label.
    pub fn neighbors(&self, label: &Label) -> Result<Vec<Label>> {
        let i = self.position(label)?;
        Ok(self.neighbors[i].iter().map(|&l| self.elements[l].label.clone()).collect())
    }

    /// Elements whose (open) set `Q_i` contains `xi`.
    pub fn containing(&self, xi: &[f64]) -> Vec<usize> {
        let mut out: Vec<usize> = self.index.candidates(xi).filter(|&i| self.elements[i].contains(xi)).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Elements whose bounding box may contain `xi` (superset of [`containing`](Self::containing)).
    pub fn candidates(&self, xi: &[f64]) -> Vec<usize> {
        let mut out: Vec<usize> = self.index.candidates(xi).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// `ξ` lies in some non-edge element.
    pub fn in_safe_region(&self, xi: &[f64]) -> bool {
        self.index
            .candidates(xi)
            .any(|i| !self.elements[i].edge && self.elements[i].contains(xi))
    }

    /// Grid points (`per_axis` per axis over the bounding box of the non-edge
    /// elements) that lie in the truncation-safe region.
    pub fn safe_grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let interior = self.interior();
        if interior.is_empty() {
            return Vec::new();
        }
        let d = self.dimension;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in &interior {
            let (c, h) = self.elements[i].bounding_box();
            for a in 0..d {
                lo[a] = lo[a].min(c[a] - h[a]);
                hi[a] = hi[a].max(c[a] + h[a]);
            }
        }
        box_grid(&lo, &hi, per_axis)
            .into_iter()
            .filter(|p| self.in_safe_region(p))
            .collect()
    }

    /// Admissibility constants over non-edge labels (or all labels when
    /// `include_edges`).
    pub fn admissibility_constants(&self, weight: Option<&Weight>, include_edges: bool) -> CoverConstants {
        let rows: Vec<usize> = if include_edges { (0..self.len()).collect() } else { self.interior() };
        let rows = if rows.is_empty() { (0..self.len()).collect() } else { rows };
        let mut n_q = 1;
        let mut c_q: f64 = 1.0;
        let mut c_wq: f64 = 1.0;
        for &i in &rows {
            let neigh = &self.neighbors[i];
            n_q = n_q.max(neigh.len());
            for &l in neigh {
                let rel = self.elements[i].map.inverse_matrix() * self.elements[l].map.matrix();
                c_q = c_q.max(spectral_norm(&rel));
                if let Some(w) = weight {
                    c_wq = c_wq.max(w.values[i] / w.values[l]);
                }
            }
        }
        let r_q = self
            .elements
            .iter()
            .map(|e| e.base.outer.sup_norm())
            .fold(0.0, f64::max);
        CoverConstants {
            n_q,
            c_q,
            r_q,
            c_wq: weight.map(|_| c_wq),
            edges_included: include_edges,
        }
    }

    /// The same cover with labels permuted (for invariance checks).
    pub fn permuted(&self, order: &[usize]) -> Result<Cover> {
        let elements: Vec<CoverElement> = order.iter().map(|&i| self.elements[i].clone()).collect();
        let mut c = Cover::assemble(self.dimension, self.family.clone(), elements)?;
        c.truncation = self.truncation.clone();
        Ok(c)
    }

    pub fn to_document(&self) -> CoverDocument {
        CoverDocument {
            dimension: self.dimension,
            family: self.family.name().to_string(),
            params: match &self.family {
                CoverFamily::Custom => serde_json::Value::Null,
                f => serde_json::to_value(f).unwrap_or(serde_json::Value::Null),
            },
            elements: self
                .elements
                .iter()
                .map(|e| ElementDocument {
                    label: e.label.0.clone(),
                    a: e.map.matrix_row_major(),
                    b: e.map.shift().iter().copied().collect(),
                    base: BaseDocument::from_base(&e.base),
                    edge: e.edge,
                })
                .collect(),
            truncation: self.truncation.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_document(doc: &CoverDocument) -> Result<Cover> {
        let d = doc.dimension;
        let elements = doc
            .elements
            .iter()
            .map(|e| {
                if e.a.len() != d * d || e.b.len() != d {
                    return Err(Error::Format(format!("element {:?}: A must have {} entries, b {}", e.label, d * d, d)));
                }
                let map = AffineMap::new(DMatrix::from_row_slice(d, d, &e.a), DVector::from_column_slice(&e.b))?;
                Ok(CoverElement {
                    label: Label(e.label.clone()),
                    map,
                    base: e.base.to_base(d)?,
                    edge: e.edge,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let family = if doc.params.is_null() {
            CoverFamily::Custom
        } else {
            serde_json::from_value(doc.params.clone()).unwrap_or(CoverFamily::Custom)
        };
        let mut cover = Cover::assemble(d, family, elements)?;
        cover.truncation = doc.truncation.clone();
        Ok(cover)
    }

    pub fn from_json(s: &str) -> Result<Cover> {
        let doc: CoverDocument = serde_json::from_str(s)?;
        Cover::from_document(&doc)
    }

    /// Short content hash of the serialized cover.
    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self.to_json().unwrap_or_default().as_bytes())
    }
}

fn grid_points(half: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let lo: Vec<f64> = half.iter().map(|h| -h).collect();
    box_grid(&lo, half, per_axis)
}

/// Uniform grid with `per_axis` points per axis on `[lo, hi]`.
pub fn box_grid(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    let n = per_axis.max(2);
    let total = n.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        out.push(
            (0..d)
                .map(|a| lo[a] + (hi[a] - lo[a]) * idx[a] as f64 / (n - 1) as f64)
                .collect(),
        );
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < n {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

/// Decides `Q_a ∩ Q_b ≠ ∅`. Exact for images of balls (or boxes) under
/// scalar multiples of the identity; otherwise sampled, which may miss
/// touchings of measure zero.
pub fn elements_intersect(a: &CoverElement, b: &CoverElement) -> bool {
    if let (Some(sa), Some(sb)) = (a.map.scalar_factor(), b.map.scalar_factor()) {
        let ca = a.map.shift();
        let cb = b.map.shift();
        match (&a.base.outer, &b.base.outer) {
            (Region::Ball { radius: ra, .. }, Region::Ball { radius: rb, .. }) => {
                let dist = (ca - cb).norm();
                return dist < sa.abs() * ra + sb.abs() * rb;
            }
            (Region::Box { halfwidths: ha }, Region::Box { halfwidths: hb }) => {
                return (0..ca.len()).all(|k| (ca[k] - cb[k]).abs() < sa.abs() * ha[k] + sb.abs() * hb[k]);
            }
            _ => {}
        }
    }
    let (c1, h1) = a.bounding_box();
    let (c2, h2) = b.bounding_box();
    if (0..c1.len()).any(|k| (c1[k] - c2[k]).abs() >= h1[k] + h2[k]) {
        return false;
    }
    sampled_overlap(a, b) || sampled_overlap(b, a)
}

fn sampled_overlap(a: &CoverElement, b: &CoverElement) -> bool {
    let half = a.base.outer.bounding_halfwidths();
    let per_axis = match half.len() {
        1 => 401,
        2 => 61,
        _ => 17,
    };
    // Shrink slightly so sampled points are interior to Q′_a.
    let shrunk: Vec<f64> = half.iter().map(|h| h * (1.0 - 1e-9)).collect();
    grid_points(&shrunk, per_axis)
        .into_iter()
        .filter(|p| a.base.outer.contains(p))
        .any(|p| b.contains(&a.map.apply(&p)))
}

fn compute_neighbors(rows: &[CoverElement], pool: &[CoverElement], index: &ElementIndex) -> Vec<Vec<usize>> {
    rows.iter()
        .map(|e| {
            let (c, h) = e.bounding_box();
            // Candidates from all buckets overlapping this element's box.
            let mut cand: Vec<usize> = Vec::new();
            let lo: Vec<i64> = c.iter().zip(&h).map(|(c, h)| ((c - h) / index.cell).floor() as i64).collect();
            let hi: Vec<i64> = c.iter().zip(&h).map(|(c, h)| ((c + h) / index.cell).floor() as i64).collect();
            let count: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a + 1) as f64).product();
            if count > MAX_CELLS_PER_ELEMENT {
                cand.extend(0..pool.len());
            } else {
                let mut k = lo.clone();
                loop {
                    if let Some(v) = index.buckets.get(&k) {
                        cand.extend(v);
                    }
                    let mut axis = k.len();
                    let mut done = true;
                    while axis > 0 {
                        axis -= 1;
                        k[axis] += 1;
                        if k[axis] <= hi[axis] {
                            done = false;
                            break;
                        }
                        k[axis] = lo[axis];
                    }
                    if done {
                        break;
                    }
                }
                cand.extend(&index.oversized);
            }
            cand.sort_unstable();
            cand.dedup();
            cand.into_iter()
                .filter(|&l| pool[l].label == e.label || elements_intersect(e, &pool[l]))
                .collect()
        })
        .collect()
}

/// Positive weight over the cover's elements (same order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    pub values: Vec<f64>,
}

/// Built-in moderate weight families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFamily {
    Constant,
    /// `w_i = (1 + |b_i|)^s`
    Polynomial { s: f64 },
    /// `w_j = |j|^{s/(1−α)}` (with `w_0 = 1` for the origin label)
    AlphaModulation { alpha: f64, s: f64 },
}

impl Weight {
    pub fn constant(n: usize) -> Self {
        Self { values: vec![1.0; n] }
    }

    pub fn swapped(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| 1.0 / v).collect(),
        }
    }
}

pub fn moderate_weight(family: WeightFamily, cover: &Cover) -> Result<Weight> {
    let values: Vec<f64> = match family {
        WeightFamily::Constant => vec![1.0; cover.len()],
        WeightFamily::Polynomial { s } => cover
            .elements()
            .iter()
            .map(|e| (1.0 + e.map.shift().norm()).powf(s))
            .collect(),
        WeightFamily::AlphaModulation { alpha, s } => {
            if !(0.0..1.0).contains(&alpha) {
                return Err(Error::InvalidArgument(format!("α must lie in [0,1), got {alpha}")));
            }
            cover
                .elements()
                .iter()
                .map(|e| {
                    if e.label.0.len() != cover.dimension() {
                        return Err(Error::InvalidArgument(format!(
                            "α-modulation weight needs ℤ^d labels, got {}",
                            e.label
                        )));
                    }
                    let n = e.label.euclidean_norm();
                    Ok(if n == 0.0 { 1.0 } else { n.powf(s / (1.0 - alpha)) })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("weights must be positive and finite".into()));
    }
    Ok(Weight { values })
}

/// `(Γc)_i = Σ_{ℓ ∈ i*} c_ℓ`.
pub fn clustering_apply(cover: &Cover, c: &[f64]) -> Vec<f64> {
    assert_eq!(c.len(), cover.len());
    (0..cover.len())
        .map(|i| cover.neighbor_positions(i).iter().map(|&l| c[l]).sum())
        .collect()
}

/// `‖(w_i c_i)‖_{ℓ^q}`.
pub fn weighted_lq_norm(c: &[f64], w: &Weight, q: f64) -> f64 {
    lp_norm(c.iter().zip(&w.values).map(|(c, w)| c * w), q)
}

/// Checks `‖Γc‖_{ℓ^q_w} ≤ C_{w,Q} N_Q ‖c‖_{ℓ^q_w}` for one sequence, with the
/// constants taken over all labels.
pub fn clustering_bound_holds(cover: &Cover, w: &Weight, c: &[f64], q: f64) -> bool {
    let consts = cover.admissibility_constants(Some(w), true);
    let lhs = weighted_lq_norm(&clustering_apply(cover, c), w, q);
    lhs <= consts.clustering_bound() * weighted_lq_norm(c, w, q) * (1.0 + 1e-12)
}

pub fn build_uniform_cover(d: usize, r: f64, index_radius: i64) -> Result<Cover> {
    Cover::build(CoverFamily::Uniform {
        dim: d,
        r,
        index_radius,
        inner_fraction: DEFAULT_INNER_FRACTION,
    })
}

pub fn build_dyadic_cover(d: usize, min_scale: i64, max_scale: i64) -> Result<Cover> {
    Cover::build(CoverFamily::Dyadic {
        dim: d,
        min_scale,
        max_scale,
    })
}

pub fn build_alpha_modulation_cover(d: usize, alpha: f64, r: f64, index_radius: i64) -> Result<Cover> {
    Cover::build(CoverFamily::AlphaModulation {
        dim: d,
        alpha,
        r,
        index_radius,
        inner_fraction: DEFAULT_INNER_FRACTION,
    })
}

/// JSON layout of a cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverDocument {
    pub dimension: usize,
    pub family: String,
    #[serde(default)]
    pub params: serde_json::Value,
    pub elements: Vec<ElementDocument>,
    #[serde(default)]
    pub truncation: Option<Truncation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementDocument {
    pub label: Vec<i64>,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub base: BaseDocument,
    #[serde(default)]
    pub edge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseDocument {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halfwidths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_halfwidths: Option<Vec<f64>>,
}

impl BaseDocument {
    fn from_base(base: &BaseSet) -> Self {
        match (&base.outer, &base.inner) {
            (Region::Ball { radius, .. }, inner) => BaseDocument {
                kind: "ball".into(),
                r: Some(*radius),
                halfwidths: None,
                inner_r: match inner {
                    Some(Region::Ball { radius, .. }) => Some(*radius),
                    _ => None,
                },
                inner_halfwidths: None,
            },
            (Region::Box { halfwidths }, inner) => BaseDocument {
                kind: "box".into(),
                r: None,
                halfwidths: Some(halfwidths.clone()),
                inner_r: None,
                inner_halfwidths: match inner {
                    Some(Region::Box { halfwidths }) => Some(halfwidths.clone()),
                    _ => None,
                },
            },
        }
    }

    fn to_base(&self, d: usize) -> Result<BaseSet> {
        match self.kind.as_str() {
            "ball" => {
                let r = self.r.ok_or_else(|| Error::Format("ball base needs r".into()))?;
                BaseSet::new(Region::ball(d, r), self.inner_r.map(|ri| Region::ball(d, ri)))
            }
            "box" => {
                let h = self
                    .halfwidths
                    .clone()
                    .ok_or_else(|| Error::Format("box base needs halfwidths".into()))?;
                if h.len() != d {
                    return Err(Error::Format(format!("box base needs {d} halfwidths")));
                }
                BaseSet::new(
                    Region::Box { halfwidths: h },
                    self.inner_halfwidths.clone().map(|halfwidths| Region::Box { halfwidths }),
                )
            }
            other => Err(Error::Format(format!("unknown base kind {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lbl(v: &[i64]) -> Label {
        Label(v.to_vec())
    }

    #[test]
    fn uniform_elements_are_unit_translates() {
        let c = build_uniform_cover(1, 1.0, 4).unwrap();
        assert_eq!(c.len(), 9);
        let e = c.element(c.position(&lbl(&[3])).unwrap());
        assert!(e.contains(&[2.01]) && e.contains(&[3.99]) && !e.contains(&[4.0]) && !e.contains(&[2.0]));
        let labels: Vec<String> = c.label_strings();
        assert_eq!(labels.first().unwrap(), "-4");
        assert_eq!(labels.last().unwrap(), "4");
    }

    #[test]
    fn uniform_neighbors() {
        let c = build_uniform_cover(1, 1.0, 4).unwrap();
        assert_eq!(c.neighbors(&lbl(&[0])).unwrap(), vec![lbl(&[-1]), lbl(&[0]), lbl(&[1])]);
        for i in 0..c.len() {
            assert!(c.neighbor_positions(i).contains(&i));
            for &l in c.neighbor_positions(i) {
                assert!(c.neighbor_positions(l).contains(&i));
            }
        }
        assert!(c.neighbors(&lbl(&[9])).is_err());
        assert!(c.element(0).edge && c.element(8).edge && !c.element(1).edge);
    }

    #[test]
    fn uniform_constants() {
        let c = build_uniform_cover(1, 1.0, 4).unwrap();
        let w = Weight::constant(c.len());
        let k = c.admissibility_constants(Some(&w), false);
        assert_eq!(k.n_q, 3);
        assert_eq!(k.c_q, 1.0);
        assert_eq!(k.r_q, 1.0);
        assert_eq!(k.c_wq, Some(1.0));
    }

    #[test]
    fn two_dimensional_uniform() {
        let c = build_uniform_cover(2, 1.0, 3).unwrap();
        let k = c.admissibility_constants(None, false);
        assert_eq!(k.n_q, 9);
    }

    #[test]
    fn alpha_zero_matches_uniform() {
        let u = build_uniform_cover(1, 1.0, 5).unwrap();
        let a = build_alpha_modulation_cover(1, 0.0, 1.0, 5).unwrap();
        assert_eq!(u.len(), a.len());
        for (x, y) in u.elements().iter().zip(a.elements()) {
            assert_eq!(x.label, y.label);
            assert_eq!(x.map.matrix(), y.map.matrix());
            assert_eq!(x.map.shift(), y.map.shift());
            assert_eq!(x.edge, y.edge);
        }
        assert_eq!(u.admissibility_constants(None, false), a.admissibility_constants(None, false));
    }

    #[test]
    fn alpha_half_element_geometry() {
        let r = 1.5;
        let c = build_alpha_modulation_cover(1, 0.5, r, 8).unwrap();
        let e = c.element(c.position(&lbl(&[2])).unwrap());
        assert_eq!(e.map.scalar_factor(), Some(2.0));
        assert_eq!(e.map.shift()[0], 4.0);
        let (lo, hi) = (2.0 * (2.0 - r), 2.0 * (2.0 + r));
        assert!(e.contains(&[lo + 1e-9]) && e.contains(&[hi - 1e-9]));
        assert!(!e.contains(&[lo]) && !e.contains(&[hi]));
        assert!(c.position(&lbl(&[0])).is_err());
    }

    #[test]
    fn alpha_cover_rejects_small_radius() {
        let err = build_alpha_modulation_cover(1, 0.5, 1.0, 8).unwrap_err();
        assert!(matches!(err, Error::NotCovered { .. }), "{err}");
    }

    #[test]
    fn dyadic_constants() {
        let c = build_dyadic_cover(1, -4, 4).unwrap();
        let k = c.admissibility_constants(None, true);
        assert_eq!(k.c_q, 2.0);
        let c2 = build_dyadic_cover(2, -1, 2).unwrap();
        assert_eq!(c2.admissibility_constants(None, true).c_q, 2.0);
    }

    #[test]
    fn relabeling_keeps_constants() {
        let c = build_alpha_modulation_cover(1, 0.5, 1.5, 6).unwrap();
        let w = moderate_weight(WeightFamily::AlphaModulation { alpha: 0.5, s: 1.0 }, &c).unwrap();
        let order: Vec<usize> = (0..c.len()).rev().collect();
        let p = c.permuted(&order).unwrap();
        let wp = Weight {
            values: order.iter().map(|&i| w.values[i]).collect(),
        };
        assert_eq!(c.admissibility_constants(Some(&w), true), p.admissibility_constants(Some(&wp), true));
    }

    #[test]
    fn weights() {
        let c = build_alpha_modulation_cover(1, 0.5, 1.5, 6).unwrap();
        let w = moderate_weight(WeightFamily::AlphaModulation { alpha: 0.5, s: 1.0 }, &c).unwrap();
        for (e, v) in c.elements().iter().zip(&w.values) {
            assert!((v - (e.label.0[0] * e.label.0[0]) as f64).abs() < 1e-9);
        }
        let one = moderate_weight(WeightFamily::Polynomial { s: 0.0 }, &c).unwrap();
        assert!(one.values.iter().all(|&v| v == 1.0));
        let k = c.admissibility_constants(Some(&w), true);
        assert!(k.c_wq.unwrap().is_finite());
    }

    #[test]
    fn clustering_examples() {
        let c = build_uniform_cover(1, 1.0, 4).unwrap();
        let mut e0 = vec![0.0; c.len()];
        e0[c.position(&lbl(&[0])).unwrap()] = 1.0;
        let g = clustering_apply(&c, &e0);
        let ones: Vec<Label> = c.labels().zip(&g).filter(|(_, v)| **v == 1.0).map(|(l, _)| l.clone()).collect();
        assert_eq!(ones, vec![lbl(&[-1]), lbl(&[0]), lbl(&[1])]);
        let g = clustering_apply(&c, &vec![1.0; c.len()]);
        for i in c.interior() {
            assert_eq!(g[i], 3.0);
        }
    }

    #[test]
    fn json_round_trip_preserves_structure() {
        let c = build_alpha_modulation_cover(1, 0.5, 1.5, 4).unwrap();
        let back = Cover::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back.to_document(), c.to_document());
        assert_eq!(back.admissibility_constants(None, true), c.admissibility_constants(None, true));
        let bad = r#"{"dimension":1,"family":"custom","elements":[],"extra":1}"#;
        assert!(Cover::from_json(bad).is_err());
    }

    #[test]
    fn sampled_intersection_agrees_with_analytic() {
        let a = CoverElement {
            label: lbl(&[0]),
            map: AffineMap::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]), DVector::from_vec(vec![0.0, 0.0])).unwrap(),
            base: BaseSet::new(Region::ball(2, 1.0), None).unwrap(),
            edge: false,
        };
        let mut b = a.clone();
        b.label = lbl(&[1]);
        b.map = AffineMap::new(a.map.matrix().clone(), DVector::from_vec(vec![1.5, 0.0])).unwrap();
        assert!(elements_intersect(&a, &b));
        b.map = AffineMap::new(a.map.matrix().clone(), DVector::from_vec(vec![0.0, 2.5])).unwrap();
        assert!(!elements_intersect(&a, &b));
    }
}
