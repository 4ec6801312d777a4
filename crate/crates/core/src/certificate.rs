//! Explicit invertibility certificate for structured systems.
//!
//! Everything here is a floating-point evaluation of closed-form sufficient
//! conditions: the main-term quantity `M_0`, the Schur norms of the pair
//! matrices `Ŷ` and `Ỹ`, the dimension constants and the resulting threshold
//! `δ_max` below which the frame operator is invertible on every
//! `D(Q, L^p, ℓ^q_w)`. Values are "numerically evaluated", never proved.
//!
//! Pair matrices are computed on all labels of the truncation. Sup-type
//! quantities (row sums, column sums, `M_0`) are then restricted to non-edge
//! labels, whose neighbourhoods are complete.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cover::{moderate_weight, Cover, CoverConstants, Weight, WeightFamily};
use crate::error::{Error, Result};
use crate::numerics::{spectral_norm, DenseMatrix, NodeSet, QuadratureRule};
use crate::partition::{
    build_regular_partition, partition_constants_with, BumpProfile, PartitionConstants, PartitionConstantsOptions,
};
use crate::system::{calderon_bounds, calderon_bounds_on, infinite_as_string, StructuredSystem};
use crate::walnut;

/// Safety factor applied to `δ_max` when the step is chosen automatically.
pub const SAFETY_MARGIN: f64 = 0.99;

/// Relative change above which a doubling check is flagged.
pub const STABILITY_TOLERANCE: f64 = 0.01;

pub const EVALUATION_LABEL: &str = "numerically evaluated";

/// Quadrature rule used when none is given. Panels per axis shrink with the
/// dimension so that the all-pairs matrices stay tractable.
pub fn default_rule(d: usize) -> QuadratureRule {
    match d {
        1 => QuadratureRule::default(),
        2 => QuadratureRule { order: 6, resolution: 8 },
        _ => QuadratureRule { order: 4, resolution: 4 },
    }
}

/// Calderón grid size per axis used when none is given.
pub fn default_calderon_grid(d: usize) -> usize {
    match d {
        1 => 4001,
        2 => 201,
        _ => 31,
    }
}

fn nu(x: f64) -> f64 {
    x.max(1.0)
}

fn weight_ratio(w: Option<&Weight>, i: usize, j: usize) -> f64 {
    match w {
        Some(w) => {
            let r = w.values[i] / w.values[j];
            r.max(1.0 / r)
        }
        None => 1.0,
    }
}

/// Raw integrals over `Q_i′` shared by one `(i, j)` pair, with
/// `η = S_j⁻¹(S_i ξ)` and `m = max_{|α|≤d+1}|∂^α ĝ(η)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairIntegrals {
    /// `∫ m^{2(d+1)}`
    pub main: f64,
    /// `∫ (1+|η|)^{2d+2} m`
    pub translation: f64,
    /// `∫ (1+|η|)^{d+1} m`
    pub remainder: f64,
}

/// Geometric factors of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFactors {
    /// `max{1, ‖A_j⁻¹A_i‖^{d+1}}`
    pub main: f64,
    /// `L_{i,j}`
    pub l: f64,
    /// `K_{i,j}`
    pub k: f64,
}

pub fn pair_factors(cover: &Cover, w: Option<&Weight>, i: usize, j: usize) -> PairFactors {
    let d = cover.dimension() as i32;
    let ei = &cover.element(i).map;
    let ej = &cover.element(j).map;
    let ji = spectral_norm(&(ej.inverse_matrix() * ei.matrix()));
    let ij = spectral_norm(&(ei.inverse_matrix() * ej.matrix()));
    let shift = (ei.inverse_matrix() * (ei.shift() - ej.shift())).norm();
    let ratio = weight_ratio(w, i, j);
    PairFactors {
        main: nu(ji.powi(d + 1)),
        l: ratio * (nu(ij * ij) * nu(ji.powi(3))).powi(d + 1),
        k: ratio * (nu(shift) * nu(ij) * nu(ji * ji)).powi(d + 1),
    }
}

fn base_nodes(system: &StructuredSystem, i: usize, rule: &QuadratureRule) -> NodeSet {
    rule.nodes(&system.cover().element(i).base.outer)
}

/// Whether `ĝ` vanishes identically on `S_j⁻¹S_i(Q_i′)`, decided from the
/// generator's support radius.
fn pair_vanishes(system: &StructuredSystem, i: usize, j: usize) -> bool {
    let Some(support) = system.generator().support_radius() else {
        return false;
    };
    let cover = system.cover();
    let rel = cover.element(i).map.relative_to(&cover.element(j).map);
    let center = rel.apply(&vec![0.0; cover.dimension()]);
    let reach = spectral_norm(rel.matrix()) * cover.element(i).base.outer.sup_norm() * (cover.dimension() as f64).sqrt();
    let dist = center.iter().map(|c| c * c).sum::<f64>().sqrt();
    dist - reach > support
}

fn pair_integrals_on(system: &StructuredSystem, i: usize, j: usize, nodes: &NodeSet) -> Result<PairIntegrals> {
    let mut out = PairIntegrals {
        main: 0.0,
        translation: 0.0,
        remainder: 0.0,
    };
    if pair_vanishes(system, i, j) {
        return Ok(out);
    }
    let cover = system.cover();
    let d = cover.dimension() as i32;
    let rel = cover.element(i).map.relative_to(&cover.element(j).map);
    let g = system.generator();
    for (xi, weight) in nodes.iter() {
        let eta = rel.apply(xi);
        let m = g.max_partial(&eta);
        let r = 1.0 + eta.iter().map(|e| e * e).sum::<f64>().sqrt();
        let rd = r.powi(d + 1);
        let main = m.powi(2 * (d + 1));
        let translation = rd * rd * m;
        let remainder = rd * m;
        if !(main.is_finite() && translation.is_finite()) {
            return Err(Error::NonFinitePair {
                i: cover.element(i).label.to_string(),
                j: cover.element(j).label.to_string(),
                point: xi.to_vec(),
            });
        }
        out.main += weight * main;
        out.translation += weight * translation;
        out.remainder += weight * remainder;
    }
    Ok(out)
}

pub fn pair_integrals(system: &StructuredSystem, i: usize, j: usize, rule: &QuadratureRule) -> Result<PairIntegrals> {
    pair_integrals_on(system, i, j, &base_nodes(system, i, rule))
}

/// `max{1, ‖A_j⁻¹A_i‖^{d+1}} (∫_{Q_i′} max_{|α|≤d+1}|∂^α ĝ(S_j⁻¹S_iξ)|^{2(d+1)} dξ)^{1/(d+1)}`
pub fn m0_summand(system: &StructuredSystem, i: usize, j: usize, rule: &QuadratureRule) -> Result<f64> {
    let d = system.dim() as f64;
    let f = pair_factors(system.cover(), None, i, j);
    Ok(f.main * pair_integrals(system, i, j, rule)?.main.powf(1.0 / (d + 1.0)))
}

/// `Ŷ_{i,j} = L_{i,j} ∫_{Q_i′} (1+|S_j⁻¹S_iξ|)^{2d+2} max_{|α|≤d+1}|∂^α ĝ(S_j⁻¹S_iξ)| dξ`
pub fn yhat_entry(system: &StructuredSystem, w: Option<&Weight>, i: usize, j: usize, rule: &QuadratureRule) -> Result<f64> {
    let f = pair_factors(system.cover(), w, i, j);
    Ok(f.l * pair_integrals(system, i, j, rule)?.translation)
}

/// `Ỹ_{i,j} = K_{i,j} ∫_{Q_i′} (1+|S_j⁻¹S_iξ|)^{d+1} max_{|α|≤d+1}|∂^α ĝ(S_j⁻¹S_iξ)| dξ`
pub fn ytilde_entry(
    system: &StructuredSystem,
    w: Option<&Weight>,
    i: usize,
    j: usize,
    rule: &QuadratureRule,
) -> Result<f64> {
    let f = pair_factors(system.cover(), w, i, j);
    Ok(f.k * pair_integrals(system, i, j, rule)?.remainder)
}

/// Labels over which sup-type quantities are taken: the non-edge labels,
/// or all labels if every label is an edge.
pub fn sup_labels(cover: &Cover) -> Vec<usize> {
    let rows = cover.interior();
    if rows.is_empty() {
        log::warn!("every label of the truncation is an edge label; sup-type quantities use all labels");
        (0..cover.len()).collect()
    } else {
        rows
    }
}

/// `max(max_{i∈rows} Σ_j |M_ij|, max_{j∈rows} Σ_i |M_ij|)` on a square
/// matrix, sums running over all labels.
pub fn restricted_schur_norm(m: &DenseMatrix, rows: &[usize]) -> f64 {
    let row_max = rows
        .iter()
        .map(|&i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let col_max = rows
        .iter()
        .map(|&j| (0..m.nrows()).map(|i| m.get(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    row_max.max(col_max)
}

/// All pair quantities of a truncated structured system.
#[derive(Debug, Clone)]
pub struct PairMatrices {
    /// `Σ_j` of the main-term summand, per row.
    pub m0_rows: Vec<f64>,
    pub yhat: DenseMatrix,
    pub ytilde: DenseMatrix,
    pub sup_labels: Vec<usize>,
}

impl PairMatrices {
    /// `M_0` and the label attaining it.
    pub fn m0(&self) -> (f64, usize) {
        self.sup_labels
            .iter()
            .map(|&i| (self.m0_rows[i], i))
            .fold((0.0, self.sup_labels[0]), |a, b| if b.0 > a.0 { b } else { a })
    }

    /// `M_1 = ‖Ŷ‖_Schur`
    pub fn m1(&self) -> f64 {
        restricted_schur_norm(&self.yhat, &self.sup_labels)
    }

    pub fn ytilde_schur(&self) -> f64 {
        restricted_schur_norm(&self.ytilde, &self.sup_labels)
    }
}

/// Evaluates every pair once (in parallel over rows) and assembles the
/// main-term row sums and both pair matrices. Row sums are accumulated in
/// label order, so the result does not depend on scheduling.
pub fn pair_matrices(system: &StructuredSystem, w: Option<&Weight>, rule: &QuadratureRule) -> Result<PairMatrices> {
    let cover = system.cover();
    let n = cover.len();
    let d = cover.dimension() as f64;
    let rows: Vec<Result<(f64, Vec<f64>, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let nodes = base_nodes(system, i, rule);
            let mut m0 = 0.0;
            let mut yhat = vec![0.0; n];
            let mut ytilde = vec![0.0; n];
            for j in 0..n {
                let f = pair_factors(cover, w, i, j);
                let ints = pair_integrals_on(system, i, j, &nodes)?;
                m0 += f.main * ints.main.powf(1.0 / (d + 1.0));
                yhat[j] = f.l * ints.translation;
                ytilde[j] = f.k * ints.remainder;
            }
            Ok((m0, yhat, ytilde))
        })
        .collect();
    let labels = cover.label_strings();
    let mut yhat = DenseMatrix::zeros(labels.clone(), labels.clone());
    let mut ytilde = DenseMatrix::zeros(labels.clone(), labels);
    let mut m0_rows = Vec::with_capacity(n);
    for (i, row) in rows.into_iter().enumerate() {
        let (m0, yh, yt) = row?;
        m0_rows.push(m0);
        for j in 0..n {
            yhat.set(i, j, yh[j]);
            ytilde.set(i, j, yt[j]);
        }
    }
    Ok(PairMatrices {
        m0_rows,
        yhat,
        ytilde,
        sup_labels: sup_labels(cover),
    })
}

/// `M_0 = sup_i Σ_j max{1,‖A_j⁻¹A_i‖^{d+1}} (∫_{Q_i′} max|∂^α ĝ(S_j⁻¹S_iξ)|^{2(d+1)})^{1/(d+1)}`
pub fn m0(system: &StructuredSystem, rule: &QuadratureRule) -> Result<f64> {
    Ok(pair_matrices(system, None, rule)?.m0().0)
}

/// `M_1 = ‖Ŷ‖_Schur`
pub fn m1(system: &StructuredSystem, w: Option<&Weight>, rule: &QuadratureRule) -> Result<f64> {
    Ok(pair_matrices(system, w, rule)?.m1())
}

/// The explicit constants of the main theorem and its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperConstants {
    pub c_d: f64,
    pub c_d_prime: f64,
    pub c_prime: f64,
    pub c_0: f64,
    pub c_pq: f64,
    pub kappa_d: f64,
    pub k_qw: f64,
    pub c_dqw: f64,
    /// `C_{w,Q} N_Q`, standing in for `‖Γ_Q‖_{ℓ^q_w → ℓ^q_w}`.
    pub clustering_bound: f64,
    pub sup_measure: f64,
    pub n_q: usize,
    pub r_q: f64,
    pub c_phi: f64,
    pub max_c_q_phi: f64,
}

/// `C_d = 3(d+1)^{3/2} 2^{d+1}/π^d · ((0.8/e·(d+1)²)/ln(2+d))^{d+1}`
pub fn c_d(d: usize) -> f64 {
    let df = d as f64;
    let pi = std::f64::consts::PI;
    3.0 * (df + 1.0).powf(1.5) * 2f64.powi(d as i32 + 1) / pi.powi(d as i32)
        * ((0.8 / std::f64::consts::E * (df + 1.0).powi(2)) / (2.0 + df).ln()).powi(d as i32 + 1)
}

/// `C_d′ = C_d · (2d)^{(d+1)²}`
pub fn c_d_prime(d: usize) -> f64 {
    let di = d as i32;
    c_d(d) * (2.0 * d as f64).powi((di + 1) * (di + 1))
}

/// `C′ = (12(d+1)²)^{d+1}`
pub fn c_prime(d: usize) -> f64 {
    (12.0 * ((d + 1) * (d + 1)) as f64).powi(d as i32 + 1)
}

pub fn kappa_d(d: usize) -> f64 {
    let df = d as f64;
    let di = d as i32;
    let pi = std::f64::consts::PI;
    (2.0 * df).powi((di + 1) * (di + 1))
        * (8.0 * df).powi(2 * di + 2)
        * 12f64.powi(5 * di + 5)
        * (df + 1.0).powi(8 * di + 10)
        * (72.0 * (df + 1.0).powf(2.5) * 2f64.powi(di + 2) / pi.powi(3 * di))
        * ((0.8 / std::f64::consts::E * (df + 1.0).powi(2)) / (2.0 + df).ln()).powi(di + 1)
}

/// Evaluates every constant of the theorem; `sup_measure = sup_j λ(Q_j′)`.
/// The weight enters through `cover_constants.c_wq`.
pub fn paper_constants(
    d: usize,
    cover_constants: &CoverConstants,
    partition_constants: &PartitionConstants,
    p: f64,
    q: f64,
    sup_measure: f64,
) -> PaperConstants {
    let df = d as f64;
    let di = d as i32;
    let pi = std::f64::consts::PI;
    let gamma = cover_constants.clustering_bound();
    let n_q = cover_constants.n_q as f64;
    let r_q = cover_constants.r_q;
    let c_phi = partition_constants.c_phi;
    let max_c = partition_constants.max_c_q_phi();
    let cd = c_d(d);
    let c_d_prime = c_d_prime(d);
    let cp = c_prime(d);
    let c_0 = 24.0
        * pi
        * pi
        * (8.0 * df / pi).powi(2 * di + 2)
        * 12f64.powi(di)
        * (df + 1.0).powi(3)
        * nu(r_q.powi(di + 2))
        * max_c
        * max_c;
    let c_pq = if p.max(q).is_finite() { 1.0 } else { c_phi * gamma * gamma };
    let kappa = kappa_d(d);
    let k_qw = gamma.powi(3) * n_q * n_q * nu(c_phi * c_phi) * (1.0 + r_q).powi(3 * di + 4) * max_c.powi(3);
    let c_dqw = sup_measure
        .powf(-3.0 / (df + 2.0))
        .max((kappa * k_qw).powf(1.0 / (df + 2.0)));
    PaperConstants {
        c_d: cd,
        c_d_prime,
        c_prime: cp,
        c_0,
        c_pq,
        kappa_d: kappa,
        k_qw,
        c_dqw,
        clustering_bound: gamma,
        sup_measure,
        n_q: cover_constants.n_q,
        r_q,
        c_phi,
        max_c_q_phi: max_c,
    }
}

/// `δ_max = A′ / (C_{d,Q,w} M_0^{(d+1)/(d+2)} M_1^{2/(d+2)})`
pub fn delta_max(d: usize, a_prime: f64, m0: f64, m1: f64, c_dqw: f64) -> Result<f64> {
    let df = d as f64;
    let denom = c_dqw * m0.powf((df + 1.0) / (df + 2.0)) * m1.powf(2.0 / (df + 2.0));
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::ZeroDenominator);
    }
    Ok(a_prime / denom)
}

/// `C′_d N_Q² C_Φ max_α C_{Q,Φ,α} (A′)⁻¹ (M_0/A′)^{d+1} δ^d`
pub fn t0_inverse_bound(constants: &PaperConstants, d: usize, a_prime: f64, m0: f64, delta: f64) -> f64 {
    let n_q = constants.n_q as f64;
    constants.c_d_prime * n_q * n_q * constants.c_phi * constants.max_c_q_phi / a_prime
        * (m0 / a_prime).powi(d as i32 + 1)
        * delta.powi(d as i32)
}

/// `C_0 C_{p,q} C′⁴ ‖Γ_Q‖ δ² ‖Ỹ‖²_Schur`; pass `ytilde_schur = None` to use
/// the inflated `(1+R_Q)^{d+1} ‖Ŷ‖_Schur` instead.
pub fn remainder_bound(constants: &PaperConstants, d: usize, m1: f64, ytilde_schur: Option<f64>, delta: f64) -> f64 {
    let y = ytilde_schur.unwrap_or_else(|| (1.0 + constants.r_q).powi(d as i32 + 1) * m1);
    constants.c_0 * constants.c_pq * constants.c_prime.powi(4) * constants.clustering_bound * delta * delta * y * y
}

/// Prefactor-free adaptedness matrix entry:
/// `max{w_i/v_j, v_j/w_i} (1+‖C_j^tA_i‖)^d |det C_j|^{-1/2} ∫_{Q_i′} max_{|θ|≤d+1}|∂^θ[ĝ_j∘S_i]|`.
pub fn adaptedness_entry(
    system: &StructuredSystem,
    w: Option<&Weight>,
    v: Option<&Weight>,
    i: usize,
    j: usize,
    nodes: &NodeSet,
) -> Result<f64> {
    let cover = system.cover();
    let d = cover.dimension() as i32;
    let ei = &cover.element(i).map;
    let ej = &cover.element(j).map;
    let wi = w.map_or(1.0, |w| w.values[i]);
    let vj = v.map_or(1.0, |v| v.values[j]);
    let ratio = (wi / vj).max(vj / wi);
    let lattice = system.lattice(j);
    let ct_a = lattice.transpose() * ei.matrix();
    let factor = ratio * (1.0 + spectral_norm(&ct_a)).powi(d) / system.lattice_det(j).abs().sqrt();
    if pair_vanishes(system, i, j) {
        return Ok(0.0);
    }
    let rel = ei.relative_to(ej);
    let norm = ej.abs_det().powf(-0.5);
    let g = system.generator();
    let integral = nodes.integrate(|xi| norm * g.max_partial_composed(&rel, xi)).map_err(|e| match e {
        Error::NonFiniteIntegrand { node, .. } => Error::NonFinitePair {
            i: cover.element(i).label.to_string(),
            j: cover.element(j).label.to_string(),
            point: node,
        },
        other => other,
    })?;
    Ok(factor * integral)
}

/// The matrix `G` and its Schur norm over non-edge labels.
pub fn adaptedness_matrix(
    system: &StructuredSystem,
    w: Option<&Weight>,
    v: Option<&Weight>,
    rule: &QuadratureRule,
) -> Result<(DenseMatrix, f64)> {
    let cover = system.cover();
    let n = cover.len();
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let nodes = base_nodes(system, i, rule);
            (0..n).map(|j| adaptedness_entry(system, w, v, i, j, &nodes)).collect()
        })
        .collect();
    let labels = cover.label_strings();
    let mut g = DenseMatrix::zeros(labels.clone(), labels);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            g.set(i, j, v);
        }
    }
    let norm = restricted_schur_norm(&g, &sup_labels(cover));
    Ok((g, norm))
}

/// Outcome of re-running a computation at a refined setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCheck {
    pub performed: bool,
    pub stable: Option<bool>,
    pub relative_changes: BTreeMap<String, f64>,
}

impl StabilityCheck {
    fn skipped() -> Self {
        Self {
            performed: false,
            stable: None,
            relative_changes: BTreeMap::new(),
        }
    }

    fn from_pairs(pairs: &[(&str, f64, f64)], tolerance: f64) -> Self {
        let relative_changes: BTreeMap<String, f64> = pairs
            .iter()
            .map(|(name, a, b)| (name.to_string(), relative_change(*a, *b)))
            .collect();
        let stable = relative_changes.values().all(|c| *c <= tolerance);
        Self {
            performed: true,
            stable: Some(stable),
            relative_changes,
        }
    }
}

pub fn relative_change(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub cover: String,
    pub partition: String,
    pub generator: String,
    pub system: String,
    pub rule: QuadratureRule,
    pub calderon_grid: usize,
}

/// The certificate of one structured system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub evaluation: String,
    pub d: usize,
    #[serde(with = "infinite_as_string")]
    pub p: f64,
    #[serde(with = "infinite_as_string")]
    pub q: f64,
    pub labels: usize,
    pub sup_labels: usize,
    pub a_raw: f64,
    pub b_raw: f64,
    pub a_prime: f64,
    pub b_prime: f64,
    pub m0: f64,
    pub m0_label: String,
    pub m1: f64,
    pub ytilde_schur: Option<f64>,
    pub adaptedness_schur: Option<f64>,
    /// Small-constant sufficient condition on `D(Q, L², ℓ²_w)`.
    pub l2: Option<L2Criterion>,
    pub constants: PaperConstants,
    pub cover_constants: CoverConstants,
    pub partition_constants: PartitionConstants,
    pub delta: f64,
    pub delta_auto: bool,
    pub delta_max: f64,
    pub certified_delta: f64,
    pub t0_inv_bound: f64,
    pub r0_bound: f64,
    pub bound_product: f64,
    pub invertible: bool,
    pub calderon_doubling_stable: Option<bool>,
    pub quadrature_doubling: StabilityCheck,
    pub truncation_doubling: StabilityCheck,
    pub heuristic: bool,
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

impl Certificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// All doubling checks that ran came back stable.
    pub fn is_stable(&self) -> bool {
        self.quadrature_doubling.stable != Some(false)
            && self.truncation_doubling.stable != Some(false)
            && self.calderon_doubling_stable != Some(false)
    }
}

/// Frequency weight `v` with its control weight `v_0`:
/// `v(ξ + η) ≤ C_v v(ξ) v_0(η)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyWeight {
    /// `v = v_0 ≡ 1`
    Constant,
    /// `v = (1+|ξ|)^s`, `v_0 = (1+|η|)^{|s|}`, `C_v = 1` (Peetre).
    Polynomial { s: f64 },
}

impl FrequencyWeight {
    pub fn v(&self, xi: &[f64]) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Polynomial { s } => (1.0 + xi.iter().map(|x| x * x).sum::<f64>().sqrt()).powf(*s),
        }
    }

    pub fn v0(&self, eta: &[f64]) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Polynomial { s } => (1.0 + eta.iter().map(|x| x * x).sum::<f64>().sqrt()).powf(s.abs()),
        }
    }

    pub fn c_v(&self) -> f64 {
        1.0
    }
}

/// Evaluation of `C_v · sup_ξ Σ_{α∈Λ∖0} |t_α(ξ)| v_0(α) < A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Criterion {
    pub lhs: f64,
    pub a_raw: f64,
    pub satisfied: bool,
    /// Share of the sum at the maximizer coming from `|α| ≥ 0.75 α_max`.
    pub tail_fraction: f64,
    /// The tail share exceeds 10%: a larger `α_max` is needed.
    pub inconclusive: bool,
    pub alpha_max: f64,
    pub lattice_points: usize,
    pub grid_points: usize,
    pub argmax: Vec<f64>,
    pub weight: FrequencyWeight,
}

/// The L² criterion on the given grid with `Λ` truncated to `|α| ≤ α_max`.
pub fn l2_criterion(
    system: &StructuredSystem,
    weight: FrequencyWeight,
    points: &[Vec<f64>],
    alpha_max: f64,
) -> Result<L2Criterion> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty grid for the L² criterion".into()));
    }
    let lambda = walnut::lambda_set(system, alpha_max, walnut::LATTICE_TOL)?;
    for a in &lambda.alphas {
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        if (weight.v0(a) - weight.v0(&neg)).abs() > 1e-12 * weight.v0(a) {
            return Err(Error::InvalidArgument(format!("v_0 is not symmetric at {a:?}")));
        }
    }
    let tail_from = 0.75 * alpha_max;
    // (total, tail part, t_0) per point
    let sums: Vec<(f64, f64, f64)> = points
        .par_iter()
        .map(|xi| {
            let mut total = 0.0;
            let mut tail = 0.0;
            for (alpha, members) in lambda.alphas.iter().zip(&lambda.members).skip(1) {
                let term = walnut::t_alpha_with(system, members, alpha, xi).norm() * weight.v0(alpha);
                total += term;
                if alpha.iter().map(|x| x * x).sum::<f64>().sqrt() >= tail_from {
                    tail += term;
                }
            }
            (total, tail, system.calderon_t0(xi))
        })
        .collect();
    let mut best = 0usize;
    for (k, s) in sums.iter().enumerate() {
        if s.0 > sums[best].0 {
            best = k;
        }
    }
    let a_raw = sums.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    let lhs = weight.c_v() * sums[best].0;
    let tail_fraction = if sums[best].0 > 0.0 { sums[best].1 / sums[best].0 } else { 0.0 };
    Ok(L2Criterion {
        lhs,
        a_raw,
        satisfied: lhs < a_raw,
        tail_fraction,
        inconclusive: tail_fraction > 0.1,
        alpha_max,
        lattice_points: lambda.len(),
        grid_points: points.len(),
        argmax: points[best].clone(),
        weight,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub rule: Option<QuadratureRule>,
    pub calderon_grid: Option<usize>,
    pub profile: BumpProfile,
    pub partition: PartitionConstantsOptions,
    /// Use `δ = 0.99 δ_max` instead of the system's `δ`.
    pub auto_delta: bool,
    pub quadrature_doubling: bool,
    pub truncation_doubling: bool,
    pub adaptedness: bool,
    /// Evaluate the L² criterion when `p = q = 2`.
    pub l2: bool,
    /// `Λ` radius for the L² criterion; `None` uses the generator extent.
    pub l2_alpha_max: Option<f64>,
    /// Family the weight was built from, used to rebuild it on the doubled
    /// truncation.
    pub weight_family: Option<WeightFamily>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            rule: None,
            calderon_grid: None,
            profile: BumpProfile::default(),
            partition: PartitionConstantsOptions::default(),
            auto_delta: false,
            quadrature_doubling: true,
            truncation_doubling: true,
            adaptedness: false,
            l2: true,
            l2_alpha_max: None,
            weight_family: None,
        }
    }
}

struct CoreValues {
    a_prime: f64,
    m0: f64,
    m1: f64,
    ytilde: f64,
}

fn core_values(
    system: &StructuredSystem,
    w: Option<&Weight>,
    rule: &QuadratureRule,
    points: &[Vec<f64>],
) -> Result<CoreValues> {
    let bounds = calderon_bounds_on(system, points, None)?;
    let pairs = pair_matrices(system, w, rule)?;
    Ok(CoreValues {
        a_prime: bounds.a_prime,
        m0: pairs.m0().0,
        m1: pairs.m1(),
        ytilde: pairs.ytilde_schur(),
    })
}

/// Full certificate for `system` on `D(Q, L^p, ℓ^q_w)`; `w = None` is `w ≡ 1`.
pub fn certify(system: &StructuredSystem, w: Option<&Weight>, p: f64, q: f64, opts: &CertifyOptions) -> Result<Certificate> {
    Ok(certify_with_pairs(system, w, p, q, opts)?.0)
}

/// [`certify`] together with the pair matrices it was computed from.
pub fn certify_with_pairs(
    system: &StructuredSystem,
    w: Option<&Weight>,
    p: f64,
    q: f64,
    opts: &CertifyOptions,
) -> Result<(Certificate, PairMatrices)> {
    for (name, e) in [("p", p), ("q", q)] {
        if !(e >= 1.0) {
            return Err(Error::InvalidArgument(format!("{name} must lie in [1, ∞], got {e}")));
        }
    }
    let cover = system.cover();
    let d = cover.dimension();
    if let Some(w) = w {
        if w.values.len() != cover.len() {
            return Err(Error::InvalidArgument(format!(
                "weight has {} entries for {} labels",
                w.values.len(),
                cover.len()
            )));
        }
    }
    let rule = opts.rule.unwrap_or_else(|| default_rule(d));
    let grid = opts.calderon_grid.unwrap_or_else(|| default_calderon_grid(d));

    let bounds = calderon_bounds(system, grid, opts.quadrature_doubling)?;
    let pairs = pair_matrices(system, w, &rule)?;
    let (m0, m0_at) = pairs.m0();
    let m1 = pairs.m1();
    let ytilde_schur = pairs.ytilde_schur();

    let partition = build_regular_partition(system.cover_arc().clone(), opts.profile)?;
    let pconsts = partition_constants_with(&partition, &opts.partition)?;
    let unit = Weight::constant(cover.len());
    let cconsts = cover.admissibility_constants(Some(w.unwrap_or(&unit)), false);
    let sup_measure = cover
        .elements()
        .iter()
        .map(|e| e.base.outer.measure())
        .fold(0.0, f64::max);
    let constants = paper_constants(d, &cconsts, &pconsts, p, q, sup_measure);
    let dmax = delta_max(d, bounds.a_prime, m0, m1, constants.c_dqw)?;
    let certified_delta = SAFETY_MARGIN * dmax;
    let delta = if opts.auto_delta { certified_delta } else { system.delta() };
    let t0 = t0_inverse_bound(&constants, d, bounds.a_prime, m0, delta);
    let r0 = remainder_bound(&constants, d, m1, Some(ytilde_schur), delta);

    let quadrature_doubling = if opts.quadrature_doubling {
        let fine = pair_matrices(system, w, &rule.doubled())?;
        StabilityCheck::from_pairs(
            &[
                ("m0", m0, fine.m0().0),
                ("m1", m1, fine.m1()),
                ("ytilde_schur", ytilde_schur, fine.ytilde_schur()),
            ],
            STABILITY_TOLERANCE,
        )
    } else {
        StabilityCheck::skipped()
    };

    // A custom weight cannot be carried over to a larger truncation.
    let extendable = w.is_none() || opts.weight_family.is_some();
    let truncation_doubling = if opts.truncation_doubling && cover.truncation().is_some() && extendable {
        let big = Arc::new(Cover::build(cover.family().doubled_truncation())?);
        let big_sys = StructuredSystem::new(big, system.generator_arc().clone(), system.delta())?;
        let big_w = match (w, opts.weight_family) {
            (Some(_), Some(f)) => Some(moderate_weight(f, big_sys.cover())?),
            _ => None,
        };
        // Same Calderón points, so that only the added elements can matter.
        let v = core_values(&big_sys, big_w.as_ref(), &rule, &cover.safe_grid(grid))?;
        StabilityCheck::from_pairs(
            &[
                ("a_prime", bounds.a_prime, v.a_prime),
                ("m0", m0, v.m0),
                ("m1", m1, v.m1),
                ("ytilde_schur", ytilde_schur, v.ytilde),
            ],
            STABILITY_TOLERANCE,
        )
    } else {
        StabilityCheck::skipped()
    };

    let adaptedness_schur = if opts.adaptedness {
        Some(adaptedness_matrix(system, w, w, &rule)?.1)
    } else {
        None
    };

    let frequency_weight = match (w, opts.weight_family) {
        (None, _) | (Some(_), Some(WeightFamily::Constant)) => Some(FrequencyWeight::Constant),
        (Some(_), Some(WeightFamily::Polynomial { s })) => Some(FrequencyWeight::Polynomial { s }),
        _ => None,
    };
    let l2 = match frequency_weight {
        Some(fw) if opts.l2 && p == 2.0 && q == 2.0 => {
            let at = system.with_delta(delta)?;
            let radius = opts.l2_alpha_max.unwrap_or_else(|| walnut::default_alpha_max(&at));
            Some(l2_criterion(&at, fw, &cover.safe_grid(grid), radius)?)
        }
        _ => None,
    };

    let invertible = delta < dmax;
    let heuristic = !system.generator().is_smooth();
    let mut notes = vec![
        format!("all values are {EVALUATION_LABEL}, not proved"),
        "certificate applies to the truncated system; extending it to the full cover is a user-supplied assumption"
            .to_string(),
        "‖Γ_Q‖ is replaced by the bound C_wQ·N_Q".to_string(),
    ];
    if heuristic {
        notes.push("generator is only piecewise smooth: certificate is heuristic".into());
    }
    if !system.generator().has_exact_partials() {
        notes.push("generator partials come from Richardson-extrapolated finite differences".into());
    }
    if delta > 1.0 {
        notes.push("δ > 1: the remainder bound is only established for δ ≤ 1".into());
    }
    if opts.truncation_doubling && !extendable {
        notes.push("truncation doubling skipped: custom weight".into());
    }
    if opts.l2 && p == 2.0 && q == 2.0 && frequency_weight.is_none() {
        notes.push("L² criterion skipped: no frequency weight v with v ≍ w_i is known for this weight".into());
    }
    if let Some(l2) = &l2 {
        if l2.inconclusive {
            notes.push("L² criterion inconclusive: Λ truncation tail exceeds 10% of the sum".into());
        } else if l2.satisfied {
            notes.push("L² criterion holds: the frame operator is invertible on D(Q, L², ℓ²_w)".into());
        }
    }
    if invertible {
        notes.push(
            "frame operator invertible on D(Q, L^p, ℓ^q_w): the system is a Banach frame and an atomic decomposition"
                .into(),
        );
    }

    let certificate = Certificate {
        evaluation: EVALUATION_LABEL.to_string(),
        d,
        p,
        q,
        labels: cover.len(),
        sup_labels: pairs.sup_labels.len(),
        a_raw: bounds.a_raw,
        b_raw: bounds.b_raw,
        a_prime: bounds.a_prime,
        b_prime: bounds.b_prime,
        m0,
        m0_label: cover.element(m0_at).label.to_string(),
        m1,
        ytilde_schur: Some(ytilde_schur),
        adaptedness_schur,
        l2,
        constants,
        cover_constants: cconsts,
        partition_constants: pconsts,
        delta,
        delta_auto: opts.auto_delta,
        delta_max: dmax,
        certified_delta,
        t0_inv_bound: t0,
        r0_bound: r0,
        bound_product: t0 * r0,
        invertible,
        calderon_doubling_stable: bounds.doubling_stable,
        quadrature_doubling,
        truncation_doubling,
        heuristic,
        notes,
        provenance: Provenance {
            cover: cover.fingerprint(),
            partition: partition.fingerprint(),
            generator: system.generator().fingerprint(),
            system: system.fingerprint(),
            rule,
            calderon_grid: grid,
        },
    };
    Ok((certificate, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cover::build_uniform_cover;
    use crate::system::Generator;

    fn gaussian_system(radius: i64, delta: f64) -> StructuredSystem {
        let cover = Arc::new(build_uniform_cover(1, 1.0, radius).unwrap());
        StructuredSystem::new(cover, Arc::new(Generator::gaussian(1)), delta).unwrap()
    }

    // Adaptive Simpson on [a, b].
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    // max(|g|, |g′|, |g″|) for g = e^{−πx²}, written out by hand.
    fn gaussian_max_partial(x: f64) -> f64 {
        let pi = std::f64::consts::PI;
        let g = (-pi * x * x).exp();
        let g1 = -2.0 * pi * x * g;
        let g2 = (4.0 * pi * pi * x * x - 2.0 * pi) * g;
        g.abs().max(g1.abs()).max(g2.abs())
    }

    #[test]
    fn constants_closed_forms() {
        assert_eq!(c_prime(1), 2304.0);
        // 30-digit evaluation of the closed form: 12.40504815646123347...
        assert!((c_d(1) - 12.405048156461233).abs() < 1e-12, "{}", c_d(1));
    }

    #[test]
    fn trivial_pair_factors() {
        let cover = build_uniform_cover(1, 1.0, 3).unwrap();
        let f = pair_factors(&cover, None, 2, 2);
        assert_eq!((f.main, f.l, f.k), (1.0, 1.0, 1.0));
        let w = moderate_weight(WeightFamily::Polynomial { s: 1.5 }, &cover).unwrap();
        let a = pair_factors(&cover, Some(&w), 1, 5).l;
        let b = pair_factors(&cover, Some(&w.swapped()), 1, 5).l;
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn diagonal_main_summand_matches_adaptive_oracle() {
        let sys = gaussian_system(4, 0.5);
        let i = sys.cover().position(&crate::cover::Label(vec![0])).unwrap();
        // The integrand is a max of smooth functions, hence only Lipschitz; the
        // composite rule needs fine panels to reach 1e-6 on it.
        let value = m0_summand(&sys, i, i, &QuadratureRule::new(8, 4096).unwrap()).unwrap();
        let oracle = adaptive_simpson(&|x| gaussian_max_partial(x).powi(4), -1.0, 1.0, 1e-13).sqrt();
        assert!((value - oracle).abs() < 1e-6, "{value} vs {oracle}");
    }

    #[test]
    fn diagonal_remainder_entry_matches_adaptive_oracle() {
        let sys = gaussian_system(4, 0.5);
        let i = sys.cover().position(&crate::cover::Label(vec![0])).unwrap();
        let value = ytilde_entry(&sys, None, i, i, &QuadratureRule::new(8, 4096).unwrap()).unwrap();
        let oracle = adaptive_simpson(&|x| (1.0 + x.abs()).powi(2) * gaussian_max_partial(x), -1.0, 1.0, 1e-13);
        assert!((value - oracle).abs() < 1e-6, "{value} vs {oracle}");
    }

    #[test]
    fn remainder_entries_below_inflated_translation_entries() {
        let sys = gaussian_system(6, 0.5);
        let pairs = pair_matrices(&sys, None, &default_rule(1)).unwrap();
        let r_q = sys.cover().admissibility_constants(None, true).r_q;
        let n = sys.len();
        let mut rng_state = 12345u64;
        for _ in 0..50 {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let i = (rng_state >> 33) as usize % n;
            let j = (rng_state >> 13) as usize % n;
            let yt = pairs.ytilde.get(i, j);
            let yh = pairs.yhat.get(i, j);
            assert!(yt <= (1.0 + r_q).powi(2) * yh * (1.0 + 1e-12) + 1e-300, "({i},{j}) {yt} {yh}");
        }
    }

    #[test]
    fn step_two_inequalities_and_threshold() {
        let sys = gaussian_system(6, 0.5);
        let opts = CertifyOptions {
            auto_delta: true,
            truncation_doubling: false,
            quadrature_doubling: false,
            ..Default::default()
        };
        let cert = certify(&sys, None, 2.0, 2.0, &opts).unwrap();
        let measure: f64 = 2.0;
        assert!(cert.m0 >= cert.a_prime * measure.sqrt());
        assert!(cert.m1 >= cert.a_prime.sqrt() * measure);
        assert!(cert.delta_max > 0.0 && cert.delta_max <= 1.0);
        assert!(cert.invertible);
        assert!(cert.bound_product < 1.0, "{}", cert.bound_product);
        assert_eq!(cert.constants.c_pq, 1.0);
        let over = certify(&sys.with_delta(1.5 * cert.delta_max).unwrap(), None, 2.0, 2.0, &CertifyOptions {
            auto_delta: false,
            ..opts.clone()
        })
        .unwrap();
        assert!(!over.invertible);
    }

    #[test]
    fn threshold_invariant_under_generator_scaling() {
        let cover = Arc::new(build_uniform_cover(1, 1.0, 5).unwrap());
        let opts = CertifyOptions {
            truncation_doubling: false,
            quadrature_doubling: false,
            ..Default::default()
        };
        let a = StructuredSystem::new(cover.clone(), Arc::new(Generator::gaussian(1)), 0.5).unwrap();
        let b = StructuredSystem::new(cover, Arc::new(Generator::gaussian(1).scaled(2.0)), 0.5).unwrap();
        let ca = certify(&a, None, 2.0, 2.0, &opts).unwrap();
        let cb = certify(&b, None, 2.0, 2.0, &opts).unwrap();
        assert!(relative_change(cb.a_prime, 4.0 * ca.a_prime) < 1e-12);
        assert!(relative_change(cb.m0, 4.0 * ca.m0) < 1e-12);
        assert!(relative_change(cb.m1, 2.0 * ca.m1) < 1e-12);
        assert!(relative_change(cb.delta_max, ca.delta_max) < 1e-12);
    }

    #[test]
    fn threshold_linear_in_lower_bound() {
        let a = delta_max(1, 0.4, 3.0, 5.0, 7.0).unwrap();
        let b = delta_max(1, 0.8, 3.0, 5.0, 7.0).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-15);
        assert!(matches!(delta_max(1, 0.4, 0.0, 5.0, 7.0), Err(Error::ZeroDenominator)));
    }

    #[test]
    fn relabeling_invariance() {
        let sys = gaussian_system(4, 0.5);
        let n = sys.len();
        let order: Vec<usize> = (0..n).rev().collect();
        let perm = StructuredSystem::new(
            Arc::new(sys.cover().permuted(&order).unwrap()),
            sys.generator_arc().clone(),
            0.5,
        )
        .unwrap();
        let rule = default_rule(1);
        let a = pair_matrices(&sys, None, &rule).unwrap();
        let b = pair_matrices(&perm, None, &rule).unwrap();
        assert!(relative_change(a.m0().0, b.m0().0) < 1e-12);
        assert!(relative_change(a.m1(), b.m1()) < 1e-12);
    }

    #[test]
    fn bounds_vanish_and_grow_with_delta() {
        let sys = gaussian_system(4, 0.5);
        let opts = CertifyOptions {
            truncation_doubling: false,
            quadrature_doubling: false,
            ..Default::default()
        };
        let cert = certify(&sys, None, 2.0, 2.0, &opts).unwrap();
        let t = |delta| t0_inverse_bound(&cert.constants, 1, cert.a_prime, cert.m0, delta);
        let r = |delta| remainder_bound(&cert.constants, 1, cert.m1, cert.ytilde_schur, delta);
        assert!(t(1e-8) < 1e-6 * t(1.0) && r(1e-8) < 1e-6 * r(1.0));
        assert!(t(0.1) < t(0.2) && r(0.1) < r(0.2));
    }

    #[test]
    fn adaptedness_entries_below_remainder_based_bound() {
        let sys = gaussian_system(4, 0.5);
        let rule = default_rule(1);
        let (g, norm) = adaptedness_matrix(&sys, None, None, &rule).unwrap();
        assert!(norm.is_finite() && norm > 0.0);
        let delta = sys.delta();
        for i in 0..sys.len() {
            for j in 0..sys.len() {
                let f = pair_factors(sys.cover(), None, i, j);
                let remainder_integral = pair_integrals(&sys, i, j, &rule).unwrap().remainder;
                let rel = spectral_norm(&(sys.cover().element(j).map.inverse_matrix() * sys.cover().element(i).map.matrix()));
                let bound = delta.powf(-0.5) * f.main * (1.0 + delta * rel) * remainder_integral;
                assert!(g.get(i, j) <= bound * (1.0 + 1e-9) + 1e-300, "({i},{j}) {} > {bound}", g.get(i, j));
            }
        }
    }

    #[test]
    fn l2_criterion_examples() {
        let cover = Arc::new(build_uniform_cover(1, 1.0, 6).unwrap());
        let grid = cover.safe_grid(801);
        let tight = StructuredSystem::new(cover.clone(), Arc::new(Generator::tight_bump(1)), 0.5).unwrap();
        let c = l2_criterion(&tight, FrequencyWeight::Constant, &grid, 6.0).unwrap();
        assert!(c.lhs < 1e-15 && c.satisfied && (c.a_raw - 2.0).abs() < 1e-12, "{c:?}");
        let painless =
            StructuredSystem::new(cover.clone(), Arc::new(Generator::compact_bump(1, 0.4).unwrap()), 1.0).unwrap();
        assert_eq!(l2_criterion(&painless, FrequencyWeight::Constant, &grid, 6.0).unwrap().lhs, 0.0);
        let gauss = gaussian_system(6, 0.5);
        let c = l2_criterion(&gauss, FrequencyWeight::Constant, &grid, 8.0).unwrap();
        assert!(c.satisfied && !c.inconclusive && c.lhs > 0.0, "{c:?}");
        // Larger δ brings the lattice points closer and the criterion fails.
        let coarse = gaussian_system(6, 1.0);
        let c1 = l2_criterion(&coarse, FrequencyWeight::Constant, &grid, 8.0).unwrap();
        assert!(c1.lhs > c.lhs);
        // A truncation radius below the lattice spacing leaves only α = 0.
        let c = l2_criterion(&gauss, FrequencyWeight::Constant, &grid, 1.0).unwrap();
        assert_eq!((c.lhs, c.lattice_points), (0.0, 1));
        let w = l2_criterion(&gauss, FrequencyWeight::Polynomial { s: 1.0 }, &grid, 8.0).unwrap();
        assert!(w.lhs >= l2_criterion(&gauss, FrequencyWeight::Constant, &grid, 8.0).unwrap().lhs);
    }
}
