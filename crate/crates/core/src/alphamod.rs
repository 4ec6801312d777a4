//! The α-modulation scenario: cover `A_j = |j|^{α₀} id`, `b_j = |j|^{α₀} j`
//! with `α₀ = α/(1−α)`, a single generator dilated along it, and the decay
//! threshold `N > 4d + 3 + τ`, `τ = (4αd + 3α + s₀)/(1−α)`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::certificate::{certify_with_pairs, Certificate, CertifyOptions, PairMatrices};
use crate::cover::{build_alpha_modulation_cover, moderate_weight, Cover, WeightFamily};
use crate::error::{Error, Result};
use crate::system::{decay_fit, DecayFit, Generator, GeneratorSpec, StructuredSystem};

/// M_1 may change by at most this much when the index radius is doubled.
pub const M1_TRUNCATION_TOLERANCE: f64 = 0.02;

/// Radius and sample count of the generator decay fit.
pub const DECAY_FIT_RADIUS: f64 = 200.0;
pub const DECAY_FIT_SAMPLES: usize = 64;

/// Smallest base radius `r` (in steps of 1/4) for which the cover passes the
/// covering check, by dimension and `α`. Generated with [`search_r`].
pub const R_TABLE: &[(usize, f64, f64)] = &[
    (1, 0.0, 0.75),
    (1, 0.25, 1.25),
    (1, 0.5, 1.5),
    (1, 0.75, 2.75),
    (2, 0.0, 1.0),
    (2, 0.25, 1.25),
    (2, 0.5, 1.5),
    (2, 0.75, 2.75),
];

fn zero() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaModScenario {
    pub d: usize,
    pub alpha: f64,
    /// Base ball radius; the tabulated smallest covering radius if absent.
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default = "zero")]
    pub s0: f64,
    /// Weight exponent, `|s| ≤ s₀`.
    #[serde(default = "zero")]
    pub s: f64,
    pub generator: GeneratorSpec,
    pub index_radius: i64,
    /// Sampling density `δ`; `None` certifies at `0.99 δ_max`.
    #[serde(default)]
    pub delta: Option<f64>,
}

impl AlphaModScenario {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("α must lie in [0, 1), got {}", self.alpha)));
        }
        if !(self.s0 >= 0.0) || self.s.abs() > self.s0 {
            return Err(Error::InvalidArgument(format!(
                "need s₀ ≥ 0 and |s| ≤ s₀, got s₀ = {}, s = {}",
                self.s0, self.s
            )));
        }
        if self.index_radius < 1 {
            return Err(Error::InvalidArgument("index radius must be at least 1".into()));
        }
        Ok(())
    }

    /// `α₀ = α/(1−α)`
    pub fn alpha0(&self) -> f64 {
        self.alpha / (1.0 - self.alpha)
    }

    /// `τ = (4αd + 3α + s₀)/(1−α)`
    pub fn tau(&self) -> f64 {
        (4.0 * self.alpha * self.d as f64 + 3.0 * self.alpha + self.s0) / (1.0 - self.alpha)
    }

    /// `4d + 3 + τ`
    pub fn required_decay(&self) -> f64 {
        required_decay(self)
    }

    pub fn radius(&self) -> Result<f64> {
        match self.r {
            Some(r) => Ok(r),
            None => default_r(self.d, self.alpha),
        }
    }

    pub fn weight_family(&self) -> WeightFamily {
        if self.s == 0.0 {
            WeightFamily::Constant
        } else {
            WeightFamily::AlphaModulation {
                alpha: self.alpha,
                s: self.s,
            }
        }
    }

    pub fn cover(&self) -> Result<Cover> {
        let r = self.radius()?;
        build_alpha_modulation_cover(self.d, self.alpha, r, self.index_radius).map_err(|e| match e {
            Error::NotCovered { point, detail } => Error::NotCovered {
                point,
                detail: format!(
                    "{detail}; the α-modulation cover needs r ≥ r₀(d, α) and r = {r} is too small for d = {}, α = {}",
                    self.d, self.alpha
                ),
            },
            other => other,
        })
    }
}

/// `4d + 3 + τ`
pub fn required_decay(scenario: &AlphaModScenario) -> f64 {
    4.0 * scenario.d as f64 + 3.0 + scenario.tau()
}

/// Tabulated smallest covering radius, or a fresh search for other `(d, α)`.
pub fn default_r(d: usize, alpha: f64) -> Result<f64> {
    if let Some(&(_, _, r)) = R_TABLE.iter().find(|(td, ta, _)| *td == d && (ta - alpha).abs() < 1e-12) {
        return Ok(r);
    }
    search_r(d, alpha, 8)
}

/// Smallest `r ∈ {0.25, 0.5, …, 8}` whose α-modulation cover with the given
/// index radius passes the covering check.
pub fn search_r(d: usize, alpha: f64, index_radius: i64) -> Result<f64> {
    for step in 1..=32 {
        let r = 0.25 * step as f64;
        match build_alpha_modulation_cover(d, alpha, r, index_radius) {
            Ok(_) => return Ok(r),
            Err(Error::NotCovered { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::InvalidArgument(format!("no covering radius up to 8 for d = {d}, α = {alpha}")))
}

/// Maximum of `Ŷ_{i,j}` over label pairs at distance `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub offset: usize,
    pub max: f64,
}

/// Anti-diagonal envelope `k ↦ max_{|i−j| = k} Ŷ_{i,j}` over the non-edge
/// rows, `|i−j|` the Euclidean label distance rounded to an integer.
pub fn yhat_envelope(cover: &Cover, pairs: &PairMatrices) -> Vec<EnvelopePoint> {
    let mut env: BTreeMap<usize, f64> = BTreeMap::new();
    for &i in &pairs.sup_labels {
        let li = &cover.element(i).label.0;
        for j in 0..cover.len() {
            let lj = &cover.element(j).label.0;
            let dist = li
                .iter()
                .zip(lj)
                .map(|(a, b)| ((a - b) * (a - b)) as f64)
                .sum::<f64>()
                .sqrt()
                .round() as usize;
            let e = env.entry(dist).or_insert(0.0);
            *e = e.max(pairs.yhat.get(i, j));
        }
    }
    env.into_iter().map(|(offset, max)| EnvelopePoint { offset, max }).collect()
}

/// Least-squares slope of `log max` against `log(1 + offset)` over the
/// positive offsets with a nonzero envelope.
pub fn envelope_slope(envelope: &[EnvelopePoint]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = envelope
        .iter()
        .filter(|e| e.offset >= 1 && e.max > 0.0)
        .map(|e| ((1.0 + e.offset as f64).ln(), e.max.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Envelope non-increasing in the offset (from offset 1 on), up to a relative
/// slack for quadrature noise.
pub fn envelope_decreasing(envelope: &[EnvelopePoint]) -> bool {
    let tail: Vec<f64> = envelope.iter().filter(|e| e.offset >= 1).map(|e| e.max).collect();
    tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9))
}

pub fn write_envelope_csv<W: Write>(envelope: &[EnvelopePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["offset", "yhat_max"])?;
    for e in envelope {
        w.write_record([e.offset.to_string(), format!("{:e}", e.max)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaModReport {
    pub scenario: AlphaModScenario,
    pub r: f64,
    pub alpha0: f64,
    pub tau: f64,
    pub required_decay: f64,
    pub decay: DecayFit,
    /// The fitted decay does not exceed the required one: the sufficient
    /// condition is unmet and the certificate is for information only.
    pub below_threshold: bool,
    pub certificate: Certificate,
    pub envelope: Vec<EnvelopePoint>,
    pub envelope_slope: Option<f64>,
    pub envelope_decreasing: bool,
    /// Relative change of M_1 when the index radius is doubled.
    pub m1_truncation_change: Option<f64>,
    pub m1_truncation_stable: Option<bool>,
    /// `c` with `|ĝ| ≥ c` on the base ball of radius `r`.
    pub lower_c: Option<f64>,
    /// `A′ ≥ c²`
    pub lower_bound_holds: Option<bool>,
    pub notes: Vec<String>,
}

/// Certificate of the scenario plus the qualitative checks: decay above the
/// threshold, decreasing `Ŷ` envelope, M_1 stable under truncation doubling,
/// and `A′ ≥ c²`.
pub fn run_scenario(
    scenario: &AlphaModScenario,
    p: f64,
    q: f64,
    opts: &CertifyOptions,
    base_dir: &Path,
) -> Result<AlphaModReport> {
    scenario.validate()?;
    let r = scenario.radius()?;
    let cover = Arc::new(scenario.cover()?);
    let generator = Arc::new(Generator::from_spec(&scenario.generator, scenario.d, base_dir)?);
    let decay = decay_fit(&generator, DECAY_FIT_RADIUS, DECAY_FIT_SAMPLES)?;
    let required = scenario.required_decay();
    let below_threshold = !(decay.n_emp > required);
    let family = scenario.weight_family();
    let weight = match family {
        WeightFamily::Constant => None,
        f => Some(moderate_weight(f, &cover)?),
    };
    let system = StructuredSystem::new(cover.clone(), generator.clone(), scenario.delta.unwrap_or(1.0))?;
    let mut opts = opts.clone();
    opts.auto_delta = scenario.delta.is_none();
    opts.weight_family = Some(family);
    let (certificate, pairs) = certify_with_pairs(&system, weight.as_ref(), p, q, &opts)?;

    let envelope = yhat_envelope(&cover, &pairs);
    let slope = envelope_slope(&envelope);
    let decreasing = envelope_decreasing(&envelope);
    let m1_change = certificate.truncation_doubling.relative_changes.get("m1").copied();

    let lower_c = match generator.lower {
        Some(l) if l.r >= r => Some(l.c),
        _ => generator.radial_lower_bound(r),
    };
    let lower_bound_holds = lower_c.map(|c| certificate.a_prime >= c * c * (1.0 - 1e-12));

    let mut notes = Vec::new();
    if below_threshold {
        notes.push(format!(
            "below threshold: fitted decay N = {decay} does not exceed 4d + 3 + τ = {required}"
        ));
    }
    notes.push("the α-local integrability condition is assumed, not verified".into());
    if lower_c.is_none() {
        notes.push("no lower bound |ĝ| ≥ c on the base ball is known for this generator".into());
    }

    Ok(AlphaModReport {
        scenario: scenario.clone(),
        r,
        alpha0: scenario.alpha0(),
        tau: scenario.tau(),
        required_decay: required,
        decay,
        below_threshold,
        certificate,
        envelope,
        envelope_slope: slope,
        envelope_decreasing: decreasing,
        m1_truncation_change: m1_change,
        m1_truncation_stable: m1_change.map(|c| c < M1_TRUNCATION_TOLERANCE),
        lower_c,
        lower_bound_holds,
        notes,
    })
}
