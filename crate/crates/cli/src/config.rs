//! Run configuration files. Unknown keys are rejected; every semantic
//! violation names the offending field.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use framecert::alphamod::AlphaModScenario;
use framecert::cover::{
    build_alpha_modulation_cover, build_dyadic_cover, build_uniform_cover, moderate_weight, Cover, Weight,
    WeightFamily,
};
use framecert::numerics::QuadratureRule;
use framecert::system::{Generator, GeneratorSpec, StructuredSystem};
use framecert::walnut::FreqGrid;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const CONFIG_VERSION: u32 = 1;

/// Malformed or invalid configuration (exit code 64).
#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for SchemaError {}

fn field(name: &str, msg: impl std::fmt::Display) -> SchemaError {
    SchemaError(format!("field `{name}`: {msg}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoverSpec {
    Uniform {
        d: usize,
        r: f64,
        index_radius: i64,
    },
    Dyadic {
        d: usize,
        min_scale: i64,
        max_scale: i64,
    },
    AlphaModulation {
        d: usize,
        alpha: f64,
        /// Smallest tabulated covering radius if absent.
        #[serde(default)]
        r: Option<f64>,
        index_radius: i64,
    },
}

impl CoverSpec {
    pub fn dim(&self) -> usize {
        match self {
            CoverSpec::Uniform { d, .. } | CoverSpec::Dyadic { d, .. } | CoverSpec::AlphaModulation { d, .. } => *d,
        }
    }

    pub fn build(&self) -> framecert::Result<Cover> {
        match self {
            CoverSpec::Uniform { d, r, index_radius } => build_uniform_cover(*d, *r, *index_radius),
            CoverSpec::Dyadic { d, min_scale, max_scale } => build_dyadic_cover(*d, *min_scale, *max_scale),
            CoverSpec::AlphaModulation { d, alpha, r, index_radius } => {
                let r = match r {
                    Some(r) => *r,
                    None => framecert::alphamod::default_r(*d, *alpha)?,
                };
                build_alpha_modulation_cover(*d, *alpha, r, *index_radius)
            }
        }
    }
}

/// `δ` as a number or `"auto"` (certify at `0.99 δ_max`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DeltaSpec {
    #[default]
    Auto,
    Value(f64),
}

impl Serialize for DeltaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            DeltaSpec::Auto => s.serialize_str("auto"),
            DeltaSpec::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for DeltaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(DeltaSpec::Value(v)),
            Repr::Str(s) if s == "auto" => Ok(DeltaSpec::Auto),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"auto\", got \"{s}\""))),
        }
    }
}

/// An exponent in `[1, ∞]`, written as a number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponent(pub f64);

impl Default for Exponent {
    fn default() -> Self {
        Exponent(2.0)
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Exponent(v)),
            Repr::Str(s) if s == "inf" || s == "∞" => Ok(Exponent(f64::INFINITY)),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got \"{s}\""))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub halfwidth: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSpec {
    /// `Λ` radius; the generator extent if absent.
    #[serde(default)]
    pub alpha_max: Option<f64>,
    /// `k` radius of direct application; chosen per generator if absent.
    #[serde(default)]
    pub kmax: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// Modulated Gaussian bumps.
    #[default]
    Gaussian,
    /// Smooth bumps around the cover centres, vanishing between them.
    Painless,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub kind: SignalKind,
    /// Gaussian centres lie in `[−c, c]^d`; default keeps them clear of the
    /// boundary margin.
    #[serde(default)]
    pub centre_range: Option<f64>,
    /// Support radius of painless bumps.
    #[serde(default = "default_bump_radius")]
    pub bump_radius: f64,
}

fn default_count() -> usize {
    20
}

fn default_bump_radius() -> f64 {
    0.35
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            count: default_count(),
            kind: SignalKind::default(),
            centre_range: None,
            bump_radius: default_bump_radius(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvertMode {
    #[default]
    Walnut,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertSpec {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub mode: InvertMode,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    50
}

impl Default for InvertSpec {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            mode: InvertMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory, relative to the working directory; `--out` wins.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Also write the `Ŷ`/`Ỹ` matrices as CSV.
    #[serde(default)]
    pub matrices: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub cover: CoverSpec,
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub weight: Option<WeightFamily>,
    #[serde(default)]
    pub delta: DeltaSpec,
    #[serde(default)]
    pub p: Exponent,
    #[serde(default)]
    pub q: Exponent,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub truncation: TruncationSpec,
    #[serde(default)]
    pub quadrature: Option<QuadratureRule>,
    #[serde(default)]
    pub calderon_grid: Option<usize>,
    #[serde(default)]
    pub adaptedness: bool,
    #[serde(default)]
    pub signals: SignalSpec,
    #[serde(default)]
    pub invert: InvertSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub seed: u64,
}

/// Scenario file of the `alphamod` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaModConfig {
    pub version: u32,
    pub scenario: AlphaModScenario,
    #[serde(default)]
    pub p: Exponent,
    #[serde(default)]
    pub q: Exponent,
    #[serde(default)]
    pub quadrature: Option<QuadratureRule>,
    #[serde(default)]
    pub calderon_grid: Option<usize>,
    #[serde(default)]
    pub output: OutputSpec,
}

/// A parsed configuration with the bytes it came from.
pub struct Loaded<T> {
    pub config: T,
    pub hash: String,
    pub base_dir: PathBuf,
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Loaded<T>, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|e| SchemaError(format!("cannot read {}: {e}", path.display())))?;
    let config: T = serde_json::from_str(&text).map_err(|e| SchemaError(format!("{}: {e}", path.display())))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded {
        config,
        hash: framecert::fingerprint(text.as_bytes()),
        base_dir,
    })
}

fn check_exponent(name: &str, e: Exponent) -> Result<(), SchemaError> {
    if !(e.0 >= 1.0) {
        return Err(field(name, format!("must lie in [1, inf], got {}", e.0)));
    }
    Ok(())
}

fn check_version(v: u32) -> Result<(), SchemaError> {
    if v != CONFIG_VERSION {
        return Err(field("version", format!("unsupported version {v}, expected {CONFIG_VERSION}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Loaded<Self>, SchemaError> {
        let loaded: Loaded<Self> = parse(path)?;
        loaded.config.validate()?;
        Ok(loaded)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        check_version(self.version)?;
        let d = self.cover.dim();
        if d == 0 || d > 3 {
            return Err(field("cover.d", format!("must be 1, 2 or 3, got {d}")));
        }
        if let DeltaSpec::Value(v) = self.delta {
            if !(v > 0.0) || !v.is_finite() {
                return Err(field("delta", format!("must be positive or \"auto\", got {v}")));
            }
        }
        check_exponent("p", self.p)?;
        check_exponent("q", self.q)?;
        if let Some(g) = self.grid {
            if g.n < 8 || g.n % 2 != 0 {
                return Err(field("grid.n", format!("must be even and at least 8, got {}", g.n)));
            }
            if !(g.halfwidth > 0.0) {
                return Err(field("grid.halfwidth", format!("must be positive, got {}", g.halfwidth)));
            }
        }
        if let Some(a) = self.truncation.alpha_max {
            if !(a > 0.0) {
                return Err(field("truncation.alpha_max", format!("must be positive, got {a}")));
            }
        }
        if self.truncation.kmax == Some(0) {
            return Err(field("truncation.kmax", "must be at least 1"));
        }
        if let Some(r) = self.quadrature {
            if r.order == 0 || r.resolution == 0 {
                return Err(field("quadrature", "order and resolution must be positive"));
            }
        }
        if self.calderon_grid.is_some_and(|n| n < 2) {
            return Err(field("calderon_grid", "needs at least 2 points per axis"));
        }
        if self.signals.count == 0 {
            return Err(field("signals.count", "must be at least 1"));
        }
        if !(self.signals.bump_radius > 0.0) {
            return Err(field("signals.bump_radius", "must be positive"));
        }
        if !(self.invert.tol > 0.0) {
            return Err(field("invert.tol", "must be positive"));
        }
        Ok(())
    }

    pub fn cover(&self) -> framecert::Result<Arc<Cover>> {
        Ok(Arc::new(self.cover.build()?))
    }

    pub fn generator(&self, base_dir: &Path) -> framecert::Result<Arc<Generator>> {
        Ok(Arc::new(Generator::from_spec(&self.generator, self.cover.dim(), base_dir)?))
    }

    /// The system at the configured `δ` (`1` when automatic).
    pub fn system(&self, base_dir: &Path) -> framecert::Result<StructuredSystem> {
        let delta = match self.delta {
            DeltaSpec::Auto => 1.0,
            DeltaSpec::Value(v) => v,
        };
        StructuredSystem::new(self.cover()?, self.generator(base_dir)?, delta)
    }

    pub fn weight(&self, cover: &Cover) -> framecert::Result<Option<Weight>> {
        match self.weight {
            None | Some(WeightFamily::Constant) => Ok(None),
            Some(f) => Ok(Some(moderate_weight(f, cover)?)),
        }
    }

    pub fn grid(&self) -> Result<FreqGrid, SchemaError> {
        let g = self.grid.ok_or_else(|| field("grid", "required by this command"))?;
        FreqGrid::new(self.cover.dim(), g.halfwidth, g.n).map_err(|e| field("grid", e))
    }
}

impl AlphaModConfig {
    pub fn load(path: &Path) -> Result<Loaded<Self>, SchemaError> {
        let loaded: Loaded<Self> = parse(path)?;
        let c = &loaded.config;
        check_version(c.version)?;
        check_exponent("p", c.p)?;
        check_exponent("q", c.q)?;
        c.scenario.validate().map_err(|e| field("scenario", e))?;
        Ok(loaded)
    }
}
