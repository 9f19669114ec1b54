//! Experiment configuration: a JSON document with a versioned schema.
//!
//! Unknown keys are rejected everywhere. Semantic checks run in
//! [`ExperimentConfig::validate`] before any computation and report the
//! offending field path.

use adx::continuum::CtrLaw;
use adx::{TypeDistribution, WelfareWeight};
use serde::Deserialize;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// When present, must name the subcommand being run.
    #[serde(default)]
    pub command: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub distribution: DistSpec,
    #[serde(default)]
    pub eta: EtaSpec,
    #[serde(default)]
    pub finite: Option<FiniteSpec>,
    #[serde(default)]
    pub stylized: Option<StylizedSpec>,
    #[serde(default)]
    pub continuum: Option<ContinuumSpec>,
    #[serde(default)]
    pub large_market: Option<LargeMarketSpec>,
    #[serde(default)]
    pub verify: Option<VerifySpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    #[default]
    Uniform,
    Beta {
        a: f64,
        b: f64,
    },
    PiecewiseCdf {
        knots: Vec<(f64, f64)>,
    },
}

impl DistSpec {
    pub fn build(&self, path: &str) -> Result<TypeDistribution, CliError> {
        match self {
            DistSpec::Uniform => Ok(TypeDistribution::uniform()),
            DistSpec::Beta { a, b } => TypeDistribution::beta(*a, *b),
            DistSpec::PiecewiseCdf { knots } => TypeDistribution::piecewise_cdf(knots),
        }
        .map_err(|e| CliError::at(path, e))
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaSpec {
    pub eta_w: f64,
    pub eta_v: f64,
    pub eta_r: f64,
}

impl Default for EtaSpec {
    fn default() -> Self {
        Self {
            eta_w: 0.0,
            eta_v: 0.0,
            eta_r: 1.0,
        }
    }
}

impl EtaSpec {
    pub fn build(&self) -> Result<WelfareWeight, CliError> {
        WelfareWeight::new(self.eta_v, self.eta_w, self.eta_r).map_err(|e| CliError::at("eta", e))
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CtrLawSpec {
    #[default]
    Uniform,
    UniformRange {
        lo: f64,
        hi: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
    PiecewiseCdf {
        knots: Vec<(f64, f64)>,
    },
}

impl CtrLawSpec {
    pub fn build(&self, path: &str) -> Result<CtrLaw, CliError> {
        match self {
            CtrLawSpec::Uniform => CtrLaw::uniform(0.0, 1.0),
            CtrLawSpec::UniformRange { lo, hi } => CtrLaw::uniform(*lo, *hi),
            CtrLawSpec::Beta { a, b } => CtrLaw::beta(*a, *b),
            CtrLawSpec::PiecewiseCdf { knots } => CtrLaw::piecewise_cdf(knots),
        }
        .map_err(|e| CliError::at(path, e))
    }
}

/// `steps` evenly spaced points from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl Axis {
    pub fn points(&self, path: &str) -> Result<Vec<f64>, CliError> {
        if self.steps == 0 || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(CliError::schema(path, "need finite start/stop and steps >= 1"));
        }
        if self.steps == 1 {
            return Ok(vec![self.start]);
        }
        let h = (self.stop - self.start) / (self.steps - 1) as f64;
        Ok((0..self.steps).map(|k| self.start + h * k as f64).collect())
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationSpec {
    #[default]
    Exact,
    GaussLegendre,
    MonteCarlo,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TieSpec {
    Even,
    Weights(Vec<f64>),
}

fn default_grid() -> usize {
    201
}

fn default_mc_draws() -> usize {
    200_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSpec {
    /// CTR vectors, one per customer profile.
    pub profiles: Vec<Vec<f64>>,
    /// `masses[k][i]`: mass of profile `k` owned by merchant `i`.
    pub masses: Vec<Vec<f64>>,
    /// Ironing level per merchant.
    pub z: Vec<f64>,
    /// Tie rule per profile; even split when absent.
    #[serde(default)]
    pub ties: Option<Vec<TieSpec>>,
    /// Per-merchant type laws; the top-level distribution when absent.
    #[serde(default)]
    pub distributions: Option<Vec<DistSpec>>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub integration: IntegrationSpec,
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSpec {
    pub alpha1_01: f64,
    pub alpha2_10: f64,
    pub alpha1_11: f64,
    pub alpha2_11: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StylizedMode {
    Benchmarks,
    Bundling,
    Instance,
    Sweep,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StylizedSpec {
    pub mode: StylizedMode,
    /// Bundling: inclusive mass `α(1,1)`.
    #[serde(default)]
    pub alpha11: Option<f64>,
    /// Bundling: transfer-table grid size.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Instance: dataset.
    #[serde(default)]
    pub alpha: Option<AlphaSpec>,
    /// Sweep: axis for both `β_1` and `β_2`; pairs with `β_1 + β_2 > 1`
    /// are skipped.
    #[serde(default)]
    pub beta: Option<Axis>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuumMode {
    Solve,
    CtrFloor,
    Zn,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuumSpec {
    pub mode: ContinuumMode,
    /// Solve: merchant masses `λ`.
    #[serde(default)]
    pub lambda: Option<Vec<f64>>,
    /// Solve: `laws[k][c]` is the CTR law on merchant `c`'s ad among merchant `k`'s customers.
    #[serde(default)]
    pub laws: Option<Vec<Vec<CtrLawSpec>>>,
    /// ctr_floor: lower end `ε` of `ω ~ U[ε, 1]`.
    #[serde(default)]
    pub eps: Option<Axis>,
    /// ctr_floor: values of `λ_1`.
    #[serde(default)]
    pub lambda1: Option<Vec<f64>>,
    /// Zn: market sizes.
    #[serde(default)]
    pub n: Option<Vec<usize>>,
    /// Zn: common CTR law.
    #[serde(default)]
    pub law: Option<CtrLawSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LargeMarketMode {
    Design,
    AreSweep,
    FiniteN,
}

fn default_zeta() -> (f64, f64) {
    (0.0, 1.0)
}

fn default_delta() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LargeMarketSpec {
    pub mode: LargeMarketMode,
    /// Design: `μ̄`.
    #[serde(default)]
    pub mean_ctr: Option<f64>,
    /// Total-surplus weights `(ζ_w, ζ_v)`.
    #[serde(default = "default_zeta")]
    pub zeta: (f64, f64),
    /// ARE sweep: `μ̄` axis.
    #[serde(default)]
    pub mu: Option<Axis>,
    /// ARE sweep: `η_r` values; `η_v = 1 − η_r`, `η_w = 0`.
    #[serde(default)]
    pub eta_r: Option<Vec<f64>>,
    /// Finite N: market sizes.
    #[serde(default)]
    pub n: Option<Vec<usize>>,
    /// Finite N: common CTR law.
    #[serde(default)]
    pub law: Option<CtrLawSpec>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedMechanism {
    PartnershipDissolution,
    BilateralTrade,
    MonopolyPricing,
    /// The exclusive-priority solution of `verify.alpha`.
    Stylized,
    /// The `finite` section.
    Finite,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptSpec {
    pub merchant: usize,
    pub center: f64,
    pub height: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BruteSpec {
    #[serde(default = "default_type_grid")]
    pub type_grid: usize,
    #[serde(default = "default_z_grid")]
    pub z_grid: usize,
}

fn default_type_grid() -> usize {
    21
}

fn default_z_grid() -> usize {
    11
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub mechanism: NamedMechanism,
    #[serde(default)]
    pub alpha: Option<AlphaSpec>,
    #[serde(default)]
    pub ic_eps: Option<f64>,
    #[serde(default)]
    pub ir_eps: Option<f64>,
    #[serde(default)]
    pub envelope_tol: Option<f64>,
    #[serde(default)]
    pub saddle_tol: Option<f64>,
    #[serde(default)]
    pub samples: Option<usize>,
    /// Raise one merchant's transfers by a bump before checking IC.
    #[serde(default)]
    pub corrupt: Option<CorruptSpec>,
    /// Also compare with the brute-force max-min value (two merchants).
    #[serde(default)]
    pub brute_force: Option<BruteSpec>,
}

impl ExperimentConfig {
    /// Parse and validate. Every error names a field path.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::schema(if path == "." { "(root)" } else { &path }, &e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::schema(
                "schema_version",
                &format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        self.eta.build()?;
        self.distribution.build("distribution")?;
        Ok(())
    }

    pub fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::schema(name, "section is required by this subcommand"))
    }
}

/// A required field inside a section.
pub fn required<'a, T>(value: &'a Option<T>, path: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::schema(path, "field is required in this mode"))
}
