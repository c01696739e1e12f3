//! Declarative experiment descriptions: plain-data mirrors of the
//! mechanism, process, and symbol types with builders into the validated
//! core structures. The mirrors derive serde so any self-describing
//! format can carry them; the command-line runner uses TOML.
//!
//! Every numeric field is a plain `f64`, so values survive a
//! parse-serialize-parse cycle bit for bit (`inf` is a legal float
//! literal). Seeds are mandatory: a configuration that does not pin its
//! seed does not describe a reproducible experiment.

use serde::{Deserialize, Serialize};

use crate::mechanisms::{
    Atom, EnvMechanism, JumpMeasureSpec, NotUpMechanism, SpLpMechanism, StablePart,
    SubordinatorMechanism,
};
use crate::paths::{CompensatedPair, ProcessSpec, SimConfig, UncompensatedPair};
use crate::symbols::{
    BivariateAtom, BivariateProduct, BivariateTerm, ConventionPair, InfZeroConvention,
    LdsSymbol, MixtureFamily, MixtureSpec, ZeroInfConvention,
};
use crate::{Error, Result};

fn one() -> f64 {
    1.0
}

fn default_mixture_nodes() -> usize {
    256
}

/// Stable density `scale·u^{−1−alpha}` on `(0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableConfig {
    pub alpha: f64,
    pub scale: f64,
}

fn build_measure(floor: f64, atoms: &[[f64; 2]], stable: &Option<StableConfig>) -> JumpMeasureSpec {
    JumpMeasureSpec {
        atoms: atoms.iter().map(|&[location, mass]| Atom::new(location, mass)).collect(),
        stable: stable.map(|s| StablePart { alpha: s.alpha, scale: s.scale }),
        support_floor: floor,
    }
}

/// One-sided jump measure without scalar parts, used inside bivariate
/// product terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stable: Option<StableConfig>,
}

impl MeasureConfig {
    pub fn build(&self) -> JumpMeasureSpec {
        build_measure(0.0, &self.atoms, &self.stable)
    }
}

/// Branching exponent: jumps plus `a y² − b y − c`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpLpConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stable: Option<StableConfig>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SpLpConfig {
    pub fn build(&self) -> SpLpMechanism {
        SpLpMechanism {
            measure: build_measure(0.0, &self.atoms, &self.stable),
            a: self.a,
            b: self.b,
            c: self.c,
        }
    }
}

/// Subordinator exponent: jumps plus `d y + c`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubordinatorConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stable: Option<StableConfig>,
    pub d: f64,
    pub c: f64,
}

impl SubordinatorConfig {
    pub fn build(&self) -> SubordinatorMechanism {
        SubordinatorMechanism {
            measure: build_measure(0.0, &self.atoms, &self.stable),
            d: self.d,
            c: self.c,
        }
    }
}

/// Nonnegative exponent without downward parts: jumps plus `a y² + d y`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NotUpConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stable: Option<StableConfig>,
    pub a: f64,
    pub d: f64,
}

impl NotUpConfig {
    pub fn build(&self) -> NotUpMechanism {
        NotUpMechanism {
            measure: build_measure(0.0, &self.atoms, &self.stable),
            a: self.a,
            d: self.d,
        }
    }
}

/// Environment exponent: jumps supported on `[−1, ∞)` plus `a z² − b z − c`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stable: Option<StableConfig>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EnvConfig {
    pub fn build(&self) -> EnvMechanism {
        EnvMechanism {
            measure: build_measure(-1.0, &self.atoms, &self.stable),
            a: self.a,
            b: self.b,
            c: self.c,
        }
    }
}

/// One compensated rate/jump pair of a decomposable process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompensatedPairConfig {
    pub rate: NotUpConfig,
    pub jumps: NotUpConfig,
}

/// One uncompensated rate/jump pair of a decomposable process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncompensatedPairConfig {
    pub rate: SubordinatorConfig,
    pub jumps: SubordinatorConfig,
}

/// A process description, dispatching on the `kind` token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessConfig {
    Cb { psi: SpLpConfig },
    Subordinator { phi: SubordinatorConfig },
    KilledConstant { phi: SubordinatorConfig },
    DeterministicFlow { psi: SpLpConfig },
    KilledFlow { psi: SpLpConfig, phi: SubordinatorConfig },
    Cbc { psi: SpLpConfig, sigma: NotUpConfig },
    DiffusionDual { sigma: NotUpConfig, psi: SpLpConfig },
    Cbci { psi: SpLpConfig, sigma: NotUpConfig, phi: SubordinatorConfig },
    CbciDual { sigma: NotUpConfig, psi: SpLpConfig, phi: SubordinatorConfig },
    Cbre { psi: SpLpConfig, kappa: EnvConfig },
    CbreDual { psi: SpLpConfig, kappa: EnvConfig },
    Decomposable {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        compensated: Vec<CompensatedPairConfig>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        uncompensated: Vec<UncompensatedPairConfig>,
    },
}

impl ProcessConfig {
    pub fn build(&self) -> ProcessSpec {
        match self {
            ProcessConfig::Cb { psi } => ProcessSpec::Cb { psi: psi.build() },
            ProcessConfig::Subordinator { phi } => {
                ProcessSpec::Subordinator { phi: phi.build() }
            }
            ProcessConfig::KilledConstant { phi } => {
                ProcessSpec::KilledConstant { phi: phi.build() }
            }
            ProcessConfig::DeterministicFlow { psi } => {
                ProcessSpec::DeterministicFlow { psi: psi.build() }
            }
            ProcessConfig::KilledFlow { psi, phi } => {
                ProcessSpec::KilledFlow { psi: psi.build(), phi: phi.build() }
            }
            ProcessConfig::Cbc { psi, sigma } => {
                ProcessSpec::Cbc { psi: psi.build(), sigma: sigma.build() }
            }
            ProcessConfig::DiffusionDual { sigma, psi } => {
                ProcessSpec::DiffusionDual { sigma: sigma.build(), psi: psi.build() }
            }
            ProcessConfig::Cbci { psi, sigma, phi } => {
                ProcessSpec::Cbci { psi: psi.build(), sigma: sigma.build(), phi: phi.build() }
            }
            ProcessConfig::CbciDual { sigma, psi, phi } => {
                ProcessSpec::CbciDual { sigma: sigma.build(), psi: psi.build(), phi: phi.build() }
            }
            ProcessConfig::Cbre { psi, kappa } => {
                ProcessSpec::Cbre { psi: psi.build(), kappa: kappa.build() }
            }
            ProcessConfig::CbreDual { psi, kappa } => {
                ProcessSpec::CbreDual { psi: psi.build(), kappa: kappa.build() }
            }
            ProcessConfig::Decomposable { compensated, uncompensated } => {
                ProcessSpec::Decomposable {
                    compensated: compensated
                        .iter()
                        .map(|p| CompensatedPair { rate: p.rate.build(), jumps: p.jumps.build() })
                        .collect(),
                    uncompensated: uncompensated
                        .iter()
                        .map(|p| UncompensatedPair {
                            rate: p.rate.build(),
                            jumps: p.jumps.build(),
                        })
                        .collect(),
                }
            }
        }
    }
}

/// The two slots of a comparison; single-process experiments use `x`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessTable {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<ProcessConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<ProcessConfig>,
}

/// A product term `weight · (left ⊗ right)` of a bivariate measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BivariateProductConfig {
    pub left: MeasureConfig,
    pub right: MeasureConfig,
    #[serde(default = "one")]
    pub weight: f64,
}

/// A parametric mixing integral, dispatching on the `family` token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MixtureConfig {
    StablePowers {
        #[serde(default = "default_mixture_nodes")]
        quadrature_nodes: usize,
        #[serde(default = "one")]
        weight: f64,
        #[serde(default)]
        transposed: bool,
    },
    GammaLog {
        gamma: f64,
        #[serde(default = "default_mixture_nodes")]
        quadrature_nodes: usize,
        #[serde(default = "one")]
        weight: f64,
        #[serde(default)]
        transposed: bool,
    },
}

impl MixtureConfig {
    pub fn build(&self) -> MixtureSpec {
        let (family, nodes, weight, transposed) = match *self {
            MixtureConfig::StablePowers { quadrature_nodes, weight, transposed } => {
                (MixtureFamily::StablePowers, quadrature_nodes, weight, transposed)
            }
            MixtureConfig::GammaLog { gamma, quadrature_nodes, weight, transposed } => {
                (MixtureFamily::GammaLog { gamma }, quadrature_nodes, weight, transposed)
            }
        };
        MixtureSpec { family, quadrature_nodes: nodes, weight, transposed }
    }
}

/// A bivariate term: atoms as `[v, u, mass]` triples (coordinates may be
/// `inf`), product measures, and at most one mixing integral.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BivariateConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<[f64; 3]>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub products: Vec<BivariateProductConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureConfig>,
}

impl BivariateConfig {
    pub fn build(&self) -> BivariateTerm {
        BivariateTerm {
            atoms: self.atoms.iter().map(|&[v, u, mass]| BivariateAtom::new(v, u, mass)).collect(),
            products: self
                .products
                .iter()
                .map(|p| BivariateProduct {
                    left: p.left.build(),
                    right: p.right.build(),
                    weight: p.weight,
                })
                .collect(),
            mixture: self.mixture.as_ref().map(|m| m.build()),
        }
    }
}

/// A full seven-term symbol; absent parts are zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SymbolConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<SpLpConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<NotUpConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub big_sigma: Option<BivariateConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub big_phi: Option<BivariateConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_hat: Option<NotUpConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi_hat: Option<SpLpConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<EnvConfig>,
}

impl SymbolConfig {
    pub fn build(&self) -> LdsSymbol {
        LdsSymbol {
            psi: self.psi.as_ref().map_or_else(SpLpMechanism::zero, SpLpConfig::build),
            sigma: self.sigma.as_ref().map_or_else(NotUpMechanism::zero, NotUpConfig::build),
            big_sigma: self
                .big_sigma
                .as_ref()
                .map_or_else(BivariateTerm::empty, BivariateConfig::build),
            big_phi: self
                .big_phi
                .as_ref()
                .map_or_else(BivariateTerm::empty, BivariateConfig::build),
            sigma_hat: self
                .sigma_hat
                .as_ref()
                .map_or_else(NotUpMechanism::zero, NotUpConfig::build),
            psi_hat: self.psi_hat.as_ref().map_or_else(SpLpMechanism::zero, SpLpConfig::build),
            kappa: self.kappa.as_ref().map_or_else(EnvMechanism::zero, EnvConfig::build),
        }
    }
}

/// Evaluation grid; which axes are required depends on the experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub y: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub t: Vec<f64>,
}

/// Simulation parameters; the horizon comes from the grid's `t` values,
/// everything else from here. The seed has no default on purpose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimTable {
    pub step: f64,
    pub paths: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explosion_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_jump_cut: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absorption_floor: Option<f64>,
}

impl SimTable {
    pub fn build(&self, horizon: f64) -> SimConfig {
        let mut cfg = SimConfig::new(self.step, horizon, self.paths, self.seed);
        if let Some(cap) = self.explosion_cap {
            cfg.explosion_cap = cap;
        }
        if let Some(cut) = self.small_jump_cut {
            cfg.small_jump_cut = cut;
        }
        if let Some(floor) = self.absorption_floor {
            cfg.absorption_floor = floor;
        }
        cfg
    }
}

/// Which sides of a duality comparison use closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticFlags {
    pub x: bool,
    pub y: bool,
}

/// Pass/fail thresholds; absent gates fall back to the documented
/// defaults of the experiment kind.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatesTable {
    /// Largest tolerated |z| over Monte Carlo rows (duality).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_z: Option<f64>,
    /// Largest tolerated |gap| over rows where both sides are exact
    /// (duality), or the symbol-duality defect (symbol_check).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_gap: Option<f64>,
    /// Largest tolerated |fd − symbol| at the smallest step offset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_gap: Option<f64>,
    /// Largest tolerated semigroup defect (flow).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow_gap: Option<f64>,
    /// Largest tolerated fraction of paths driven to the cap (duality).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_exploded: Option<f64>,
    /// Pointwise noise budget for cm as a multiple of the largest
    /// standard error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    /// Largest tolerated negative-part sup estimate (negative_part).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_negative_part: Option<f64>,
}

/// The experiment dispatch token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Duality,
    Cm,
    GeneratorFd,
    Flow,
    SymbolCheck,
    NegativePart,
}

fn default_convention() -> (ZeroInfConvention, InfZeroConvention) {
    (ZeroInfConvention::ZeroPlusInf, InfZeroConvention::InfZeroPlus)
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub experiment: ExperimentKind,
    /// Path prefix for the report and summary files.
    pub output: String,
    /// Corner conventions as two tokens, e.g. `["0+inf", "inf0+"]`.
    #[serde(default = "default_convention")]
    pub convention: (ZeroInfConvention, InfZeroConvention),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol: Option<SymbolConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticFlags>,
    /// Step offsets for generator_fd, largest to smallest.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offsets: Vec<f64>,
    /// Difference order for cm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    /// Probe-square half size for negative_part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_cap: Option<f64>,
    /// Probe points per axis for negative_part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<GatesTable>,
}

impl ExperimentConfig {
    pub fn convention_pair(&self) -> ConventionPair {
        ConventionPair::new(self.convention.0, self.convention.1)
    }

    pub fn gates(&self) -> GatesTable {
        self.gates.unwrap_or_default()
    }

    pub fn analytic_flags(&self) -> AnalyticFlags {
        self.analytic.unwrap_or_default()
    }

    fn process_x(&self) -> Result<&ProcessConfig> {
        self.process
            .as_ref()
            .and_then(|p| p.x.as_ref())
            .ok_or_else(|| Error::Validation("process.x: required for this experiment".into()))
    }

    fn process_y(&self) -> Result<&ProcessConfig> {
        self.process
            .as_ref()
            .and_then(|p| p.y.as_ref())
            .ok_or_else(|| Error::Validation("process.y: required for this experiment".into()))
    }

    fn symbol_required(&self) -> Result<&SymbolConfig> {
        self.symbol
            .as_ref()
            .ok_or_else(|| Error::Validation("symbol: required for this experiment".into()))
    }

    fn sim_required(&self) -> Result<&SimTable> {
        self.sim
            .as_ref()
            .ok_or_else(|| Error::Validation("sim: required for this experiment".into()))
    }

    fn require_axis(values: &[f64], path: &str) -> Result<()> {
        if values.is_empty() {
            return Err(Error::Validation(format!("{path}: must be nonempty")));
        }
        for &v in values {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Validation(format!(
                    "{path}: values must be in [0,∞], got {v}"
                )));
            }
        }
        Ok(())
    }

    fn check_sim(&self) -> Result<()> {
        let sim = self.sim_required()?;
        if !(sim.step > 0.0) || !sim.step.is_finite() {
            return Err(Error::Validation(format!(
                "sim.step: must be positive finite, got {}",
                sim.step
            )));
        }
        if sim.paths == 0 {
            return Err(Error::Validation("sim.paths: must be at least 1".into()));
        }
        Ok(())
    }

    fn check_process(config: &ProcessConfig, path: &str) -> Result<()> {
        config
            .build()
            .validate()
            .map_err(|e| Error::Validation(format!("{path}: {e}")))
    }

    /// Structural validation: required tables per experiment kind, grid
    /// axes, and every named mechanism. Errors carry the offending
    /// configuration path.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Validation("name: must be nonempty".into()));
        }
        if self.output.is_empty() {
            return Err(Error::Validation("output: must be nonempty".into()));
        }
        if let Some(table) = &self.process {
            if let Some(x) = &table.x {
                Self::check_process(x, "process.x")?;
            }
            if let Some(y) = &table.y {
                Self::check_process(y, "process.y")?;
            }
        }
        if let Some(symbol) = &self.symbol {
            symbol
                .build()
                .validate()
                .map_err(|e| Error::Validation(format!("symbol: {e}")))?;
        }
        match self.experiment {
            ExperimentKind::Duality => {
                self.process_x()?;
                self.process_y()?;
                self.check_sim()?;
                Self::require_axis(&self.grid.x, "grid.x")?;
                Self::require_axis(&self.grid.y, "grid.y")?;
                Self::require_axis(&self.grid.t, "grid.t")?;
            }
            ExperimentKind::Cm => {
                self.process_x()?;
                self.check_sim()?;
                Self::require_axis(&self.grid.x, "grid.x")?;
                Self::require_axis(&self.grid.y, "grid.y")?;
                Self::require_axis(&self.grid.t, "grid.t")?;
                let order = self.order.unwrap_or(4);
                if order == 0 {
                    return Err(Error::Validation("order: must be at least 1".into()));
                }
                if self.grid.x.len() < order + 1 {
                    return Err(Error::Validation(format!(
                        "grid.x: need at least {} points for order {}",
                        order + 1,
                        order
                    )));
                }
            }
            ExperimentKind::GeneratorFd => {
                self.process_x()?;
                self.symbol_required()?;
                self.check_sim()?;
                Self::require_axis(&self.grid.x, "grid.x")?;
                Self::require_axis(&self.grid.y, "grid.y")?;
                Self::require_axis(&self.offsets, "offsets")?;
            }
            ExperimentKind::Flow => {
                let x = self.process_x()?;
                if flow_exponent(x).is_none() {
                    return Err(Error::Validation(
                        "process.x: flow experiments need a kind with a branching exponent"
                            .into(),
                    ));
                }
                Self::require_axis(&self.grid.y, "grid.y")?;
                Self::require_axis(&self.grid.t, "grid.t")?;
            }
            ExperimentKind::SymbolCheck => {
                self.symbol_required()?;
                Self::require_axis(&self.grid.x, "grid.x")?;
                Self::require_axis(&self.grid.y, "grid.y")?;
            }
            ExperimentKind::NegativePart => {
                self.symbol_required()?;
                if let Some(cap) = self.grid_cap {
                    if !(cap > 0.0) || !cap.is_finite() {
                        return Err(Error::Validation(format!(
                            "grid_cap: must be positive finite, got {cap}"
                        )));
                    }
                }
                if let Some(n) = self.grid_n {
                    if n < 2 {
                        return Err(Error::Validation(
                            "grid_n: must be at least 2".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The branching exponent inside a process description, for experiments
/// that integrate the flow directly.
pub fn flow_exponent(config: &ProcessConfig) -> Option<&SpLpConfig> {
    match config {
        ProcessConfig::Cb { psi }
        | ProcessConfig::DeterministicFlow { psi }
        | ProcessConfig::KilledFlow { psi, .. }
        | ProcessConfig::Cbc { psi, .. }
        | ProcessConfig::DiffusionDual { psi, .. }
        | ProcessConfig::Cbci { psi, .. }
        | ProcessConfig::CbciDual { psi, .. }
        | ProcessConfig::Cbre { psi, .. }
        | ProcessConfig::CbreDual { psi, .. } => Some(psi),
        ProcessConfig::Subordinator { .. }
        | ProcessConfig::KilledConstant { .. }
        | ProcessConfig::Decomposable { .. } => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn duality_toml() -> &'static str {
        r#"
name = "subordinator_pair"
experiment = "duality"
output = "out/subordinator_pair"
convention = ["0+inf", "inf0+"]

[process.x]
kind = "subordinator"
[process.x.phi]
atoms = [[1.0, 0.5], [2.0, 0.3]]
d = 0.2

[process.y]
kind = "killed_constant"
[process.y.phi]
atoms = [[1.0, 0.5], [2.0, 0.3]]
d = 0.2

[grid]
x = [0.0, 1.0, 2.0]
y = [0.5, 1.0, 2.0]
t = [0.5, 1.0]

[sim]
step = 1e-3
paths = 100000
seed = 42

[analytic]
y = true

[gates]
max_abs_z = 3.0
"#
    }

    #[test]
    fn duality_config_parses_and_builds() {
        let cfg: ExperimentConfig = toml::from_str(duality_toml()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Duality);
        assert_eq!(cfg.convention_pair(), ConventionPair::default());
        assert!(cfg.analytic_flags().y);
        assert!(!cfg.analytic_flags().x);
        assert_eq!(cfg.gates().max_abs_z, Some(3.0));

        let spec = cfg.process.as_ref().unwrap().x.as_ref().unwrap().build();
        let ProcessSpec::Subordinator { phi } = &spec else {
            panic!("wrong kind: {spec:?}");
        };
        assert_eq!(phi.d, 0.2);
        assert_eq!(phi.measure.atoms.len(), 2);
        assert_eq!(phi.measure.atoms[1].location, 2.0);
        assert_eq!(phi.measure.support_floor, 0.0);
        spec.validate().unwrap();
    }

    #[test]
    fn configs_round_trip_exactly() {
        let cfg: ExperimentConfig = toml::from_str(duality_toml()).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let again: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn awkward_floats_round_trip_exactly() {
        let mut cfg: ExperimentConfig = toml::from_str(duality_toml()).unwrap();
        cfg.grid.x = vec![0.1, 1e-3, 0.30000000000000004, f64::INFINITY];
        cfg.sim.as_mut().unwrap().explosion_cap = Some(1e12);
        let text = toml::to_string(&cfg).unwrap();
        let again: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.grid.x, again.grid.x);
        assert!(again.grid.x[3].is_infinite());
        assert_eq!(cfg, again);
    }

    #[test]
    fn infinity_parses_from_the_float_literal() {
        let cfg: ExperimentConfig =
            toml::from_str(&duality_toml().replace("x = [0.0, 1.0, 2.0]", "x = [0.0, inf]"))
                .unwrap();
        assert!(cfg.grid.x[1].is_infinite());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = duality_toml().replace("name =", "naem =");
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
        let text = format!("{}\nwalltime = 5.0\n", duality_toml());
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        let text = duality_toml().replace("seed = 42\n", "");
        let err = toml::from_str::<ExperimentConfig>(&text).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn convention_tokens_are_checked() {
        let text = duality_toml().replace("\"inf0+\"", "\"inf*0\"");
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
        let text = duality_toml().replace("\"0+inf\"", "\"0inf-\"");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.convention.0, ZeroInfConvention::ZeroInfMinus);
    }

    #[test]
    fn validation_names_the_offending_path() {
        let mut cfg: ExperimentConfig = toml::from_str(duality_toml()).unwrap();
        cfg.process.as_mut().unwrap().y = None;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("process.y"), "{err}");

        let mut cfg: ExperimentConfig = toml::from_str(duality_toml()).unwrap();
        cfg.grid.t.clear();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("grid.t"), "{err}");

        let mut cfg: ExperimentConfig = toml::from_str(duality_toml()).unwrap();
        cfg.sim = None;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("sim"), "{err}");
    }

    #[test]
    fn zero_atom_location_is_reported_with_its_path() {
        let text = duality_toml().replace("atoms = [[1.0, 0.5], [2.0, 0.3]]", "atoms = [[0.0, 0.5]]");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("atom location must be nonzero"), "{msg}");
        assert!(msg.contains("process.x"), "{msg}");
    }

    #[test]
    fn symbol_config_builds_all_seven_terms() {
        let text = r#"
name = "symbol"
experiment = "symbol_check"
output = "out/symbol"

[grid]
x = [0.0, 1.0]
y = [0.0, 1.0]

[symbol.psi]
a = 1.0
[symbol.sigma]
d = 0.5
[symbol.sigma_hat]
a = 0.25
[symbol.psi_hat]
b = -0.5
[symbol.kappa]
atoms = [[-0.5, 0.2]]
[symbol.big_sigma]
atoms = [[1.0, 2.0, 0.3]]
[symbol.big_phi]
atoms = [[inf, 2.0, 0.1]]
[symbol.big_phi.mixture]
family = "gamma_log"
gamma = 0.5
[[symbol.big_phi.products]]
weight = 0.4
[symbol.big_phi.products.left]
atoms = [[0.5, 1.0]]
[symbol.big_phi.products.right]
atoms = [[0.7, 0.2]]
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        let symbol = cfg.symbol.as_ref().unwrap().build();
        symbol.validate().unwrap();
        assert_eq!(symbol.psi.a, 1.0);
        assert_eq!(symbol.kappa.measure.support_floor, -1.0);
        assert!(symbol.big_phi.atoms[0].v.is_infinite());
        assert_eq!(symbol.big_phi.products[0].weight, 0.4);
        let mixture = symbol.big_phi.mixture.as_ref().unwrap();
        assert_eq!(mixture.quadrature_nodes, 256);
        assert_eq!(mixture.family, MixtureFamily::GammaLog { gamma: 0.5 });

        let text = toml::to_string(&cfg).unwrap();
        let again: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn decomposable_config_builds_both_pair_lists() {
        let text = r#"
name = "decomposable"
experiment = "duality"
output = "out/decomposable"

[process.x]
kind = "decomposable"
[[process.x.compensated]]
[process.x.compensated.rate]
atoms = [[1.0, 0.5]]
[process.x.compensated.jumps]
atoms = [[0.8, 0.4]]
[[process.x.uncompensated]]
[process.x.uncompensated.rate]
atoms = [[1.0, 0.6]]
[process.x.uncompensated.jumps]
atoms = [[0.5, 0.7]]

[process.y]
kind = "decomposable"
[[process.y.compensated]]
[process.y.compensated.rate]
atoms = [[0.8, 0.4]]
[process.y.compensated.jumps]
atoms = [[1.0, 0.5]]
[[process.y.uncompensated]]
[process.y.uncompensated.rate]
atoms = [[0.5, 0.7]]
[process.y.uncompensated.jumps]
atoms = [[1.0, 0.6]]

[grid]
x = [1.0]
y = [1.0]
t = [0.5]

[sim]
step = 1e-3
paths = 1000
seed = 9
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        let x = cfg.process.as_ref().unwrap().x.as_ref().unwrap().build();
        let y = cfg.process.as_ref().unwrap().y.as_ref().unwrap().build();
        assert_eq!(x.dual(), y);
    }

    #[test]
    fn cm_config_needs_enough_sample_points() {
        let text = r#"
name = "cm"
experiment = "cm"
output = "out/cm"
order = 4

[process.x]
kind = "cb"
[process.x.psi]
a = 1.0

[grid]
x = [0.0, 0.5, 1.0]
y = [1.0]
t = [1.0]

[sim]
step = 1e-3
paths = 1000
seed = 5
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("grid.x"), "{err}");
    }

    #[test]
    fn flow_experiment_requires_a_branching_exponent() {
        let text = r#"
name = "flow"
experiment = "flow"
output = "out/flow"

[process.x]
kind = "subordinator"
[process.x.phi]
d = 1.0

[grid]
y = [1.0]
t = [1.0]
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("branching exponent"), "{err}");
    }

    #[test]
    fn sim_table_builds_with_overrides() {
        let table = SimTable {
            step: 1e-3,
            paths: 500,
            seed: 11,
            explosion_cap: Some(1e9),
            small_jump_cut: None,
            absorption_floor: Some(1e-9),
        };
        let cfg = table.build(2.0);
        cfg.validate().unwrap();
        assert_eq!(cfg.horizon, 2.0);
        assert_eq!(cfg.explosion_cap, 1e9);
        assert_eq!(cfg.small_jump_cut, 1e-3);
        assert_eq!(cfg.absorption_floor, 1e-9);
    }
}
