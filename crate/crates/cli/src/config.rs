//! Run configuration: one TOML document per invocation.
//!
//! ```toml
//! seed = 7
//! threads = 4
//!
//! [model]
//! q = 4.5
//! coalbedo = { variant = "sellers", ice = 0.2, ice_free = 0.8, half_width = 1.0 }
//! forcing = { insolation = 1.0, f_inf = -12.0 }
//!
//! [noise]
//! mode = "cylindrical"
//! modes = 16
//! gains = { sigma = 1.0 }
//!
//! [experiment]
//! kind = "converge_eps"
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sebm_core::constitutive::SpatialProfile;
use sebm_core::noise::NoiseSpec;
use sebm_core::solver::ModelConfig;
use sebm_core::Error as CoreError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration at `{path}`: {constraint}")]
    Validation { path: String, constraint: String },
}

fn violation(path: impl Into<String>, constraint: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        path: path.into(),
        constraint: constraint.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Isometry,
    Convolution,
    Compare,
    ConvergeEps,
    ConvergeLambda,
    Stationary,
    ScanQ,
    Longtime,
    ResolutionStudy,
}

impl ExperimentKind {
    pub const ALL: [Self; 10] = [
        Self::Simulate,
        Self::Isometry,
        Self::Convolution,
        Self::Compare,
        Self::ConvergeEps,
        Self::ConvergeLambda,
        Self::Stationary,
        Self::ScanQ,
        Self::Longtime,
        Self::ResolutionStudy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Isometry => "isometry",
            Self::Convolution => "convolution",
            Self::Compare => "compare",
            Self::ConvergeEps => "converge_eps",
            Self::ConvergeLambda => "converge_lambda",
            Self::Stationary => "stationary",
            Self::ScanQ => "scan_q",
            Self::Longtime => "longtime",
            Self::ResolutionStudy => "resolution_study",
        }
    }
}

fn constant(value: f64) -> SpatialProfile {
    SpatialProfile::Constant(value)
}

/// One sample path of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub u0: SpatialProfile,
    /// Write every `stride`-th step.
    pub stride: usize,
    /// Monte Carlo path index of the simulated path.
    pub path: u64,
    pub write_increments: bool,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            u0: constant(-8.0),
            stride: 1,
            path: 0,
            write_increments: false,
        }
    }
}

/// `E ||(G.W)_t||^2` against the isometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsometryParams {
    pub times: Vec<f64>,
    pub paths: usize,
    /// Accepted distance to the target in standard errors.
    pub max_z: f64,
}

impl Default for IsometryParams {
    fn default() -> Self {
        Self {
            times: vec![1.0],
            paths: 10_000,
            max_z: 4.0,
        }
    }
}

/// `E ||W^{A,G}_t||^2` against the trace formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvolutionParams {
    pub times: Vec<f64>,
    pub paths: usize,
    pub rel_tol: f64,
    /// Long-time, many-mode evaluation of the trace with unit gains,
    /// compared with `(pi^2/3 - 3)/2`.
    pub trace_check: bool,
    pub trace_horizon: f64,
    pub trace_modes: usize,
    pub trace_tol: f64,
    /// Order of the maximal-moment diagnostic; `None` skips it.
    pub sup_moment_p: Option<f64>,
}

impl Default for ConvolutionParams {
    fn default() -> Self {
        Self {
            times: vec![1.0],
            paths: 10_000,
            rel_tol: 0.05,
            trace_check: true,
            trace_horizon: 1e3,
            trace_modes: 10_000,
            trace_tol: 1e-6,
            sup_moment_p: Some(2.0),
        }
    }
}

/// Comparison estimate on a shared path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareParams {
    pub u0: SpatialProfile,
    pub u0_hat: SpatialProfile,
    /// `f_inf` of the second run; the model's when absent.
    pub f_inf_hat: Option<SpatialProfile>,
    /// When positive, that many random Sellers configurations with ordered
    /// data are drawn from the seed instead of using `u0`, `u0_hat`.
    pub random_configs: usize,
    pub stride: usize,
}

impl Default for CompareParams {
    fn default() -> Self {
        Self {
            u0: constant(-10.3),
            u0_hat: constant(-9.3),
            f_inf_hat: None,
            random_configs: 0,
            stride: 100,
        }
    }
}

/// Distances `||u^eps - u^0||` along a ladder of noise intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsParams {
    pub ladder: Vec<f64>,
    pub u0: SpatialProfile,
    /// Bound on the distance at the smallest intensity.
    pub max_final: f64,
    /// Also run the Budyko graph with this Yosida parameter.
    pub budyko_lambda: Option<f64>,
}

impl Default for EpsParams {
    fn default() -> Self {
        Self {
            ladder: vec![0.4, 0.2, 0.1, 0.05],
            u0: constant(-8.0),
            max_final: 1e-2,
            budyko_lambda: Some(1e-3),
        }
    }
}

/// Yosida ladder for the Budyko graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaParams {
    pub ladder: Vec<f64>,
    pub u0: SpatialProfile,
    /// Bound on every consecutive distance, if any.
    pub max_distance: Option<f64>,
}

impl Default for LambdaParams {
    fn default() -> Self {
        Self {
            ladder: vec![1e-1, 1e-2, 1e-3, 1e-4],
            u0: constant(-10.0),
            max_distance: None,
        }
    }
}

/// Equilibria at one value of `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryParams {
    /// Constant initial guesses added to the default multistart set.
    pub inits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanParams {
    pub grid: Vec<f64>,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self {
            grid: vec![1.0, 4.5, 16.0],
        }
    }
}

/// Stabilization under time-decaying noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongtimeParams {
    pub u0: SpatialProfile,
    pub paths: usize,
    pub tol: f64,
    /// Required fraction of paths ending within `tol` of an equilibrium.
    pub min_fraction: f64,
    pub stride: usize,
}

impl Default for LongtimeParams {
    fn default() -> Self {
        Self {
            u0: constant(-8.0),
            paths: 100,
            tol: 1e-2,
            min_fraction: 0.9,
            stride: 1000,
        }
    }
}

/// Time-step and truncation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolutionParams {
    /// Decreasing time steps; each is compared against its half.
    pub dts: Vec<f64>,
    pub paths: usize,
    pub u0: SpatialProfile,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Basis sizes for the truncation comparison.
    pub modes: [usize; 2],
    pub norm_tol: f64,
}

impl Default for ResolutionParams {
    fn default() -> Self {
        Self {
            dts: vec![2e-3, 1e-3],
            paths: 32,
            u0: SpatialProfile::Legendre {
                coefficients: vec![-8.4 * std::f64::consts::SQRT_2, 0.15, -0.1, 0.05],
            },
            ratio_min: 1.7,
            ratio_max: 2.3,
            modes: [16, 32],
            norm_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Simulate(SimulateParams),
    Isometry(IsometryParams),
    Convolution(ConvolutionParams),
    Compare(CompareParams),
    ConvergeEps(EpsParams),
    ConvergeLambda(LambdaParams),
    Stationary(StationaryParams),
    ScanQ(ScanParams),
    Longtime(LongtimeParams),
    ResolutionStudy(ResolutionParams),
}

impl Experiment {
    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Simulate => Self::Simulate(Default::default()),
            ExperimentKind::Isometry => Self::Isometry(Default::default()),
            ExperimentKind::Convolution => Self::Convolution(Default::default()),
            ExperimentKind::Compare => Self::Compare(Default::default()),
            ExperimentKind::ConvergeEps => Self::ConvergeEps(Default::default()),
            ExperimentKind::ConvergeLambda => Self::ConvergeLambda(Default::default()),
            ExperimentKind::Stationary => Self::Stationary(Default::default()),
            ExperimentKind::ScanQ => Self::ScanQ(Default::default()),
            ExperimentKind::Longtime => Self::Longtime(Default::default()),
            ExperimentKind::ResolutionStudy => Self::ResolutionStudy(Default::default()),
        }
    }

    pub fn kind(&self) -> ExperimentKind {
        match self {
            Self::Simulate(_) => ExperimentKind::Simulate,
            Self::Isometry(_) => ExperimentKind::Isometry,
            Self::Convolution(_) => ExperimentKind::Convolution,
            Self::Compare(_) => ExperimentKind::Compare,
            Self::ConvergeEps(_) => ExperimentKind::ConvergeEps,
            Self::ConvergeLambda(_) => ExperimentKind::ConvergeLambda,
            Self::Stationary(_) => ExperimentKind::Stationary,
            Self::ScanQ(_) => ExperimentKind::ScanQ,
            Self::Longtime(_) => ExperimentKind::Longtime,
            Self::ResolutionStudy(_) => ExperimentKind::ResolutionStudy,
        }
    }
}

fn default_threads() -> usize {
    1
}

/// Fully validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Worker threads for path-level parallelism. Results do not depend on
    /// it since every reduction runs in path order.
    pub threads: usize,
    pub model: ModelConfig,
    pub noise: NoiseSpec,
    pub experiment: Experiment,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    #[serde(default = "default_threads")]
    threads: usize,
    model: ModelConfig,
    #[serde(default)]
    noise: NoiseSpec,
    experiment: Option<Experiment>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Experiment selected by the subcommand. An `[experiment]` block of a
    /// different kind is rejected; a missing one takes this kind's defaults.
    pub kind: Option<ExperimentKind>,
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let seed = overrides
        .seed
        .or(raw.seed)
        .ok_or_else(|| violation("seed", "a seed is required; runs never default to the clock"))?;
    let experiment = match (raw.experiment, overrides.kind) {
        (Some(e), Some(kind)) if e.kind() != kind => {
            return Err(violation(
                "experiment.kind",
                format!("`{}` does not match the requested `{}`", e.kind().name(), kind.name()),
            ))
        }
        (Some(e), _) => e,
        (None, Some(kind)) => Experiment::default_for(kind),
        (None, None) => return Err(violation("experiment", "no experiment block and no subcommand")),
    };
    let config = RunConfig {
        seed,
        output_dir: overrides.output_dir.clone().or(raw.output_dir),
        threads: overrides.threads.unwrap_or(raw.threads),
        model: raw.model,
        noise: raw.noise,
        experiment,
    };
    validate(&config)?;
    Ok(config)
}

/// Field path for an error raised by the core validators.
fn core_violation(section: &str, err: CoreError) -> ConfigError {
    match err {
        CoreError::InvalidParameter { name, reason } => {
            let name = name.strip_prefix("noise.").unwrap_or(name);
            let field = match name {
                "insolation" | "decay_rate" => format!("forcing.{name}"),
                "half_width" => format!("coalbedo.{name}"),
                other => other.to_string(),
            };
            let reason = if field == "modulation.alpha" {
                format!("{reason}; power decay is square integrable in time only with 2α>1")
            } else {
                reason
            };
            violation(format!("{section}.{field}"), reason)
        }
        CoreError::NonpositiveLambda(l) => violation(format!("{section}.lambda"), format!("must be positive, got {l}")),
        CoreError::NonMonotoneLaw(s) => violation(
            format!("{section}.emission.slope"),
            format!("emission must be strictly increasing, got slope {s}"),
        ),
        CoreError::QuadratureOrderTooLow { modes, order } => violation(
            format!("{section}.quadrature"),
            format!("order {order} cannot resolve {modes} modes"),
        ),
        other => violation(section, other.to_string()),
    }
}

fn positive(path: &str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(violation(path, format!("must be positive, got {value}")))
    }
}

fn at_least(path: &str, value: usize, min: usize) -> Result<(), ConfigError> {
    if value >= min {
        Ok(())
    } else {
        Err(violation(path, format!("must be at least {min}, got {value}")))
    }
}

fn strictly_decreasing(path: &str, ladder: &[f64]) -> Result<(), ConfigError> {
    if ladder.is_empty() {
        return Err(violation(path, "must not be empty"));
    }
    if ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(violation(path, "must be strictly decreasing"));
    }
    Ok(())
}

fn validate(config: &RunConfig) -> Result<(), ConfigError> {
    at_least("threads", config.threads, 1)?;
    config.model.validate().map_err(|e| core_violation("model", e))?;
    config.noise.validate().map_err(|e| core_violation("noise", e))?;
    if config.noise.required_modes() > config.model.modes {
        return Err(violation(
            "noise.modes",
            format!(
                "noise needs {} basis functions but the model has {}",
                config.noise.required_modes(),
                config.model.modes
            ),
        ));
    }
    match &config.experiment {
        Experiment::Simulate(p) => at_least("experiment.stride", p.stride, 1),
        Experiment::Isometry(p) => {
            at_least("experiment.paths", p.paths, 100)?;
            positive("experiment.max_z", p.max_z)?;
            p.times.iter().try_for_each(|t| positive("experiment.times", *t))
        }
        Experiment::Convolution(p) => {
            at_least("experiment.paths", p.paths, 100)?;
            positive("experiment.rel_tol", p.rel_tol)?;
            positive("experiment.trace_tol", p.trace_tol)?;
            positive("experiment.trace_horizon", p.trace_horizon)?;
            if !matches!(config.noise, NoiseSpec::Cylindrical { .. }) {
                return Err(violation("noise.mode", "the convolution experiment needs cylindrical noise"));
            }
            if let Some(order) = p.sup_moment_p {
                if !(order >= 2.0) {
                    return Err(violation("experiment.sup_moment_p", "moment order must be at least 2"));
                }
            }
            p.times.iter().try_for_each(|t| positive("experiment.times", *t))
        }
        Experiment::Compare(p) => {
            at_least("experiment.stride", p.stride, 1)?;
            if config.model.coalbedo.is_budyko() {
                return Err(violation(
                    "model.coalbedo.variant",
                    "the comparison estimate needs a Lipschitz (sellers) co-albedo",
                ));
            }
            Ok(())
        }
        Experiment::ConvergeEps(p) => {
            if p.ladder.iter().any(|e| !(*e >= 0.0)) {
                return Err(violation("experiment.ladder", "intensities must be nonnegative"));
            }
            strictly_decreasing("experiment.ladder", &p.ladder)?;
            positive("experiment.max_final", p.max_final)?;
            if let Some(l) = p.budyko_lambda {
                positive("experiment.budyko_lambda", l)?;
            }
            Ok(())
        }
        Experiment::ConvergeLambda(p) => {
            p.ladder.iter().try_for_each(|l| positive("experiment.ladder", *l))?;
            strictly_decreasing("experiment.ladder", &p.ladder)?;
            if let Some(d) = p.max_distance {
                positive("experiment.max_distance", d)?;
            }
            if !config.model.coalbedo.is_budyko() {
                return Err(violation("model.coalbedo.variant", "the Yosida ladder needs the budyko graph"));
            }
            Ok(())
        }
        Experiment::Stationary(_) => Ok(()),
        Experiment::ScanQ(p) => {
            if p.grid.is_empty() {
                return Err(violation("experiment.grid", "must not be empty"));
            }
            p.grid.iter().try_for_each(|q| positive("experiment.grid", *q))?;
            if p.grid.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(violation("experiment.grid", "must be sorted"));
            }
            Ok(())
        }
        Experiment::Longtime(p) => {
            at_least("experiment.paths", p.paths, 1)?;
            at_least("experiment.stride", p.stride, 1)?;
            positive("experiment.tol", p.tol)?;
            if !(0.0..=1.0).contains(&p.min_fraction) {
                return Err(violation("experiment.min_fraction", "must lie in [0, 1]"));
            }
            Ok(())
        }
        Experiment::ResolutionStudy(p) => {
            at_least("experiment.paths", p.paths, 1)?;
            p.dts.iter().try_for_each(|d| positive("experiment.dts", *d))?;
            strictly_decreasing("experiment.dts", &p.dts)?;
            positive("experiment.ratio_min", p.ratio_min)?;
            positive("experiment.norm_tol", p.norm_tol)?;
            if !(p.ratio_min <= p.ratio_max) {
                return Err(violation("experiment.ratio_max", "must not be below ratio_min"));
            }
            if p.modes.iter().any(|m| *m < config.noise.required_modes()) {
                return Err(violation(
                    "experiment.modes",
                    format!("every basis must hold the {} noise modes", config.noise.required_modes()),
                ));
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 1
        [model]
        q = 4.5
        coalbedo = { variant = "sellers", ice = 0.2, ice_free = 0.8, half_width = 1.0 }
        forcing = { insolation = 1.0, f_inf = -12.0 }
        [experiment]
        kind = "simulate"
    "#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.model.modes, 32);
        assert_eq!(c.model.dt, 1e-3);
        assert_eq!(c.model.quadrature_order(), 64);
        assert_eq!(c.noise, NoiseSpec::Off);
        assert_eq!(c.threads, 1);
        assert_eq!(c.experiment, Experiment::Simulate(SimulateParams::default()));
    }

    #[test]
    fn seed_is_required() {
        let text = MINIMAL.replace("seed = 1", "");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::Validation { path, .. }) if path == "seed"
        ));
        let with = Overrides {
            seed: Some(9),
            ..Default::default()
        };
        assert_eq!(parse_config_with(&text, &with).unwrap().seed, 9);
    }

    #[test]
    fn budyko_lambda_must_be_positive() {
        let text = MINIMAL
            .replace(
                r#"{ variant = "sellers", ice = 0.2, ice_free = 0.8, half_width = 1.0 }"#,
                r#"{ variant = "budyko", ice = 0.2, ice_free = 0.8 }"#,
            )
            .replace("q = 4.5", "q = 4.5\nlambda = -0.1");
        match parse_config(&text) {
            Err(ConfigError::Validation { path, .. }) => assert_eq!(path, "model.lambda"),
            other => panic!("{other:?}"),
        }
        let missing = text.replace("lambda = -0.1", "");
        match parse_config(&missing) {
            Err(ConfigError::Validation { path, .. }) => assert_eq!(path, "model.lambda"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn power_decay_needs_square_integrability() {
        let text = format!(
            "{MINIMAL}\n[noise]\nmode = \"cylindrical\"\nmodes = 4\nmodulation = {{ kind = \"power_decay\", a = 1.0, alpha = 0.5 }}\n"
        );
        match parse_config(&text) {
            Err(ConfigError::Validation { path, constraint }) => {
                assert_eq!(path, "noise.modulation.alpha");
                assert!(constraint.contains("with 2α>1"), "{constraint}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_are_parse_errors() {
        assert!(matches!(parse_config("seed = = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            parse_config(&MINIMAL.replace("[experiment]", "bogus = 1\n[experiment]")),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn subcommand_kind_must_match_block() {
        let scan = Overrides {
            kind: Some(ExperimentKind::ScanQ),
            ..Default::default()
        };
        assert!(matches!(
            parse_config_with(MINIMAL, &scan),
            Err(ConfigError::Validation { path, .. }) if path == "experiment.kind"
        ));
        let no_block = MINIMAL.replace("[experiment]\n        kind = \"simulate\"", "");
        let c = parse_config_with(&no_block, &scan).unwrap();
        assert_eq!(c.experiment, Experiment::ScanQ(ScanParams::default()));
    }

    #[test]
    fn experiment_parameters_are_checked() {
        let text = MINIMAL.replace("kind = \"simulate\"", "kind = \"converge_eps\"\nladder = [0.1, 0.2]");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::Validation { path, .. }) if path == "experiment.ladder"
        ));
        let text = MINIMAL.replace("kind = \"simulate\"", "kind = \"isometry\"\npaths = 10");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::Validation { path, .. }) if path == "experiment.paths"
        ));
        let text = MINIMAL.replace("kind = \"simulate\"", "kind = \"isometry\"\nunknown = 1");
        assert!(matches!(parse_config(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn noise_must_fit_basis() {
        let text = format!("{MINIMAL}\n[noise]\nmode = \"cylindrical\"\nmodes = 40\n");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::Validation { path, .. }) if path == "noise.modes"
        ));
    }
}
