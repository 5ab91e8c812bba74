//! Run configuration files.
//!
//! The format is TOML: `key = value` lines grouped under `[section]` headers.
//! Unknown keys are rejected, every omitted key takes its documented default,
//! and [`emit`] writes the fully populated configuration back out so that a
//! run's outputs can be archived next to the exact settings that produced them.

use std::path::PathBuf;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::appendix_props::SuiteSizes;
use crate::lab::{ExperimentKind, ExperimentSpec};
use crate::model::{Displacement, ReproductionLaw};
use crate::simulator::{MAX_DEPTH, MAX_TIPS};
use crate::stats::MIN_RESAMPLES;

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "BRWLAB_OUTPUT_DIR";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("could not serialize configuration: {0}")]
    Emit(String),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LawConfig {
    pub offspring: Vec<f64>,
    pub displacement: Displacement,
}

impl Default for LawConfig {
    fn default() -> Self {
        Self { offspring: vec![0.0, 0.0, 1.0], displacement: Displacement::standard_gaussian() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    /// `[re, im]` pairs.
    pub lambda: Vec<[f64; 2]>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { lambda: vec![[0.3, 0.2]] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeMapConfig {
    pub theta: [f64; 2],
    pub eta: [f64; 2],
    pub theta_points: usize,
    pub eta_points: usize,
}

impl Default for RegimeMapConfig {
    fn default() -> Self {
        Self { theta: [-2.5, 2.5], eta: [-2.5, 2.5], theta_points: 201, eta_points: 201 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub lambda: Vec<[f64; 2]>,
    pub n: usize,
    pub extra_m: usize,
    pub replicas: usize,
    pub tip_k: usize,
    /// Record `W`, `dW`, `min V` and the supremum weight.
    pub boundary: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_above: Option<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { lambda: vec![[0.3, 0.2]], n: 10, extra_m: 0, replicas: 100, tip_k: 0, boundary: true, prune_above: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub lambda: [f64; 2],
    pub n_grid: Vec<usize>,
    pub extra_m: usize,
    pub replicas: usize,
    pub resamples: usize,
    pub hill_k: usize,
    pub hill_replicas: usize,
    pub truncation_k: f64,
    pub k_sweep: Vec<f64>,
    pub tip_n: usize,
    pub tip_k: usize,
    pub n_ref: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_above: Option<f64>,
    /// Write the sample sets as CSV next to the report.
    pub dump_samples: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let spec = ExperimentSpec::new(ExperimentKind::Gaussian, ReproductionLaw::binary_gaussian(), Complex64::new(0.3, 0.2));
        Self {
            kind: spec.kind,
            lambda: [spec.lambda.re, spec.lambda.im],
            n_grid: spec.n_grid,
            extra_m: spec.extra_m,
            replicas: spec.replicas,
            resamples: spec.resamples,
            hill_k: spec.hill_k,
            hill_replicas: spec.hill_replicas,
            truncation_k: spec.truncation_k,
            k_sweep: spec.k_sweep,
            tip_n: spec.tip_n,
            tip_k: spec.tip_k,
            n_ref: spec.n_ref,
            prune_above: spec.prune_above,
            dump_samples: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropsConfig {
    pub tv_trials: usize,
    pub tv_inner: usize,
    pub parallelogram_points: usize,
    pub tail_draws: usize,
    pub cancellation_trees: usize,
}

impl Default for PropsConfig {
    fn default() -> Self {
        let s = SuiteSizes::FULL;
        Self {
            tv_trials: s.tv_trials,
            tv_inner: s.tv_inner,
            parallelogram_points: s.parallelogram_points,
            tail_draws: s.tail_draws,
            cancellation_trees: s.cancellation_trees,
        }
    }
}

impl PropsConfig {
    pub fn sizes(&self) -> SuiteSizes {
        SuiteSizes {
            tv_trials: self.tv_trials,
            tv_inner: self.tv_inner,
            parallelogram_points: self.parallelogram_points,
            tail_draws: self.tail_draws,
            cancellation_trees: self.cancellation_trees,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupConfig {
    pub lambda: [f64; 2],
    pub denominator_cap: u64,
    pub tolerance: f64,
    /// Range of the real parameter along each snail curve.
    pub snail_x: [f64; 2],
    pub snail_samples: usize,
}

impl Default for GroupConfig {
    fn default() -> Self {
        let theta = (2.0 * std::f64::consts::LN_2).sqrt() - (std::f64::consts::PI / 10.0).sqrt();
        Self {
            lambda: [theta, (std::f64::consts::PI / 10.0).sqrt()],
            denominator_cap: 1_000_000,
            tolerance: 1e-9,
            snail_x: [-4.0, 1.0],
            snail_samples: 400,
        }
    }
}

/// Complete configuration of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Worker threads; `0` uses every available core.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub law: LawConfig,
    pub classify: ClassifyConfig,
    pub regime_map: RegimeMapConfig,
    pub simulate: SimulateConfig,
    pub experiment: ExperimentConfig,
    pub props: PropsConfig,
    pub group: GroupConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            threads: 0,
            output_dir: PathBuf::from("brwlab-out"),
            law: LawConfig::default(),
            classify: ClassifyConfig::default(),
            regime_map: RegimeMapConfig::default(),
            simulate: SimulateConfig::default(),
            experiment: ExperimentConfig::default(),
            props: PropsConfig::default(),
            group: GroupConfig::default(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text.as_bytes()[..offset.min(text.len())];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let line_start = before.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let column = String::from_utf8_lossy(&before[line_start..]).chars().count() + 1;
    (line, column)
}

/// Strict parse followed by range validation.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Parse { line, column, message: e.message().to_string() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical text of a configuration, with every key present.
pub fn emit(cfg: &RunConfig) -> Result<String, ConfigError> {
    toml::to_string(cfg).map_err(|e| ConfigError::Emit(e.to_string()))
}

fn finite(key: &str, x: f64) -> Result<(), ConfigError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("{x} is not finite")))
    }
}

fn pair(key: &str, p: [f64; 2]) -> Result<Complex64, ConfigError> {
    finite(key, p[0])?;
    finite(key, p[1])?;
    Ok(Complex64::new(p[0], p[1]))
}

fn at_least(key: &str, value: usize, min: usize) -> Result<(), ConfigError> {
    if value < min {
        Err(invalid(key, format!("{value} is below the minimum {min}")))
    } else {
        Ok(())
    }
}

fn depth(key: &str, d: usize) -> Result<(), ConfigError> {
    if d > MAX_DEPTH {
        Err(invalid(key, format!("depth {d} exceeds the cap {MAX_DEPTH}")))
    } else {
        Ok(())
    }
}

fn tips(key: &str, k: usize) -> Result<(), ConfigError> {
    if k > MAX_TIPS {
        Err(invalid(key, format!("{k} exceeds {MAX_TIPS}")))
    } else {
        Ok(())
    }
}

fn range(key: &str, r: [f64; 2]) -> Result<(), ConfigError> {
    finite(key, r[0])?;
    finite(key, r[1])?;
    if r[0] > r[1] {
        return Err(invalid(key, format!("lower end {} above upper end {}", r[0], r[1])));
    }
    Ok(())
}

impl RunConfig {
    /// The validated law.
    pub fn law(&self) -> Result<ReproductionLaw, ConfigError> {
        use crate::model::ModelError;
        ReproductionLaw::new(self.law.offspring.clone(), self.law.displacement).map_err(|e| {
            let key = match e {
                ModelError::BadDisplacement(_) => "law.displacement",
                _ => "law.offspring",
            };
            invalid(key, e.to_string())
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.law()?;
        for (i, l) in self.classify.lambda.iter().enumerate() {
            pair(&format!("classify.lambda[{i}]"), *l)?;
        }
        let rm = &self.regime_map;
        range("regime_map.theta", rm.theta)?;
        range("regime_map.eta", rm.eta)?;
        at_least("regime_map.theta_points", rm.theta_points, 1)?;
        at_least("regime_map.eta_points", rm.eta_points, 1)?;

        let s = &self.simulate;
        for (i, l) in s.lambda.iter().enumerate() {
            pair(&format!("simulate.lambda[{i}]"), *l)?;
        }
        depth("simulate.n", s.n + s.extra_m)?;
        at_least("simulate.replicas", s.replicas, 1)?;
        tips("simulate.tip_k", s.tip_k)?;
        if s.tip_k > 0 && s.lambda.is_empty() {
            return Err(invalid("simulate.tip_k", "tip records need at least one lambda"));
        }
        if let Some(c) = s.prune_above {
            finite("simulate.prune_above", c)?;
            if !s.boundary {
                return Err(invalid("simulate.prune_above", "pruning needs boundary = true"));
            }
        }

        let e = &self.experiment;
        pair("experiment.lambda", e.lambda)?;
        if e.n_grid.is_empty() {
            return Err(invalid("experiment.n_grid", "must not be empty"));
        }
        for &n in &e.n_grid {
            depth("experiment.n_grid", n + e.extra_m)?;
        }
        at_least("experiment.replicas", e.replicas, 2)?;
        at_least("experiment.resamples", e.resamples, MIN_RESAMPLES)?;
        at_least("experiment.hill_k", e.hill_k, 1)?;
        if 2 * e.hill_k >= e.hill_replicas {
            return Err(invalid("experiment.hill_k", format!("must be below hill_replicas / 2 = {}", e.hill_replicas / 2)));
        }
        finite("experiment.truncation_k", e.truncation_k)?;
        for k in &e.k_sweep {
            finite("experiment.k_sweep", *k)?;
        }
        depth("experiment.tip_n", e.tip_n + e.extra_m)?;
        depth("experiment.n_ref", e.n_ref)?;
        at_least("experiment.tip_k", e.tip_k, 1)?;
        if let Some(c) = e.prune_above {
            finite("experiment.prune_above", c)?;
        }

        let p = &self.props;
        at_least("props.tv_inner", p.tv_inner, 2)?;
        at_least("props.tail_draws", p.tail_draws, 2)?;
        at_least("props.cancellation_trees", p.cancellation_trees, 2)?;

        let g = &self.group;
        pair("group.lambda", g.lambda)?;
        at_least("group.denominator_cap", g.denominator_cap as usize, 1)?;
        if !(g.tolerance > 0.0 && g.tolerance < 1.0) {
            return Err(invalid("group.tolerance", format!("{} is not in (0, 1)", g.tolerance)));
        }
        range("group.snail_x", g.snail_x)?;
        at_least("group.snail_samples", g.snail_samples, 2)?;
        Ok(())
    }

    /// `output_dir`, unless the environment override is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn experiment_spec(&self) -> Result<ExperimentSpec, ConfigError> {
        let e = &self.experiment;
        let mut spec = ExperimentSpec::new(e.kind, self.law()?, pair("experiment.lambda", e.lambda)?);
        spec.n_grid = e.n_grid.clone();
        spec.extra_m = e.extra_m;
        spec.replicas = e.replicas;
        spec.resamples = e.resamples;
        spec.hill_k = e.hill_k;
        spec.hill_replicas = e.hill_replicas;
        spec.truncation_k = e.truncation_k;
        spec.k_sweep = e.k_sweep.clone();
        spec.tip_n = e.tip_n;
        spec.tip_k = e.tip_k;
        spec.n_ref = e.n_ref;
        spec.prune_above = e.prune_above;
        spec.seed = crate::rng::derive_seed(self.master_seed, "experiment");
        Ok(spec)
    }
}
