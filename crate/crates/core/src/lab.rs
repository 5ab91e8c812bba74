//! Monte Carlo experiments: residual samplers, reference-law samplers and the
//! comparisons between them.

use std::fmt::Write as _;
use std::time::Instant;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ComplexParam, Displacement, ModelError, ReproductionLaw};
use crate::regimes::{BoundaryParams, Classifier, RegimeError, RegimeLabel};
use crate::rng;
use crate::simulator::{self, median, run_replica, run_replicas, ReplicaResult, SimConfig, SimError};
use crate::stats::{self, HillEstimate, MomentSummary, StatsError, TestReport};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("experiment kind {kind} does not match the regime of lambda: {label}")]
    KindMismatch { kind: &'static str, label: String },
    #[error("limit is degenerate: {0}")]
    DegenerateLimit(String),
    #[error("the law has no boundary parameter: {0}")]
    NoBoundary(RegimeError),
    #[error("tip_k = {available} is too small: {required} tips lie below the window end {window}")]
    TipsTooFew { available: usize, required: usize, window: f64 },
    #[error("n grid is empty")]
    EmptyGrid,
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Regime(#[from] RegimeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Stable textual id of a law, used in sample metadata.
pub fn law_id(law: &ReproductionLaw) -> String {
    let probs: Vec<String> = law.offspring().iter().map(|&p| fmt_f64(p)).collect();
    let disp = match law.displacement() {
        Displacement::PointMass { x } => format!("point_mass(x={})", fmt_f64(x)),
        Displacement::Gaussian { mean, sd } => format!("gaussian(mean={},sd={})", fmt_f64(mean), fmt_f64(sd)),
        Displacement::Uniform { a, b } => format!("uniform(a={},b={})", fmt_f64(a), fmt_f64(b)),
    };
    format!("offspring=[{}];{disp}", probs.join(","))
}

/// Provenance of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    /// Which sampler produced the set.
    pub source: String,
    pub law_id: String,
    pub lambda: Complex64,
    pub n: usize,
    pub extra_m: usize,
    pub replicas: usize,
    pub regime: String,
    pub seed: u64,
    pub extinct_count: usize,
    /// Draws discarded and redrawn (boundary reference only).
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Complex64>,
    pub meta: SampleMeta,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.norm()).collect()
    }

    /// Every sample multiplied by `c`.
    pub fn scaled(&self, c: Complex64) -> SampleSet {
        SampleSet { samples: self.samples.iter().map(|z| z * c).collect(), meta: self.meta.clone() }
    }

    pub fn to_csv_string(&self) -> String {
        crate::io::samples_to_csv(self)
    }

    pub fn from_csv_str(text: &str) -> Result<Self, crate::io::IoError> {
        crate::io::samples_from_csv(text)
    }
}

/// `a_n (Z_{n+m} - Z_n)` for every replica.
pub fn residual_set(reps: &[ReplicaResult], param: usize, n: usize, m: usize, a_n: Complex64, mut meta: SampleMeta) -> SampleSet {
    let samples = reps.iter().map(|r| simulator::residual_between(r, param, n, m, a_n)).collect();
    meta.replicas = reps.len();
    meta.extinct_count = reps.iter().filter(|r| r.population[n] == 0).count();
    meta.n = n;
    meta.extra_m = m;
    SampleSet { samples, meta }
}

/// Piecewise-linear window: 1 up to `k`, 0 from `k + 1` on.
pub fn window_fk(x: f64, k: f64) -> f64 {
    if x <= k {
        1.0
    } else if x >= k + 1.0 {
        0.0
    } else {
        k + 1.0 - x
    }
}

fn standard_normal(seed: u64, index: u64, complex: bool) -> Complex64 {
    let mut s = rng::stream(seed, index);
    let x: f64 = StandardNormal.sample(&mut s);
    if complex {
        let y: f64 = StandardNormal.sample(&mut s);
        Complex64::new(x, y) * std::f64::consts::FRAC_1_SQRT_2
    } else {
        Complex64::new(x, 0.0)
    }
}

/// Reference draws with their per-replica mixture factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDraws {
    pub set: SampleSet,
    /// Positive factor multiplying the standard normal in each draw.
    pub mixture: Vec<f64>,
}

/// Draws from the Gaussian-regime limit
/// `sigma_lambda / sqrt(1 - rho) * sqrt(Z(2 theta)) * X` with `Z(2 theta)`
/// approximated by `Z_{n_ref}(2 theta)` from independent trees.
pub fn sample_gaussian_reference(
    law: &ReproductionLaw,
    lambda: Complex64,
    replicas: usize,
    n_ref: usize,
    seed: u64,
) -> Result<ReferenceDraws, LabError> {
    let cl = Classifier::new(law.clone());
    let label = cl.classify(lambda);
    let RegimeLabel::GaussianInterior { limit_is_complex, nondegenerate_2theta: true, degenerate_variance: false } = label
    else {
        return Err(LabError::DegenerateLimit(format!("Z(2 theta) or sigma_lambda vanishes ({})", label.describe())));
    };
    let param = ComplexParam::new(law, lambda)?;
    let scale = (param.sigma_lambda_sq / (1.0 - param.rho())).sqrt();
    let two_theta = Complex64::new(2.0 * lambda.re, 0.0);
    let cfg = SimConfig::new(n_ref, 0, vec![two_theta], rng::derive_seed(seed, "reference-mixture")).with_z_depths(&[n_ref]);
    let reps = run_replicas(law, &cfg, 0..replicas as u64)?;
    let normal_seed = rng::derive_seed(seed, "reference-normal");
    let mixture: Vec<f64> = reps.iter().map(|r| scale * r.z[0][n_ref].re.max(0.0).sqrt()).collect();
    let samples = mixture
        .iter()
        .enumerate()
        .map(|(i, &f)| standard_normal(normal_seed, i as u64, limit_is_complex) * f)
        .collect();
    Ok(ReferenceDraws {
        set: SampleSet {
            samples,
            meta: SampleMeta {
                source: "gaussian_reference".into(),
                law_id: law_id(law),
                lambda,
                n: n_ref,
                extra_m: 0,
                replicas,
                regime: label.kind().as_str().into(),
                seed,
                extinct_count: reps.iter().filter(|r| r.extinct).count(),
                rejected: 0,
            },
        },
        mixture,
    })
}

/// Draws from the boundary-case limit `sqrt(c) sigma_lambda / sqrt(1 - rho)
/// sqrt(D) X` with `D` approximated by the derivative martingale at `n_ref`.
/// Negative approximants are replaced by fresh trees and counted.
pub fn sample_boundary_reference(
    law: &ReproductionLaw,
    lambda: Complex64,
    replicas: usize,
    n_ref: usize,
    seed: u64,
) -> Result<ReferenceDraws, LabError> {
    let cl = Classifier::new(law.clone());
    let label = cl.classify(lambda);
    let RegimeLabel::GaussianBoundary { limit_is_complex } = label else {
        return Err(LabError::KindMismatch { kind: "gaussian_boundary", label: label.describe() });
    };
    let b = *cl.boundary().expect("boundary label implies a boundary parameter");
    let param = ComplexParam::new(law, lambda)?;
    let scale = (b.c * param.sigma_lambda_sq / (1.0 - param.rho())).sqrt();
    let cfg = SimConfig::new(n_ref, 0, Vec::new(), rng::derive_seed(seed, "reference-derivative")).with_boundary(b);
    let mut dw: Vec<f64> = run_replicas(law, &cfg, 0..replicas as u64)?.iter().map(|r| r.dw[n_ref]).collect();
    let mut next = replicas as u64;
    let mut rejected = 0usize;
    for v in dw.iter_mut() {
        while *v < 0.0 {
            rejected += 1;
            *v = run_replica(law, &cfg, next)?.dw[n_ref];
            next += 1;
        }
    }
    let normal_seed = rng::derive_seed(seed, "reference-normal");
    let mixture: Vec<f64> = dw.iter().map(|&d| scale * d.sqrt()).collect();
    let samples = mixture
        .iter()
        .enumerate()
        .map(|(i, &f)| standard_normal(normal_seed, i as u64, limit_is_complex) * f)
        .collect();
    Ok(ReferenceDraws {
        set: SampleSet {
            samples,
            meta: SampleMeta {
                source: "boundary_reference".into(),
                law_id: law_id(law),
                lambda,
                n: n_ref,
                extra_m: 0,
                replicas,
                regime: label.kind().as_str().into(),
                seed,
                extinct_count: dw.iter().filter(|&&d| d == 0.0).count(),
                rejected,
            },
        },
        mixture,
    })
}

/// Truncated extremal series for several windows, sharing tips and surrogates.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDraws {
    /// `(K, partial sums)` in the order the windows were requested.
    pub by_window: Vec<(f64, SampleSet)>,
    /// Mean number of tips inside the widest window.
    pub mean_tips_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesParams {
    pub tip_n: usize,
    pub extra_m: usize,
    /// Largest number of tips allowed inside the widest window of one tree.
    pub tip_k: usize,
}

impl Default for SeriesParams {
    fn default() -> Self {
        Self { tip_n: 18, extra_m: 8, tip_k: DEFAULT_WINDOW_TIPS }
    }
}

/// Default bound on the tips of one tree inside the truncation window.
pub const DEFAULT_WINDOW_TIPS: usize = 100_000;

/// Truncated series `sum_k e^{-(lambda/vartheta) P_k} f_K(P_k) (Z^{(k)} - 1)` over
/// the depth-`tip_n` particles `P_k` (centered boundary positions) of one tree,
/// with `Z^{(k)}` the depth-`extra_m` martingale of fresh independent trees.
/// Every particle inside the widest window is used; their number is not
/// limited by the simulator's tip heap.
pub fn sample_extremal_series(
    law: &ReproductionLaw,
    lambda: Complex64,
    replicas: usize,
    windows: &[f64],
    params: SeriesParams,
    seed: u64,
) -> Result<SeriesDraws, LabError> {
    let cl = Classifier::new(law.clone());
    let label = cl.classify(lambda);
    if label != RegimeLabel::Extremal {
        return Err(LabError::KindMismatch { kind: "extremal", label: label.describe() });
    }
    if windows.is_empty() {
        return Err(LabError::Invalid("no truncation window given".into()));
    }
    let b = *cl.boundary().expect("extremal label implies a boundary parameter");
    let k_max = windows.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tip_cfg = SimConfig::new(params.tip_n, 0, Vec::new(), rng::derive_seed(seed, "series-tips")).with_boundary(b);
    tip_cfg.validate(law)?;
    let sur_cfg = SimConfig::new(params.extra_m, 0, vec![lambda], rng::derive_seed(seed, "series-surrogate"))
        .with_z_depths(&[params.extra_m]);
    sur_cfg.validate(law)?;
    let ratio = lambda / b.theta_star;

    type PerReplica = Result<(Vec<Complex64>, usize), LabError>;
    let per_replica: Vec<PerReplica> = (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let mut inside: Vec<f64> = Vec::new();
            let tree = simulator::run_replica_visiting(law, &tip_cfg, i, &mut |v, _| {
                if v < k_max + 1.0 {
                    inside.push(v);
                }
            })?;
            if inside.len() > params.tip_k {
                return Err(LabError::TipsTooFew { available: params.tip_k, required: inside.len(), window: k_max + 1.0 });
            }
            debug_assert_eq!(tree.population[params.tip_n] == 0, tree.extinct);
            let mut sums = vec![Complex64::new(0.0, 0.0); windows.len()];
            for (k, &v) in inside.iter().enumerate() {
                let sur = run_replica(law, &sur_cfg, (i << 32) | k as u64)?;
                let term = (-ratio * v).exp() * (sur.z[0][params.extra_m] - 1.0);
                for (s, &kw) in sums.iter_mut().zip(windows) {
                    let f = window_fk(v, kw);
                    if f > 0.0 {
                        *s += term * f;
                    }
                }
            }
            Ok((sums, inside.len()))
        })
        .collect();
    let mut columns = vec![Vec::with_capacity(replicas); windows.len()];
    let mut used_total = 0usize;
    let mut extinct = 0usize;
    for r in per_replica {
        let (sums, used) = r?;
        if used == 0 {
            extinct += 1;
        }
        used_total += used;
        for (col, s) in columns.iter_mut().zip(sums) {
            col.push(s);
        }
    }
    let by_window = windows
        .iter()
        .zip(columns)
        .map(|(&k, samples)| {
            (
                k,
                SampleSet {
                    samples,
                    meta: SampleMeta {
                        source: format!("extremal_series_k{}", fmt_f64(k)),
                        law_id: law_id(law),
                        lambda,
                        n: params.tip_n,
                        extra_m: params.extra_m,
                        replicas,
                        regime: label.kind().as_str().into(),
                        seed,
                        extinct_count: extinct,
                        rejected: 0,
                    },
                },
            )
        })
        .collect();
    Ok(SeriesDraws { by_window, mean_tips_used: used_total as f64 / replicas.max(1) as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SenetaHeydeRow {
    pub n: usize,
    pub median_ratio: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SenetaHeydeTable {
    pub target: f64,
    pub rows: Vec<SenetaHeydeRow>,
}

/// Medians of `sqrt(n) W_n / dW_n` on already simulated replicas.
pub fn seneta_heyde_table(reps: &[ReplicaResult], n_grid: &[usize], b: &BoundaryParams) -> SenetaHeydeTable {
    let rows = n_grid
        .iter()
        .map(|&n| {
            let mut ratios: Vec<f64> = reps
                .iter()
                .filter(|r| r.population[n] > 0 && r.dw[n] != 0.0)
                .map(|r| (n as f64).sqrt() * r.w[n] / r.dw[n])
                .collect();
            let excluded = reps.len() - ratios.len();
            SenetaHeydeRow { n, median_ratio: median(&mut ratios), excluded }
        })
        .collect();
    SenetaHeydeTable { target: b.c, rows }
}

pub fn seneta_heyde_check(
    law: &ReproductionLaw,
    n_grid: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<SenetaHeydeTable, LabError> {
    let b = crate::regimes::solve_theta_star(law).map_err(LabError::NoBoundary)?;
    let depth = *n_grid.iter().max().ok_or(LabError::EmptyGrid)?;
    let cfg = SimConfig::new(depth, 0, Vec::new(), rng::derive_seed(seed, "seneta-heyde")).with_boundary(b);
    let reps = run_replicas(law, &cfg, 0..replicas as u64)?;
    Ok(seneta_heyde_table(&reps, n_grid, &b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableProbeParams {
    /// Depth of `|Z_n(lambda)|` fed to the Hill estimator.
    pub n_hill: usize,
    pub hill_replicas: usize,
    pub hill_k: usize,
    pub extra_m: usize,
    pub iqr_replicas: usize,
    /// Pruning cutoff for runs deeper than `n_hill`.
    pub prune_above: Option<f64>,
}

impl Default for StableProbeParams {
    fn default() -> Self {
        Self { n_hill: 18, hill_replicas: 20_000, hill_k: 500, extra_m: 8, iqr_replicas: 1000, prune_above: Some(8.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StableProbeReport {
    pub alpha_target: f64,
    pub hill: HillEstimate,
    /// `(n, IQR of |n^{w/(2 alpha)} (Z_{n+m} - Z_n)|)`.
    pub iqr: Vec<(usize, f64)>,
    /// Samples behind each IQR entry.
    pub scaled_residuals: Vec<(usize, SampleSet)>,
    pub hill_sample: SampleSet,
}

pub fn stable_boundary_probe(
    law: &ReproductionLaw,
    lambda: Complex64,
    n_grid: &[usize],
    params: StableProbeParams,
    seed: u64,
) -> Result<StableProbeReport, LabError> {
    let cl = Classifier::new(law.clone());
    let label = cl.classify(lambda);
    let RegimeLabel::StableBoundary { alpha, .. } = label else {
        return Err(LabError::KindMismatch { kind: "stable_boundary", label: label.describe() });
    };
    if n_grid.is_empty() {
        return Err(LabError::EmptyGrid);
    }
    let meta = |source: &str, n: usize, m: usize, replicas: usize| SampleMeta {
        source: source.into(),
        law_id: law_id(law),
        lambda,
        n,
        extra_m: m,
        replicas,
        regime: label.kind().as_str().into(),
        seed,
        extinct_count: 0,
        rejected: 0,
    };

    // Shared run for the Hill sample and every n with n + m <= n_hill.
    let m = params.extra_m;
    let shallow: Vec<usize> = n_grid.iter().copied().filter(|&n| n + m <= params.n_hill).collect();
    let mut depths: Vec<usize> = shallow.iter().flat_map(|&n| [n, n + m]).collect();
    depths.push(params.n_hill);
    let cfg = SimConfig::new(params.n_hill, 0, vec![lambda], rng::derive_seed(seed, "stable-hill")).with_z_depths(&depths);
    let reps = run_replicas(law, &cfg, 0..params.hill_replicas as u64)?;
    let hill_sample = SampleSet {
        samples: reps.iter().map(|r| r.z[0][params.n_hill]).collect(),
        meta: SampleMeta {
            extinct_count: reps.iter().filter(|r| r.population[params.n_hill] == 0).count(),
            ..meta("stable_hill", params.n_hill, 0, reps.len())
        },
    };
    let mags: Vec<f64> = hill_sample.moduli().into_iter().filter(|&x| x > 0.0).collect();
    let hill = stats::hill_estimator(&mags, params.hill_k)?;

    let mut scaled_residuals = Vec::new();
    for &n in n_grid {
        let a_n = cl.scaling_constant(&label, lambda, n)?;
        let set = if n + m <= params.n_hill {
            let take = params.iqr_replicas.min(reps.len());
            residual_set(&reps[..take], 0, n, m, a_n, meta("stable_residual", n, m, take))
        } else {
            let b = *cl.boundary().ok_or(LabError::Invalid("stable probe needs a boundary parameter".into()))?;
            let mut cfg = SimConfig::new(n, m, vec![lambda], rng::derive_seed(seed, &format!("stable-residual-{n}")))
                .with_z_depths(&[n, n + m])
                .with_boundary(b);
            if let Some(cut) = params.prune_above {
                cfg = cfg.with_pruning(cut);
            }
            let deep = run_replicas(law, &cfg, 0..params.iqr_replicas as u64)?;
            residual_set(&deep, 0, n, m, a_n, meta("stable_residual", n, m, deep.len()))
        };
        scaled_residuals.push((n, set));
    }
    let iqr = scaled_residuals.iter().map(|(n, s)| (*n, stats::iqr(&s.moduli()))).collect();
    Ok(StableProbeReport { alpha_target: alpha, hill, iqr, scaled_residuals, hill_sample })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Gaussian,
    GaussianBoundary,
    Extremal,
    StableBoundary,
    SenetaHeyde,
    Minimum,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Gaussian => "gaussian",
            ExperimentKind::GaussianBoundary => "gaussian_boundary",
            ExperimentKind::Extremal => "extremal",
            ExperimentKind::StableBoundary => "stable_boundary",
            ExperimentKind::SenetaHeyde => "seneta_heyde",
            ExperimentKind::Minimum => "minimum",
        }
    }
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub law: ReproductionLaw,
    pub lambda: Complex64,
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
    pub prune_above: Option<f64>,
    pub seed: u64,
}

impl ExperimentSpec {
    /// Defaults for a kind; law and lambda still need to be set.
    pub fn new(kind: ExperimentKind, law: ReproductionLaw, lambda: Complex64) -> Self {
        Self {
            kind,
            law,
            lambda,
            n_grid: vec![12],
            extra_m: 8,
            replicas: 2000,
            resamples: stats::DEFAULT_RESAMPLES,
            hill_k: 500,
            hill_replicas: 20_000,
            truncation_k: 6.0,
            k_sweep: vec![4.0, 6.0, 8.0],
            tip_n: 18,
            tip_k: DEFAULT_WINDOW_TIPS,
            n_ref: 18,
            prune_above: None,
            seed: 0,
        }
    }

    /// Observation generation of the residual samplers.
    pub fn n(&self) -> usize {
        self.n_grid.first().copied().unwrap_or(0)
    }

    /// Hard check that the kind matches the regime of `lambda`.
    pub fn validate(&self, cl: &Classifier) -> Result<RegimeLabel, LabError> {
        if self.n_grid.is_empty() {
            return Err(LabError::EmptyGrid);
        }
        let label = cl.classify(self.lambda);
        let ok = match self.kind {
            ExperimentKind::Gaussian => matches!(
                label,
                RegimeLabel::GaussianInterior { nondegenerate_2theta: true, degenerate_variance: false, .. }
            ),
            ExperimentKind::GaussianBoundary => matches!(label, RegimeLabel::GaussianBoundary { .. }),
            ExperimentKind::Extremal => label == RegimeLabel::Extremal,
            ExperimentKind::StableBoundary => matches!(label, RegimeLabel::StableBoundary { .. }),
            ExperimentKind::SenetaHeyde | ExperimentKind::Minimum => {
                if cl.boundary().is_none() {
                    return Err(LabError::NoBoundary(RegimeError::NoRoot {
                        lo: crate::regimes::THETA_STAR_BRACKET.0,
                        hi: crate::regimes::THETA_STAR_BRACKET.1,
                    }));
                }
                true
            }
        };
        if !ok {
            return Err(LabError::KindMismatch { kind: self.kind.as_str(), label: label.describe() });
        }
        if self.replicas < 2 {
            return Err(LabError::Invalid("replicas must be at least 2".into()));
        }
        Ok(label)
    }
}

/// Residual samples `a_n (Z_{n+m} - Z_n)` at the spec's first `n`.
pub fn sample_residuals(spec: &ExperimentSpec) -> Result<SampleSet, LabError> {
    let cl = Classifier::new(spec.law.clone());
    let label = spec.validate(&cl)?;
    let (n, m) = (spec.n(), spec.extra_m);
    let a_n = cl.scaling_constant(&label, spec.lambda, n)?;
    let mut cfg =
        SimConfig::new(n, m, vec![spec.lambda], rng::derive_seed(spec.seed, "residual")).with_z_depths(&[n, n + m]);
    if let Some(cut) = spec.prune_above {
        let b = *cl.boundary().ok_or(LabError::Invalid("pruning needs a boundary parameter".into()))?;
        cfg = cfg.with_boundary(b).with_pruning(cut);
    }
    let reps = run_replicas(&spec.law, &cfg, 0..spec.replicas as u64)?;
    let meta = SampleMeta {
        source: "residual".into(),
        law_id: law_id(&spec.law),
        lambda: spec.lambda,
        n,
        extra_m: m,
        replicas: spec.replicas,
        regime: label.kind().as_str().into(),
        seed: spec.seed,
        extinct_count: 0,
        rejected: 0,
    };
    Ok(residual_set(&reps, 0, n, m, a_n, meta))
}

/// Ordered `key: value` report. The body is deterministic given the spec;
/// timing lines are kept apart.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub body: Vec<(String, String)>,
    pub timing: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.body.push((key.into(), value.to_string()));
    }

    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, format!("{value:.16e}"));
    }

    pub fn check(&mut self, name: &str, pass: bool) -> bool {
        self.push(format!("check.{name}"), if pass { "PASS" } else { "FAIL" });
        pass
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.body.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn body_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.body {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = self.body_text();
        for (k, v) in &self.timing {
            let _ = writeln!(out, "timing.{k}: {v}");
        }
        out
    }

    pub fn all_passed(&self) -> bool {
        self.body.iter().filter(|(k, _)| k.starts_with("check.")).all(|(_, v)| v == "PASS")
    }
}

/// Report plus the sample sets it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub report: Report,
    pub samples: Vec<(String, SampleSet)>,
}

fn push_moments(report: &mut Report, prefix: &str, m: &MomentSummary) {
    report.push_f64(format!("{prefix}.mean.re"), m.mean.re);
    report.push_f64(format!("{prefix}.mean.im"), m.mean.im);
    report.push_f64(format!("{prefix}.mean.se"), m.mean_se);
    report.push_f64(format!("{prefix}.abs2"), m.abs2);
    report.push_f64(format!("{prefix}.abs2.se"), m.abs2_se);
    report.push_f64(format!("{prefix}.pseudo2.re"), m.pseudo2.re);
    report.push_f64(format!("{prefix}.pseudo2.im"), m.pseudo2.im);
    report.push_f64(format!("{prefix}.pseudo2.se"), m.pseudo2_se);
}

fn push_test(report: &mut Report, prefix: &str, t: &TestReport) {
    report.push_f64(format!("{prefix}.statistic"), t.statistic);
    report.push_f64(format!("{prefix}.p_value"), t.p_value);
    report.push(format!("{prefix}.method"), t.method);
    report.push(format!("{prefix}.resamples"), t.resamples);
}

/// Runs the sampler pair and statistical checks for `spec.kind`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome, LabError> {
    let started = Instant::now();
    let cl = Classifier::new(spec.law.clone());
    let label = spec.validate(&cl)?;
    let mut report = Report::default();
    let mut samples = Vec::new();
    report.push("kind", spec.kind.as_str());
    report.push("law", law_id(&spec.law));
    report.push_f64("lambda.re", spec.lambda.re);
    report.push_f64("lambda.im", spec.lambda.im);
    report.push("regime", label.describe());
    report.push("n_grid", format!("{:?}", spec.n_grid));
    report.push("extra_m", spec.extra_m);
    report.push("replicas", spec.replicas);
    report.push("resamples", spec.resamples);
    report.push("seed", spec.seed);
    let test_seed = rng::derive_seed(spec.seed, "tests");

    match spec.kind {
        ExperimentKind::Gaussian => {
            let residuals = sample_residuals(spec)?;
            let reference = sample_gaussian_reference(&spec.law, spec.lambda, spec.replicas, spec.n_ref, spec.seed)?;
            let param = ComplexParam::new(&spec.law, spec.lambda)?;
            let rho = param.rho();
            let target = param.sigma_lambda_sq / (1.0 - rho) * (1.0 - rho.powi(spec.extra_m as i32));
            let m = stats::moment_summary(&residuals.samples)?;
            push_moments(&mut report, "residual", &m);
            report.push_f64("residual.abs2.target", target);
            report.check("second_moment", (m.abs2 - target).abs() < 3.0 * m.abs2_se);
            if param.limit_is_complex() {
                report.check("pseudo_moment_vanishes", m.pseudo2.norm() < 3.0 * m.pseudo2_se);
            } else {
                report.check("pseudo_equals_absolute", (m.pseudo2.re - m.abs2).abs() < 3.0 * m.abs2_se.max(m.pseudo2_se));
            }
            let t = stats::energy_test(&residuals.samples, &reference.set.samples, spec.resamples, test_seed)?;
            push_test(&mut report, "energy", &t);
            report.check("energy_p_above_0.01", t.p_value > 0.01);
            let (ks_abs, p_abs) = stats::ks_two_sample(&residuals.moduli(), &reference.set.moduli());
            report.push_f64("diagnostic.ks_abs.statistic", ks_abs);
            report.push_f64("diagnostic.ks_abs.p_value", p_abs);
            samples.push(("residuals".to_string(), residuals));
            samples.push(("reference".to_string(), reference.set));
        }
        ExperimentKind::GaussianBoundary => {
            let residuals = sample_residuals(spec)?;
            let reference = sample_boundary_reference(&spec.law, spec.lambda, spec.replicas, spec.n_ref, spec.seed)?;
            let param = ComplexParam::new(&spec.law, spec.lambda)?;
            let rho = param.rho();
            // E|a_n (Z_{n+m} - Z_n)|^2 = sqrt(n) E[W_n] sigma^2 (1 - rho^m)/(1 - rho) with E W_n = 1
            let target = (spec.n() as f64).sqrt() * param.sigma_lambda_sq / (1.0 - rho) * (1.0 - rho.powi(spec.extra_m as i32));
            let m = stats::moment_summary(&residuals.samples)?;
            push_moments(&mut report, "residual", &m);
            report.push_f64("residual.abs2.target", target);
            report.check("second_moment", (m.abs2 - target).abs() < 3.0 * m.abs2_se);
            report.push("reference.rejected", reference.set.meta.rejected);
            let t = stats::energy_test(&residuals.samples, &reference.set.samples, spec.resamples, test_seed)?;
            push_test(&mut report, "energy", &t);
            report.check("energy_p_above_0.01", t.p_value > 0.01);
            samples.push(("residuals".to_string(), residuals));
            samples.push(("reference".to_string(), reference.set));
        }
        ExperimentKind::Extremal => {
            let residuals = sample_residuals(spec)?;
            let mut windows = vec![spec.truncation_k];
            windows.extend(spec.k_sweep.iter().copied().filter(|k| *k != spec.truncation_k));
            let series = sample_extremal_series(
                &spec.law,
                spec.lambda,
                spec.replicas,
                &windows,
                SeriesParams { tip_n: spec.tip_n, extra_m: spec.extra_m, tip_k: spec.tip_k },
                spec.seed,
            )?;
            report.push_f64("series.mean_tips_used", series.mean_tips_used);
            let primary = &series.by_window[0].1;
            let t = stats::energy_test(&residuals.samples, &primary.samples, spec.resamples, test_seed)?;
            push_test(&mut report, "energy", &t);
            report.check("energy_p_above_0.01", t.p_value > 0.01);
            let mut sweep: Vec<&(f64, SampleSet)> = series.by_window.iter().collect();
            sweep.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut diffs = Vec::new();
            for w in sweep.windows(2) {
                let mut d: Vec<f64> =
                    w[1].1.samples.iter().zip(&w[0].1.samples).map(|(a, b)| (a - b).norm()).collect();
                let med = median(&mut d);
                report.push_f64(format!("series.median_abs_diff.k{}_k{}", w[1].0, w[0].0), med);
                diffs.push(med);
            }
            if diffs.len() >= 2 {
                report.check("series_stabilizes", diffs.windows(2).all(|d| d[1] < d[0]));
            }
            samples.push(("residuals".to_string(), residuals));
            for (k, set) in series.by_window {
                samples.push((format!("series_k{k}"), set));
            }
        }
        ExperimentKind::StableBoundary => {
            let params = StableProbeParams {
                n_hill: spec.n_ref,
                hill_replicas: spec.hill_replicas,
                hill_k: spec.hill_k,
                extra_m: spec.extra_m,
                iqr_replicas: spec.replicas,
                prune_above: spec.prune_above,
            };
            let probe = stable_boundary_probe(&spec.law, spec.lambda, &spec.n_grid, params, spec.seed)?;
            report.push_f64("alpha.target", probe.alpha_target);
            report.push_f64("alpha.hill", probe.hill.alpha_hat);
            report.push_f64("alpha.ci90.lo", probe.hill.ci90.0);
            report.push_f64("alpha.ci90.hi", probe.hill.ci90.1);
            report.push("alpha.unreliable", probe.hill.unreliable);
            report.check("alpha_within_0.2", (probe.hill.alpha_hat - probe.alpha_target).abs() <= 0.2);
            for (n, q) in &probe.iqr {
                report.push_f64(format!("iqr.n{n}"), *q);
            }
            if let (Some(first), Some(last)) = (probe.iqr.first(), probe.iqr.last()) {
                let ratio = last.1 / first.1;
                report.push_f64("iqr.ratio_last_first", ratio);
                report.check("iqr_ratio_within_factor_2", (0.5..=2.0).contains(&ratio));
            }
            samples.push(("hill".to_string(), probe.hill_sample));
            for (n, set) in probe.scaled_residuals {
                samples.push((format!("residuals_n{n}"), set));
            }
        }
        ExperimentKind::SenetaHeyde => {
            let table = seneta_heyde_check(&spec.law, &spec.n_grid, spec.replicas, spec.seed)?;
            report.push_f64("target_c", table.target);
            for row in &table.rows {
                report.push_f64(format!("median.n{}", row.n), row.median_ratio);
                report.push(format!("excluded.n{}", row.n), row.excluded);
            }
            let gaps: Vec<f64> = table.rows.iter().map(|r| (r.median_ratio - table.target).abs()).collect();
            report.check("moves_toward_c", gaps.windows(2).all(|g| g[1] < g[0]));
        }
        ExperimentKind::Minimum => {
            let b = *cl.boundary().expect("validated");
            let trend = simulator::sup_weight_trend(&spec.law, b, &spec.n_grid, spec.replicas as u64, rng::derive_seed(spec.seed, "minimum"))?;
            for (n, med) in &trend {
                report.push_f64(format!("median_sqrt_n_sup_weight.n{n}"), *med);
            }
            report.check("strictly_decreasing", trend.windows(2).all(|w| w[1].1 < w[0].1));
        }
    }
    report.timing.push(("seconds".into(), format!("{:.3}", started.elapsed().as_secs_f64())));
    Ok(ExperimentOutcome { report, samples })
}
