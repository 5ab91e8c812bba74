//! Monte Carlo checks of the auxiliary inequalities for complex martingales and
//! weighted sums, and of the cancellation estimate.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ComplexParam, ModelError, ReproductionLaw};
use crate::rng;
use crate::simulator::{run_replicas, SimConfig, SimError};

/// Inner Monte Carlo draws per inequality trial.
pub const INNER_DRAWS: usize = 10_000;
/// Allowed excess of the left side, in standard errors.
pub const SE_SLACK: f64 = 5.0;
/// Relative slack of the pointwise parallelogram check.
pub const POINTWISE_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PropsError {
    #[error("exponent p = {0} outside [1, 2]")]
    BadExponent(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Centered complex laws for increments and summands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IncrementLaw {
    /// Independent `N(0, 1/2)` coordinates.
    ComplexGaussian,
    /// `(+-1 +- i)/sqrt 2`.
    ComplexRademacher,
    /// Unit modulus, uniform phase.
    RandomPhase,
    /// `Exp(1) - 1` along a fixed random direction; skewed.
    CenteredExponential,
    /// Pareto(1.5) modulus with uniform phase; infinite variance.
    HeavyTailed,
    /// A law drawn per trial from the others.
    Mixed,
}

impl IncrementLaw {
    pub const CONCRETE: [IncrementLaw; 5] = [
        IncrementLaw::ComplexGaussian,
        IncrementLaw::ComplexRademacher,
        IncrementLaw::RandomPhase,
        IncrementLaw::CenteredExponential,
        IncrementLaw::HeavyTailed,
    ];

    fn resolve<R: Rng + ?Sized>(self, rng: &mut R) -> IncrementLaw {
        match self {
            IncrementLaw::Mixed => Self::CONCRETE[rng.random_range(0..Self::CONCRETE.len())],
            other => other,
        }
    }

    /// One centered draw. `dir` is the fixed direction of the skewed law.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R, dir: Complex64) -> Complex64 {
        match self {
            IncrementLaw::ComplexGaussian | IncrementLaw::Mixed => {
                let x: f64 = StandardNormal.sample(rng);
                let y: f64 = StandardNormal.sample(rng);
                Complex64::new(x, y) * FRAC_1_SQRT_2
            }
            IncrementLaw::ComplexRademacher => {
                let b: u32 = rng.random_range(0..4);
                let re = if b & 1 == 0 { 1.0 } else { -1.0 };
                let im = if b & 2 == 0 { 1.0 } else { -1.0 };
                Complex64::new(re, im) * FRAC_1_SQRT_2
            }
            IncrementLaw::RandomPhase => Complex64::from_polar(1.0, rng.random::<f64>() * TAU),
            IncrementLaw::CenteredExponential => {
                let e: f64 = Exp1.sample(rng);
                dir * (e - 1.0)
            }
            IncrementLaw::HeavyTailed => {
                let u: f64 = 1.0 - rng.random::<f64>();
                Complex64::from_polar(u.powf(-1.0 / 1.5), rng.random::<f64>() * TAU)
            }
        }
    }
}

fn check_exponent(p: f64) -> Result<(), PropsError> {
    if (1.0..=2.0).contains(&p) {
        Ok(())
    } else {
        Err(PropsError::BadExponent(p))
    }
}

#[inline]
fn pow_p(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 1.0 {
        x
    } else {
        x.powf(p)
    }
}

/// Randomized martingale trials for the inequality `E f(|M_n|) <= 4 sum E f(|D_k|)`
/// with `f(x) = x^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialSpec {
    pub trials: usize,
    /// Each trial draws its length uniformly from `1..=martingale_length`.
    pub martingale_length: usize,
    pub increment: IncrementLaw,
    pub p: f64,
    pub seed: u64,
    pub inner_draws: usize,
}

impl TrialSpec {
    pub fn new(trials: usize, p: f64, seed: u64) -> Self {
        Self { trials, martingale_length: 8, increment: IncrementLaw::Mixed, p, seed, inner_draws: INNER_DRAWS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub length: usize,
    pub law: IncrementLaw,
    pub adaptive: bool,
    /// Estimates of `E f(|M_n|)` and `4 sum E f(|D_k|)`.
    pub lhs: f64,
    pub rhs: f64,
    /// Standard error of the paired difference `lhs - rhs`.
    pub se: f64,
}

impl TrialOutcome {
    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs
    }

    pub fn violated(&self) -> bool {
        self.lhs - self.rhs > SE_SLACK * self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvReport {
    pub trials: usize,
    pub violations: usize,
    pub max_ratio: f64,
}

/// Runs one trial. Increments are martingale transforms `D_k = H_k xi_k` with
/// `xi_k` iid centered and `H_k` either fixed or a function of `M_{k-1}`.
pub fn tv_trial(spec: &TrialSpec, trial: u64) -> TrialOutcome {
    let mut rng = rng::stream(rng::derive_seed(spec.seed, "tv-trial"), trial);
    let length = rng.random_range(1..=spec.martingale_length.max(1));
    let law = spec.increment.resolve(&mut rng);
    let adaptive = rng.random::<bool>();
    let dir = Complex64::from_polar(1.0, rng.random::<f64>() * TAU);
    let weights: Vec<Complex64> = (0..length)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            Complex64::from_polar(g.exp(), rng.random::<f64>() * TAU)
        })
        .collect();
    let p = spec.p;
    let (mut sl, mut sr, mut sd, mut sdd) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..spec.inner_draws {
        let mut m = Complex64::new(0.0, 0.0);
        let mut rhs = 0.0;
        for c in &weights {
            let mut h = *c;
            if adaptive {
                let r = m.norm();
                h /= (1.0 + r).sqrt();
                if r > 0.0 {
                    h *= m / r;
                }
            }
            let d = h * law.sample(&mut rng, dir);
            rhs += pow_p(d.norm(), p);
            m += d;
        }
        let lhs = pow_p(m.norm(), p);
        let diff = lhs - 4.0 * rhs;
        sl += lhs;
        sr += 4.0 * rhs;
        sd += diff;
        sdd += diff * diff;
    }
    let k = spec.inner_draws as f64;
    let mean_d = sd / k;
    let var_d = ((sdd - k * mean_d * mean_d) / (k - 1.0).max(1.0)).max(0.0);
    TrialOutcome { length, law, adaptive, lhs: sl / k, rhs: sr / k, se: (var_d / k).sqrt() }
}

pub fn check_tv_inequality(spec: &TrialSpec) -> Result<TvReport, PropsError> {
    check_exponent(spec.p)?;
    if spec.inner_draws < 2 {
        return Err(PropsError::Invalid("inner_draws must be at least 2".into()));
    }
    let outcomes: Vec<TrialOutcome> = (0..spec.trials as u64).into_par_iter().map(|t| tv_trial(spec, t)).collect();
    Ok(TvReport {
        trials: spec.trials,
        violations: outcomes.iter().filter(|o| o.violated()).count(),
        max_ratio: outcomes.iter().map(TrialOutcome::ratio).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParallelogramReport {
    pub points: usize,
    pub violations: usize,
    /// Largest `lhs / rhs` over all points with `rhs > 0`.
    pub max_ratio: f64,
}

/// `f(|z+w|) + f(|z-w|)` and `2 (f(|z|) + f(|w|))`.
pub fn parallelogram_sides(z: Complex64, w: Complex64, p: f64) -> (f64, f64) {
    (pow_p((z + w).norm(), p) + pow_p((z - w).norm(), p), 2.0 * (pow_p(z.norm(), p) + pow_p(w.norm(), p)))
}

fn random_point<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    // moduli spread over six decades, occasionally exactly zero
    if rng.random_range(0..64) == 0 {
        return Complex64::new(0.0, 0.0);
    }
    let r = 10f64.powf(rng.random_range(-3.0..3.0));
    Complex64::from_polar(r, rng.random::<f64>() * TAU)
}

/// Pointwise check over `points` random pairs.
pub fn check_parallelogram_bound(points: usize, p: f64, seed: u64) -> Result<ParallelogramReport, PropsError> {
    check_exponent(p)?;
    const CHUNK: usize = 8192;
    let base = rng::derive_seed(seed, "parallelogram");
    let chunks = points.div_ceil(CHUNK);
    let (violations, max_ratio) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(base, c as u64);
            let take = CHUNK.min(points - c * CHUNK);
            let mut v = 0usize;
            let mut worst = 0.0f64;
            for _ in 0..take {
                let (z, w) = (random_point(&mut rng), random_point(&mut rng));
                let (lhs, rhs) = parallelogram_sides(z, w, p);
                if lhs > rhs * (1.0 + POINTWISE_SLACK) {
                    v += 1;
                }
                if rhs > 0.0 {
                    worst = worst.max(lhs / rhs);
                }
            }
            (v, worst)
        })
        .reduce(|| (0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1)));
    Ok(ParallelogramReport { points, violations, max_ratio })
}

/// `int_0^y (c x 1{x < 1/c} + 1{x >= 1/c}) dx`; its mean over draws of `|Y|` is
/// the integral of `c x P(|Y| > x)` on `[0, 1/c]` plus that of `P(|Y| > x)`
/// beyond `1/c`, exactly, for the empirical law.
pub fn tail_integrand(y: f64, c: f64) -> f64 {
    let knee = 1.0 / c;
    let lo = y.min(knee);
    0.5 * c * lo * lo + (y - knee).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub eps: f64,
    pub p_hat: f64,
    pub bound: f64,
    /// Combined standard error of `p_hat - bound`.
    pub se: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub draws: usize,
    pub max_weight: f64,
    pub rows: Vec<TailRow>,
    pub violations: usize,
}

/// Compares `P(|sum c_k Y_k| > eps)` with the bound on each `eps` of the grid.
pub fn check_weighted_tail_bound(
    weights: &[Complex64],
    law: IncrementLaw,
    eps_grid: &[f64],
    draws: usize,
    seed: u64,
) -> Result<TailReport, PropsError> {
    let total: f64 = weights.iter().map(|c| c.norm()).sum();
    if weights.is_empty() || (total - 1.0).abs() > 1e-12 {
        return Err(PropsError::Precondition(format!("sum of |c_k| is {total}, not 1")));
    }
    if let Some(e) = eps_grid.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(PropsError::Invalid(format!("eps = {e} outside (0, 1)")));
    }
    if draws < 2 {
        return Err(PropsError::Invalid("draws must be at least 2".into()));
    }
    let c = weights.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let base = rng::derive_seed(seed, "weighted-tail");
    let mut dir_rng = rng::stream(base, u64::MAX);
    let law = law.resolve(&mut dir_rng);
    let dir = Complex64::from_polar(1.0, dir_rng.random::<f64>() * TAU);
    // per draw: |sum c_k Y_k| and the mean of the integrand over the Y_k
    let draws_data: Vec<(f64, f64)> = (0..draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(base, i);
            let mut s = Complex64::new(0.0, 0.0);
            let mut integ = 0.0;
            for w in weights {
                let y = law.sample(&mut rng, dir);
                s += w * y;
                integ += tail_integrand(y.norm(), c);
            }
            (s.norm(), integ / weights.len() as f64)
        })
        .collect();
    let k = draws as f64;
    let rows: Vec<TailRow> = eps_grid
        .iter()
        .map(|&eps| {
            let scale = 8.0 / (eps * eps);
            let (mut sd, mut sdd, mut sp, mut sb) = (0.0, 0.0, 0.0, 0.0);
            for &(m, integ) in &draws_data {
                let ind = if m > eps { 1.0 } else { 0.0 };
                let b = scale * integ;
                let d = ind - b;
                sp += ind;
                sb += b;
                sd += d;
                sdd += d * d;
            }
            let mean_d = sd / k;
            let var = ((sdd - k * mean_d * mean_d) / (k - 1.0)).max(0.0);
            let se = (var / k).sqrt();
            let (p_hat, bound) = (sp / k, sb / k);
            TailRow { eps, p_hat, bound, se, violated: p_hat > bound + SE_SLACK * se }
        })
        .collect();
    let violations = rows.iter().filter(|r| r.violated).count();
    Ok(TailReport { draws, max_weight: c, rows, violations })
}

/// Weight families `L(v)` for the cancellation estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum CancellationFamily {
    /// `children` weights of modulus `modulus`, each with an independent uniform
    /// phase when `random_phase` is set, otherwise real and positive.
    Phases { children: usize, modulus: f64, random_phase: bool },
    /// `L(v) = e^{-lambda X_v} / m(theta)` over the children of a branching
    /// random walk.
    Walk { law: ReproductionLaw, lambda: Complex64 },
}

/// First-generation quantities of a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CancellationMoments {
    /// `E sum |L(v)|`.
    pub mean_w1: f64,
    /// `|E Z_1|`.
    pub abs_a: f64,
    /// `E sum |L(v)|^p`.
    pub pth: f64,
}

impl CancellationFamily {
    pub fn moments(&self, p: f64) -> CancellationMoments {
        match self {
            CancellationFamily::Phases { children, modulus, random_phase } => {
                let n = *children as f64;
                CancellationMoments {
                    mean_w1: n * modulus,
                    abs_a: if *random_phase { 0.0 } else { n * modulus },
                    pth: n * modulus.powf(p),
                }
            }
            CancellationFamily::Walk { law, lambda } => {
                let m_theta = law.m_real(lambda.re);
                CancellationMoments {
                    mean_w1: 1.0,
                    abs_a: law.laplace_m(*lambda).norm() / m_theta,
                    pth: law.m_real(p * lambda.re) / m_theta.powf(p),
                }
            }
        }
    }

    fn validate(&self, p: f64) -> Result<CancellationMoments, PropsError> {
        check_exponent(p)?;
        let m = self.moments(p);
        if (m.mean_w1 - 1.0).abs() > 1e-12 {
            return Err(PropsError::Precondition(format!("E W_1 = {} is not 1", m.mean_w1)));
        }
        if m.abs_a >= 1.0 - 1e-12 {
            return Err(PropsError::Precondition(format!("|E Z_1| = {} is not below 1", m.abs_a)));
        }
        if m.pth >= 1.0 {
            return Err(PropsError::Precondition(format!("E sum |L|^p = {} is not below 1", m.pth)));
        }
        Ok(m)
    }

    /// `Z_n` for one tree at each depth `0..=depth`.
    fn phases_path(children: usize, modulus: f64, depth: usize, rng: &mut impl Rng) -> Vec<Complex64> {
        let mut level = vec![Complex64::new(1.0, 0.0)];
        let mut out = vec![Complex64::new(1.0, 0.0)];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(level.len() * children);
            for l in &level {
                for _ in 0..children {
                    next.push(l * Complex64::from_polar(modulus, rng.random::<f64>() * TAU));
                }
            }
            out.push(next.iter().sum());
            level = next;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CancellationReport {
    pub p: f64,
    pub moments: CancellationMoments,
    pub ns: Vec<usize>,
    /// Empirical `E |Z_n|^p` with its standard error, per `n`.
    pub mean_abs_p: Vec<f64>,
    pub se: Vec<f64>,
    /// Empirical `E |Z_n|^2`, per `n`.
    pub mean_abs2: Vec<f64>,
    pub abs2_se: Vec<f64>,
    pub slope: f64,
    pub r2: f64,
    pub passed: bool,
}

/// Least-squares line through `(x, y)`; returns `(slope, r^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    (mean, (var / k).sqrt())
}

/// Simulates `Z_n` for the family at every `n` in `ns` over `trees` independent
/// trees and fits `log E|Z_n|^{p ^ 2}` against `n`.
pub fn check_cancellation(
    family: &CancellationFamily,
    p: f64,
    ns: &[usize],
    trees: usize,
    seed: u64,
) -> Result<CancellationReport, PropsError> {
    let moments = family.validate(p)?;
    if ns.len() < 2 || trees < 2 {
        return Err(PropsError::Invalid("need at least two depths and two trees".into()));
    }
    let depth = *ns.iter().max().expect("non-empty");
    let paths: Vec<Vec<Complex64>> = match family {
        CancellationFamily::Phases { children, modulus, .. } => {
            let base = rng::derive_seed(seed, "cancellation-phases");
            (0..trees as u64)
                .into_par_iter()
                .map(|t| CancellationFamily::phases_path(*children, *modulus, depth, &mut rng::stream(base, t)))
                .collect()
        }
        CancellationFamily::Walk { law, lambda } => {
            // Z_n = Z_n(lambda) (m(lambda) / m(theta))^n
            let a = law.laplace_m(*lambda) / law.m_real(lambda.re);
            let cfg = SimConfig::new(depth, 0, vec![*lambda], rng::derive_seed(seed, "cancellation-walk")).with_z_depths(ns);
            let reps = run_replicas(law, &cfg, 0..trees as u64)?;
            reps.into_iter()
                .map(|r| {
                    let mut out = vec![Complex64::new(f64::NAN, f64::NAN); depth + 1];
                    for &n in ns {
                        out[n] = r.z[0][n] * a.powi(n as i32);
                    }
                    out
                })
                .collect()
        }
    };
    let q = p.min(2.0);
    let mut mean_abs_p = Vec::new();
    let mut se = Vec::new();
    let mut mean_abs2 = Vec::new();
    let mut abs2_se = Vec::new();
    for &n in ns {
        let vals: Vec<f64> = paths.iter().map(|path| pow_p(path[n].norm(), q)).collect();
        let (m, s) = mean_se(&vals);
        mean_abs_p.push(m);
        se.push(s);
        let sq: Vec<f64> = paths.iter().map(|path| path[n].norm_sqr()).collect();
        let (m2, s2) = mean_se(&sq);
        mean_abs2.push(m2);
        abs2_se.push(s2);
    }
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let y: Vec<f64> = mean_abs_p.iter().map(|m| m.ln()).collect();
    let (slope, r2) = linear_fit(&x, &y);
    Ok(CancellationReport {
        p,
        moments,
        ns: ns.to_vec(),
        mean_abs_p,
        se,
        mean_abs2,
        abs2_se,
        slope,
        r2,
        passed: slope < 0.0 && r2 > 0.9,
    })
}

/// The binary-Gaussian family used by the suite: `L = e^{-2 lambda X} / m(2 theta)`
/// at `lambda = 0.3 + 0.2i`, a point with `m(2 theta) < |m(lambda)|^2`.
pub fn binary_gaussian_cancellation_family() -> CancellationFamily {
    let lambda = Complex64::new(0.3, 0.2);
    debug_assert!(ComplexParam::new(&ReproductionLaw::binary_gaussian(), lambda).is_ok_and(|c| c.rho() < 1.0));
    CancellationFamily::Walk { law: ReproductionLaw::binary_gaussian(), lambda: 2.0 * lambda }
}

/// Sizes of one suite run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteSizes {
    pub tv_trials: usize,
    pub tv_inner: usize,
    pub parallelogram_points: usize,
    pub tail_draws: usize,
    pub cancellation_trees: usize,
}

impl SuiteSizes {
    pub const FULL: SuiteSizes = SuiteSizes {
        tv_trials: 10_000,
        tv_inner: INNER_DRAWS,
        parallelogram_points: 1_000_000,
        tail_draws: 20_000,
        cancellation_trees: 2000,
    };
    pub const QUICK: SuiteSizes = SuiteSizes {
        tv_trials: 200,
        tv_inner: 2000,
        parallelogram_points: 50_000,
        tail_draws: 4000,
        cancellation_trees: 400,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    /// One report per exponent in `{1, 1.5, 2}`; trials are split between them.
    pub tv: Vec<(f64, TvReport)>,
    pub parallelogram: Vec<(f64, ParallelogramReport)>,
    pub tail: Vec<(String, TailReport)>,
    pub cancellation: Vec<(String, CancellationReport)>,
}

impl SuiteReport {
    pub fn violations(&self) -> usize {
        self.tv.iter().map(|(_, r)| r.violations).sum::<usize>()
            + self.parallelogram.iter().map(|(_, r)| r.violations).sum::<usize>()
            + self.tail.iter().map(|(_, r)| r.violations).sum::<usize>()
            + self.cancellation.iter().filter(|(_, r)| !r.passed).count()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }
}

/// Every check of the module at the given sizes.
pub fn run_suite(sizes: SuiteSizes, seed: u64) -> Result<SuiteReport, PropsError> {
    const EXPONENTS: [f64; 3] = [1.0, 1.5, 2.0];
    let mut tv = Vec::new();
    for (i, &p) in EXPONENTS.iter().enumerate() {
        let share = sizes.tv_trials / 3 + usize::from(i < sizes.tv_trials % 3);
        let mut spec = TrialSpec::new(share, p, rng::derive_seed(seed, &format!("tv-{i}")));
        spec.inner_draws = sizes.tv_inner;
        tv.push((p, check_tv_inequality(&spec)?));
    }
    let mut parallelogram = Vec::new();
    for (i, &p) in EXPONENTS.iter().enumerate() {
        let share = sizes.parallelogram_points / 3 + usize::from(i < sizes.parallelogram_points % 3);
        parallelogram.push((p, check_parallelogram_bound(share, p, rng::derive_seed(seed, &format!("pg-{i}")))?));
    }
    let eps_grid = [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 0.99];
    let mut tail = Vec::new();
    let weight_sets: [(&str, Vec<Complex64>); 3] = [
        ("single", vec![Complex64::new(1.0, 0.0)]),
        ("equal_16", vec![Complex64::new(1.0 / 16.0, 0.0); 16]),
        ("geometric_phases", {
            let raw: Vec<Complex64> = (0..12).map(|k| Complex64::from_polar(0.7f64.powi(k), 0.9 * k as f64)).collect();
            let s: f64 = raw.iter().map(|c| c.norm()).sum();
            raw.into_iter().map(|c| c / s).collect()
        }),
    ];
    for (wname, weights) in &weight_sets {
        for law in IncrementLaw::CONCRETE {
            let name = format!("{wname}/{law:?}");
            let r = check_weighted_tail_bound(weights, law, &eps_grid, sizes.tail_draws, rng::derive_seed(seed, &name))?;
            tail.push((name, r));
        }
    }
    let ns = [4, 8, 12, 16];
    let cancellation = vec![
        (
            "random_phases".to_string(),
            check_cancellation(
                &CancellationFamily::Phases { children: 2, modulus: 0.5, random_phase: true },
                2.0,
                &ns,
                sizes.cancellation_trees,
                rng::derive_seed(seed, "cancel-phases"),
            )?,
        ),
        (
            "binary_gaussian".to_string(),
            check_cancellation(
                &binary_gaussian_cancellation_family(),
                1.5,
                &ns,
                sizes.cancellation_trees,
                rng::derive_seed(seed, "cancel-walk"),
            )?,
        ),
    ];
    Ok(SuiteReport { seed, tv, parallelogram, tail, cancellation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn laws_are_centered() {
        let mut rng = rng::stream(5, 0);
        let dir = Complex64::from_polar(1.0, 0.4);
        for law in IncrementLaw::CONCRETE {
            let k = 200_000;
            let draws: Vec<Complex64> = (0..k).map(|_| law.sample(&mut rng, dir)).collect();
            let mean: Complex64 = draws.iter().sum::<Complex64>() / k as f64;
            let mean_abs = draws.iter().map(|z| z.norm()).sum::<f64>() / k as f64;
            // heavy tail: sd of the mean is not finite, compare on a loose scale
            let tol = if law == IncrementLaw::HeavyTailed { 0.1 } else { 0.01 };
            assert!(mean.norm() < tol * mean_abs.max(1.0), "{law:?}: {mean}");
        }
    }

    #[test]
    fn single_increment_ratio_is_a_quarter() {
        let mut spec = TrialSpec::new(20, 1.3, 9);
        spec.martingale_length = 1;
        spec.inner_draws = 500;
        for t in 0..20 {
            let o = tv_trial(&spec, t);
            assert_eq!(o.length, 1);
            assert!((o.ratio() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn square_exponent_ratio_is_a_quarter() {
        // orthogonal increments: E|M_n|^2 = sum E|D_k|^2
        let mut spec = TrialSpec::new(30, 2.0, 3);
        spec.increment = IncrementLaw::ComplexGaussian;
        spec.inner_draws = 20_000;
        for t in 0..30 {
            let o = tv_trial(&spec, t);
            // the paired standard error of lhs - rhs serves as the noise scale
            let gap = o.lhs - o.rhs / 4.0;
            assert!(gap.abs() < 5.0 * o.se.max(1e-300) + 1e-9 * o.rhs, "trial {t}: {o:?}");
        }
    }

    #[test]
    fn bad_exponent_is_rejected() {
        assert!(matches!(check_tv_inequality(&TrialSpec::new(1, 2.5, 0)), Err(PropsError::BadExponent(_))));
        assert!(check_parallelogram_bound(10, 0.5, 0).is_err());
    }

    #[test]
    fn parallelogram_cases() {
        let z = Complex64::new(0.3, -1.2);
        let (l, r) = parallelogram_sides(z, Complex64::new(0.0, 0.0), 1.5);
        assert!((l - r).abs() <= 1e-15 * r);
        let w = Complex64::new(2.0, 0.5);
        let (l, r) = parallelogram_sides(z, w, 2.0);
        assert!((l - r).abs() <= 1e-14 * r);
        let rep = check_parallelogram_bound(20_000, 1.5, 1).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.max_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn tail_integrand_matches_quadrature() {
        // mean of the integrand == midpoint quadrature of the tail integral
        let ys = [0.05, 0.3, 0.9, 1.7, 4.0, 12.5];
        let c = 0.4;
        let exact = ys.iter().map(|&y| tail_integrand(y, c)).sum::<f64>() / ys.len() as f64;
        let h = 1e-5;
        let mut quad = 0.0;
        let mut x = h / 2.0;
        while x < 13.0 {
            let tail = ys.iter().filter(|&&y| y > x).count() as f64 / ys.len() as f64;
            let weight = if x < 1.0 / c { c * x } else { 1.0 };
            quad += weight * tail * h;
            x += h;
        }
        assert!((exact - quad).abs() < 1e-6, "{exact} vs {quad}");
    }

    #[test]
    fn tail_bound_cases() {
        let r = check_weighted_tail_bound(&[Complex64::new(1.0, 0.0)], IncrementLaw::RandomPhase, &[0.5, 0.999], 2000, 1)
            .unwrap();
        assert_eq!(r.violations, 0);
        // |Y| = 1 with one weight: P = 1, bound = 8/eps^2 * c/2
        assert_eq!(r.rows[0].p_hat, 1.0);
        assert!((r.rows[0].bound - 16.0).abs() < 1e-12);
        assert!(check_weighted_tail_bound(&[Complex64::new(0.5, 0.0)], IncrementLaw::RandomPhase, &[0.5], 10, 1).is_err());
        assert!(check_weighted_tail_bound(&[Complex64::new(1.0, 0.0)], IncrementLaw::RandomPhase, &[1.5], 10, 1).is_err());
    }

    #[test]
    fn bounded_summands_beyond_their_range_never_exceed() {
        // |sum c_k Y_k| <= max |Y| = 1 for random phases
        let w = vec![Complex64::new(0.25, 0.0); 4];
        let r = check_weighted_tail_bound(&w, IncrementLaw::RandomPhase, &[0.9999], 1000, 3).unwrap();
        assert!(r.rows[0].p_hat < 0.01);
        assert!(!r.rows[0].violated);
    }

    #[test]
    fn cancellation_random_phases_matches_recursion() {
        let fam = CancellationFamily::Phases { children: 2, modulus: 0.5, random_phase: true };
        let r = check_cancellation(&fam, 2.0, &[2, 4, 6, 8], 4000, 11).unwrap();
        for (i, n) in r.ns.iter().enumerate() {
            let exact = 0.5f64.powi(*n as i32);
            assert!((r.mean_abs2[i] - exact).abs() < 4.0 * r.abs2_se[i], "n={n}: {} vs {exact}", r.mean_abs2[i]);
        }
        assert!(r.passed);
    }

    #[test]
    fn cancellation_preconditions() {
        let positive = CancellationFamily::Phases { children: 2, modulus: 0.5, random_phase: false };
        assert!(matches!(check_cancellation(&positive, 1.5, &[4, 8], 10, 0), Err(PropsError::Precondition(_))));
        let heavy = CancellationFamily::Phases { children: 2, modulus: 0.6, random_phase: true };
        assert!(check_cancellation(&heavy, 1.5, &[4, 8], 10, 0).is_err());
        let real = CancellationFamily::Walk { law: ReproductionLaw::binary_gaussian(), lambda: Complex64::new(0.6, 0.0) };
        assert!(check_cancellation(&real, 1.5, &[4, 8], 10, 0).is_err());
    }

    #[test]
    fn walk_family_moments() {
        // m(theta) = 2 e^{theta^2/2}; E sum |L|^p = m(p theta)/m(theta)^p
        let m = binary_gaussian_cancellation_family().moments(1.5);
        let expect = 2.0 * (0.5 * 0.81f64).exp() / (2.0 * (0.5 * 0.36f64).exp()).powf(1.5);
        assert!((m.pth - expect).abs() < 1e-12);
        assert!((m.abs_a - (-0.5 * 0.16f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn fit_on_exact_line() {
        let (s, r2) = linear_fit(&[1.0, 2.0, 3.0], &[5.0, 3.0, 1.0]);
        assert!((s + 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn parallelogram_holds_pointwise(
            zr in -1e3f64..1e3, zi in -1e3f64..1e3, wr in -1e3f64..1e3, wi in -1e3f64..1e3, p in 1.0f64..=2.0,
        ) {
            let (l, r) = parallelogram_sides(Complex64::new(zr, zi), Complex64::new(wr, wi), p);
            prop_assert!(l <= r * (1.0 + POINTWISE_SLACK) + 1e-300);
        }
    }
}
