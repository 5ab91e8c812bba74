//! Tests and estimators on complex samples.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::rng;

/// Default number of permutation / randomization resamples.
pub const DEFAULT_RESAMPLES: usize = 500;
/// Minimum accepted number of resamples.
pub const MIN_RESAMPLES: usize = 200;
/// Largest pooled sample for the energy test (the distance matrix is dense).
pub const MAX_ENERGY_POOL: usize = 12_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("{what} needs at least {needed} samples, got {got}")]
    TooFewSamples { what: &'static str, needed: usize, got: usize },
    #[error("at least {MIN_RESAMPLES} resamples required, got {0}")]
    TooFewResamples(usize),
    #[error("pooled sample of {0} exceeds the energy-test limit {MAX_ENERGY_POOL}")]
    TooLarge(usize),
    #[error("value #{index} = {value} is not a positive finite number")]
    NonPositive { index: usize, value: f64 },
    #[error("hill estimator needs 1 <= k < n/2 (k = {k}, n = {n})")]
    BadK { k: usize, n: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub method: &'static str,
    pub resamples: usize,
    pub seed: u64,
}

fn check_resamples(b: usize) -> Result<(), StatsError> {
    if b < MIN_RESAMPLES {
        return Err(StatsError::TooFewResamples(b));
    }
    Ok(())
}

#[inline]
fn dist(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm()
}

fn block_sum(rows: &[Complex64], cols: &[Complex64]) -> f64 {
    rows.iter().map(|&x| cols.iter().map(|&y| dist(x, y)).sum::<f64>()).sum()
}

/// Energy statistic `2 E|X-Y| - E|X-X'| - E|Y-Y'|` with all pairs (V-statistic).
/// Symmetric in its arguments bit for bit and exactly zero for identical inputs.
pub fn energy_statistic(a: &[Complex64], b: &[Complex64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let cross = 0.5 * (block_sum(a, b) + block_sum(b, a)) / (na * nb);
    let within = block_sum(a, a) / (na * na) + block_sum(b, b) / (nb * nb);
    2.0 * cross - within
}

/// Two-sample energy test with a permutation null.
pub fn energy_test(a: &[Complex64], b: &[Complex64], resamples: usize, seed: u64) -> Result<TestReport, StatsError> {
    for (what, s) in [("energy test sample A", a), ("energy test sample B", b)] {
        if s.len() < 50 {
            return Err(StatsError::TooFewSamples { what, needed: 50, got: s.len() });
        }
    }
    check_resamples(resamples)?;
    let n = a.len() + b.len();
    if n > MAX_ENERGY_POOL {
        return Err(StatsError::TooLarge(n));
    }
    let observed = energy_statistic(a, b);
    let pooled: Vec<Complex64> = a.iter().chain(b).copied().collect();
    let dmat: Vec<f64> = pooled
        .par_iter()
        .flat_map_iter(|&x| pooled.iter().map(move |&y| dist(x, y)))
        .collect();
    let row_sums: Vec<f64> = dmat.chunks_exact(n).map(|r| r.iter().sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let perm_seed = rng::derive_seed(seed, "energy-permutation");
    let tol = 1e-12 * observed.abs().max(total / (n * n) as f64);

    let exceed = (0..resamples as u64)
        .into_par_iter()
        .filter(|&r| {
            let mut stream = rng::stream(perm_seed, r);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut stream);
            let mut mask = vec![0.0; n];
            for &i in &idx[..a.len()] {
                mask[i] = 1.0;
            }
            let mut s_aa = 0.0;
            let mut r_a = 0.0;
            for &i in &idx[..a.len()] {
                let row = &dmat[i * n..(i + 1) * n];
                s_aa += row.iter().zip(&mask).map(|(d, m)| d * m).sum::<f64>();
                r_a += row_sums[i];
            }
            let s_ab = r_a - s_aa;
            let s_bb = total - 2.0 * r_a + s_aa;
            let stat = 2.0 * s_ab / (na * nb) - (s_aa / (na * na) + s_bb / (nb * nb));
            stat >= observed - tol
        })
        .count();
    Ok(TestReport {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (resamples + 1) as f64,
        method: "energy distance, permutation null",
        resamples,
        seed,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value. Diagnostic
/// only (used on `|z|` and `arg z`).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    if a.is_empty() || b.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let en = ((na * nb) as f64 / (na + nb) as f64).sqrt();
    let lam = (en + 0.12 + 0.11 / en) * d;
    let p = if lam < 1e-3 {
        1.0
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let k = k as f64;
                2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lam * lam).exp()
            })
            .sum();
        s.clamp(0.0, 1.0)
    };
    (d, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HillEstimate {
    pub alpha_hat: f64,
    pub ci90: (f64, f64),
    pub k: usize,
    /// Fewer than 30 order statistics: the normal approximation behind the
    /// interval is not trustworthy.
    pub unreliable: bool,
}

/// Hill estimator of the tail index from the `k` largest values.
pub fn hill_estimator(mags: &[f64], k: usize) -> Result<HillEstimate, StatsError> {
    if let Some((index, &value)) = mags.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(StatsError::NonPositive { index, value });
    }
    let n = mags.len();
    if k == 0 || 2 * k >= n {
        return Err(StatsError::BadK { k, n });
    }
    let mut sorted = mags.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k];
    let sum: f64 = sorted[..k].iter().map(|&x| (x / threshold).ln()).sum();
    if sum <= 0.0 {
        return Err(StatsError::Degenerate("top order statistics are tied"));
    }
    let alpha_hat = k as f64 / sum;
    let half = 1.645 / (k as f64).sqrt();
    Ok(HillEstimate {
        alpha_hat,
        ci90: (alpha_hat * (1.0 - half), alpha_hat * (1.0 + half)),
        k,
        unreliable: k < 30,
    })
}

fn pseudo_ratio(centered: &[Complex64]) -> f64 {
    let n = centered.len() as f64;
    let pseudo: Complex64 = centered.iter().map(|z| z * z).sum::<Complex64>() / n;
    let abs2: f64 = centered.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
    pseudo.norm() / abs2
}

/// Isotropy test for a centered complex sample: statistic
/// `|mean(z^2)| / mean(|z|^2)` (0 for a complex standard normal, 1 for a real
/// one), null by independent uniform phase rotation of every sample.
pub fn complex_normal_structure(samples: &[Complex64], resamples: usize, seed: u64) -> Result<TestReport, StatsError> {
    if samples.len() < 100 {
        return Err(StatsError::TooFewSamples { what: "complex normal structure", needed: 100, got: samples.len() });
    }
    check_resamples(resamples)?;
    let n = samples.len() as f64;
    let mean: Complex64 = samples.iter().sum::<Complex64>() / n;
    let centered: Vec<Complex64> = samples.iter().map(|z| z - mean).collect();
    let abs2: f64 = centered.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
    if !(abs2 > 0.0) {
        return Err(StatsError::Degenerate("zero variance"));
    }
    let observed = pseudo_ratio(&centered);
    let null_seed = rng::derive_seed(seed, "phase-randomization");
    let exceed = (0..resamples as u64)
        .into_par_iter()
        .filter(|&r| {
            let mut stream = rng::stream(null_seed, r);
            let rotated: Vec<Complex64> = centered
                .iter()
                .map(|z| z * Complex64::from_polar(1.0, 2.0 * PI * stream.random::<f64>()))
                .collect();
            pseudo_ratio(&rotated) >= observed
        })
        .count();
    Ok(TestReport {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (resamples + 1) as f64,
        method: "pseudo-moment ratio, random phase null",
        resamples,
        seed,
    })
}

/// Plug-in moments with jackknife standard errors. Complex standard errors are
/// `sqrt(SE_re^2 + SE_im^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSummary {
    pub n: usize,
    #[serde(serialize_with = "crate::ser_complex")]
    pub mean: Complex64,
    pub mean_se: f64,
    pub abs2: f64,
    pub abs2_se: f64,
    #[serde(serialize_with = "crate::ser_complex")]
    pub pseudo2: Complex64,
    pub pseudo2_se: f64,
}

/// Jackknife SE of a sample mean of complex values.
fn jackknife_se(values: &[Complex64]) -> f64 {
    let n = values.len() as f64;
    let total: Complex64 = values.iter().sum();
    let loo: Vec<Complex64> = values.iter().map(|v| (total - v) / (n - 1.0)).collect();
    let loo_mean: Complex64 = loo.iter().sum::<Complex64>() / n;
    ((n - 1.0) / n * loo.iter().map(|t| (t - loo_mean).norm_sqr()).sum::<f64>()).sqrt()
}

pub fn moment_summary(samples: &[Complex64]) -> Result<MomentSummary, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFewSamples { what: "moment summary", needed: 2, got: samples.len() });
    }
    let n = samples.len() as f64;
    let squares: Vec<Complex64> = samples.iter().map(|z| z * z).collect();
    let abs: Vec<Complex64> = samples.iter().map(|z| Complex64::new(z.norm_sqr(), 0.0)).collect();
    let mean = samples.iter().sum::<Complex64>() / n;
    let abs2 = abs.iter().map(|z| z.re).sum::<f64>() / n;
    let mut pseudo2 = squares.iter().sum::<Complex64>() / n;
    // |mean z^2| <= mean |z|^2 holds exactly; keep it true after rounding.
    let r = pseudo2.norm();
    if r > abs2 {
        pseudo2 *= abs2 / r;
        while pseudo2.norm() > abs2 {
            pseudo2 *= 1.0 - f64::EPSILON;
        }
    }
    Ok(MomentSummary {
        n: samples.len(),
        mean,
        mean_se: jackknife_se(samples),
        abs2,
        abs2_se: jackknife_se(&abs),
        pseudo2,
        pseudo2_se: jackknife_se(&squares),
    })
}

/// Sample quantile with linear interpolation (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Interquartile range.
pub fn iqr(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}
