//! Classification of `(law, lambda)` into fluctuation regimes.
//!
//! The classifier works only with the closed-form transform of the law: the
//! boundary parameter `vartheta`, the contraction function
//! `h(p) = log m(p theta) - p log|m(lambda)|`, and the second-moment ratio
//! `m(2 theta) / |m(lambda)|^2` decide the regime; scaling constants and the
//! multiplicative weight group follow from the label.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ComplexParam, ReproductionLaw};

/// Absolute tolerance on the residual of every equality predicate.
pub const EQ_TOL: f64 = 1e-9;
/// Bracket searched for the boundary parameter.
pub const THETA_STAR_BRACKET: (f64, f64) = (1e-6, 50.0);
/// Open window searched for the characteristic index.
pub const ALPHA_WINDOW: (f64, f64) = (1.0 + 1e-9, 2.0 - 1e-9);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegimeError {
    #[error("no boundary parameter: theta*(log m)'(theta) - log m(theta) has no sign change in ({lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },
    #[error("weights of a lattice law do not fill a coset; the group analysis needs a non-lattice law")]
    LatticeLaw,
    #[error("group analysis needs theta > 0, got {0}")]
    NonPositiveTheta(f64),
    #[error("label {0} has no scaling constant")]
    NoScaling(&'static str),
    #[error("the extremal scaling needs the boundary parameter")]
    MissingBoundary,
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// `g(theta) = theta (log m)'(theta) - log m(theta)`; its positive root is the
/// boundary parameter.
pub fn boundary_gap(law: &ReproductionLaw, theta: f64) -> f64 {
    let d1 = law.displacement().log_laplace_derivatives(theta).0;
    theta * d1 - law.log_m_real(theta)
}

/// Boundary normalization `V(u) = vartheta S(u) + |u| log m(vartheta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryParams {
    pub theta_star: f64,
    /// `log m(vartheta)`, the per-generation shift of `V`.
    pub log_m_theta_star: f64,
    /// `E[sum V(u)^2 e^{-V(u)}]` over the first generation.
    pub sigma_sq: f64,
    /// Seneta-Heyde constant `sqrt(2 / (pi sigma^2))`.
    pub c: f64,
}

impl BoundaryParams {
    /// Boundary-normalized position of a particle at `depth` with position `s`.
    #[inline]
    pub fn v(&self, s: f64, depth: usize) -> f64 {
        self.theta_star * s + depth as f64 * self.log_m_theta_star
    }
}

/// Bisection for the positive root of [`boundary_gap`].
pub fn solve_theta_star(law: &ReproductionLaw) -> Result<BoundaryParams, RegimeError> {
    let (lo0, hi0) = THETA_STAR_BRACKET;
    let g = |t: f64| boundary_gap(law, t);
    let (mut lo, mut hi) = (lo0, hi0);
    if !(g(lo) < 0.0 && g(hi) > 0.0) {
        return Err(RegimeError::NoRoot { lo: lo0, hi: hi0 });
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let v = g(mid);
        if v.abs() < 1e-12 || hi - lo < 1e-15 {
            break;
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta_star = mid;
    let sigma_sq = theta_star * theta_star * law.log_m_derivative(theta_star, 2)?;
    Ok(BoundaryParams {
        theta_star,
        log_m_theta_star: law.log_m_real(theta_star),
        sigma_sq,
        c: (2.0 / (PI * sigma_sq)).sqrt(),
    })
}

/// Contraction function `h(p) = log m(p theta) - p log|m(lambda)|` and its
/// derivative in `p`. `h` is convex because `log m` is.
#[derive(Debug, Clone, Copy)]
struct Contraction<'a> {
    law: &'a ReproductionLaw,
    theta: f64,
    log_abs_m: f64,
}

impl<'a> Contraction<'a> {
    fn new(law: &'a ReproductionLaw, lambda: Complex64) -> Self {
        Self { law, theta: lambda.re, log_abs_m: law.laplace_m(lambda).norm().ln() }
    }

    fn h(&self, p: f64) -> f64 {
        self.law.log_m_real(p * self.theta) - p * self.log_abs_m
    }

    fn dh(&self, p: f64) -> f64 {
        self.theta * self.law.displacement().log_laplace_derivatives(p * self.theta).0 - self.log_abs_m
    }

    /// Minimizer of `h` on `[a, b]` from the sign of `h'`.
    fn argmin(&self, a: f64, b: f64) -> f64 {
        if self.dh(a) >= 0.0 {
            return a;
        }
        if self.dh(b) <= 0.0 {
            return b;
        }
        let (mut lo, mut hi) = (a, b);
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            if self.dh(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Outcome of the `Lambda` membership test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaCheck {
    pub inside: bool,
    /// Minimizing exponent `p` in `[1, 2]`.
    pub p_min: f64,
    /// `min_p m(p theta) / |m(lambda)|^p`.
    pub ratio_min: f64,
    /// All moments of `Z_1(theta)` are finite for the supported families, so the
    /// moment part of the membership condition always holds.
    pub moment_condition: bool,
}

/// `lambda` lies in `Lambda` iff `m(p theta)/|m(lambda)|^p < 1` for some
/// `p in [1, 2]`.
pub fn in_lambda(law: &ReproductionLaw, lambda: Complex64) -> LambdaCheck {
    let h = Contraction::new(law, lambda);
    let (p_gs, h_gs) = golden_section_min(|p| h.h(p), 1.0, 2.0, 1e-10);
    let (p_min, h_min) = [(1.0, h.h(1.0)), (2.0, h.h(2.0)), (p_gs, h_gs)]
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    let ratio_min = h_min.exp();
    LambdaCheck { inside: ratio_min < 1.0 - 1e-12, p_min, ratio_min, moment_condition: true }
}

/// Root of `m(alpha theta) = |m(lambda)|^alpha` in `(1, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaRoot {
    pub alpha: f64,
    /// The derivative condition holds with equality: `lambda` sits on the
    /// boundary of `Lambda` with index `alpha`. Otherwise only the inequality
    /// variant holds.
    pub equality: bool,
    /// `m(alpha theta)/|m(lambda)|^alpha - 1`.
    pub ratio_residual: f64,
    /// `theta (log m)'(alpha theta) - log|m(lambda)|`.
    pub derivative_residual: f64,
}

pub fn solve_alpha(law: &ReproductionLaw, lambda: Complex64) -> Option<AlphaRoot> {
    let theta = lambda.re;
    if theta <= 0.0 || !law.laplace_m(lambda).norm().is_finite() {
        return None;
    }
    let h = Contraction::new(law, lambda);
    let (lo, hi) = ALPHA_WINDOW;
    let p_star = h.argmin(lo, hi);
    let h_min = h.h(p_star);
    let root = |alpha: f64, equality: bool| AlphaRoot {
        alpha,
        equality,
        ratio_residual: h.h(alpha).exp_m1(),
        derivative_residual: h.dh(alpha),
    };
    if h_min.abs() <= EQ_TOL {
        let interior = p_star > lo && p_star < hi;
        return interior.then(|| root(p_star, true));
    }
    if h_min < 0.0 && h.h(lo) > 0.0 {
        let (mut a, mut b) = (lo, p_star);
        while b - a > 1e-15 {
            let mid = 0.5 * (a + b);
            if h.h(mid) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        return Some(root(0.5 * (a + b), false));
    }
    None
}

/// Rationality verdict on the phase of the weight coset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Rationality {
    /// `lambda` is real and all weights are positive.
    RealWeights,
    NumericallyRational { p: u64, q: u64 },
    AssumedIrrational,
}

/// Closed multiplicative group generated by the normalized weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupSpec {
    /// The unit-modulus part is the whole circle.
    pub full_circle: bool,
    /// Order of the unit-modulus part when finite.
    pub u1_order: Option<u64>,
    /// Exponent of the one-parameter subgroup `t -> t^w`; `Re w = 1`.
    #[serde(serialize_with = "crate::ser_complex")]
    pub w: Complex64,
    /// Generator angle of the unit-modulus part, in `[0, 2 pi)`.
    pub phase: f64,
    pub rationality: Rationality,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupOptions {
    pub denominator_cap: u64,
    pub tolerance: f64,
}

impl Default for GroupOptions {
    fn default() -> Self {
        Self { denominator_cap: 1_000_000, tolerance: 1e-9 }
    }
}

/// Continued-fraction rationality test. `x` counts as `p/q` when a remainder of
/// the expansion drops below `tol` (equivalently `|x - p/q| < tol/q^2`) before
/// the denominator passes `cap`.
pub fn detect_rational(x: f64, cap: u64, tol: f64) -> Option<(u64, u64)> {
    if !x.is_finite() || x < 0.0 {
        return None;
    }
    let (mut p0, mut p1): (u128, u128) = (0, 1);
    let (mut q0, mut q1): (u128, u128) = (1, 0);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a > cap as f64 * 4.0 {
            return None;
        }
        let a = a as u128;
        let p = a * p1 + p0;
        let q = a * q1 + q0;
        if q > u128::from(cap) {
            return None;
        }
        let frac = r - r.floor();
        if frac < tol {
            return Some((p as u64, q as u64));
        }
        p0 = p1;
        p1 = p;
        q0 = q1;
        q1 = q;
        r = 1.0 / frac;
    }
    None
}

/// Multiplicative group of the weights `e^{-lambda x}/m(lambda)`.
///
/// For Gaussian and uniform displacements the weights fill a coset
/// `e^{i phi} {e^{lambda t}: t real}`, so the unit-modulus part is generated by
/// `e^{i phi}` with `phi = eta log|m(lambda)|/theta - arg m(lambda)`.
pub fn compute_group(law: &ReproductionLaw, lambda: Complex64, opts: &GroupOptions) -> Result<GroupSpec, RegimeError> {
    if law.displacement().is_lattice() {
        return Err(RegimeError::LatticeLaw);
    }
    let theta = lambda.re;
    if theta <= 0.0 {
        return Err(RegimeError::NonPositiveTheta(theta));
    }
    if lambda.im == 0.0 {
        return Ok(GroupSpec {
            full_circle: false,
            u1_order: Some(1),
            w: Complex64::new(1.0, 0.0),
            phase: 0.0,
            rationality: Rationality::RealWeights,
        });
    }
    let m = law.laplace_m(lambda);
    let phase = (lambda.im * m.norm().ln() / theta - m.arg()).rem_euclid(2.0 * PI);
    match detect_rational(phase / (2.0 * PI), opts.denominator_cap, opts.tolerance) {
        Some((p, q)) => Ok(GroupSpec {
            full_circle: false,
            u1_order: Some(q),
            w: lambda / theta,
            phase,
            rationality: Rationality::NumericallyRational { p, q },
        }),
        None => Ok(GroupSpec {
            full_circle: true,
            u1_order: None,
            w: Complex64::new(1.0, 0.0),
            phase,
            rationality: Rationality::AssumedIrrational,
        }),
    }
}

/// Polylines `x -> e^{2 pi i j/q} e^{lambda x}` tracing the connected
/// components of a finite-order group.
pub fn snail_curves(group: &GroupSpec, lambda: Complex64, x_range: (f64, f64), samples: usize) -> Vec<Vec<Complex64>> {
    let Some(q) = group.u1_order.filter(|_| !group.full_circle) else {
        return Vec::new();
    };
    let samples = samples.max(2);
    (1..=q)
        .map(|j| {
            let rot = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / q as f64);
            (0..samples)
                .map(|i| {
                    let x = x_range.0 + (x_range.1 - x_range.0) * i as f64 / (samples - 1) as f64;
                    rot * (lambda * x).exp()
                })
                .collect()
        })
        .collect()
}

/// Why a parameter is outside every covered regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OutOfTheoryReason {
    NegativeTheta,
    VanishingTransform,
    OutsideLambda,
    /// In `Lambda`, but neither the second-moment condition nor the extremal
    /// window applies.
    NoCoveringTheorem,
    LatticeLaw,
}

impl OutOfTheoryReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutOfTheoryReason::NegativeTheta => "theta < 0",
            OutOfTheoryReason::VanishingTransform => "m(lambda) = 0",
            OutOfTheoryReason::OutsideLambda => "lambda outside Lambda",
            OutOfTheoryReason::NoCoveringTheorem => "no covering theorem",
            OutOfTheoryReason::LatticeLaw => "lattice law",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RegimeLabel {
    GaussianInterior {
        limit_is_complex: bool,
        /// `Z(2 theta)` is non-degenerate (`2 theta < vartheta`).
        nondegenerate_2theta: bool,
        /// `sigma_lambda^2 = 0`; the limit is the zero law.
        degenerate_variance: bool,
    },
    GaussianBoundary {
        limit_is_complex: bool,
    },
    Extremal,
    StableBoundary {
        alpha: f64,
        #[serde(serialize_with = "crate::ser_complex")]
        w: Complex64,
        numerically_rational: bool,
    },
    OutOfTheory {
        reason: OutOfTheoryReason,
    },
}

/// Label without payload, for maps and comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum RegimeKind {
    GaussianInterior,
    GaussianBoundary,
    Extremal,
    StableBoundary,
    OutOfTheory,
}

impl RegimeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegimeKind::GaussianInterior => "gaussian",
            RegimeKind::GaussianBoundary => "gaussian_boundary",
            RegimeKind::Extremal => "extremal",
            RegimeKind::StableBoundary => "stable_boundary",
            RegimeKind::OutOfTheory => "out_of_theory",
        }
    }

    pub const ALL: [RegimeKind; 5] = [
        RegimeKind::GaussianInterior,
        RegimeKind::GaussianBoundary,
        RegimeKind::Extremal,
        RegimeKind::StableBoundary,
        RegimeKind::OutOfTheory,
    ];
}

impl RegimeLabel {
    pub fn kind(&self) -> RegimeKind {
        match self {
            RegimeLabel::GaussianInterior { .. } => RegimeKind::GaussianInterior,
            RegimeLabel::GaussianBoundary { .. } => RegimeKind::GaussianBoundary,
            RegimeLabel::Extremal => RegimeKind::Extremal,
            RegimeLabel::StableBoundary { .. } => RegimeKind::StableBoundary,
            RegimeLabel::OutOfTheory { .. } => RegimeKind::OutOfTheory,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            RegimeLabel::GaussianInterior { limit_is_complex, nondegenerate_2theta, degenerate_variance } => format!(
                "gaussian (limit {}, Z(2theta) {}{})",
                if *limit_is_complex { "complex" } else { "real" },
                if *nondegenerate_2theta { "non-degenerate" } else { "degenerate" },
                if *degenerate_variance { ", sigma_lambda^2 = 0" } else { "" }
            ),
            RegimeLabel::GaussianBoundary { limit_is_complex } => format!(
                "gaussian_boundary (limit {})",
                if *limit_is_complex { "complex" } else { "real" }
            ),
            RegimeLabel::Extremal => "extremal".to_string(),
            RegimeLabel::StableBoundary { alpha, w, numerically_rational } => format!(
                "stable_boundary (alpha = {alpha:.12}, w = {:.12}{:+.12}i, {})",
                w.re,
                w.im,
                if *numerically_rational { "numerically rational phase" } else { "assumed irrational phase" }
            ),
            RegimeLabel::OutOfTheory { reason } => format!("out_of_theory ({})", reason.as_str()),
        }
    }
}

/// Classifier bound to one law, caching its boundary parameter.
#[derive(Debug, Clone)]
pub struct Classifier {
    law: ReproductionLaw,
    boundary: Option<BoundaryParams>,
    group_opts: GroupOptions,
}

impl Classifier {
    pub fn new(law: ReproductionLaw) -> Self {
        Self::with_group_options(law, GroupOptions::default())
    }

    pub fn with_group_options(law: ReproductionLaw, group_opts: GroupOptions) -> Self {
        let boundary = solve_theta_star(&law).ok();
        Self { law, boundary, group_opts }
    }

    pub fn law(&self) -> &ReproductionLaw {
        &self.law
    }

    pub fn boundary(&self) -> Option<&BoundaryParams> {
        self.boundary.as_ref()
    }

    /// Regime of `lambda`; needs `theta >= 0`.
    pub fn classify(&self, lambda: Complex64) -> RegimeLabel {
        let out = |reason| RegimeLabel::OutOfTheory { reason };
        let theta = lambda.re;
        if theta < 0.0 {
            return out(OutOfTheoryReason::NegativeTheta);
        }
        let Ok(param) = ComplexParam::new(&self.law, lambda) else {
            return out(OutOfTheoryReason::VanishingTransform);
        };
        let gaussian = param.rho() < 1.0 - 1e-12;
        let limit_is_complex = param.limit_is_complex();
        let gap_2theta = boundary_gap(&self.law, 2.0 * theta);
        if gaussian {
            if param.sigma_lambda_sq <= 1e-14 {
                return RegimeLabel::GaussianInterior {
                    limit_is_complex,
                    nondegenerate_2theta: gap_2theta < -EQ_TOL,
                    degenerate_variance: true,
                };
            }
            if gap_2theta.abs() <= EQ_TOL {
                return RegimeLabel::GaussianBoundary { limit_is_complex };
            }
            if gap_2theta < -EQ_TOL {
                return RegimeLabel::GaussianInterior {
                    limit_is_complex,
                    nondegenerate_2theta: true,
                    degenerate_variance: false,
                };
            }
        }
        let membership = in_lambda(&self.law, lambda);
        if let Some(b) = &self.boundary {
            let window = gap_2theta > EQ_TOL && boundary_gap(&self.law, theta) < -EQ_TOL;
            if window && membership.inside && self.extremal_moment_condition(lambda, b) {
                if self.law.displacement().is_lattice() {
                    return out(OutOfTheoryReason::LatticeLaw);
                }
                return RegimeLabel::Extremal;
            }
        }
        if gaussian {
            // Second-moment condition holds but Z(2 theta) = 0 and no other theorem applies.
            return RegimeLabel::GaussianInterior {
                limit_is_complex,
                nondegenerate_2theta: false,
                degenerate_variance: false,
            };
        }
        if let Some(root) = solve_alpha(&self.law, lambda).filter(|r| r.equality) {
            return match compute_group(&self.law, lambda, &self.group_opts) {
                Ok(group) => RegimeLabel::StableBoundary {
                    alpha: root.alpha,
                    w: group.w,
                    numerically_rational: matches!(group.rationality, Rationality::NumericallyRational { .. }),
                },
                Err(_) => out(OutOfTheoryReason::LatticeLaw),
            };
        }
        if membership.inside {
            out(OutOfTheoryReason::NoCoveringTheorem)
        } else {
            out(OutOfTheoryReason::OutsideLambda)
        }
    }

    /// `E|Z(lambda)|^p < infinity` for some `p in (vartheta/theta, 2]`, via the
    /// contraction condition at such a `p`.
    fn extremal_moment_condition(&self, lambda: Complex64, b: &BoundaryParams) -> bool {
        let lo = b.theta_star / lambda.re;
        if lo >= 2.0 {
            return false;
        }
        let h = Contraction::new(&self.law, lambda);
        let p = h.argmin(lo, 2.0);
        h.h(p) < -1e-12 || h.h(2.0) < -1e-12
    }

    /// Classifies any `lambda`, mirroring the law when `theta < 0`.
    pub fn classify_any(&self, lambda: Complex64) -> RegimeLabel {
        if lambda.re >= 0.0 {
            self.classify(lambda)
        } else {
            Classifier::with_group_options(self.law.mirrored(), self.group_opts).classify(-lambda)
        }
    }

    /// Scaling `a_n` under which `a_n (Z - Z_n)` has a non-degenerate limit.
    pub fn scaling_constant(&self, label: &RegimeLabel, lambda: Complex64, n: usize) -> Result<Complex64, RegimeError> {
        let param = ComplexParam::new(&self.law, lambda)?;
        let nf = n as f64;
        let log_m_lambda = param.m_lambda.ln();
        // m(lambda)^n / m^{n/2} with m = m(2 theta) or m(2 lambda).
        let gaussian_part = |limit_is_complex: bool| {
            let log_m: Complex64 = if limit_is_complex {
                Complex64::new(param.m_2theta.ln(), 0.0)
            } else {
                param.m_2lambda.ln()
            };
            (log_m_lambda * nf - log_m * (nf / 2.0)).exp()
        };
        let power = |exponent: Complex64| -> Complex64 {
            if n == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                (exponent * nf.ln()).exp()
            }
        };
        match *label {
            RegimeLabel::GaussianInterior { limit_is_complex, .. } => Ok(gaussian_part(limit_is_complex)),
            RegimeLabel::GaussianBoundary { limit_is_complex } => {
                Ok(power(Complex64::new(0.25, 0.0)) * gaussian_part(limit_is_complex))
            }
            RegimeLabel::Extremal => {
                let b = self.boundary.as_ref().ok_or(RegimeError::MissingBoundary)?;
                let ratio = lambda / b.theta_star;
                let geometric = (log_m_lambda * nf - ratio * b.log_m_theta_star * nf).exp();
                Ok(power(ratio * 1.5) * geometric)
            }
            RegimeLabel::StableBoundary { alpha, w, .. } => Ok(power(w / (2.0 * alpha))),
            RegimeLabel::OutOfTheory { .. } => Err(RegimeError::NoScaling("out_of_theory")),
        }
    }

    /// Labels of a rectangular grid, row-major with `eta` as the outer index.
    /// Negative `theta` is handled by mirroring.
    pub fn regime_map(&self, thetas: &[f64], etas: &[f64]) -> Vec<MapCell> {
        use rayon::prelude::*;
        let mirrored = Classifier::with_group_options(self.law.mirrored(), self.group_opts);
        etas.par_iter()
            .flat_map_iter(|&eta| {
                let mirrored = &mirrored;
                thetas.iter().map(move |&theta| {
                    let label = if theta >= 0.0 {
                        self.classify(Complex64::new(theta, eta))
                    } else {
                        mirrored.classify(Complex64::new(-theta, -eta))
                    };
                    MapCell { theta, eta, label }
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapCell {
    pub theta: f64,
    pub eta: f64,
    pub label: RegimeLabel,
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Displacement;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn vt() -> f64 {
        (2.0 * std::f64::consts::LN_2).sqrt()
    }

    #[test]
    fn theta_star_binary_gaussian() {
        let b = solve_theta_star(&ReproductionLaw::binary_gaussian()).unwrap();
        assert!((b.theta_star - 1.177_410_022_515_474_7).abs() < 1e-10);
        assert!((b.sigma_sq - 2.0 * std::f64::consts::LN_2).abs() < 1e-9);
        // c = sqrt(2/(pi * 2 log 2)) = 1/sqrt(pi log 2)
        assert!((b.c - 1.0 / (PI * std::f64::consts::LN_2).sqrt()).abs() < 1e-9);
        assert!((b.c - 0.677_660_7).abs() < 1e-7);
        assert!((b.log_m_theta_star - 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn theta_star_missing_for_point_mass() {
        let law = ReproductionLaw::deterministic(2, Displacement::PointMass { x: 0.0 }).unwrap();
        assert!(matches!(solve_theta_star(&law), Err(RegimeError::NoRoot { .. })));
    }

    #[test]
    fn normalized_first_generation_identities() {
        // E sum e^{-V} = 1 and E sum V e^{-V} = 0 with V = vt X + log m(vt), by
        // closed form: E[N] E[e^{-vt X}]/m(vt) = 1 and the tilted mean vanishes.
        for law in [
            ReproductionLaw::binary_gaussian(),
            ReproductionLaw::new(vec![0.1, 0.2, 0.3, 0.4], Displacement::Uniform { a: -1.0, b: 1.5 }).unwrap(),
        ] {
            let b = solve_theta_star(&law).unwrap();
            let t = b.theta_star;
            let mean_w = law.m_real(t) / law.m_real(t);
            assert!((mean_w - 1.0).abs() < 1e-15);
            // E sum V e^{-V} = t * E[X e^{-tX}] E[N]/m(t) + log m(t) = -t (log m)'(t) + log m(t)
            let mean_dw = -boundary_gap(&law, t);
            assert!(mean_dw.abs() < 1e-11);
            // sigma^2 from second tilted moment
            let d2 = law.log_m_derivative(t, 2).unwrap();
            assert!((b.sigma_sq - t * t * d2).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_membership_examples() {
        let law = ReproductionLaw::binary_gaussian();
        assert!(in_lambda(&law, c(0.5, 0.3)).inside);
        assert!(!in_lambda(&law, c(1.3, 0.0)).inside);
        assert!(in_lambda(&law, c(0.0, 0.0)).inside);
    }

    #[test]
    fn alpha_examples() {
        let law = ReproductionLaw::binary_gaussian();
        let root = solve_alpha(&law, c(0.9, vt() - 0.9)).unwrap();
        assert!(root.equality);
        assert!((root.alpha - vt() / 0.9).abs() < 1e-9);
        assert!(root.ratio_residual.abs() < 1e-9);
        assert!(root.derivative_residual.abs() < 1e-6);
        assert!(solve_alpha(&law, c(vt() / 2.0, 0.0)).is_none());
        assert!(solve_alpha(&law, c(0.0, 0.3)).is_none());
        assert!(solve_alpha(&law, c(-0.4, 0.3)).is_none());
    }

    #[test]
    fn classify_examples() {
        let cl = Classifier::new(ReproductionLaw::binary_gaussian());
        // m(2 theta) = 2 e^{0.18} < |m(lambda)|^2 = 4 e^{0.05}; |m(2 lambda)| = 2 e^{0.1} < m(0.6)
        assert_eq!(
            cl.classify(c(0.3, 0.2)),
            RegimeLabel::GaussianInterior { limit_is_complex: true, nondegenerate_2theta: true, degenerate_variance: false }
        );
        assert_eq!(cl.classify(c(0.9, 0.2)), RegimeLabel::Extremal);
        match cl.classify(c(0.9, vt() - 0.9)) {
            RegimeLabel::StableBoundary { alpha, w, .. } => {
                assert!((alpha - 1.308_233_358_350_527_4).abs() < 1e-9);
                assert!((w.re - 1.0).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(cl.classify(c(vt() / 2.0, 0.3)), RegimeLabel::GaussianBoundary { limit_is_complex: true });
        assert_eq!(
            cl.classify(c(0.4, 0.0)),
            RegimeLabel::GaussianInterior { limit_is_complex: false, nondegenerate_2theta: true, degenerate_variance: false }
        );
        assert!(matches!(cl.classify(c(1.3, 0.0)), RegimeLabel::OutOfTheory { .. }));
        assert!(matches!(
            cl.classify(c(0.0, 0.0)),
            RegimeLabel::GaussianInterior { degenerate_variance: true, .. }
        ));
        assert_eq!(
            cl.classify(c(-0.3, 0.2)),
            RegimeLabel::OutOfTheory { reason: OutOfTheoryReason::NegativeTheta }
        );
    }

    #[test]
    fn mirroring_preserves_labels() {
        let law = ReproductionLaw::new(vec![0.1, 0.3, 0.6], Displacement::Gaussian { mean: 0.3, sd: 0.8 }).unwrap();
        let cl = Classifier::new(law.clone());
        let mirror = Classifier::new(law.mirrored());
        for &(t, e) in &[(0.2, 0.1), (0.9, 0.3), (1.5, 0.0), (0.5, 1.2)] {
            assert_eq!(cl.classify(c(t, e)), mirror.classify_any(c(-t, e)));
            assert_eq!(cl.classify(c(t, e)), mirror.classify_any(c(-t, -e)));
        }
    }

    #[test]
    fn scaling_constants() {
        let cl = Classifier::new(ReproductionLaw::binary_gaussian());
        let law = cl.law().clone();
        let g = cl.classify(c(0.3, 0.2));
        assert_eq!(cl.scaling_constant(&g, c(0.3, 0.2), 0).unwrap(), c(1.0, 0.0));

        let real = cl.classify(c(0.4, 0.0));
        let a = cl.scaling_constant(&real, c(0.4, 0.0), 10).unwrap();
        let expected = (law.m_real(0.4) / law.m_real(0.8).sqrt()).powi(10);
        assert!((a.re - expected).abs() < 1e-10 * expected);
        assert!(a.im.abs() < 1e-12 * expected);

        let l = c(0.9, 0.2);
        let ext = cl.classify(l);
        let vt = vt();
        let n = 18usize;
        let a = cl.scaling_constant(&ext, l, n).unwrap();
        let modulus = (n as f64).powf(3.0 * 0.9 / (2.0 * vt)) * law.laplace_m(l).norm().powi(n as i32)
            / law.m_real(vt).powf(0.9 * n as f64 / vt);
        assert!((a.norm() - modulus).abs() < 1e-9 * modulus);
    }

    #[test]
    fn extremal_scaling_turns_weights_into_centered_positions() {
        // a_n e^{-lambda S}/m(lambda)^n = e^{-(lambda/vt) (V - 1.5 log n)}
        let cl = Classifier::new(ReproductionLaw::binary_gaussian());
        let b = *cl.boundary().unwrap();
        let l = c(0.9, 0.2);
        let label = cl.classify(l);
        let m = cl.law().laplace_m(l);
        for &(s, n) in &[(-3.0, 18usize), (2.5, 10), (-11.0, 25)] {
            let a = cl.scaling_constant(&label, l, n).unwrap();
            let weight = (-l * s).exp() / m.powi(n as i32);
            let v = b.v(s, n) - 1.5 * (n as f64).ln();
            let expected = (-(l / b.theta_star) * v).exp();
            assert!((a * weight - expected).norm() < 1e-9 * expected.norm());
        }
    }

    #[test]
    fn rational_detection() {
        assert_eq!(detect_rational(0.05, 1_000_000, 1e-9), Some((1, 20)));
        assert_eq!(detect_rational(3.0 / 7.0, 1_000_000, 1e-9), Some((3, 7)));
        assert_eq!(detect_rational(0.04 / (2.0 * PI), 1_000_000, 1e-9), None);
        assert_eq!(detect_rational(2f64.sqrt() - 1.0, 1_000_000, 1e-9), None);
        assert_eq!(detect_rational(0.0, 1_000_000, 1e-9), Some((0, 1)));
    }

    #[test]
    fn group_of_finite_order_parameters() {
        let law = ReproductionLaw::binary_gaussian();
        let eta = (PI / 10.0).sqrt();
        let l = c(vt() - eta, eta);
        let g = compute_group(&law, l, &GroupOptions::default()).unwrap();
        assert!(!g.full_circle);
        // order of e^{i pi/10}: smallest k with k pi/10 = 0 mod 2 pi
        let brute = (1..=1000u64).find(|k| ((*k as f64) * PI / 10.0 / (2.0 * PI)).fract().abs() < 1e-9).unwrap();
        assert_eq!(brute, 20);
        assert_eq!(g.u1_order, Some(brute));
        assert!((g.w - l / l.re).norm() < 1e-15);
        assert!((g.phase - PI / 10.0).abs() < 1e-12);
        assert_eq!(snail_curves(&g, l, (-5.0, 2.25), 50).len(), 20);

        let irr = compute_group(&law, c(vt() - 0.2, 0.2), &GroupOptions::default()).unwrap();
        assert!(irr.full_circle);
        assert_eq!(irr.w, c(1.0, 0.0));
        assert!(snail_curves(&irr, c(1.0, 0.2), (-1.0, 1.0), 10).is_empty());

        let real = compute_group(&law, c(0.8, 0.0), &GroupOptions::default()).unwrap();
        assert_eq!(real.u1_order, Some(1));
        assert!(!real.full_circle);
        assert_eq!(real.w, c(1.0, 0.0));

        let lattice = ReproductionLaw::deterministic(2, Displacement::PointMass { x: 1.0 }).unwrap();
        assert!(matches!(compute_group(&lattice, l, &GroupOptions::default()), Err(RegimeError::LatticeLaw)));
    }

    #[test]
    fn golden_section_on_quadratic() {
        let (x, fx) = golden_section_min(|x| (x - 1.3).powi(2) + 2.0, 1.0, 2.0, 1e-10);
        // f is flat to rounding within sqrt(eps) of the minimizer
        assert!((x - 1.3).abs() < 1e-7);
        assert!((fx - 2.0).abs() < 1e-15);
    }

    #[test]
    fn regime_map_small_grid() {
        let cl = Classifier::new(ReproductionLaw::binary_gaussian());
        let cells = cl.regime_map(&linspace(-2.5, 2.5, 21), &linspace(-2.5, 2.5, 21));
        assert_eq!(cells.len(), 441);
        for cell in &cells {
            if cell.theta.abs() > vt() {
                assert_eq!(cell.label.kind(), RegimeKind::OutOfTheory);
            }
        }
        let origin = cells.iter().find(|c| c.theta == 0.0 && c.eta == 0.0).unwrap();
        assert!(matches!(origin.label, RegimeLabel::GaussianInterior { degenerate_variance: true, .. }));
    }
}
