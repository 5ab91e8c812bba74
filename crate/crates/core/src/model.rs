//! Reproduction laws and their closed-form Laplace transforms.
//!
//! A [`ReproductionLaw`] is an offspring-count distribution on `{0, .., N_max}`
//! together with a light-tailed displacement family. Displacements are iid and
//! independent of the number of children, which keeps every first-generation
//! moment used downstream in closed form.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `sum(offspring) == 1`.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Below this modulus `m(lambda)` counts as zero.
pub const M_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("offspring probabilities must be non-empty")]
    EmptyOffspring,
    #[error("offspring probability p[{index}] = {value} is not in [0, 1]")]
    BadProbability { index: usize, value: f64 },
    #[error("offspring probabilities sum to {sum}, expected 1")]
    ProbabilitySum { sum: f64 },
    #[error("law is not supercritical: E[N] = {mean} <= 1")]
    NotSupercritical { mean: f64 },
    #[error("invalid displacement: {0}")]
    BadDisplacement(String),
    #[error("m(lambda) vanishes at lambda = {lambda} (|m| = {modulus:e})")]
    VanishingTransform { lambda: Complex64, modulus: f64 },
    #[error("derivative order must be 1 or 2, got {0}")]
    BadOrder(u8),
    #[error("degenerate law: sigma_lambda^2 = {0:e} at this parameter")]
    DegenerateLaw(f64),
}

/// Distribution of a single displacement `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Displacement {
    PointMass { x: f64 },
    Gaussian { mean: f64, sd: f64 },
    Uniform { a: f64, b: f64 },
}

impl Displacement {
    pub fn standard_gaussian() -> Self {
        Displacement::Gaussian { mean: 0.0, sd: 1.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            Displacement::PointMass { x } if !x.is_finite() => {
                Err(ModelError::BadDisplacement(format!("point mass at {x}")))
            }
            Displacement::Gaussian { mean, sd } if !(mean.is_finite() && sd.is_finite() && sd > 0.0) => {
                Err(ModelError::BadDisplacement(format!(
                    "gaussian needs finite mean and sd > 0 (mean = {mean}, sd = {sd})"
                )))
            }
            Displacement::Uniform { a, b } if !(a.is_finite() && b.is_finite() && a < b) => Err(
                ModelError::BadDisplacement(format!("uniform needs a < b (a = {a}, b = {b})")),
            ),
            _ => Ok(()),
        }
    }

    /// `phi(lambda) = E[exp(-lambda X)]`.
    pub fn laplace(&self, lambda: Complex64) -> Complex64 {
        match *self {
            Displacement::PointMass { x } => (-lambda * x).exp(),
            Displacement::Gaussian { mean, sd } => (-lambda * mean + lambda * lambda * (sd * sd) / 2.0).exp(),
            Displacement::Uniform { a, b } => {
                let c = 0.5 * (a + b);
                let h = 0.5 * (b - a);
                (-lambda * c).exp() * sinhc(lambda * h)
            }
        }
    }

    /// `log phi(theta)` for real `theta`, evaluated without overflow.
    pub fn log_laplace_real(&self, theta: f64) -> f64 {
        match *self {
            Displacement::PointMass { x } => -theta * x,
            Displacement::Gaussian { mean, sd } => -theta * mean + theta * theta * sd * sd / 2.0,
            Displacement::Uniform { a, b } => {
                let c = 0.5 * (a + b);
                let h = 0.5 * (b - a);
                -theta * c + log_sinhc(theta * h)
            }
        }
    }

    /// First and second derivative of `log phi` at real `theta`.
    pub fn log_laplace_derivatives(&self, theta: f64) -> (f64, f64) {
        match *self {
            Displacement::PointMass { x } => (-x, 0.0),
            Displacement::Gaussian { mean, sd } => (-mean + theta * sd * sd, sd * sd),
            Displacement::Uniform { a, b } => {
                // X = c + hY with Y ~ U(-1, 1); g(t) = E[exp(-tY)] = sinh(t)/t.
                let c = 0.5 * (a + b);
                let h = 0.5 * (b - a);
                let t = theta * h;
                let (g, g1, g2) = sinhc_with_derivatives(t);
                let d1 = g1 / g;
                let d2 = g2 / g - d1 * d1;
                (-c + h * d1, h * h * d2)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Displacement::PointMass { x } => x,
            Displacement::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Displacement::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
        }
    }

    /// Law of `-X`.
    pub fn mirrored(&self) -> Self {
        match *self {
            Displacement::PointMass { x } => Displacement::PointMass { x: -x },
            Displacement::Gaussian { mean, sd } => Displacement::Gaussian { mean: -mean, sd },
            Displacement::Uniform { a, b } => Displacement::Uniform { a: -b, b: -a },
        }
    }

    /// Point masses put every position on a lattice.
    pub fn is_lattice(&self) -> bool {
        matches!(self, Displacement::PointMass { .. })
    }
}

/// `sinh(z)/z`, continuous at zero.
fn sinhc(z: Complex64) -> Complex64 {
    if z.norm() < 1e-3 {
        let z2 = z * z;
        Complex64::new(1.0, 0.0) + z2 / 6.0 + z2 * z2 / 120.0 + z2 * z2 * z2 / 5040.0
    } else {
        z.sinh() / z
    }
}

fn log_sinhc(t: f64) -> f64 {
    let t = t.abs();
    if t < 1e-3 {
        let t2 = t * t;
        t2 / 6.0 - t2 * t2 / 180.0
    } else if t < 20.0 {
        (t.sinh() / t).ln()
    } else {
        t + (-(-2.0 * t).exp()).ln_1p() - std::f64::consts::LN_2 - t.ln()
    }
}

/// `g(t) = sinh(t)/t` with `g'` and `g''`, by series near zero. Only the
/// derivative ratios are used, so large `t` is rescaled by `exp(-|t|)`.
fn sinhc_with_derivatives(t: f64) -> (f64, f64, f64) {
    if t.abs() < 0.5 {
        // g = sum t^{2k}/(2k+1)!
        let mut g = 0.0;
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        let mut fact = 1.0; // (2k+1)!
        for k in 0..14 {
            let kk = 2 * k;
            if k > 0 {
                fact *= (kk as f64) * (kk as f64 + 1.0);
            }
            g += t.powi(kk) / fact;
            if kk >= 1 {
                g1 += kk as f64 * t.powi(kk - 1) / fact;
            }
            if kk >= 2 {
                g2 += (kk * (kk - 1)) as f64 * t.powi(kk - 2) / fact;
            }
        }
        (g, g1, g2)
    } else {
        // Multiply all three by exp(-|t|) to keep them finite.
        let s = 0.5 * (1.0 - (-2.0 * t.abs()).exp()) * t.signum(); // sinh(t) e^{-|t|}
        let c = 0.5 * (1.0 + (-2.0 * t.abs()).exp()); // cosh(t) e^{-|t|}
        let g = s / t;
        let g1 = (t * c - s) / (t * t);
        let g2 = ((t * t + 2.0) * s - 2.0 * t * c) / (t * t * t);
        (g, g1, g2)
    }
}

/// Offspring law plus displacement family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproductionLaw {
    offspring: Vec<f64>,
    displacement: Displacement,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl ReproductionLaw {
    /// Validated supercritical law.
    pub fn new(offspring: Vec<f64>, displacement: Displacement) -> Result<Self, ModelError> {
        let law = Self::new_any_mean(offspring, displacement)?;
        let mean = law.mean_offspring();
        if mean <= 1.0 {
            return Err(ModelError::NotSupercritical { mean });
        }
        Ok(law)
    }

    /// Same checks as [`ReproductionLaw::new`] except supercriticality. Only for
    /// moment computations; the simulator refuses such laws.
    pub fn new_any_mean(offspring: Vec<f64>, displacement: Displacement) -> Result<Self, ModelError> {
        if offspring.is_empty() {
            return Err(ModelError::EmptyOffspring);
        }
        for (index, &value) in offspring.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ModelError::BadProbability { index, value });
            }
        }
        let sum: f64 = offspring.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(ModelError::ProbabilitySum { sum });
        }
        displacement.validate()?;
        let mut acc = 0.0;
        let cumulative = offspring
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { offspring, displacement, cumulative })
    }

    /// Deterministic binary splitting with standard Gaussian displacements.
    pub fn binary_gaussian() -> Self {
        Self::new(vec![0.0, 0.0, 1.0], Displacement::standard_gaussian()).expect("valid law")
    }

    /// Deterministic `n` children.
    pub fn deterministic(n: usize, displacement: Displacement) -> Result<Self, ModelError> {
        let mut p = vec![0.0; n + 1];
        p[n] = 1.0;
        Self::new(p, displacement)
    }

    pub fn offspring(&self) -> &[f64] {
        &self.offspring
    }

    pub fn displacement(&self) -> Displacement {
        self.displacement
    }

    pub fn max_offspring(&self) -> usize {
        self.offspring.len() - 1
    }

    /// `E[N]`.
    pub fn mean_offspring(&self) -> f64 {
        self.offspring.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    /// `E[N(N-1)]`.
    pub fn factorial_moment2(&self) -> f64 {
        self.offspring
            .iter()
            .enumerate()
            .map(|(k, p)| (k as f64) * (k as f64 - 1.0) * p)
            .sum()
    }

    fn deterministic_count(&self) -> Option<usize> {
        self.offspring.iter().position(|&p| p == 1.0)
    }

    /// `m(lambda) = E[N] phi(lambda)`.
    pub fn laplace_m(&self, lambda: Complex64) -> Complex64 {
        self.displacement.laplace(lambda) * self.mean_offspring()
    }

    /// `m(theta)` for real `theta`.
    pub fn m_real(&self, theta: f64) -> f64 {
        self.log_m_real(theta).exp()
    }

    pub fn log_m_real(&self, theta: f64) -> f64 {
        self.mean_offspring().ln() + self.displacement.log_laplace_real(theta)
    }

    /// Derivatives of `theta -> log m(theta)`; `order` must be 1 or 2.
    pub fn log_m_derivative(&self, theta: f64, order: u8) -> Result<f64, ModelError> {
        let (d1, d2) = self.displacement.log_laplace_derivatives(theta);
        match order {
            1 => Ok(d1),
            2 => Ok(d2),
            other => Err(ModelError::BadOrder(other)),
        }
    }

    /// `E|Z_1(lambda) - 1|^2`, from the closed form of the first two moments.
    pub fn sigma_lambda_sq(&self, lambda: Complex64) -> f64 {
        let m = self.laplace_m(lambda);
        let phi = self.displacement.laplace(lambda);
        let phi_2theta = self.displacement.log_laplace_real(2.0 * lambda.re).exp();
        let second = self.mean_offspring() * phi_2theta + self.factorial_moment2() * phi.norm_sqr();
        (second / m.norm_sqr() - 1.0).max(0.0)
    }

    /// [`ReproductionLaw::sigma_lambda_sq`], rejecting zero variance.
    pub fn nondegenerate_sigma_lambda_sq(&self, lambda: Complex64) -> Result<f64, ModelError> {
        let s = self.sigma_lambda_sq(lambda);
        if s <= 1e-14 {
            Err(ModelError::DegenerateLaw(s))
        } else {
            Ok(s)
        }
    }

    /// `E[(Z_1(lambda) - 1)^2]`.
    pub fn pseudo_sigma_lambda_sq(&self, lambda: Complex64) -> Complex64 {
        let m = self.laplace_m(lambda);
        let phi = self.displacement.laplace(lambda);
        let phi_2lambda = self.displacement.laplace(2.0 * lambda);
        let second = phi_2lambda * self.mean_offspring() + phi * phi * self.factorial_moment2();
        second / (m * m) - 1.0
    }

    /// Draws the number of children.
    pub fn sample_count<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if let Some(n) = self.deterministic_count() {
            return n;
        }
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.offspring.len() - 1)
    }

    /// Appends one generation of children displacements to `out`.
    pub fn sample_offspring<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        let n = self.sample_count(rng);
        out.extend((0..n).map(|_| self.displacement.sample(rng)));
    }

    /// Law of the point process with every displacement negated.
    pub fn mirrored(&self) -> Self {
        Self {
            offspring: self.offspring.clone(),
            displacement: self.displacement.mirrored(),
            cumulative: self.cumulative.clone(),
        }
    }

    /// Rebuilds the sampling table after deserialization.
    pub fn revalidated(self) -> Result<Self, ModelError> {
        Self::new(self.offspring, self.displacement)
    }
}

/// A complex parameter `lambda = theta + i eta` with the transform values every
/// consumer needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexParam {
    pub lambda: Complex64,
    pub m_lambda: Complex64,
    pub m_2theta: f64,
    pub m_2lambda: Complex64,
    pub sigma_lambda_sq: f64,
}

impl ComplexParam {
    pub fn new(law: &ReproductionLaw, lambda: Complex64) -> Result<Self, ModelError> {
        let m_lambda = law.laplace_m(lambda);
        let modulus = m_lambda.norm();
        if !(modulus >= M_ZERO_TOL) || !modulus.is_finite() {
            return Err(ModelError::VanishingTransform { lambda, modulus });
        }
        Ok(Self {
            lambda,
            m_lambda,
            m_2theta: law.m_real(2.0 * lambda.re),
            m_2lambda: law.laplace_m(2.0 * lambda),
            sigma_lambda_sq: law.sigma_lambda_sq(lambda),
        })
    }

    pub fn real(law: &ReproductionLaw, theta: f64) -> Result<Self, ModelError> {
        Self::new(law, Complex64::new(theta, 0.0))
    }

    pub fn theta(&self) -> f64 {
        self.lambda.re
    }

    pub fn eta(&self) -> f64 {
        self.lambda.im
    }

    /// `m(2 theta) / |m(lambda)|^2`, the contraction factor of the second moment.
    pub fn rho(&self) -> f64 {
        self.m_2theta / self.m_lambda.norm_sqr()
    }

    /// `|m(2 lambda)| < m(2 theta)`: the Gaussian limit is complex rather than real.
    pub fn limit_is_complex(&self) -> bool {
        self.m_2lambda.norm() < self.m_2theta * (1.0 - 1e-12)
    }
}
