//! Branching random walk laboratory.
//!
//! Complex additive martingales `Z_n(lambda)`, the classification of `lambda`
//! into fluctuation regimes, Monte Carlo samplers for the residuals
//! `a_n (Z - Z_n)` and their limit laws, and the statistics used to compare
//! them.

pub mod appendix_props;
pub mod config;
pub mod io;
pub mod lab;
pub mod model;
pub mod regimes;
pub mod rng;
pub mod simulator;
pub mod stats;

pub use model::{ComplexParam, Displacement, ModelError, ReproductionLaw};
pub use regimes::{BoundaryParams, Classifier, GroupSpec, RegimeKind, RegimeLabel};
pub use simulator::{ReplicaResult, SimConfig, TipRecord};

pub use num_complex::Complex64;

pub(crate) fn ser_complex<S: serde::Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&z.re)?;
    t.serialize_element(&z.im)?;
    t.end()
}
