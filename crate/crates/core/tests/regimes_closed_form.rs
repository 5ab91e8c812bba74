use std::f64::consts::LN_2;

use brwlab::{Classifier, Complex64, RegimeKind, RegimeLabel, ReproductionLaw};
use proptest::prelude::*;

fn vartheta() -> f64 {
    (2.0 * LN_2).sqrt()
}

/// Regime of `theta + i eta` for two children with standard normal steps, or
/// `None` within `tube` of a region boundary.
fn closed_form(theta: f64, eta: f64, tube: f64) -> Option<RegimeKind> {
    let vt = vartheta();
    let (t, e) = (theta.abs(), eta.abs());
    let edges = [t - vt / 2.0, t * t + e * e - LN_2, e - (vt - t), t - vt, t];
    if edges.iter().any(|d| d.abs() < tube) {
        return None;
    }
    Some(if t < vt / 2.0 && t * t + e * e < LN_2 {
        RegimeKind::GaussianInterior
    } else if t > vt / 2.0 && t < vt && e < vt - t {
        RegimeKind::Extremal
    } else {
        RegimeKind::OutOfTheory
    })
}

fn log_m(l: Complex64) -> Complex64 {
    l * l / 2.0 + LN_2
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn classifier_matches_closed_form(theta in -1.6f64..1.6, eta in -1.6f64..1.6) {
        let cl = Classifier::new(ReproductionLaw::binary_gaussian());
        if let Some(want) = closed_form(theta, eta, 1e-8) {
            prop_assert_eq!(cl.classify_any(Complex64::new(theta, eta)).kind(), want);
        }
    }

    #[test]
    fn gaussian_scaling_matches_closed_form(theta in 0.01f64..0.58, frac in -0.99f64..0.99, n in 1usize..30) {
        let eta = frac * (LN_2 - theta * theta).sqrt();
        let l = Complex64::new(theta, eta);
        let cl = Classifier::new(ReproductionLaw::binary_gaussian());
        let label = cl.classify(l);
        prop_assume!(matches!(label, RegimeLabel::GaussianInterior { .. }));
        let got = cl.scaling_constant(&label, l, n).unwrap();
        let nf = n as f64;
        let want = (log_m(l) * nf - log_m(Complex64::new(2.0 * theta, 0.0)) * (nf / 2.0)).exp();
        prop_assert!((got - want).norm() <= 1e-9 * want.norm());
    }

    #[test]
    fn extremal_scaling_matches_closed_form(s in 0.02f64..0.98, frac in -0.98f64..0.98, n in 1usize..30) {
        let vt = vartheta();
        let theta = vt / 2.0 + s * vt / 2.0;
        let l = Complex64::new(theta, frac * (vt - theta));
        let cl = Classifier::new(ReproductionLaw::binary_gaussian());
        let label = cl.classify(l);
        prop_assume!(label == RegimeLabel::Extremal);
        let nf = n as f64;
        let r = l / vt;
        let want = (r * 1.5 * nf.ln()).exp() * (log_m(l) * nf - r * nf * log_m(Complex64::new(vt, 0.0))).exp();
        let got = cl.scaling_constant(&label, l, n).unwrap();
        prop_assert!((got - want).norm() <= 1e-9 * want.norm());
    }
}

#[test]
fn stable_line_alpha_is_vartheta_over_theta() {
    let vt = vartheta();
    let cl = Classifier::new(ReproductionLaw::binary_gaussian());
    for i in 1..40 {
        let t = vt / 2.0 + vt / 2.0 * i as f64 / 40.0;
        match cl.classify(Complex64::new(t, -(vt - t))) {
            RegimeLabel::StableBoundary { alpha, .. } => assert!((alpha - vt / t).abs() < 1e-9),
            other => panic!("theta {t}: {other:?}"),
        }
    }
}
