use brwlab::lab::{residual_set, SampleMeta};
use brwlab::simulator::run_replicas;
use brwlab::stats::moment_summary;
use brwlab::{Complex64, ReproductionLaw, SimConfig};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn meta() -> SampleMeta {
    SampleMeta {
        source: "test".into(),
        law_id: "binary_gaussian".into(),
        lambda: c(0.3, 0.2),
        n: 0,
        extra_m: 0,
        replicas: 0,
        regime: "gaussian_interior".into(),
        seed: 0,
        extinct_count: 0,
        rejected: 0,
    }
}

#[test]
fn mean_and_second_moment_of_the_increment() {
    let law = ReproductionLaw::binary_gaussian();
    let lambda = c(0.3, 0.2);
    let n = 8;
    let cfg = SimConfig::new(n, 0, vec![lambda], 5);
    let reps = run_replicas(&law, &cfg, 0..4000).unwrap();
    let inc = residual_set(&reps, 0, 0, n, c(1.0, 0.0), meta());
    let m = moment_summary(&inc.samples).unwrap();
    // E[Z_n] = 1 and, with m(l) = 2 e^{l^2/2},
    // E|Z_n - 1|^2 = sigma^2 (1 - rho^n) / (1 - rho), sigma^2 = (e^{t^2+e^2} - 1)/2, rho = e^{t^2+e^2}/2.
    let s = lambda.norm_sqr().exp();
    let (sigma_sq, rho) = ((s - 1.0) / 2.0, s / 2.0);
    let target = sigma_sq * (1.0 - rho.powi(n as i32)) / (1.0 - rho);
    assert!(m.mean.norm() < 4.0 * m.mean_se, "mean offset {} se {}", m.mean, m.mean_se);
    assert!((m.abs2 - target).abs() < 4.0 * m.abs2_se, "{} vs {target} (se {})", m.abs2, m.abs2_se);
}

#[test]
fn residuals_scale_with_the_normalization() {
    let law = ReproductionLaw::binary_gaussian();
    let cfg = SimConfig::new(5, 3, vec![c(0.4, -0.3)], 17);
    let reps = run_replicas(&law, &cfg, 0..50).unwrap();
    let base = residual_set(&reps, 0, 5, 3, c(1.0, 0.0), meta());
    for k in [c(2.0, 0.0), c(0.0, 1.0), c(-0.7, 3.1), c(1e-3, 1e3)] {
        let scaled = residual_set(&reps, 0, 5, 3, k, meta());
        for (a, b) in scaled.samples.iter().zip(&base.samples) {
            assert!((a - b * k).norm() <= 1e-12 * (b * k).norm().max(1e-300), "{a} vs {}", b * k);
        }
    }
}

#[test]
fn replicas_do_not_depend_on_the_batch() {
    let law = ReproductionLaw::binary_gaussian();
    let cfg = SimConfig::new(6, 2, vec![c(0.5, 0.5)], 3);
    let all = run_replicas(&law, &cfg, 0..40).unwrap();
    let tail = run_replicas(&law, &cfg, 25..40).unwrap();
    assert_eq!(&all[25..], &tail[..]);
}

#[test]
fn pseudo_moment_of_the_residual_matches_its_finite_depth_value() {
    // E[(a_n (Z_{n+m} - Z_n))^2] = a_n^2 tau sum_{k=n}^{n+m-1} r^k with
    // tau = E[(Z_1 - 1)^2] = (e^{l^2} - 1)/2 and r = m(2l)/m(l)^2 = e^{l^2}/2.
    // Its modulus decays only like e^{-2 eta^2 n}.
    let law = ReproductionLaw::binary_gaussian();
    let l = c(0.3, 0.2);
    let (n, m) = (6usize, 4usize);
    let ml = 2.0 * (l * l / 2.0).exp();
    let a_n = ml.powi(n as i32) / (2.0 * (2.0 * l.re * l.re).exp()).powf(n as f64 / 2.0);
    let cfg = SimConfig::new(n, m, vec![l], 31).with_z_depths(&[n, n + m]);
    let reps = run_replicas(&law, &cfg, 0..20_000).unwrap();
    let set = residual_set(&reps, 0, n, m, a_n, meta());
    let s = moment_summary(&set.samples).unwrap();
    let tau = ((l * l).exp() - 1.0) / 2.0;
    let r = (l * l).exp() / 2.0;
    let want: Complex64 = (n..n + m).map(|k| a_n * a_n * tau * r.powi(k as i32)).sum();
    assert!((s.pseudo2 - want).norm() < 4.0 * s.pseudo2_se, "{} vs {want} (se {})", s.pseudo2, s.pseudo2_se);
    assert!(want.norm() > 10.0 * s.pseudo2_se);
}
