use polident::stats::{
    bootstrap_ci, correlate, fitted_curve, glm_quasibinomial, grid_over, logistic, pearson, CorrelateOptions,
    CountryObservation, GlmOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn pearson_matches_the_covariance_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.random_range(3..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.random_range(-2.0..2.0)).collect();
        let mx = x.iter().sum::<f64>() / n as f64;
        let my = y.iter().sum::<f64>() / n as f64;
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let want = cov / (vx * vy).sqrt();
        assert!((pearson(&x, &y).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn logistic_coefficients_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (a, b) = (-1.2, 3.5);
    let x: Vec<f64> = (0..60).map(|i| i as f64 / 60.0).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&v| logistic(a + b * v) + rng.random_range(-1e-6..1e-6))
        .collect();
    let fit = glm_quasibinomial(&y, &x, GlmOptions::default()).unwrap();
    assert!((fit.intercept() - a).abs() < 1e-3, "{}", fit.intercept());
    assert!((fit.slope() - b).abs() < 1e-3, "{}", fit.slope());

    let curve = fitted_curve(&fit, &grid_over(&x, 25));
    assert_eq!(curve.len(), 25);
    for w in curve.windows(2) {
        assert!(w[1].fit > w[0].fit);
    }
    for p in &curve {
        assert!(p.lower <= p.fit && p.fit <= p.upper);
    }
}

#[test]
fn bootstrap_is_reproducible_and_brackets_the_estimate() {
    let x = [0.81, 0.84, 0.86, 0.88, 0.89, 0.91, 0.93, 0.95];
    let y = [0.62, 0.55, 0.57, 0.44, 0.49, 0.38, 0.33, 0.30];
    let a = bootstrap_ci(&x, &y, 2000, (0.05, 0.95), 17).unwrap();
    let b = bootstrap_ci(&x, &y, 2000, (0.05, 0.95), 17).unwrap();
    assert_eq!(a, b);
    let r = pearson(&x, &y).unwrap();
    assert!(a.lower <= r && r <= a.upper);
}

#[test]
fn correlate_reports_a_negative_slope() {
    let obs: Vec<CountryObservation> = [("a", 0.82, 0.7), ("b", 0.86, 0.5), ("c", 0.9, 0.45), ("d", 0.94, 0.2)]
        .iter()
        .map(|&(c, s, v)| CountryObservation {
            country: c.into(),
            similarity: s,
            conflict_share: v,
        })
        .collect();
    let report = correlate(
        &obs,
        &CorrelateOptions {
            resamples: 500,
            ..CorrelateOptions::default()
        },
    )
    .unwrap();
    assert!(report.to_json().unwrap().contains("\"pearson_r\""));
    assert!(report.pearson_r < -0.9);
    assert!(report.glm.slope() < 0.0);
    assert_eq!(report.n, 4);
}
