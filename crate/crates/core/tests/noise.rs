use spinfp::bloch::Trajectory;
use spinfp::error::Error;
use spinfp::estimator::FitConfig;
use spinfp::noise::{
    add_noise_draw, add_noise_scalar, compare_methods, summarize, width_study, NoiseSpec, Scenario,
    WidthKind,
};

fn ir_scenario(label: &str, n: usize) -> Scenario {
    Scenario::InversionRecovery {
        label: label.into(),
        times: (0..n).map(|m| m as f64 * 0.01).collect(),
        t1: 0.3,
        fit: FitConfig::default(),
    }
}

#[test]
fn empirical_noise_level_matches_epsilon() {
    let eps = 0.03;
    let g = Trajectory::new(vec![[0.0, 0.0]; 50_000], 0.01).unwrap();
    let noisy = add_noise_draw(&g, NoiseSpec::new(eps, 17).unwrap(), 4).unwrap();
    let values: Vec<f64> = noisy.samples().iter().flat_map(|s| [s[0], s[1]]).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((sd / eps - 1.0).abs() < 0.01, "sd {sd}");
    assert!(mean.abs() < 4.0 * eps / n.sqrt(), "mean {mean}");
}

#[test]
fn draws_are_reproducible_and_distinct() {
    let spec = NoiseSpec::new(0.1, 2).unwrap();
    let a = add_noise_scalar(&[0.0; 64], spec, 0).unwrap();
    assert_eq!(a, add_noise_scalar(&[0.0; 64], spec, 0).unwrap());
    let b = add_noise_scalar(&[0.0; 64], spec, 1).unwrap();
    let c = add_noise_scalar(&[0.0; 64], NoiseSpec::new(0.1, 3).unwrap(), 0).unwrap();
    assert_ne!(a, b);
    assert_ne!(a, c);
}

#[test]
fn width_is_zero_without_noise() {
    let report = width_study(&ir_scenario("ir", 60), &[0.0], 5, 1, WidthKind::StdDev).unwrap();
    assert_eq!(report.rows[0].width, 0.0);
    assert!((report.rows[0].mean - 0.3).abs() < 1e-5);
}

#[test]
fn width_scales_linearly_at_small_noise() {
    let report = width_study(&ir_scenario("ir", 120), &[1e-4, 1e-3], 200, 9, WidthKind::StdDev).unwrap();
    let (lo, hi) = (&report.rows[0], &report.rows[1]);
    let ratio = hi.width / lo.width;
    assert!((ratio - 10.0).abs() < 1.0, "ratio {ratio}");
    for r in &report.rows {
        let se = r.width / (r.draws as f64).sqrt();
        assert!((r.mean - 0.3).abs() < 4.0 * se, "mean {} width {}", r.mean, r.width);
    }
}

#[test]
fn fewer_points_give_wider_estimates() {
    let eps = [3e-3, 1e-2];
    let long = width_study(&ir_scenario("long", 120), &eps, 60, 4, WidthKind::StdDev).unwrap();
    let short = width_study(&ir_scenario("short", 20), &eps, 60, 4, WidthKind::StdDev).unwrap();
    for row in compare_methods(&short, &long).unwrap() {
        assert!(row.ratio.unwrap() > 1.0, "{row:?}");
    }
}

#[test]
fn too_many_failed_draws_is_an_error() {
    let mut est = vec![Some(1.0); 7];
    est.extend([None, None, None]);
    match summarize(0.01, &est, WidthKind::StdDev) {
        Err(Error::TooManyFailures { failures, draws, .. }) => assert_eq!((failures, draws), (3, 10)),
        other => panic!("{other:?}"),
    }
    est[7] = Some(1.0);
    assert!(summarize(0.01, &est, WidthKind::Mad).is_ok());
}
