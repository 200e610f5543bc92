use proptest::prelude::*;
use spinfp::bloch::{LorentzianSpec, Pulse, PulseSequence};
use spinfp::estimator::{
    correlation_scan, estimate, fit_parameters, inversion_recovery, ir_estimate, FitConfig, FitStrategy,
};
use spinfp::fingerprint::Dictionary;
use spinfp::grape::random_field;
use spinfp::model::{EnsembleSpec, ForwardModel, Parameter, ParameterPoint};

fn t1(v: f64) -> ParameterPoint {
    ParameterPoint::single(Parameter::T1, v).unwrap()
}

fn t1_dictionary() -> Dictionary {
    let seq = random_field(150, std::f64::consts::PI, 0.01, 11).unwrap();
    Dictionary::build(
        EnsembleSpec::homogeneous(0.3, 0.2),
        seq,
        [0.1, 0.233, 0.366, 0.5].iter().map(|&v| t1(v)).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noiseless_estimate_is_consistent(truth in 0.1f64..0.5) {
        let dict = t1_dictionary();
        let g = dict.forward_model().simulate(&t1(truth)).unwrap();
        let report = estimate(&dict, &g, &FitConfig::default()).unwrap();
        let got = report.refined_parameters.get(Parameter::T1).unwrap();
        prop_assert!((got - truth).abs() < 1e-4 * truth, "{got} vs {truth}");
        prop_assert!(report.final_residual <= report.start_residual);
    }

    #[test]
    fn estimate_ignores_signal_scale(truth in 0.1f64..0.5, scale in 0.01f64..100.0) {
        let dict = t1_dictionary();
        let g = dict.forward_model().simulate(&t1(truth)).unwrap();
        let a = estimate(&dict, &g, &FitConfig::default()).unwrap();
        let b = estimate(&dict, &g.scaled(scale), &FitConfig::default()).unwrap();
        prop_assert_eq!(a.matched_index, b.matched_index);
        let (x, y) = (
            a.refined_parameters.get(Parameter::T1).unwrap(),
            b.refined_parameters.get(Parameter::T1).unwrap(),
        );
        prop_assert!((x - y).abs() < 1e-6 * x, "{x} vs {y}");
    }
}

#[test]
fn dictionary_signal_matches_its_own_entry() {
    let dict = t1_dictionary();
    for (i, e) in dict.entries().iter().enumerate() {
        let report = estimate(&dict, &e.trajectory, &FitConfig::default()).unwrap();
        assert_eq!(report.matched_index, Some(i));
        assert!(report.start_residual < 1e-24);
        let v = report.refined_parameters.get(Parameter::T1).unwrap();
        assert!((v - e.point.get(Parameter::T1).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn both_strategies_recover_two_parameters() {
    let seq = random_field(200, 2.0, 0.01, 5).unwrap();
    let model = ForwardModel::new(EnsembleSpec::homogeneous(0.3, 0.2), seq);
    let truth = ParameterPoint::new([(Parameter::T1, 0.42), (Parameter::T2, 0.11)]).unwrap();
    let g = model.simulate(&truth).unwrap();
    let start = ParameterPoint::new([(Parameter::T1, 0.35), (Parameter::T2, 0.13)]).unwrap();
    for strategy in [FitStrategy::GradientDescent, FitStrategy::LevenbergMarquardt] {
        let cfg = FitConfig {
            strategy,
            max_iterations: 2000,
            ..FitConfig::free([Parameter::T1, Parameter::T2])
        };
        let r = fit_parameters(&g, &model, &start, &cfg).unwrap();
        for p in [Parameter::T1, Parameter::T2] {
            let (got, want) = (r.refined_parameters.get(p).unwrap(), truth.get(p).unwrap());
            assert!((got - want).abs() < 1e-3 * want, "{strategy:?} {p}: {got} vs {want}");
        }
    }
}

#[test]
fn inversion_recovery_fit_is_exact_without_noise() {
    let samples: Vec<(f64, f64)> = (0..120)
        .map(|m| {
            let t = m as f64 * 0.01;
            (t, inversion_recovery(t, 0.3))
        })
        .collect();
    let fit = ir_estimate(&samples, &FitConfig::default()).unwrap();
    assert!(fit.converged);
    assert!((fit.t1 - 0.3).abs() < 1e-5, "{}", fit.t1);
}

/// A single π/2 pulse followed by free decay only sees 1/T2 + Δω/2, so a Δω
/// scan should trade T2 against Δω at constant T2*.
#[test]
fn free_induction_decay_cannot_separate_t2_from_width() {
    let mut pulses = vec![Pulse::new(std::f64::consts::FRAC_PI_2, 0.0)];
    pulses.extend(std::iter::repeat_n(Pulse::new(0.0, 0.0), 299));
    let seq = PulseSequence::new(pulses, 0.001).unwrap();
    let template = EnsembleSpec::lorentzian(0.087, 0.06, LorentzianSpec::new(0.0, 28.0));
    let model = ForwardModel::new(template, seq);
    let g = model.simulate(&template.to_point()).unwrap();
    let start = ParameterPoint::new([(Parameter::T2, 0.05), (Parameter::Center, 0.0)]).unwrap();
    let cfg = FitConfig {
        strategy: FitStrategy::LevenbergMarquardt,
        ..FitConfig::free([Parameter::T2, Parameter::Center])
    };
    let rows = correlation_scan(&g, &model, &start, &[16.0, 22.0, 28.0, 34.0], &cfg).unwrap();
    let t2: Vec<f64> = rows.iter().map(|r| r.t2().unwrap()).collect();
    let t2s: Vec<f64> = rows.iter().map(|r| r.t2_star().unwrap()).collect();
    let spread = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        (hi - lo) / lo
    };
    assert!(spread(&t2) > 0.3, "T2 {t2:?}");
    assert!(spread(&t2s) < 0.05, "T2* {t2s:?}");
}

#[test]
fn mismatched_or_empty_configs_are_rejected() {
    let dict = t1_dictionary();
    let g = dict.entries()[0].trajectory.clone();
    assert!(estimate(&dict, &g, &FitConfig::free([])).is_err());
    let short = spinfp::bloch::Trajectory::new(g.samples()[..10].to_vec(), 0.01).unwrap();
    assert!(estimate(&dict, &short, &FitConfig::default()).is_err());
}
