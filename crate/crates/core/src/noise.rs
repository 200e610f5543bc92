//! Additive Gaussian noise and estimator width studies.
//!
//! Every draw gets its own ChaCha8 stream: the master seed picks the key and
//! the draw index picks the stream, so a draw can be recomputed on its own
//! and results do not depend on thread scheduling.

use rand::SeedableRng;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::Trajectory;
use crate::error::{Error, Result};
use crate::estimator::{estimate, inversion_recovery, ir_estimate, FitConfig};
use crate::fingerprint::Dictionary;
use crate::model::{Parameter, ParameterPoint};

/// Minimum fraction of draws that must produce an estimate.
pub const MIN_SUCCESS_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub epsilon: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("noise epsilon must be finite and >= 0, got {epsilon}")));
        }
        Ok(Self { epsilon, seed })
    }
}

pub fn draw_rng(seed: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    rng
}

/// `g + ε·ξ` with independent standard normal `ξ` on both components of
/// every sample, drawn from stream `draw`.
pub fn add_noise_draw(g: &Trajectory, spec: NoiseSpec, draw: u64) -> Result<Trajectory> {
    NoiseSpec::new(spec.epsilon, spec.seed)?;
    let mut rng = draw_rng(spec.seed, draw);
    let samples = g
        .samples()
        .iter()
        .map(|s| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [s[0] + spec.epsilon * a, s[1] + spec.epsilon * b]
        })
        .collect();
    Trajectory::new(samples, g.delay_t())
}

pub fn add_noise(g: &Trajectory, spec: NoiseSpec) -> Result<Trajectory> {
    add_noise_draw(g, spec, 0)
}

/// Noise on scalar samples, same stream layout.
pub fn add_noise_scalar(values: &[f64], spec: NoiseSpec, draw: u64) -> Result<Vec<f64>> {
    NoiseSpec::new(spec.epsilon, spec.seed)?;
    let mut rng = draw_rng(spec.seed, draw);
    Ok(values
        .iter()
        .map(|v| {
            let a: f64 = rng.sample(StandardNormal);
            v + spec.epsilon * a
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthKind {
    #[default]
    StdDev,
    /// Median absolute deviation scaled by 1.4826.
    Mad,
}

/// An estimation procedure run repeatedly on noisy copies of one clean signal.
#[derive(Debug, Clone)]
pub enum Scenario {
    Fingerprint {
        label: String,
        dictionary: Dictionary,
        truth: ParameterPoint,
        target: Parameter,
        fit: FitConfig,
    },
    InversionRecovery {
        label: String,
        times: Vec<f64>,
        t1: f64,
        fit: FitConfig,
    },
}

/// Clean signal of a scenario, computed once.
#[derive(Debug, Clone)]
pub enum CleanSignal {
    Trajectory(Trajectory),
    Scalar(Vec<f64>),
}

impl Scenario {
    pub fn label(&self) -> &str {
        match self {
            Scenario::Fingerprint { label, .. } | Scenario::InversionRecovery { label, .. } => label,
        }
    }

    pub fn truth(&self) -> f64 {
        match self {
            Scenario::Fingerprint { dictionary, truth, target, .. } => truth
                .get(*target)
                .or_else(|| dictionary.template().get(*target))
                .unwrap_or(f64::NAN),
            Scenario::InversionRecovery { t1, .. } => *t1,
        }
    }

    pub fn clean(&self) -> Result<CleanSignal> {
        match self {
            Scenario::Fingerprint { dictionary, truth, target, .. } => {
                if truth.get(*target).is_none() && dictionary.template().get(*target).is_none() {
                    return Err(Error::invalid(format!("target parameter {target} is not defined")));
                }
                Ok(CleanSignal::Trajectory(dictionary.forward_model().simulate(truth)?))
            }
            Scenario::InversionRecovery { times, t1, .. } => {
                if times.len() < 2 || !(*t1 > 0.0) {
                    return Err(Error::invalid("inversion recovery needs two or more times and t1 > 0"));
                }
                Ok(CleanSignal::Scalar(times.iter().map(|&t| inversion_recovery(t, *t1)).collect()))
            }
        }
    }

    /// Estimate of the target parameter from draw `draw` at noise `spec`.
    pub fn run_draw(&self, clean: &CleanSignal, spec: NoiseSpec, draw: u64) -> Result<f64> {
        match (self, clean) {
            (Scenario::Fingerprint { dictionary, target, fit, .. }, CleanSignal::Trajectory(g)) => {
                let noisy = add_noise_draw(g, spec, draw)?;
                let report = estimate(dictionary, &noisy, fit)?;
                report
                    .refined_parameters
                    .get(*target)
                    .ok_or_else(|| Error::invalid(format!("estimate does not contain {target}")))
            }
            (Scenario::InversionRecovery { times, fit, .. }, CleanSignal::Scalar(values)) => {
                let noisy = add_noise_scalar(values, spec, draw)?;
                let samples: Vec<(f64, f64)> = times.iter().copied().zip(noisy).collect();
                Ok(ir_estimate(&samples, fit)?.t1)
            }
            _ => Err(Error::invalid("clean signal does not belong to this scenario")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRow {
    pub epsilon: f64,
    pub mean: f64,
    pub width: f64,
    pub draws: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthReport {
    pub method: String,
    pub kind: WidthKind,
    pub rows: Vec<WidthRow>,
}

impl WidthReport {
    pub fn row(&self, epsilon: f64) -> Option<&WidthRow> {
        self.rows.iter().find(|r| r.epsilon == epsilon)
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Mean and width of the successful draws. Fails when fewer than
/// [`MIN_SUCCESS_FRACTION`] of the draws succeeded.
pub fn summarize(epsilon: f64, estimates: &[Option<f64>], kind: WidthKind) -> Result<WidthRow> {
    let draws = estimates.len();
    let ok: Vec<f64> = estimates.iter().flatten().copied().collect();
    let failures = draws - ok.len();
    let allowed = draws - (MIN_SUCCESS_FRACTION * draws as f64).ceil() as usize;
    if draws == 0 || failures > allowed || ok.len() < 2 {
        return Err(Error::TooManyFailures { failures, draws, allowed });
    }
    let n = ok.len() as f64;
    // Shifted by the first estimate so identical draws give exactly zero width.
    let shift = ok[0];
    let offset = ok.iter().map(|v| v - shift).sum::<f64>() / n;
    let mean = shift + offset;
    let width = match kind {
        WidthKind::StdDev => {
            (ok.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        }
        WidthKind::Mad => {
            let mut sorted = ok.clone();
            sorted.sort_by(f64::total_cmp);
            let med = median(&sorted);
            let mut dev: Vec<f64> = sorted.iter().map(|v| (v - med).abs()).collect();
            dev.sort_by(f64::total_cmp);
            1.4826 * median(&dev)
        }
    };
    Ok(WidthRow { epsilon, mean, width, draws, failures })
}

/// Runs `draws` noisy estimates at each noise level.
pub fn width_study(
    scenario: &Scenario,
    eps_grid: &[f64],
    draws: usize,
    seed: u64,
    kind: WidthKind,
) -> Result<WidthReport> {
    if eps_grid.is_empty() || draws < 2 {
        return Err(Error::invalid("width study needs a non-empty noise grid and at least two draws"));
    }
    let clean = scenario.clean()?;
    let rows = eps_grid
        .iter()
        .map(|&epsilon| {
            let spec = NoiseSpec::new(epsilon, seed)?;
            let estimates: Vec<Option<f64>> = (0..draws as u64)
                .into_par_iter()
                .map(|d| scenario.run_draw(&clean, spec, d).ok())
                .collect();
            summarize(epsilon, &estimates, kind)
        })
        .collect::<Result<_>>()?;
    Ok(WidthReport {
        method: scenario.label().to_string(),
        kind,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub epsilon: f64,
    /// `width(numerator) / width(denominator)`; `None` when the denominator width is zero.
    pub ratio: Option<f64>,
    pub std_error: Option<f64>,
}

/// Per-ε width ratios with standard errors from the sample-SD approximation
/// `se(s)/s ≈ 1/√(2(n−1))`.
pub fn compare_methods(numerator: &WidthReport, denominator: &WidthReport) -> Result<Vec<RatioRow>> {
    if numerator.rows.len() != denominator.rows.len()
        || numerator.rows.iter().zip(&denominator.rows).any(|(a, b)| a.epsilon != b.epsilon)
    {
        return Err(Error::invalid("width reports use different noise grids"));
    }
    Ok(numerator
        .rows
        .iter()
        .zip(&denominator.rows)
        .map(|(a, b)| {
            if b.width == 0.0 {
                return RatioRow { epsilon: a.epsilon, ratio: None, std_error: None };
            }
            let ratio = a.width / b.width;
            let rel = |r: &WidthRow| 1.0 / (2.0 * ((r.draws - r.failures) as f64 - 1.0)).sqrt();
            let se = ratio * (rel(a).powi(2) + rel(b).powi(2)).sqrt();
            RatioRow { epsilon: a.epsilon, ratio: Some(ratio), std_error: Some(se) }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::Trajectory;

    fn flat(n: usize) -> Trajectory {
        Trajectory::new(vec![[0.5, -0.25]; n], 0.01).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let g = flat(10);
        let out = add_noise(&g, NoiseSpec::new(0.0, 3).unwrap()).unwrap();
        assert_eq!(out.samples(), g.samples());
    }

    #[test]
    fn same_seed_same_noise() {
        let g = flat(50);
        let spec = NoiseSpec::new(0.1, 9).unwrap();
        assert_eq!(add_noise_draw(&g, spec, 4).unwrap(), add_noise_draw(&g, spec, 4).unwrap());
        assert_ne!(add_noise_draw(&g, spec, 4).unwrap(), add_noise_draw(&g, spec, 5).unwrap());
    }

    #[test]
    fn negative_epsilon_rejected() {
        assert!(NoiseSpec::new(-1e-3, 0).is_err());
        assert!(NoiseSpec::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn summarize_counts_failures() {
        let mut est = vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), None];
        let row = summarize(0.1, &est, WidthKind::StdDev).unwrap();
        assert_eq!(row.failures, 1);
        assert_eq!(row.mean, 2.5);
        assert!((row.width - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        est[0] = None;
        assert!(matches!(summarize(0.1, &est, WidthKind::StdDev), Err(Error::TooManyFailures { .. })));
    }

    #[test]
    fn mad_of_symmetric_set() {
        let est: Vec<Option<f64>> = [1.0, 2.0, 3.0, 4.0, 5.0].iter().map(|v| Some(*v)).collect();
        let row = summarize(0.0, &est, WidthKind::Mad).unwrap();
        assert!((row.width - 1.4826).abs() < 1e-12);
    }

    #[test]
    fn identical_reports_ratio_one() {
        let r = WidthReport {
            method: "a".into(),
            kind: WidthKind::StdDev,
            rows: vec![
                WidthRow { epsilon: 0.0, mean: 1.0, width: 0.0, draws: 10, failures: 0 },
                WidthRow { epsilon: 0.1, mean: 1.0, width: 0.2, draws: 10, failures: 0 },
            ],
        };
        let cmp = compare_methods(&r, &r).unwrap();
        assert_eq!(cmp[0].ratio, None);
        assert_eq!(cmp[1].ratio, Some(1.0));
    }

    #[test]
    fn ir_width_grows_with_noise() {
        let scenario = Scenario::InversionRecovery {
            label: "ir".into(),
            times: (0..120).map(|m| 0.01 * m as f64).collect(),
            t1: 0.3,
            fit: FitConfig::default(),
        };
        let rep = width_study(&scenario, &[0.0, 0.01, 0.05], 40, 1, WidthKind::StdDev).unwrap();
        assert!(rep.rows[0].width < 1e-6);
        assert!(rep.rows[1].width < rep.rows[2].width);
    }
}
