//! Parameter estimation from a measured fingerprint: nearest-entry matching
//! followed by refinement of the free parameters against the same normalized
//! distance, plus the inversion-recovery baseline and T2* helpers.
//!
//! Refinement works in scaled coordinates `x_j = S_j / s_j`, where `s_j` is
//! the magnitude of the starting value (or a per-parameter default when the
//! start is zero), so one step size suits parameters of different units.
//! Gradients are central differences of step `fd_step` in those coordinates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::Trajectory;
use crate::error::{Error, Result};
use crate::fingerprint::{distance, recognize, Dictionary};
use crate::model::{ForwardModel, Parameter, ParameterPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStrategy {
    /// Projected gradient descent with backtracking.
    #[default]
    GradientDescent,
    /// Damped Gauss-Newton on the normalized residual vector.
    LevenbergMarquardt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub free: Vec<Parameter>,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub max_iterations: usize,
    /// Stop once the largest relative parameter update falls below this.
    pub tolerance: f64,
    pub strategy: FitStrategy,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            free: vec![Parameter::T1],
            fd_step: 1e-4,
            max_iterations: 200,
            tolerance: 1e-6,
            strategy: FitStrategy::GradientDescent,
        }
    }
}

impl FitConfig {
    pub fn free(params: impl IntoIterator<Item = Parameter>) -> Self {
        Self {
            free: params.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.free.is_empty() {
            return Err(Error::invalid("at least one free parameter is required"));
        }
        for (i, p) in self.free.iter().enumerate() {
            if self.free[..i].contains(p) {
                return Err(Error::invalid(format!("free parameter {p} listed twice")));
            }
        }
        if !(self.fd_step > 0.0 && self.fd_step < 0.5) {
            return Err(Error::invalid("fd_step must lie in (0, 0.5)"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    /// Dictionary entry the refinement started from, if matching was run.
    pub matched_index: Option<usize>,
    pub matched_point: Option<ParameterPoint>,
    pub start_residual: f64,
    pub refined_parameters: ParameterPoint,
    pub final_residual: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Residual after every accepted iteration, starting with the start residual.
    pub residual_history: Vec<f64>,
}

struct Problem<'a> {
    g: &'a Trajectory,
    model: &'a ForwardModel,
    base: ParameterPoint,
    free: &'a [Parameter],
    scales: Vec<f64>,
}

impl Problem<'_> {
    fn point(&self, x: &[f64]) -> ParameterPoint {
        let mut p = self.base.clone();
        for ((param, xi), s) in self.free.iter().zip(x).zip(&self.scales) {
            p.set(*param, xi * s);
        }
        p
    }

    /// Clamp to per-parameter bounds and keep `t2 ≤ 2·t1`.
    fn project(&self, x: &mut [f64]) {
        for ((param, xi), s) in self.free.iter().zip(x.iter_mut()).zip(&self.scales) {
            let (lo, hi) = param.bounds();
            *xi = (*xi * s).clamp(lo, hi) / s;
        }
        let full = self.point(x);
        let t1 = full.get(Parameter::T1).or(self.model.template.get(Parameter::T1));
        if let (Some(t1), Some(j)) = (t1, self.free.iter().position(|p| *p == Parameter::T2)) {
            let cap = 2.0 * t1;
            if x[j] * self.scales[j] > cap {
                x[j] = cap / self.scales[j];
            }
        }
    }

    fn simulate(&self, x: &[f64]) -> Result<Trajectory> {
        self.model.simulate(&self.point(x))
    }

    fn residual(&self, x: &[f64]) -> Result<f64> {
        distance(&self.simulate(x)?, self.g)
    }

    fn gradient(&self, x: &[f64], h: f64) -> Result<Vec<f64>> {
        (0..x.len())
            .map(|j| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] += h;
                xm[j] -= h;
                let fp = self.residual(&xp);
                let fm = self.residual(&xm);
                match (fp, fm) {
                    (Ok(a), Ok(b)) => Ok((a - b) / (2.0 * h)),
                    (Ok(a), Err(_)) => Ok((a - self.residual(x)?) / h),
                    (Err(_), Ok(b)) => Ok((self.residual(x)? - b) / h),
                    (Err(e), Err(_)) => Err(e),
                }
            })
            .collect()
    }

    fn unit_residual_vector(&self, x: &[f64], g_unit: &[f64]) -> Result<Vec<f64>> {
        let f = self.simulate(x)?;
        let nf = crate::fingerprint::norm(&f);
        if !(nf > 0.0) {
            return Err(Error::DegenerateSignal("simulated signal has zero norm".into()));
        }
        Ok(f.samples()
            .iter()
            .flat_map(|s| [s[0] / nf, s[1] / nf])
            .zip(g_unit)
            .map(|(a, b)| a - b)
            .collect())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Refines the free parameters of `start` by descending `D[f(S), g]`.
pub fn fit_parameters(
    g: &Trajectory,
    model: &ForwardModel,
    start: &ParameterPoint,
    config: &FitConfig,
) -> Result<EstimationReport> {
    config.validate()?;
    let mut base = model.template.to_point();
    for (p, v) in start.iter() {
        base.set(p, v);
    }
    let scales: Vec<f64> = config
        .free
        .iter()
        .map(|p| {
            let v = base
                .get(*p)
                .ok_or_else(|| Error::invalid(format!("free parameter {p} is not defined by the model")))?;
            Ok(if v.abs() > 0.0 { v.abs() } else { p.default_scale() })
        })
        .collect::<Result<_>>()?;
    let problem = Problem {
        g,
        model,
        base,
        free: &config.free,
        scales,
    };
    let x0: Vec<f64> = config
        .free
        .iter()
        .zip(&problem.scales)
        .map(|(p, s)| problem.base.get(*p).expect("checked above") / s)
        .collect();
    let start_residual = problem.residual(&x0)?;
    let (x, residual_history, converged) = match config.strategy {
        FitStrategy::GradientDescent => descend(&problem, x0, start_residual, config)?,
        FitStrategy::LevenbergMarquardt => levenberg_marquardt(&problem, x0, start_residual, config)?,
    };
    let mut refined = ParameterPoint::default();
    let full = problem.point(&x);
    for (p, v) in full.iter() {
        if start.get(p).is_some() || config.free.contains(&p) {
            refined.set(p, v);
        }
    }
    Ok(EstimationReport {
        matched_index: None,
        matched_point: None,
        start_residual,
        refined_parameters: refined,
        final_residual: *residual_history.last().expect("history starts with start residual"),
        iterations_used: residual_history.len() - 1,
        converged,
        residual_history,
    })
}

fn descend(
    problem: &Problem,
    mut x: Vec<f64>,
    mut current: f64,
    config: &FitConfig,
) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let mut history = vec![current];
    if current == 0.0 {
        return Ok((x, history, true));
    }
    let mut eps: Option<f64> = None;
    for _ in 0..config.max_iterations {
        let grad = problem.gradient(&x, config.fd_step)?;
        let gmax = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 {
            return Ok((x, history, true));
        }
        // First step moves the largest coordinate by 10 %.
        let mut step = eps.unwrap_or(0.1 / gmax);
        let accepted = loop {
            let mut cand: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect();
            problem.project(&mut cand);
            let moved = max_abs_diff(&cand, &x);
            if moved < config.tolerance {
                break None;
            }
            match problem.residual(&cand) {
                Ok(r) if r < current => break Some((cand, r, moved)),
                Ok(_) | Err(Error::InvalidInput(_)) => step *= 0.5,
                Err(e) => return Err(e),
            }
        };
        let Some((cand, r, moved)) = accepted else {
            return Ok((x, history, true));
        };
        x = cand;
        current = r;
        history.push(r);
        eps = Some(step * 1.2);
        if moved < config.tolerance {
            return Ok((x, history, true));
        }
    }
    Ok((x, history, false))
}

fn levenberg_marquardt(
    problem: &Problem,
    mut x: Vec<f64>,
    mut current: f64,
    config: &FitConfig,
) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let mut history = vec![current];
    if current == 0.0 {
        return Ok((x, history, true));
    }
    let ng = crate::fingerprint::norm(problem.g);
    let g_unit: Vec<f64> = problem
        .g
        .samples()
        .iter()
        .flat_map(|s| [s[0] / ng, s[1] / ng])
        .collect();
    let p = x.len();
    let mut lambda = 1e-3;
    for _ in 0..config.max_iterations {
        let r = DVector::from_vec(problem.unit_residual_vector(&x, &g_unit)?);
        let mut jac = DMatrix::zeros(r.len(), p);
        for j in 0..p {
            let h = config.fd_step;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let rp = problem.unit_residual_vector(&xp, &g_unit).map(DVector::from_vec);
            let rm = problem.unit_residual_vector(&xm, &g_unit).map(DVector::from_vec);
            let col = match (rp, rm) {
                (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
                (Ok(a), Err(_)) => (a - &r) / h,
                (Err(_), Ok(b)) => (&r - b) / h,
                (Err(e), Err(_)) => return Err(e),
            };
            jac.set_column(j, &col);
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut accepted = None;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for j in 0..p {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand: Vec<f64> = x.iter().zip(delta.iter()).map(|(xi, d)| xi + d).collect();
            problem.project(&mut cand);
            let moved = max_abs_diff(&cand, &x);
            if moved < config.tolerance {
                return Ok((x, history, true));
            }
            match problem.residual(&cand) {
                Ok(res) if res < current => {
                    accepted = Some((cand, res, moved));
                    break;
                }
                Ok(_) | Err(Error::InvalidInput(_)) => lambda *= 10.0,
                Err(e) => return Err(e),
            }
        }
        let Some((cand, res, moved)) = accepted else {
            return Ok((x, history, true));
        };
        x = cand;
        current = res;
        history.push(res);
        lambda = (lambda / 10.0).max(1e-12);
        if moved < config.tolerance {
            return Ok((x, history, true));
        }
    }
    Ok((x, history, false))
}

/// Two-stage estimate: nearest dictionary entry, then refinement from it.
pub fn estimate(dict: &Dictionary, g: &Trajectory, config: &FitConfig) -> Result<EstimationReport> {
    let matched = recognize(dict, g)?;
    let model = dict.forward_model();
    let mut report = fit_parameters(g, &model, &matched.point, config)?;
    report.matched_index = Some(matched.index);
    report.matched_point = Some(matched.point);
    Ok(report)
}

/// Effective transverse decay time, `1/T2* = 1/T2 + Δω/2`.
pub fn t2_star(t2: f64, fwhm: f64) -> Result<f64> {
    if !(t2 > 0.0) || !(fwhm >= 0.0) {
        return Err(Error::invalid(format!("t2_star needs t2 > 0 and fwhm >= 0, got {t2}, {fwhm}")));
    }
    Ok(1.0 / (1.0 / t2 + fwhm / 2.0))
}

/// Longitudinal magnetization after a perfect inversion, `1 − 2 exp(−t/T1)`.
pub fn inversion_recovery(t: f64, t1: f64) -> f64 {
    1.0 - 2.0 * (-t / t1).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrEstimate {
    pub t1: f64,
    pub residual: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

fn normalized_distance_1d(model: &[f64], data: &[f64], data_norm: f64) -> f64 {
    let nm = model.iter().map(|v| v * v).sum::<f64>().sqrt();
    model
        .iter()
        .zip(data)
        .map(|(m, d)| (m / nm - d / data_norm).powi(2))
        .sum()
}

/// Inversion-recovery T1 estimate from `(t, Mz)` samples, using the same
/// scale-free distance as fingerprint matching: a log-spaced grid search for
/// the start followed by 1-D gradient descent in `ln T1`.
pub fn ir_estimate(samples: &[(f64, f64)], config: &FitConfig) -> Result<IrEstimate> {
    if samples.len() < 2 {
        return Err(Error::invalid("inversion recovery fit needs at least two samples"));
    }
    if samples.iter().any(|(t, v)| !t.is_finite() || !v.is_finite() || *t < 0.0) {
        return Err(Error::invalid("inversion recovery samples must be finite with t >= 0"));
    }
    let times: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let data: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let data_norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(data_norm > 0.0) {
        return Err(Error::DegenerateSignal("inversion recovery data has zero norm".into()));
    }
    let residual = |log_t1: f64| {
        let t1 = log_t1.exp();
        let model: Vec<f64> = times.iter().map(|&t| inversion_recovery(t, t1)).collect();
        normalized_distance_1d(&model, &data, data_norm)
    };
    let (lo, hi) = (1e-4f64.ln(), 1e3f64.ln());
    let n_grid = 400;
    let mut x = lo;
    let mut current = f64::INFINITY;
    for i in 0..=n_grid {
        let xi = lo + (hi - lo) * i as f64 / n_grid as f64;
        let r = residual(xi);
        if r < current {
            current = r;
            x = xi;
        }
    }
    let h = config.fd_step;
    let mut step: Option<f64> = None;
    for it in 0..config.max_iterations {
        let grad = (residual(x + h) - residual(x - h)) / (2.0 * h);
        if grad == 0.0 || current == 0.0 {
            return Ok(IrEstimate { t1: x.exp(), residual: current, iterations_used: it, converged: true });
        }
        let mut s = step.unwrap_or(0.1 / grad.abs());
        let accepted = loop {
            let cand = x - s * grad;
            if (cand - x).abs() < config.tolerance {
                break None;
            }
            let r = residual(cand);
            if r < current {
                break Some((cand, r));
            }
            s *= 0.5;
        };
        let Some((cand, r)) = accepted else {
            return Ok(IrEstimate { t1: x.exp(), residual: current, iterations_used: it, converged: true });
        };
        let moved = (cand - x).abs();
        x = cand;
        current = r;
        step = Some(1.2 * s);
        if moved < config.tolerance {
            return Ok(IrEstimate { t1: x.exp(), residual: current, iterations_used: it + 1, converged: true });
        }
    }
    Ok(IrEstimate {
        t1: x.exp(),
        residual: current,
        iterations_used: config.max_iterations,
        converged: false,
    })
}

/// One row of a Δω scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub fwhm: f64,
    pub fit: std::result::Result<EstimationReport, String>,
}

impl ScanRow {
    pub fn t2(&self) -> Option<f64> {
        self.fit.as_ref().ok()?.refined_parameters.get(Parameter::T2)
    }

    pub fn center(&self) -> Option<f64> {
        self.fit.as_ref().ok()?.refined_parameters.get(Parameter::Center)
    }

    pub fn residual(&self) -> Option<f64> {
        self.fit.as_ref().ok().map(|r| r.final_residual)
    }

    pub fn t2_star(&self) -> Option<f64> {
        t2_star(self.t2()?, self.fwhm).ok()
    }
}

/// Fits the remaining free parameters at each fixed Δω. Failed points are
/// recorded and the scan continues.
pub fn correlation_scan(
    g: &Trajectory,
    model: &ForwardModel,
    start: &ParameterPoint,
    fwhm_grid: &[f64],
    config: &FitConfig,
) -> Result<Vec<ScanRow>> {
    if fwhm_grid.is_empty() {
        return Err(Error::invalid("fwhm grid must not be empty"));
    }
    if config.free.contains(&Parameter::Fwhm) {
        return Err(Error::invalid("fwhm is fixed along a scan and cannot be free"));
    }
    model
        .template
        .get(Parameter::Fwhm)
        .ok_or_else(|| Error::invalid("fwhm scan needs a Lorentzian ensemble template"))?;
    Ok(fwhm_grid
        .par_iter()
        .map(|&fwhm| {
            let fit = (|| {
                let mut template = model.template;
                template.set(Parameter::Fwhm, fwhm)?;
                let scan_model = ForwardModel::new(template, model.sequence.clone());
                fit_parameters(g, &scan_model, start, config)
            })()
            .map_err(|e| e.to_string());
            ScanRow { fwhm, fit }
        })
        .collect())
}
