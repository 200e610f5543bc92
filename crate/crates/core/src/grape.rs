//! Gradient ascent on the pulse areas of a δ-pulse train so that the
//! fingerprints of a set of systems become as mutually distinct as possible.
//!
//! Gradients are exact: every system is propagated forward once, keeping the
//! post-pulse state of each isochromat, and then swept backward once with an
//! adjoint vector. For the normalized figure of merit the seed of the backward
//! sweep is `∂C/∂f_n`, obtained by pushing `∂C/∂f̂_n` through the
//! normalization `f̂ = f/‖f‖`:
//!
//! ```text
//! ∂C/∂f_n = (v_n − (f̂_n·v_n) f̂_n) / ‖f_n‖,   v_n = −(2/N²) Σ_{m≠n} μ_nm f̂_m
//! ```
//!
//! A pulse rotation `R = exp([φ]×)` with `φ = α(θx, θy, 0)` is differentiated
//! through the left Jacobian of SO(3): `d(Rv) = (J_l(φ) dφ) × Rv`, so the
//! adjoint contribution of pulse `k` is `α J_lᵀ(φ) (s_k × λ_k)` where `s_k` is
//! the post-pulse state and `λ_k` the adjoint of that state.

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bloch::{
    run_isochromat, simulate_fingerprint, BlochVector, FreeEvolution, Pulse, PulseSequence,
    RotationCache, SpinEnsemble, Trajectory,
};
use crate::error::{Error, Result};
use crate::fingerprint::{figure_of_merit_of, WeightMatrix};
use crate::model::{EnsembleSpec, ParameterPoint};

/// The set of systems a field is optimized for: a template plus the
/// parameter points that distinguish the systems. Unlike a `Dictionary`,
/// points may repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub template: EnsembleSpec,
    pub points: Vec<ParameterPoint>,
}

impl DictionarySpec {
    pub fn new(template: EnsembleSpec, points: Vec<ParameterPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("dictionary spec needs at least one parameter point"));
        }
        for p in &points {
            p.validate()?;
            template.with_point(p)?.build()?;
        }
        Ok(Self { template, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ensembles(&self) -> Result<Vec<SpinEnsemble>> {
        self.points
            .iter()
            .map(|p| self.template.with_point(p)?.build())
            .collect()
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("dictionary spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Which quantity the field is optimized for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `C_N`, the weighted mean normalized distance between fingerprints.
    #[default]
    Normalized,
    /// `½ Σ_{m<n} μ_mn Σ_k ‖f_m(k) − f_n(k)‖²` on the raw fingerprints.
    Tracking,
}

/// Value of the objective and its partial derivatives per pulse, `[∂/∂θx, ∂/∂θy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradient {
    pub value: f64,
    pub grad: Vec<[f64; 2]>,
}

impl ObjectiveGradient {
    pub fn norm(&self) -> f64 {
        self.grad
            .iter()
            .map(|g| g[0] * g[0] + g[1] * g[1])
            .sum::<f64>()
            .sqrt()
    }
}

fn check_weights(spec: &DictionarySpec, weights: &WeightMatrix) -> Result<()> {
    if spec.len() < 2 {
        return Err(Error::invalid("optimization needs at least two systems"));
    }
    if weights.size() != spec.len() {
        return Err(Error::Dimension {
            expected: spec.len(),
            actual: weights.size(),
        });
    }
    Ok(())
}

fn tracking_value(trajectories: &[Trajectory], weights: &WeightMatrix) -> f64 {
    let n = trajectories.len();
    let mut total = 0.0;
    for m in 0..n {
        for k in (m + 1)..n {
            let d: f64 = trajectories[m]
                .samples()
                .iter()
                .zip(trajectories[k].samples())
                .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
                .sum();
            total += weights.get(m, k) * d;
        }
    }
    0.5 * total
}

/// Objective value without the gradient.
pub fn objective_value(
    spec: &DictionarySpec,
    seq: &PulseSequence,
    weights: &WeightMatrix,
    objective: Objective,
) -> Result<f64> {
    check_weights(spec, weights)?;
    let ensembles = spec.ensembles()?;
    let trajectories: Vec<Trajectory> = ensembles
        .par_iter()
        .map(|e| simulate_fingerprint(e, seq))
        .collect();
    match objective {
        Objective::Normalized => figure_of_merit_of(&trajectories, weights),
        Objective::Tracking => Ok(tracking_value(&trajectories, weights)),
    }
}

struct ForwardPass {
    ensemble: SpinEnsemble,
    /// Post-pulse states per isochromat.
    states: Vec<Vec<Vector3<f64>>>,
    trajectory: Trajectory,
}

fn forward(ensemble: SpinEnsemble, seq: &PulseSequence) -> ForwardPass {
    let cache = RotationCache::new(&ensemble, seq);
    let relaxation = ensemble.relaxation();
    let mut acc = vec![[0.0f64; 2]; seq.len()];
    let mut states = Vec::with_capacity(ensemble.isochromats().len());
    for iso in ensemble.isochromats() {
        let free = FreeEvolution::new(seq.delay_t(), relaxation, iso.offset);
        let mut s = Vec::with_capacity(seq.len());
        run_isochromat(
            BlochVector::EQUILIBRIUM.0,
            &free,
            cache.get(iso.rf_scale),
            |m| s.push(*m),
        );
        for (a, m) in acc.iter_mut().zip(&s) {
            a[0] += iso.weight * m.x;
            a[1] += iso.weight * m.y;
        }
        states.push(s);
    }
    let trajectory = Trajectory::new(acc, seq.delay_t()).expect("finite simulation");
    ForwardPass {
        ensemble,
        states,
        trajectory,
    }
}

/// `J_l(φ)ᵀ t` for the left Jacobian of the SO(3) exponential map.
fn left_jacobian_transpose_apply(phi: &Vector3<f64>, t: &Vector3<f64>) -> Vector3<f64> {
    let th2 = phi.norm_squared();
    let (a, b) = if th2 < 1e-8 {
        (0.5 - th2 / 24.0, 1.0 / 6.0 - th2 / 120.0)
    } else {
        let th = th2.sqrt();
        ((1.0 - th.cos()) / th2, (th - th.sin()) / (th2 * th))
    };
    let pt = phi.cross(t);
    t - a * pt + b * phi.cross(&pt)
}

/// Adjoint sweep of one system given `∂C/∂f` for each sample.
fn backward(pass: &ForwardPass, seq: &PulseSequence, seed: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let cache = RotationCache::new(&pass.ensemble, seq);
    let relaxation = pass.ensemble.relaxation();
    let mut grad = vec![[0.0f64; 2]; seq.len()];
    for (iso, states) in pass.ensemble.isochromats().iter().zip(&pass.states) {
        let free = FreeEvolution::new(seq.delay_t(), relaxation, iso.offset);
        let rotations = cache.get(iso.rf_scale);
        let alpha = iso.rf_scale;
        let w = iso.weight;
        let mut lambda = Vector3::zeros();
        for k in (0..seq.len()).rev() {
            lambda.x += w * seed[k][0];
            lambda.y += w * seed[k][1];
            let p = seq.pulses()[k];
            let phi = Vector3::new(alpha * p.theta_x, alpha * p.theta_y, 0.0);
            let g = left_jacobian_transpose_apply(&phi, &states[k].cross(&lambda));
            grad[k][0] += alpha * g.x;
            grad[k][1] += alpha * g.y;
            lambda = rotations[k].inverse_transform_vector(&lambda);
            lambda = free.apply_adjoint(&lambda);
        }
    }
    grad
}

/// Objective value and exact gradient with respect to every pulse area.
pub fn objective_gradient(
    spec: &DictionarySpec,
    seq: &PulseSequence,
    weights: &WeightMatrix,
    objective: Objective,
) -> Result<ObjectiveGradient> {
    check_weights(spec, weights)?;
    let ensembles = spec.ensembles()?;
    let passes: Vec<ForwardPass> = ensembles
        .into_par_iter()
        .map(|e| forward(e, seq))
        .collect();
    let trajectories: Vec<Trajectory> = passes.iter().map(|p| p.trajectory.clone()).collect();
    let n = passes.len();
    let np = seq.len();

    let (value, seeds) = match objective {
        Objective::Normalized => {
            let value = figure_of_merit_of(&trajectories, weights)?;
            let norms: Vec<f64> = trajectories.iter().map(crate::fingerprint::norm).collect();
            let unit: Vec<Vec<[f64; 2]>> = trajectories
                .iter()
                .zip(&norms)
                .map(|(t, &nrm)| t.samples().iter().map(|s| [s[0] / nrm, s[1] / nrm]).collect())
                .collect();
            let scale = -2.0 / (n * n) as f64;
            let seeds = (0..n)
                .map(|a| {
                    let mut v = vec![[0.0f64; 2]; np];
                    for b in 0..n {
                        if b == a {
                            continue;
                        }
                        let mu = weights.get(a, b);
                        for (vk, ub) in v.iter_mut().zip(&unit[b]) {
                            vk[0] += scale * mu * ub[0];
                            vk[1] += scale * mu * ub[1];
                        }
                    }
                    let proj: f64 = v
                        .iter()
                        .zip(&unit[a])
                        .map(|(vk, ua)| vk[0] * ua[0] + vk[1] * ua[1])
                        .sum();
                    v.iter()
                        .zip(&unit[a])
                        .map(|(vk, ua)| {
                            [
                                (vk[0] - proj * ua[0]) / norms[a],
                                (vk[1] - proj * ua[1]) / norms[a],
                            ]
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>();
            (value, seeds)
        }
        Objective::Tracking => {
            let value = tracking_value(&trajectories, weights);
            let seeds = (0..n)
                .map(|a| {
                    let mut v = vec![[0.0f64; 2]; np];
                    for b in 0..n {
                        if b == a {
                            continue;
                        }
                        let mu = weights.get(a, b);
                        let (fa, fb) = (trajectories[a].samples(), trajectories[b].samples());
                        for k in 0..np {
                            v[k][0] += mu * (fa[k][0] - fb[k][0]);
                            v[k][1] += mu * (fa[k][1] - fb[k][1]);
                        }
                    }
                    v
                })
                .collect::<Vec<_>>();
            (value, seeds)
        }
    };

    let partials: Vec<Vec<[f64; 2]>> = passes
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(pass, seed)| backward(pass, seq, seed))
        .collect();
    let mut grad = vec![[0.0f64; 2]; np];
    for part in &partials {
        for (g, p) in grad.iter_mut().zip(part) {
            g[0] += p[0];
            g[1] += p[1];
        }
    }
    Ok(ObjectiveGradient { value, grad })
}

/// Which pulse axes are free during optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisMode {
    /// Only x-pulses; y areas are held at zero.
    X,
    #[default]
    Xy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Largest per-pulse change, in radians, of the first ascent step. The
    /// ascent factor ε is derived from it and then adapted.
    pub step_size: f64,
    pub backtrack_factor: f64,
    pub growth_factor: f64,
    pub gradient_tolerance: f64,
    pub seed: u64,
    /// Independent random initializations; the best result is kept.
    pub starts: usize,
    /// Initial fields are uniform in `[-init_amplitude, init_amplitude]`.
    pub init_amplitude: f64,
    pub axis: AxisMode,
    /// Optional bound on `|θ|` per axis per pulse.
    pub clip: Option<f64>,
    pub objective: Objective,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_size: 0.05,
            backtrack_factor: 0.5,
            growth_factor: 1.2,
            gradient_tolerance: 1e-10,
            seed: 0,
            starts: 5,
            init_amplitude: 0.3,
            axis: AxisMode::Xy,
            clip: None,
            objective: Objective::Normalized,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::invalid("step_size must be positive"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::invalid("backtrack_factor must lie in (0, 1)"));
        }
        if !(self.growth_factor >= 1.0) {
            return Err(Error::invalid("growth_factor must be at least 1"));
        }
        if self.starts < 1 {
            return Err(Error::invalid("starts must be at least 1"));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::invalid("clip bound must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-iteration record of an ascent run. Entry 0 is the initial field.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationTrace {
    pub values: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub steps: Vec<f64>,
    pub final_field: PulseSequence,
    pub wall_time: Duration,
    /// Stopped on the gradient tolerance rather than the iteration cap or a
    /// failed line search.
    pub converged: bool,
    /// Index of the multi-start run this trace belongs to.
    pub start: usize,
}

impl OptimizationTrace {
    pub fn initial_value(&self) -> f64 {
        self.values[0]
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("trace has an initial entry")
    }
}

fn project(flat: &mut [f64], config: &OptimizerConfig) {
    if config.axis == AxisMode::X {
        flat.iter_mut().skip(1).step_by(2).for_each(|v| *v = 0.0);
    }
    if let Some(c) = config.clip {
        flat.iter_mut().for_each(|v| *v = v.clamp(-c, c));
    }
}

fn flat_grad(g: &ObjectiveGradient, config: &OptimizerConfig) -> Vec<f64> {
    let mut flat: Vec<f64> = g.grad.iter().flat_map(|p| [p[0], p[1]]).collect();
    if config.axis == AxisMode::X {
        flat.iter_mut().skip(1).step_by(2).for_each(|v| *v = 0.0);
    }
    flat
}

/// Single ascent run from `initial` with backtracking on ε. The returned
/// objective value is never below the initial one.
pub fn optimize_field(
    spec: &DictionarySpec,
    initial: &PulseSequence,
    weights: &WeightMatrix,
    config: &OptimizerConfig,
) -> Result<(PulseSequence, OptimizationTrace)> {
    config.validate()?;
    let started = Instant::now();
    let delay = initial.delay_t();
    let mut theta = initial.to_flat();
    project(&mut theta, config);
    let mut field = PulseSequence::from_flat(&theta, delay)?;
    let mut current = objective_gradient(spec, &field, weights, config.objective)?;
    let mut grad = flat_grad(&current, config);
    let gnorm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut trace = OptimizationTrace {
        values: vec![current.value],
        grad_norms: vec![gnorm(&grad)],
        steps: vec![0.0],
        final_field: field.clone(),
        wall_time: Duration::ZERO,
        converged: false,
        start: 0,
    };
    let gmax = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut eps = if gmax > 0.0 { config.step_size / gmax } else { 0.0 };

    for _ in 0..config.max_iterations {
        let norm = gnorm(&grad);
        if !(norm > config.gradient_tolerance) {
            trace.converged = true;
            break;
        }
        let mut accepted = None;
        while eps * norm > 1e-15 {
            let mut cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t + eps * g).collect();
            project(&mut cand, config);
            let cand_field = PulseSequence::from_flat(&cand, delay)?;
            let value = objective_value(spec, &cand_field, weights, config.objective)?;
            if value > current.value {
                accepted = Some((cand, cand_field));
                break;
            }
            eps *= config.backtrack_factor;
        }
        let Some((cand, cand_field)) = accepted else {
            break;
        };
        let step = eps;
        theta = cand;
        field = cand_field;
        current = objective_gradient(spec, &field, weights, config.objective)?;
        grad = flat_grad(&current, config);
        eps *= config.growth_factor;
        trace.values.push(current.value);
        trace.grad_norms.push(gnorm(&grad));
        trace.steps.push(step);
    }
    trace.final_field = field.clone();
    trace.wall_time = started.elapsed();
    Ok((field, trace))
}

/// Small random starting field, uniform in `[-amplitude, amplitude]`.
pub fn initial_field(
    n_pulses: usize,
    delay_t: f64,
    amplitude: f64,
    seed: u64,
    stream: u64,
    axis: AxisMode,
) -> Result<PulseSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    uniform_field(&mut rng, n_pulses, delay_t, amplitude, axis)
}

fn uniform_field(
    rng: &mut ChaCha8Rng,
    n_pulses: usize,
    delay_t: f64,
    bound: f64,
    axis: AxisMode,
) -> Result<PulseSequence> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::invalid(format!("amplitude bound must be positive, got {bound}")));
    }
    let pulses = (0..n_pulses)
        .map(|_| {
            let x = rng.random_range(-bound..=bound);
            let y = rng.random_range(-bound..=bound);
            match axis {
                AxisMode::Xy => Pulse::new(x, y),
                AxisMode::X => Pulse::new(x, 0.0),
            }
        })
        .collect();
    PulseSequence::new(pulses, delay_t)
}

/// Multi-start ascent from seeded random initial fields. Starts run
/// concurrently; the best final objective wins, lowest start index on ties.
pub fn optimize_multistart(
    spec: &DictionarySpec,
    n_pulses: usize,
    delay_t: f64,
    weights: &WeightMatrix,
    config: &OptimizerConfig,
) -> Result<(PulseSequence, OptimizationTrace)> {
    config.validate()?;
    let runs: Vec<(PulseSequence, OptimizationTrace)> = (0..config.starts)
        .into_par_iter()
        .map(|s| {
            let init = initial_field(
                n_pulses,
                delay_t,
                config.init_amplitude,
                config.seed,
                s as u64,
                config.axis,
            )?;
            let (field, mut trace) = optimize_field(spec, &init, weights, config)?;
            trace.start = s;
            Ok((field, trace))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.1.final_value() > runs[best].1.final_value() {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one start"))
}

/// Baseline field with i.i.d. uniform rotation areas in
/// `[-amplitude_bound, amplitude_bound]` per axis per pulse.
pub fn random_field(
    n_pulses: usize,
    amplitude_bound: f64,
    delay_t: f64,
    seed: u64,
) -> Result<PulseSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform_field(&mut rng, n_pulses, delay_t, amplitude_bound, AxisMode::Xy)
}
