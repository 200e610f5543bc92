//! Step-wise propagation of spin-1/2 isochromats under trains of δ-pulses.
//!
//! Each isochromat obeys the Bloch equations in the rotating frame,
//!
//! ```text
//! dMx/dt = -Mx/T2 - ω My + α ωy Mz
//! dMy/dt =  ω Mx - My/T2 - α ωx Mz
//! dMz/dt = (1 - Mz)/T1 - α ωy Mx + α ωx My
//! ```
//!
//! which is a rotation about `(α ωx, α ωy, ω)` plus relaxation. With
//! δ-pulses the dynamics split exactly into instantaneous rotations and
//! closed-form free evolution.
//!
//! Measurement convention: pulse `k` (1-based) acts at `t = kT` after a free
//! interval of length `T`, and the sample for pulse `k` is taken immediately
//! after it. The first interval therefore starts from the initial state at
//! `t = 0`. Swapping the order (pulse first, then relax) gives different
//! trajectories.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longitudinal and transverse relaxation times, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationParams {
    t1: f64,
    t2: f64,
}

impl RelaxationParams {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        if !(t1.is_finite() && t1 > 0.0) {
            return Err(Error::invalid(format!("t1 must be positive and finite, got {t1}")));
        }
        if !(t2.is_finite() && t2 > 0.0) {
            return Err(Error::invalid(format!("t2 must be positive and finite, got {t2}")));
        }
        if t2 > 2.0 * t1 {
            return Err(Error::invalid(format!(
                "t2 = {t2} exceeds 2*t1 = {}, which is not physically admissible",
                2.0 * t1
            )));
        }
        Ok(Self { t1, t2 })
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn t2(&self) -> f64 {
        self.t2
    }
}

/// Magnetization `(Mx, My, Mz)` of one isochromat.
///
/// The homogeneous fourth component of the affine Bloch dynamics is always 1
/// and is not stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector(pub Vector3<f64>);

impl BlochVector {
    /// Thermal equilibrium `(0, 0, 1)`.
    pub const EQUILIBRIUM: BlochVector = BlochVector(Vector3::new(0.0, 0.0, 1.0));

    pub fn new(mx: f64, my: f64, mz: f64) -> Self {
        BlochVector(Vector3::new(mx, my, mz))
    }

    pub fn mx(&self) -> f64 {
        self.0.x
    }

    pub fn my(&self) -> f64 {
        self.0.y
    }

    pub fn mz(&self) -> f64 {
        self.0.z
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    fn check_finite(&self) -> Result<()> {
        if self.0.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("non-finite magnetization {:?}", self.0)))
        }
    }
}

/// Rotation areas of one δ-pulse about x and y, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Pulse {
    pub theta_x: f64,
    pub theta_y: f64,
}

impl Pulse {
    pub fn new(theta_x: f64, theta_y: f64) -> Self {
        Self { theta_x, theta_y }
    }

    pub fn is_finite(&self) -> bool {
        self.theta_x.is_finite() && self.theta_y.is_finite()
    }
}

impl From<[f64; 2]> for Pulse {
    fn from([theta_x, theta_y]: [f64; 2]) -> Self {
        Self { theta_x, theta_y }
    }
}

impl From<Pulse> for [f64; 2] {
    fn from(p: Pulse) -> Self {
        [p.theta_x, p.theta_y]
    }
}

/// An ordered train of δ-pulses separated by a fixed delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pulses: Vec<Pulse>,
    delay_t: f64,
}

impl PulseSequence {
    pub fn new(pulses: Vec<Pulse>, delay_t: f64) -> Result<Self> {
        if pulses.is_empty() {
            return Err(Error::invalid("pulse sequence must contain at least one pulse"));
        }
        if !(delay_t.is_finite() && delay_t >= 0.0) {
            return Err(Error::invalid(format!(
                "inter-pulse delay must be finite and non-negative, got {delay_t}"
            )));
        }
        if let Some(k) = pulses.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("pulse {k} has a non-finite rotation area")));
        }
        Ok(Self { pulses, delay_t })
    }

    /// Sequence of `n` zero-area pulses.
    pub fn zeros(n: usize, delay_t: f64) -> Result<Self> {
        Self::new(vec![Pulse::default(); n], delay_t)
    }

    pub fn pulses(&self) -> &[Pulse] {
        &self.pulses
    }

    pub fn delay_t(&self) -> f64 {
        self.delay_t
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    /// Flattened `[θx0, θy0, θx1, θy1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.pulses
            .iter()
            .flat_map(|p| [p.theta_x, p.theta_y])
            .collect()
    }

    pub fn from_flat(flat: &[f64], delay_t: f64) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::invalid("flattened pulse list must have even length"));
        }
        let pulses = flat.chunks_exact(2).map(|c| Pulse::new(c[0], c[1])).collect();
        Self::new(pulses, delay_t)
    }
}

/// One sub-ensemble of spins sharing a resonance offset and RF scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Isochromat {
    /// Resonance offset ω, rad/s.
    pub offset: f64,
    /// RF inhomogeneity factor α.
    pub rf_scale: f64,
    /// Probability mass in the ensemble.
    pub weight: f64,
}

impl Isochromat {
    pub fn on_resonance() -> Self {
        Self {
            offset: 0.0,
            rf_scale: 1.0,
            weight: 1.0,
        }
    }
}

/// A discretized distribution of isochromats sharing T1 and T2.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinEnsemble {
    isochromats: Vec<Isochromat>,
    relaxation: RelaxationParams,
}

impl SpinEnsemble {
    pub const WEIGHT_TOLERANCE: f64 = 1e-12;

    pub fn new(isochromats: Vec<Isochromat>, relaxation: RelaxationParams) -> Result<Self> {
        if isochromats.is_empty() {
            return Err(Error::invalid("ensemble must contain at least one isochromat"));
        }
        for (i, iso) in isochromats.iter().enumerate() {
            if !(iso.weight.is_finite() && iso.weight >= 0.0) {
                return Err(Error::invalid(format!("isochromat {i} has invalid weight {}", iso.weight)));
            }
            if !(iso.rf_scale.is_finite() && iso.rf_scale > 0.0) {
                return Err(Error::invalid(format!(
                    "isochromat {i} has invalid rf scale {}",
                    iso.rf_scale
                )));
            }
            if !iso.offset.is_finite() {
                return Err(Error::invalid(format!("isochromat {i} has non-finite offset")));
            }
        }
        let total: f64 = isochromats.iter().map(|i| i.weight).sum();
        if (total - 1.0).abs() > Self::WEIGHT_TOLERANCE {
            return Err(Error::invalid(format!("ensemble weights sum to {total}, expected 1")));
        }
        Ok(Self {
            isochromats,
            relaxation,
        })
    }

    /// Homogeneous ensemble: one isochromat with the given offset and RF scale.
    pub fn single(offset: f64, rf_scale: f64, relaxation: RelaxationParams) -> Result<Self> {
        Self::new(
            vec![Isochromat {
                offset,
                rf_scale,
                weight: 1.0,
            }],
            relaxation,
        )
    }

    pub fn isochromats(&self) -> &[Isochromat] {
        &self.isochromats
    }

    pub fn relaxation(&self) -> RelaxationParams {
        self.relaxation
    }
}

/// Truncated, discretized Lorentzian offset distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianSpec {
    /// Center ω̄, rad/s.
    pub center: f64,
    /// Full width at half maximum Δω, rad/s.
    pub fwhm: f64,
    pub n_points: usize,
    /// Truncation radius in multiples of `fwhm`.
    pub support_halfwidth: f64,
}

impl LorentzianSpec {
    pub const DEFAULT_POINTS: usize = 101;
    pub const DEFAULT_HALFWIDTH: f64 = 5.0;

    pub fn new(center: f64, fwhm: f64) -> Self {
        Self {
            center,
            fwhm,
            n_points: Self::DEFAULT_POINTS,
            support_halfwidth: Self::DEFAULT_HALFWIDTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm.is_finite() && self.fwhm > 0.0) {
            return Err(Error::invalid(format!("Lorentzian fwhm must be positive, got {}", self.fwhm)));
        }
        if self.n_points == 0 {
            return Err(Error::invalid("Lorentzian grid needs at least one point"));
        }
        if !self.center.is_finite() {
            return Err(Error::invalid("Lorentzian center must be finite"));
        }
        if !(self.support_halfwidth.is_finite() && self.support_halfwidth >= 0.0) {
            return Err(Error::invalid("Lorentzian support half-width must be non-negative"));
        }
        Ok(())
    }

    /// Unnormalized density `(1 + 4(ω - ω̄)²/Δω²)⁻¹`.
    pub fn density(&self, omega: f64) -> f64 {
        let u = 2.0 * (omega - self.center) / self.fwhm;
        1.0 / (1.0 + u * u)
    }

    /// Uniform offset grid over the truncated support.
    pub fn grid(&self) -> Vec<f64> {
        if self.n_points == 1 {
            return vec![self.center];
        }
        let half = self.support_halfwidth * self.fwhm;
        let lo = self.center - half;
        let step = 2.0 * half / (self.n_points - 1) as f64;
        (0..self.n_points).map(|j| lo + step * j as f64).collect()
    }
}

/// Ensemble with Lorentzian-distributed offsets and a common RF scale.
pub fn make_lorentzian_ensemble(
    spec: &LorentzianSpec,
    rf_scale: f64,
    relaxation: RelaxationParams,
) -> Result<SpinEnsemble> {
    spec.validate()?;
    let grid = spec.grid();
    let raw: Vec<f64> = grid.iter().map(|&w| spec.density(w)).collect();
    let total: f64 = raw.iter().sum();
    let isochromats = grid
        .iter()
        .zip(&raw)
        .map(|(&offset, &r)| Isochromat {
            offset,
            rf_scale,
            weight: r / total,
        })
        .collect();
    SpinEnsemble::new(isochromats, relaxation)
}

/// Ensemble-averaged transverse magnetization sampled after each pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<[f64; 2]>,
    delay_t: f64,
}

impl Trajectory {
    pub fn new(samples: Vec<[f64; 2]>, delay_t: f64) -> Result<Self> {
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("trajectory contains non-finite values"));
        }
        Ok(Self { samples, delay_t })
    }

    pub fn samples(&self) -> &[[f64; 2]] {
        &self.samples
    }

    pub fn delay_t(&self) -> f64 {
        self.delay_t
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample time of the `k`-th (0-based) sample.
    pub fn time(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.delay_t
    }

    /// `|m̄|²` per sample, for plotting only.
    pub fn squared_modulus(&self) -> Vec<f64> {
        self.samples.iter().map(|[x, y]| x * x + y * y).collect()
    }

    pub fn scaled(&self, c: f64) -> Trajectory {
        Trajectory {
            samples: self.samples.iter().map(|[x, y]| [c * x, c * y]).collect(),
            delay_t: self.delay_t,
        }
    }
}

/// Rotation produced by a δ-pulse of areas `(θx, θy)` on a spin with RF scale α.
pub fn pulse_rotation(theta_x: f64, theta_y: f64, rf_scale: f64) -> Rotation3<f64> {
    Rotation3::new(Vector3::new(rf_scale * theta_x, rf_scale * theta_y, 0.0))
}

pub fn rotate_pulse(
    state: BlochVector,
    theta_x: f64,
    theta_y: f64,
    rf_scale: f64,
) -> Result<BlochVector> {
    state.check_finite()?;
    if !(theta_x.is_finite() && theta_y.is_finite()) {
        return Err(Error::invalid("pulse rotation areas must be finite"));
    }
    if !(rf_scale.is_finite() && rf_scale > 0.0) {
        return Err(Error::invalid(format!("rf scale must be positive, got {rf_scale}")));
    }
    Ok(BlochVector(pulse_rotation(theta_x, theta_y, rf_scale) * state.0))
}

/// Exact free evolution over one interval: precession about z, transverse
/// decay with T2 and longitudinal recovery with T1.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FreeEvolution {
    /// `e^{-t/T2} cos(ωt)`
    pub(crate) c: f64,
    /// `e^{-t/T2} sin(ωt)`
    pub(crate) s: f64,
    /// `e^{-t/T1}`
    pub(crate) e1: f64,
}

impl FreeEvolution {
    pub(crate) fn new(duration: f64, relaxation: RelaxationParams, offset: f64) -> Self {
        let e2 = (-duration / relaxation.t2).exp();
        let (sin, cos) = (offset * duration).sin_cos();
        Self {
            c: e2 * cos,
            s: e2 * sin,
            e1: (-duration / relaxation.t1).exp(),
        }
    }

    #[inline]
    pub(crate) fn apply(&self, m: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.c * m.x - self.s * m.y,
            self.s * m.x + self.c * m.y,
            1.0 - self.e1 + self.e1 * m.z,
        )
    }

    /// Transpose of the linear part, applied to an adjoint vector.
    #[inline]
    pub(crate) fn apply_adjoint(&self, l: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.c * l.x + self.s * l.y,
            -self.s * l.x + self.c * l.y,
            self.e1 * l.z,
        )
    }
}

pub fn relax_free(
    state: BlochVector,
    duration: f64,
    relaxation: RelaxationParams,
    offset: f64,
) -> Result<BlochVector> {
    state.check_finite()?;
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(Error::invalid(format!(
            "free evolution duration must be non-negative, got {duration}"
        )));
    }
    if !offset.is_finite() {
        return Err(Error::invalid("offset must be finite"));
    }
    Ok(BlochVector(
        FreeEvolution::new(duration, relaxation, offset).apply(&state.0),
    ))
}

/// States of one isochromat sampled immediately after each pulse.
pub fn propagate_sequence(
    initial: BlochVector,
    seq: &PulseSequence,
    iso: &Isochromat,
    relaxation: RelaxationParams,
) -> Result<Vec<BlochVector>> {
    initial.check_finite()?;
    if !(iso.rf_scale.is_finite() && iso.rf_scale > 0.0) || !iso.offset.is_finite() {
        return Err(Error::invalid("isochromat has invalid offset or rf scale"));
    }
    let free = FreeEvolution::new(seq.delay_t(), relaxation, iso.offset);
    let rotations: Vec<Rotation3<f64>> = seq
        .pulses()
        .iter()
        .map(|p| pulse_rotation(p.theta_x, p.theta_y, iso.rf_scale))
        .collect();
    let mut out = Vec::with_capacity(seq.len());
    run_isochromat(initial.0, &free, &rotations, |m| out.push(BlochVector(*m)));
    Ok(out)
}

#[inline]
pub(crate) fn run_isochromat(
    initial: Vector3<f64>,
    free: &FreeEvolution,
    rotations: &[Rotation3<f64>],
    mut sink: impl FnMut(&Vector3<f64>),
) {
    let mut m = initial;
    for r in rotations {
        m = r * free.apply(&m);
        sink(&m);
    }
}

/// Per-pulse rotation matrices for every distinct RF scale in an ensemble.
pub(crate) struct RotationCache {
    scales: Vec<f64>,
    rotations: Vec<Vec<Rotation3<f64>>>,
}

impl RotationCache {
    pub(crate) fn new(ensemble: &SpinEnsemble, seq: &PulseSequence) -> Self {
        let mut scales: Vec<f64> = Vec::new();
        for iso in ensemble.isochromats() {
            if !scales.iter().any(|s| s.to_bits() == iso.rf_scale.to_bits()) {
                scales.push(iso.rf_scale);
            }
        }
        let rotations = scales
            .iter()
            .map(|&a| {
                seq.pulses()
                    .iter()
                    .map(|p| pulse_rotation(p.theta_x, p.theta_y, a))
                    .collect()
            })
            .collect();
        Self { scales, rotations }
    }

    pub(crate) fn get(&self, rf_scale: f64) -> &[Rotation3<f64>] {
        let idx = self
            .scales
            .iter()
            .position(|s| s.to_bits() == rf_scale.to_bits())
            .expect("rf scale registered at construction");
        &self.rotations[idx]
    }
}

/// Weighted ensemble average of `(Mx, My)` after each pulse, starting from
/// thermal equilibrium. Isochromats are accumulated in index order.
pub fn simulate_fingerprint(ensemble: &SpinEnsemble, seq: &PulseSequence) -> Trajectory {
    let cache = RotationCache::new(ensemble, seq);
    let relaxation = ensemble.relaxation();
    let mut acc = vec![[0.0f64; 2]; seq.len()];
    for iso in ensemble.isochromats() {
        let free = FreeEvolution::new(seq.delay_t(), relaxation, iso.offset);
        let w = iso.weight;
        let mut k = 0;
        run_isochromat(
            BlochVector::EQUILIBRIUM.0,
            &free,
            cache.get(iso.rf_scale),
            |m| {
                acc[k][0] += w * m.x;
                acc[k][1] += w * m.y;
                k += 1;
            },
        );
    }
    Trajectory {
        samples: acc,
        delay_t: seq.delay_t(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn relax() -> RelaxationParams {
        RelaxationParams::new(0.3, 0.2).unwrap()
    }

    fn assert_vec(v: BlochVector, e: [f64; 3], tol: f64) {
        assert_abs_diff_eq!(v.mx(), e[0], epsilon = tol);
        assert_abs_diff_eq!(v.my(), e[1], epsilon = tol);
        assert_abs_diff_eq!(v.mz(), e[2], epsilon = tol);
    }

    #[test]
    fn relaxation_params_reject_inadmissible() {
        assert!(RelaxationParams::new(0.0, 0.1).is_err());
        assert!(RelaxationParams::new(0.1, -1.0).is_err());
        assert!(RelaxationParams::new(0.1, 0.21).is_err());
        assert!(RelaxationParams::new(0.1, 0.2).is_ok());
    }

    #[test]
    fn zero_pulse_is_identity() {
        let s = BlochVector::new(0.3, -0.2, 0.5);
        let r = rotate_pulse(s, 0.0, 0.0, 1.7).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn quarter_x_pulse_sign_convention() {
        let r = rotate_pulse(BlochVector::EQUILIBRIUM, FRAC_PI_2, 0.0, 1.0).unwrap();
        assert_vec(r, [0.0, -1.0, 0.0], 1e-15);
    }

    #[test]
    fn doubled_rf_scale_inverts() {
        let r = rotate_pulse(BlochVector::EQUILIBRIUM, FRAC_PI_2, 0.0, 2.0).unwrap();
        assert_vec(r, [0.0, 0.0, -1.0], 1e-15);
    }

    #[test]
    fn y_pulse_follows_generator() {
        // dMx/dt = +α ωy Mz, so a y pulse tips z towards +x.
        let r = rotate_pulse(BlochVector::EQUILIBRIUM, 0.0, FRAC_PI_2, 1.0).unwrap();
        assert_vec(r, [1.0, 0.0, 0.0], 1e-15);
    }

    #[test]
    fn rotate_rejects_non_finite() {
        assert!(rotate_pulse(BlochVector::EQUILIBRIUM, f64::NAN, 0.0, 1.0).is_err());
        assert!(rotate_pulse(BlochVector::new(f64::INFINITY, 0.0, 0.0), 0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn relax_zero_duration_is_identity() {
        let s = BlochVector::new(0.3, -0.2, 0.5);
        assert_eq!(relax_free(s, 0.0, relax(), 3.0).unwrap(), s);
    }

    #[test]
    fn relax_long_duration_reaches_equilibrium() {
        let s = BlochVector::new(0.3, -0.2, -0.9);
        let r = relax_free(s, 1e3, relax(), 0.0).unwrap();
        assert_vec(r, [0.0, 0.0, 1.0], 1e-15);
    }

    #[test]
    fn relax_closed_form_values() {
        let r = relax_free(BlochVector::new(1.0, 0.0, 0.0), 0.01, relax(), 0.0).unwrap();
        // e^{-0.05} and 1 - e^{-1/30}
        assert_vec(r, [0.951229424500714, 0.0, 0.0327838995179941], 1e-15);
        assert_vec(r, [0.951229, 0.0, 0.032784], 1e-6);
    }

    #[test]
    fn relax_precesses_counterclockwise() {
        // dMy/dt = ω Mx: +x precesses toward +y.
        let r = relax_free(BlochVector::new(1.0, 0.0, 0.0), 1.0, RelaxationParams::new(1e9, 1e9).unwrap(), FRAC_PI_2).unwrap();
        assert_vec(r, [0.0, 1.0, 0.0], 1e-8);
    }

    #[test]
    fn relax_rejects_negative_duration() {
        assert!(matches!(
            relax_free(BlochVector::EQUILIBRIUM, -1.0, relax(), 0.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn single_zero_pulse_from_equilibrium() {
        let seq = PulseSequence::zeros(1, 0.01).unwrap();
        let out = propagate_sequence(BlochVector::EQUILIBRIUM, &seq, &Isochromat::on_resonance(), relax()).unwrap();
        assert_eq!(out.len(), 1);
        assert_vec(out[0], [0.0, 0.0, 1.0], 0.0);
    }

    #[test]
    fn two_quarter_pulses_without_delay() {
        let seq = PulseSequence::new(vec![Pulse::new(FRAC_PI_2, 0.0); 2], 0.0).unwrap();
        let out = propagate_sequence(BlochVector::EQUILIBRIUM, &seq, &Isochromat::on_resonance(), relax()).unwrap();
        assert_vec(out[0], [0.0, -1.0, 0.0], 1e-15);
        assert_vec(out[1], [0.0, 0.0, -1.0], 1e-15);
    }

    #[test]
    fn sequence_validation() {
        assert!(PulseSequence::new(vec![], 0.01).is_err());
        assert!(PulseSequence::new(vec![Pulse::new(f64::NAN, 0.0)], 0.01).is_err());
        assert!(PulseSequence::new(vec![Pulse::new(1.0, 0.0)], -0.01).is_err());
    }

    #[test]
    fn lorentzian_single_point() {
        let spec = LorentzianSpec {
            n_points: 1,
            ..LorentzianSpec::new(3.0, 20.0)
        };
        let e = make_lorentzian_ensemble(&spec, 1.0, relax()).unwrap();
        assert_eq!(e.isochromats().len(), 1);
        assert_eq!(e.isochromats()[0].offset, 3.0);
        assert_eq!(e.isochromats()[0].weight, 1.0);
    }

    #[test]
    fn lorentzian_half_maximum() {
        let spec = LorentzianSpec::new(1.5, 20.0);
        let peak = spec.density(1.5);
        assert_eq!(peak, 1.0);
        assert_abs_diff_eq!(spec.density(1.5 + 10.0), peak / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spec.density(1.5 - 10.0), peak / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn lorentzian_grid_is_symmetric_and_normalized() {
        let spec = LorentzianSpec::new(-2.0, 28.5);
        let e = make_lorentzian_ensemble(&spec, 1.0, relax()).unwrap();
        let isos = e.isochromats();
        assert_eq!(isos.len(), 101);
        assert_abs_diff_eq!(isos[0].offset, -2.0 - 5.0 * 28.5, epsilon = 1e-12);
        assert_abs_diff_eq!(isos[100].offset, -2.0 + 5.0 * 28.5, epsilon = 1e-12);
        assert_abs_diff_eq!(isos[50].offset, -2.0, epsilon = 1e-12);
        let total: f64 = isos.iter().map(|i| i.weight).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lorentzian_rejects_bad_spec() {
        let spec = LorentzianSpec::new(0.0, 0.0);
        assert!(make_lorentzian_ensemble(&spec, 1.0, relax()).is_err());
        let spec = LorentzianSpec {
            n_points: 0,
            ..LorentzianSpec::new(0.0, 1.0)
        };
        assert!(make_lorentzian_ensemble(&spec, 1.0, relax()).is_err());
    }

    #[test]
    fn ensemble_weight_validation() {
        let iso = Isochromat {
            offset: 0.0,
            rf_scale: 1.0,
            weight: 0.5,
        };
        assert!(SpinEnsemble::new(vec![iso], relax()).is_err());
        assert!(SpinEnsemble::new(vec![iso, iso], relax()).is_ok());
    }

    fn test_sequence() -> PulseSequence {
        let pulses = (0..40)
            .map(|k| Pulse::new(0.3 + 0.1 * (k as f64).sin(), 0.2 * (k as f64 * 0.7).cos()))
            .collect();
        PulseSequence::new(pulses, 0.01).unwrap()
    }

    #[test]
    fn single_isochromat_average_matches_components() {
        let seq = test_sequence();
        let iso = Isochromat {
            offset: 4.0,
            rf_scale: 0.9,
            weight: 1.0,
        };
        let e = SpinEnsemble::new(vec![iso], relax()).unwrap();
        let traj = simulate_fingerprint(&e, &seq);
        let states = propagate_sequence(BlochVector::EQUILIBRIUM, &seq, &iso, relax()).unwrap();
        for (s, m) in traj.samples().iter().zip(&states) {
            assert_eq!(s[0], m.mx());
            assert_eq!(s[1], m.my());
        }
    }

    #[test]
    fn duplicated_isochromat_matches_single() {
        let seq = test_sequence();
        let iso = Isochromat {
            offset: 4.0,
            rf_scale: 0.9,
            weight: 0.5,
        };
        let one = SpinEnsemble::single(4.0, 0.9, relax()).unwrap();
        let two = SpinEnsemble::new(vec![iso, iso], relax()).unwrap();
        let a = simulate_fingerprint(&one, &seq);
        let b = simulate_fingerprint(&two, &seq);
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_abs_diff_eq!(x[0], y[0], epsilon = 1e-15);
            assert_abs_diff_eq!(x[1], y[1], epsilon = 1e-15);
        }
    }

    #[test]
    fn x_pulses_on_resonance_stay_in_yz_plane() {
        let pulses = (0..30).map(|k| Pulse::new(0.5 * (k as f64).cos() + 0.1, 0.0)).collect();
        let seq = PulseSequence::new(pulses, 0.01).unwrap();
        let out = propagate_sequence(BlochVector::EQUILIBRIUM, &seq, &Isochromat::on_resonance(), relax()).unwrap();
        assert!(out.iter().all(|m| m.mx() == 0.0));
    }

    #[test]
    fn rotation_preserves_norm() {
        let s = BlochVector::new(0.3, -0.5, 0.7);
        for k in 0..50 {
            let tx = (k as f64 * 1.3).sin() * PI;
            let ty = (k as f64 * 0.4).cos() * 2.0 * PI;
            let r = rotate_pulse(s, tx, ty, 0.8 + 0.01 * k as f64).unwrap();
            assert!((r.norm() - s.norm()).abs() < 1e-12);
        }
    }
}
