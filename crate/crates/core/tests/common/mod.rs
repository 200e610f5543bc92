//! Shared helpers for the integration tests: an independent Bloch integrator,
//! finite differences and small CSV utilities.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector4};
use spinfp::bloch::{Isochromat, PulseSequence, RelaxationParams};

/// Width of the hard pulses used by the reference integrator.
pub const HARD_PULSE: f64 = 1e-6;

/// Affine Bloch generator on `(mx, my, mz, 1)` with RF rates `(wx, wy)`.
pub fn generator(t1: f64, t2: f64, offset: f64, rf_scale: f64, wx: f64, wy: f64) -> Matrix4<f64> {
    let (ax, ay) = (rf_scale * wx, rf_scale * wy);
    Matrix4::new(
        -1.0 / t2, -offset, ay, 0.0,
        offset, -1.0 / t2, -ax, 0.0,
        -ay, ax, -1.0 / t1, 1.0 / t1,
        0.0, 0.0, 0.0, 0.0,
    )
}

/// Reference propagation with rectangular pulses of width `tau` centered on
/// the δ-pulse instants `kT`. Free stretches are integrated on a `tau/2` grid.
/// States are taken at the end of each pulse, `kT + tau/2`.
pub fn reference_states(
    seq: &PulseSequence,
    iso: &Isochromat,
    relax: RelaxationParams,
    tau: f64,
) -> Vec<[f64; 3]> {
    let (t1, t2) = (relax.t1(), relax.t2());
    let free_step = (generator(t1, t2, iso.offset, iso.rf_scale, 0.0, 0.0) * (0.5 * tau)).exp();
    let period = (2.0 * seq.delay_t() / tau).round() as u32;
    let first = free_step.pow(period - 1);
    let rest = free_step.pow(period - 2);
    let mut m = Vector4::new(0.0, 0.0, 1.0, 1.0);
    let mut out = Vec::with_capacity(seq.len());
    for (k, p) in seq.pulses().iter().enumerate() {
        m = if k == 0 { first * m } else { rest * m };
        let pulse = generator(t1, t2, iso.offset, iso.rf_scale, p.theta_x / tau, p.theta_y / tau);
        m = (pulse * tau).exp() * m;
        out.push([m[0], m[1], m[2]]);
    }
    out
}

/// Free evolution over half a pulse width, to compare a state taken right
/// after a δ-pulse with [`reference_states`].
pub fn advance_half_pulse(state: [f64; 3], iso: &Isochromat, relax: RelaxationParams, tau: f64) -> [f64; 3] {
    let g = generator(relax.t1(), relax.t2(), iso.offset, iso.rf_scale, 0.0, 0.0);
    let m = (g * (0.5 * tau)).exp() * Vector4::new(state[0], state[1], state[2], 1.0);
    [m[0], m[1], m[2]]
}

/// Largest per-component gap between δ-pulse states and the reference.
pub fn max_gap(
    fast: &[spinfp::bloch::BlochVector],
    seq: &PulseSequence,
    iso: &Isochromat,
    relax: RelaxationParams,
    tau: f64,
) -> f64 {
    fast.iter()
        .zip(reference_states(seq, iso, relax, tau))
        .flat_map(|(a, b)| {
            let a = advance_half_pulse([a.mx(), a.my(), a.mz()], iso, relax, tau);
            [(a[0] - b[0]).abs(), (a[1] - b[1]).abs(), (a[2] - b[2]).abs()]
        })
        .fold(0.0, f64::max)
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max|a - b| / max|b|`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Runs the command-line entry point with `args` and returns its exit code.
pub fn run_cli(args: &[&str]) -> i32 {
    let mut full = vec!["spinfp"];
    full.extend_from_slice(args);
    spinfp::cli::main_with_args(full)
}

/// Data rows of a CSV written by the tool, split into fields. Comment lines
/// and the header are dropped.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

pub fn field(row: &[String], i: usize) -> f64 {
    row[i].parse().unwrap_or(f64::NAN)
}
