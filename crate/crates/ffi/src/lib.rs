//! C ABI over the `spinfp` library.
//!
//! Conventions:
//! - Every function returns an [`FpStatus`]; results come back through out
//!   pointers that are written only on success.
//! - On failure, [`fp_last_error_message`] describes the error. The message
//!   belongs to the calling thread and stays valid until its next call into
//!   this library.
//! - Objects are opaque handles created by `*_new`, `*_build` or `*_load`
//!   functions and released with the matching `*_free`. Passing NULL to a
//!   `*_free` function is a no-op.
//! - Fingerprints are flat arrays of `2 * n_samples` doubles laid out as
//!   `mx0, my0, mx1, my1, ...`.
//! - Panics are caught at the boundary and reported as `FP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use spinfp::bloch::{LorentzianSpec, Pulse, PulseSequence, Trajectory};
use spinfp::estimator::{estimate, FitConfig};
use spinfp::fingerprint::{distance, figure_of_merit, recognize, Dictionary, WeightMatrix};
use spinfp::grape::{optimize_multistart, random_field, DictionarySpec, OptimizerConfig};
use spinfp::model::{EnsembleSpec, ForwardModel, Parameter, ParameterPoint};
use spinfp::{io, Error};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Dimension = 3,
    DegenerateSignal = 4,
    StaleDictionary = 5,
    Parse = 6,
    Io = 7,
    TooManyFailures = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Relaxation and offset parameters that can vary across a dictionary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpParameter {
    T1 = 0,
    T2 = 1,
    Fwhm = 2,
    Center = 3,
    RfScale = 4,
}

/// Maximum number of values in an [`FpEstimate`].
pub const FP_MAX_PARAMETERS: usize = 5;

/// Ensemble template. `fwhm_rad_per_s == 0` selects a single isochromat at
/// `offset_rad_per_s`; a positive width selects a Lorentzian centered there,
/// discretized on `n_points` offsets (0 means the default of 101).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpEnsembleSpec {
    pub t1_s: f64,
    pub t2_s: f64,
    pub rf_scale: f64,
    pub offset_rad_per_s: f64,
    pub fwhm_rad_per_s: f64,
    pub n_points: usize,
}

/// Nearest dictionary entry for a signal.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpRecognition {
    pub index: usize,
    pub residual: f64,
    /// Another entry is equally close; the lowest index was returned.
    pub tie: bool,
}

/// Matching followed by refinement. `values[i]` is the refined value of the
/// i-th free parameter passed to [`fp_estimate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpEstimate {
    pub matched_index: usize,
    pub start_residual: f64,
    pub final_residual: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub n_values: usize,
    pub values: [f64; FP_MAX_PARAMETERS],
}

/// Pulse sequence handle.
pub struct FpSequence(PulseSequence);

/// Dictionary handle.
pub struct FpDictionary(Dictionary);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(FpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) => FpStatus::InvalidInput,
            Error::Dimension { .. } => FpStatus::Dimension,
            Error::DegenerateSignal(_) => FpStatus::DegenerateSignal,
            Error::StaleDictionary(_) => FpStatus::StaleDictionary,
            Error::Parse { .. } => FpStatus::Parse,
            Error::TooManyFailures { .. } => FpStatus::TooManyFailures,
            Error::Io { .. } => FpStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: FpStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            FpStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(FpStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be NULL or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be NULL or a NUL-terminated string.
unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, Failure> {
    non_null(p, name)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FpStatus::InvalidInput, format!("{name} is not valid UTF-8")))?;
    Ok(Path::new(s))
}

fn parameter(p: FpParameter) -> Parameter {
    match p {
        FpParameter::T1 => Parameter::T1,
        FpParameter::T2 => Parameter::T2,
        FpParameter::Fwhm => Parameter::Fwhm,
        FpParameter::Center => Parameter::Center,
        FpParameter::RfScale => Parameter::RfScale,
    }
}

fn template(spec: &FpEnsembleSpec) -> Result<EnsembleSpec, Failure> {
    let mut t = if spec.fwhm_rad_per_s > 0.0 {
        let mut l = LorentzianSpec::new(spec.offset_rad_per_s, spec.fwhm_rad_per_s);
        if spec.n_points > 0 {
            l.n_points = spec.n_points;
        }
        EnsembleSpec::lorentzian(spec.t1_s, spec.t2_s, l)
    } else if spec.fwhm_rad_per_s == 0.0 {
        let mut t = EnsembleSpec::homogeneous(spec.t1_s, spec.t2_s);
        t.set(Parameter::Center, spec.offset_rad_per_s)?;
        t
    } else {
        return Err(fail(FpStatus::InvalidInput, "fwhm_rad_per_s must be >= 0"));
    };
    t.rf_scale = spec.rf_scale;
    t.build()?;
    Ok(t)
}

/// # Safety
/// `params` valid for `n_params` reads, `values` for `n_points * n_params`.
unsafe fn points(
    params: *const FpParameter,
    n_params: usize,
    values: *const f64,
    n_points: usize,
) -> Result<Vec<ParameterPoint>, Failure> {
    if n_params == 0 || n_points == 0 {
        return Err(fail(FpStatus::InvalidInput, "need at least one parameter and one point"));
    }
    let params = slice(params, n_params, "params")?;
    let values = slice(values, n_params * n_points, "values")?;
    values
        .chunks(n_params)
        .map(|row| {
            ParameterPoint::new(params.iter().zip(row).map(|(p, v)| (parameter(*p), *v)))
                .map_err(Failure::from)
        })
        .collect()
}

/// # Safety
/// `data` valid for `2 * n_samples` reads.
unsafe fn trajectory(data: *const f64, n_samples: usize, delay_t: f64) -> Result<Trajectory, Failure> {
    let flat = slice(data, 2 * n_samples, "signal")?;
    let samples = flat.chunks(2).map(|c| [c[0], c[1]]).collect();
    Ok(Trajectory::new(samples, delay_t)?)
}

/// # Safety
/// `out` valid for `len` writes.
unsafe fn write_trajectory(traj: &Trajectory, out: *mut f64, len: usize) -> Result<(), Failure> {
    let needed = 2 * traj.len();
    if len < needed {
        return Err(fail(
            FpStatus::BufferTooSmall,
            format!("output buffer holds {len} doubles, {needed} needed"),
        ));
    }
    non_null(out, "out")?;
    let out = std::slice::from_raw_parts_mut(out, needed);
    for (dst, s) in out.chunks_mut(2).zip(traj.samples()) {
        dst.copy_from_slice(s);
    }
    Ok(())
}

/// Message for the last failed call on this thread, or NULL after a
/// successful call. Owned by the library.
#[no_mangle]
pub extern "C" fn fp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Sequence of `n_pulses` δ-pulses with areas `theta_x[k]`, `theta_y[k]` in
/// radians, separated by `delay_t` seconds. `theta_y` may be NULL for x-only.
///
/// # Safety
/// Arrays must hold `n_pulses` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_sequence_new(
    theta_x: *const f64,
    theta_y: *const f64,
    n_pulses: usize,
    delay_t: f64,
    out: *mut *mut FpSequence,
) -> FpStatus {
    guard(|| {
        non_null(out, "out")?;
        let x = slice(theta_x, n_pulses, "theta_x")?;
        let y = if theta_y.is_null() { None } else { Some(slice(theta_y, n_pulses, "theta_y")?) };
        let pulses = (0..n_pulses)
            .map(|k| Pulse::new(x[k], y.map_or(0.0, |y| y[k])))
            .collect();
        let seq = PulseSequence::new(pulses, delay_t)?;
        *out = Box::into_raw(Box::new(FpSequence(seq)));
        Ok(())
    })
}

/// Seeded random field with areas uniform in `[-bound, bound]` per axis.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_sequence_random(
    n_pulses: usize,
    bound: f64,
    delay_t: f64,
    seed: u64,
    out: *mut *mut FpSequence,
) -> FpStatus {
    guard(|| {
        non_null(out, "out")?;
        let seq = random_field(n_pulses, bound, delay_t, seed)?;
        *out = Box::into_raw(Box::new(FpSequence(seq)));
        Ok(())
    })
}

/// # Safety
/// `seq` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_sequence_len(seq: *const FpSequence, out: *mut usize) -> FpStatus {
    guard(|| {
        non_null(seq, "seq")?;
        non_null(out, "out")?;
        *out = (*seq).0.len();
        Ok(())
    })
}

/// Copies the pulse areas into `theta_x` and `theta_y`, each holding `len`.
///
/// # Safety
/// `seq` live; both arrays writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fp_sequence_areas(
    seq: *const FpSequence,
    theta_x: *mut f64,
    theta_y: *mut f64,
    len: usize,
) -> FpStatus {
    guard(|| {
        non_null(seq, "seq")?;
        let pulses = (*seq).0.pulses();
        if len < pulses.len() {
            return Err(fail(FpStatus::BufferTooSmall, format!("{} pulses, buffers hold {len}", pulses.len())));
        }
        non_null(theta_x, "theta_x")?;
        non_null(theta_y, "theta_y")?;
        for (k, p) in pulses.iter().enumerate() {
            *theta_x.add(k) = p.theta_x;
            *theta_y.add(k) = p.theta_y;
        }
        Ok(())
    })
}

/// Reads a sequence written by the `spinfp` tool or [`fp_sequence_save`].
///
/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_sequence_load(path: *const c_char, out: *mut *mut FpSequence) -> FpStatus {
    guard(|| {
        non_null(out, "out")?;
        let (seq, _) = io::load_sequence(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(FpSequence(seq)));
        Ok(())
    })
}

/// # Safety
/// `seq` live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fp_sequence_save(seq: *const FpSequence, path: *const c_char) -> FpStatus {
    guard(|| {
        non_null(seq, "seq")?;
        let path = path_arg(path, "path")?;
        io::write_file(path, &io::sequence_json(&(*seq).0, None, None))?;
        Ok(())
    })
}

/// # Safety
/// `seq` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_sequence_free(seq: *mut FpSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// Noiseless fingerprint of one ensemble under `seq`, written to `out` as
/// `2 * n_pulses` doubles.
///
/// # Safety
/// `spec`, `seq` valid; `out` writable for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fp_simulate(
    spec: *const FpEnsembleSpec,
    seq: *const FpSequence,
    out: *mut f64,
    out_len: usize,
) -> FpStatus {
    guard(|| {
        non_null(spec, "spec")?;
        non_null(seq, "seq")?;
        let t = template(&*spec)?;
        let traj = ForwardModel::new(t, (*seq).0.clone()).simulate(&t.to_point())?;
        write_trajectory(&traj, out, out_len)
    })
}

/// Normalized squared distance between two fingerprints of `n_samples` each.
///
/// # Safety
/// `f`, `g` readable for `2 * n_samples` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_distance(
    f: *const f64,
    g: *const f64,
    n_samples: usize,
    out: *mut f64,
) -> FpStatus {
    guard(|| {
        non_null(out, "out")?;
        let a = trajectory(f, n_samples, 1.0)?;
        let b = trajectory(g, n_samples, 1.0)?;
        *out = distance(&a, &b)?;
        Ok(())
    })
}

/// Dictionary of `n_points` entries. Entry `i` sets parameter `params[j]` to
/// `values[i * n_params + j]` on top of `spec`.
///
/// # Safety
/// Arrays sized as described; `spec`, `seq` valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_dictionary_build(
    spec: *const FpEnsembleSpec,
    seq: *const FpSequence,
    params: *const FpParameter,
    n_params: usize,
    values: *const f64,
    n_points: usize,
    out: *mut *mut FpDictionary,
) -> FpStatus {
    guard(|| {
        non_null(spec, "spec")?;
        non_null(seq, "seq")?;
        non_null(out, "out")?;
        let pts = points(params, n_params, values, n_points)?;
        let dict = Dictionary::build(template(&*spec)?, (*seq).0.clone(), pts)?;
        *out = Box::into_raw(Box::new(FpDictionary(dict)));
        Ok(())
    })
}

/// Loads a dictionary saved for the field `seq`. Fails with
/// `FP_STATUS_STALE_DICTIONARY` if it was built for a different field.
///
/// # Safety
/// `path` NUL-terminated; `seq` valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_dictionary_load(
    path: *const c_char,
    seq: *const FpSequence,
    out: *mut *mut FpDictionary,
) -> FpStatus {
    guard(|| {
        non_null(seq, "seq")?;
        non_null(out, "out")?;
        let dict = io::load_dictionary(path_arg(path, "path")?, &(*seq).0)?;
        *out = Box::into_raw(Box::new(FpDictionary(dict)));
        Ok(())
    })
}

/// # Safety
/// `dict` valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fp_dictionary_save(dict: *const FpDictionary, path: *const c_char) -> FpStatus {
    guard(|| {
        non_null(dict, "dict")?;
        let path = path_arg(path, "path")?;
        io::write_file(path, &io::dictionary_json(&(*dict).0, None))?;
        Ok(())
    })
}

/// # Safety
/// `dict` valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_dictionary_len(dict: *const FpDictionary, out: *mut usize) -> FpStatus {
    guard(|| {
        non_null(dict, "dict")?;
        non_null(out, "out")?;
        *out = (*dict).0.len();
        Ok(())
    })
}

/// Copies entry `index`'s fingerprint into `out`.
///
/// # Safety
/// `dict` valid; `out` writable for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fp_dictionary_entry(
    dict: *const FpDictionary,
    index: usize,
    out: *mut f64,
    out_len: usize,
) -> FpStatus {
    guard(|| {
        non_null(dict, "dict")?;
        let entries = (*dict).0.entries();
        let entry = entries.get(index).ok_or_else(|| {
            fail(FpStatus::InvalidInput, format!("index {index} out of range for {} entries", entries.len()))
        })?;
        write_trajectory(&entry.trajectory, out, out_len)
    })
}

/// Figure of merit of the dictionary with unit weights.
///
/// # Safety
/// `dict` valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_dictionary_figure_of_merit(dict: *const FpDictionary, out: *mut f64) -> FpStatus {
    guard(|| {
        non_null(dict, "dict")?;
        non_null(out, "out")?;
        let d = &(*dict).0;
        *out = figure_of_merit(d, &WeightMatrix::ones(d.len()))?;
        Ok(())
    })
}

/// Nearest entry to a measured signal of `n_samples` samples.
///
/// # Safety
/// `dict` valid; `signal` readable for `2 * n_samples`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_dictionary_recognize(
    dict: *const FpDictionary,
    signal: *const f64,
    n_samples: usize,
    out: *mut FpRecognition,
) -> FpStatus {
    guard(|| {
        non_null(dict, "dict")?;
        non_null(out, "out")?;
        let d = &(*dict).0;
        let g = trajectory(signal, n_samples, d.sequence().delay_t())?;
        let r = recognize(d, &g)?;
        *out = FpRecognition { index: r.index, residual: r.residual, tie: r.tie };
        Ok(())
    })
}

/// # Safety
/// `dict` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_dictionary_free(dict: *mut FpDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

/// Matches `signal` against `dict` and refines the `n_free` parameters in
/// `free` with default fit settings.
///
/// # Safety
/// `dict` valid; `signal` readable for `2 * n_samples`; `free` for `n_free`;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_estimate(
    dict: *const FpDictionary,
    signal: *const f64,
    n_samples: usize,
    free: *const FpParameter,
    n_free: usize,
    out: *mut FpEstimate,
) -> FpStatus {
    guard(|| {
        non_null(dict, "dict")?;
        non_null(out, "out")?;
        if n_free > FP_MAX_PARAMETERS {
            return Err(fail(FpStatus::InvalidInput, format!("at most {FP_MAX_PARAMETERS} free parameters")));
        }
        let free: Vec<Parameter> = slice(free, n_free, "free")?.iter().map(|p| parameter(*p)).collect();
        let d = &(*dict).0;
        let g = trajectory(signal, n_samples, d.sequence().delay_t())?;
        let report = estimate(d, &g, &FitConfig::free(free.iter().copied()))?;
        let mut values = [f64::NAN; FP_MAX_PARAMETERS];
        for (v, p) in values.iter_mut().zip(&free) {
            *v = report.refined_parameters.get(*p).unwrap_or(f64::NAN);
        }
        *out = FpEstimate {
            matched_index: report.matched_index.unwrap_or(0),
            start_residual: report.start_residual,
            final_residual: report.final_residual,
            iterations_used: report.iterations_used,
            converged: report.converged,
            n_values: free.len(),
            values,
        };
        Ok(())
    })
}

/// Optimizes an `n_pulses` field for the systems described as in
/// [`fp_dictionary_build`], keeping the best of the default multi-starts.
/// `max_iterations == 0` keeps the default. Writes the field and its figure of
/// merit.
///
/// # Safety
/// As for [`fp_dictionary_build`]; `out` and `out_c_n` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_optimize(
    spec: *const FpEnsembleSpec,
    params: *const FpParameter,
    n_params: usize,
    values: *const f64,
    n_points: usize,
    n_pulses: usize,
    delay_t: f64,
    max_iterations: usize,
    seed: u64,
    out: *mut *mut FpSequence,
    out_c_n: *mut f64,
) -> FpStatus {
    guard(|| {
        non_null(spec, "spec")?;
        non_null(out, "out")?;
        non_null(out_c_n, "out_c_n")?;
        let dspec = DictionarySpec::new(template(&*spec)?, points(params, n_params, values, n_points)?)?;
        let mut cfg = OptimizerConfig { seed, ..Default::default() };
        if max_iterations > 0 {
            cfg.max_iterations = max_iterations;
        }
        let w = WeightMatrix::ones(dspec.len());
        let (field, trace) = optimize_multistart(&dspec, n_pulses, delay_t, &w, &cfg)?;
        *out = Box::into_raw(Box::new(FpSequence(field)));
        *out_c_n = trace.final_value();
        Ok(())
    })
}
