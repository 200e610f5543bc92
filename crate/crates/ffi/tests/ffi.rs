use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use spinfp_ffi::*;

fn last_error() -> String {
    let p = fp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn homogeneous(t1: f64, t2: f64) -> FpEnsembleSpec {
    FpEnsembleSpec {
        t1_s: t1,
        t2_s: t2,
        rf_scale: 1.0,
        offset_rad_per_s: 0.0,
        fwhm_rad_per_s: 0.0,
        n_points: 0,
    }
}

fn random_sequence(n: usize, seed: u64) -> *mut FpSequence {
    let mut seq = ptr::null_mut();
    assert_eq!(unsafe { fp_sequence_random(n, std::f64::consts::PI, 0.01, seed, &mut seq) }, FpStatus::Ok);
    seq
}

fn t1_dictionary(seq: *const FpSequence) -> *mut FpDictionary {
    let t1s = [0.1, 0.233, 0.366, 0.5];
    let spec = homogeneous(0.3, 0.2);
    let mut dict = ptr::null_mut();
    let status = unsafe { fp_dictionary_build(&spec, seq, &FpParameter::T1, 1, t1s.as_ptr(), 4, &mut dict) };
    assert_eq!(status, FpStatus::Ok);
    dict
}

#[test]
fn simulate_recognize_and_estimate() {
    let seq = random_sequence(150, 3);
    let dict = t1_dictionary(seq);
    let mut signal = vec![0.0; 300];
    let spec = homogeneous(0.3, 0.2);
    unsafe {
        assert_eq!(fp_simulate(&spec, seq, signal.as_mut_ptr(), signal.len()), FpStatus::Ok);
        assert!(fp_last_error_message().is_null());

        let mut len = 0;
        assert_eq!(fp_dictionary_len(dict, &mut len), FpStatus::Ok);
        assert_eq!(len, 4);

        let mut rec = FpRecognition { index: 9, residual: -1.0, tie: true };
        assert_eq!(fp_dictionary_recognize(dict, signal.as_ptr(), 150, &mut rec), FpStatus::Ok);
        assert_eq!(rec.index, 2);
        assert!(!rec.tie && rec.residual > 0.0);

        let mut est = std::mem::zeroed::<FpEstimate>();
        assert_eq!(fp_estimate(dict, signal.as_ptr(), 150, &FpParameter::T1, 1, &mut est), FpStatus::Ok);
        assert_eq!((est.matched_index, est.n_values), (2, 1));
        assert!((est.values[0] - 0.3).abs() < 1e-4, "{}", est.values[0]);
        assert!(est.final_residual < est.start_residual);

        let mut c = 0.0;
        assert_eq!(fp_dictionary_figure_of_merit(dict, &mut c), FpStatus::Ok);
        assert!(c > 0.0 && c <= 1.0);

        let mut entry = vec![0.0; 300];
        assert_eq!(fp_dictionary_entry(dict, 2, entry.as_mut_ptr(), 300), FpStatus::Ok);
        let mut d = -1.0;
        assert_eq!(fp_distance(entry.as_ptr(), entry.as_ptr(), 150, &mut d), FpStatus::Ok);
        assert_eq!(d, 0.0);
        assert_eq!(fp_distance(entry.as_ptr(), signal.as_ptr(), 150, &mut d), FpStatus::Ok);
        assert!((d - rec.residual).abs() < 1e-15);

        fp_dictionary_free(dict);
        fp_sequence_free(seq);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut seq = ptr::null_mut();
        assert_eq!(fp_sequence_random(10, -1.0, 0.01, 0, &mut seq), FpStatus::InvalidInput);
        assert!(seq.is_null());
        assert!(last_error().contains("bound"));

        assert_eq!(fp_sequence_random(10, 1.0, 0.01, 0, ptr::null_mut()), FpStatus::NullPointer);

        let seq = random_sequence(20, 1);
        let mut small = [0.0; 10];
        let spec = homogeneous(0.3, 0.2);
        assert_eq!(fp_simulate(&spec, seq, small.as_mut_ptr(), 10), FpStatus::BufferTooSmall);

        let bad = homogeneous(0.1, 0.5);
        let mut big = [0.0; 40];
        assert_eq!(fp_simulate(&bad, seq, big.as_mut_ptr(), 40), FpStatus::InvalidInput);

        let zeros = [0.0; 40];
        let mut d = 0.0;
        assert_eq!(fp_distance(zeros.as_ptr(), big.as_ptr(), 20, &mut d), FpStatus::DegenerateSignal);

        assert_eq!(fp_simulate(&spec, seq, big.as_mut_ptr(), 40), FpStatus::Ok);
        assert!(fp_last_error_message().is_null());
        let dict = t1_dictionary(seq);
        let mut rec = std::mem::zeroed::<FpRecognition>();
        assert_eq!(fp_dictionary_recognize(dict, big.as_ptr(), 10, &mut rec), FpStatus::Dimension);
        let mut est = std::mem::zeroed::<FpEstimate>();
        assert_eq!(
            fp_estimate(dict, big.as_ptr(), 20, ptr::null(), 0, &mut est),
            FpStatus::InvalidInput
        );
        fp_dictionary_free(dict);
        fp_sequence_free(seq);
        fp_sequence_free(ptr::null_mut());
        fp_dictionary_free(ptr::null_mut());
    }
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq_path = CString::new(dir.path().join("seq.json").to_str().unwrap()).unwrap();
    let dict_path = CString::new(dir.path().join("dict.json").to_str().unwrap()).unwrap();
    unsafe {
        let seq = random_sequence(40, 8);
        let dict = t1_dictionary(seq);
        assert_eq!(fp_sequence_save(seq, seq_path.as_ptr()), FpStatus::Ok);
        assert_eq!(fp_dictionary_save(dict, dict_path.as_ptr()), FpStatus::Ok);

        let mut loaded = ptr::null_mut();
        assert_eq!(fp_sequence_load(seq_path.as_ptr(), &mut loaded), FpStatus::Ok);
        let (mut ax, mut ay, mut bx, mut by) = ([0.0; 40], [0.0; 40], [0.0; 40], [0.0; 40]);
        assert_eq!(fp_sequence_areas(seq, ax.as_mut_ptr(), ay.as_mut_ptr(), 40), FpStatus::Ok);
        assert_eq!(fp_sequence_areas(loaded, bx.as_mut_ptr(), by.as_mut_ptr(), 40), FpStatus::Ok);
        assert_eq!((ax, ay), (bx, by));

        let mut dict2 = ptr::null_mut();
        assert_eq!(fp_dictionary_load(dict_path.as_ptr(), loaded, &mut dict2), FpStatus::Ok);
        let (mut e1, mut e2) = ([0.0; 80], [0.0; 80]);
        fp_dictionary_entry(dict, 3, e1.as_mut_ptr(), 80);
        fp_dictionary_entry(dict2, 3, e2.as_mut_ptr(), 80);
        assert_eq!(e1, e2);

        let other = random_sequence(40, 9);
        let mut stale = ptr::null_mut();
        assert_eq!(fp_dictionary_load(dict_path.as_ptr(), other, &mut stale), FpStatus::StaleDictionary);
        assert!(stale.is_null());

        let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
        assert_eq!(fp_sequence_load(missing.as_ptr(), &mut stale.cast()), FpStatus::Io);

        for d in [dict, dict2] {
            fp_dictionary_free(d);
        }
        for s in [seq, loaded, other] {
            fp_sequence_free(s);
        }
    }
}

#[test]
fn optimize_improves_on_random() {
    let t1s = [0.1, 0.5];
    let spec = homogeneous(0.3, 0.2);
    unsafe {
        let mut field = ptr::null_mut();
        let mut c = 0.0;
        let status = fp_optimize(&spec, &FpParameter::T1, 1, t1s.as_ptr(), 2, 30, 0.01, 30, 4, &mut field, &mut c);
        assert_eq!(status, FpStatus::Ok, "{}", last_error());
        let mut n = 0;
        fp_sequence_len(field, &mut n);
        assert_eq!(n, 30);
        let x: Vec<f64> = (0..30).map(|k| 0.3 * (k as f64).sin()).collect();
        let mut start = ptr::null_mut();
        assert_eq!(fp_sequence_new(x.as_ptr(), ptr::null(), 30, 0.01, &mut start), FpStatus::Ok);
        let mut d = ptr::null_mut();
        fp_dictionary_build(&spec, start, &FpParameter::T1, 1, t1s.as_ptr(), 2, &mut d);
        let mut c0 = 0.0;
        fp_dictionary_figure_of_merit(d, &mut c0);
        assert!(c > c0, "{c} vs {c0}");
        fp_dictionary_free(d);
        fp_sequence_free(start);
        fp_sequence_free(field);
    }
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/spinfp.h")
}

#[test]
fn header_declares_the_exported_functions() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "fp_last_error_message",
        "fp_sequence_new",
        "fp_simulate",
        "fp_distance",
        "fp_dictionary_build",
        "fp_dictionary_recognize",
        "fp_estimate",
        "fp_optimize",
        "FP_STATUS_STALE_DICTIONARY",
        "typedef struct FpSequence FpSequence;",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "spinfp.h"

int main(void) {
    FpSequence *seq = NULL;
    if (fp_sequence_random(50, 3.14159, 0.01, 2, &seq) != FP_STATUS_OK) return 1;
    FpEnsembleSpec spec = {0.3, 0.2, 1.0, 0.0, 0.0, 0};
    double t1[] = {0.1, 0.3, 0.5};
    FpParameter p = FP_PARAMETER_T1;
    FpDictionary *dict = NULL;
    if (fp_dictionary_build(&spec, seq, &p, 1, t1, 3, &dict) != FP_STATUS_OK) return 2;
    double signal[100];
    if (fp_simulate(&spec, seq, signal, 100) != FP_STATUS_OK) return 3;
    FpRecognition rec;
    if (fp_dictionary_recognize(dict, signal, 50, &rec) != FP_STATUS_OK) return 4;
    if (fp_simulate(&spec, seq, signal, 10) != FP_STATUS_BUFFER_TOO_SMALL) return 5;
    printf("%zu %s\n", rec.index, fp_last_error_message() ? "err" : "none");
    fp_dictionary_free(dict);
    fp_sequence_free(seq);
    return 0;
}
"#;

/// Builds and runs a C program against the static library when a C compiler
/// is on the path.
#[test]
fn c_program_links_against_the_static_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("libspinfp_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "1 err");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
