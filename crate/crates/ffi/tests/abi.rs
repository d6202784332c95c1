use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use gemeit_ffi::*;

const PASSIVE: &str = "
[grid]
z_max = 1
nz = 32
t_max = 20
n_samples = 201
[ensemble]
optical_depth = 1
gamma_ge = 1
[protocol]
mode = passive
[pulse]
kind = constant
amplitude = 1
[acceptance]
transmission_tolerance = 0.01
[output]
plots = false
";

fn last_error() -> String {
    unsafe { CStr::from_ptr(gemeit_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn parse(text: &str) -> (GemeitStatus, *mut GemeitConfig) {
    let c = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let st = unsafe { gemeit_config_parse(c.as_ptr(), &mut cfg) };
    (st, cfg)
}

#[test]
fn run_round_trip() {
    let (st, cfg) = parse(PASSIVE);
    assert_eq!(st, GemeitStatus::Ok, "{}", last_error());
    unsafe {
        let mut run = ptr::null_mut();
        assert_eq!(gemeit_run(cfg, &mut run), GemeitStatus::Ok, "{}", last_error());
        assert_eq!(last_error(), "");

        let mut passed = false;
        assert_eq!(gemeit_run_passed(run, &mut passed), GemeitStatus::Ok);
        assert!(passed);
        let mut eff = f64::NAN;
        assert_eq!(gemeit_run_efficiency(run, &mut eff), GemeitStatus::Ok);
        assert!(eff > 0.0 && eff < 1.0);
        let mut fid = 0.0;
        assert_eq!(gemeit_run_fidelity(run, &mut fid), GemeitStatus::Unavailable);
        assert!(last_error().contains("fidelity"));

        let (mut len, mut t0, mut dt) = (0usize, 0.0, 0.0);
        assert_eq!(
            gemeit_run_output_info(run, &mut len, &mut t0, &mut dt),
            GemeitStatus::Ok
        );
        assert_eq!(len, 201);
        assert!(dt > 0.0);
        let (mut re, mut im) = (vec![0.0; len], vec![0.0; len]);
        assert_eq!(
            gemeit_run_output(run, re.as_mut_ptr(), im.as_mut_ptr(), len - 1),
            GemeitStatus::BufferTooSmall
        );
        assert_eq!(
            gemeit_run_output(run, re.as_mut_ptr(), im.as_mut_ptr(), len),
            GemeitStatus::Ok
        );
        // steady state of a constant input through OD 1
        let last = re[len - 1].hypot(im[len - 1]);
        assert!((last * last / (-1.0f64).exp() - 1.0).abs() < 0.01);

        let mut json = ptr::null_mut();
        assert_eq!(gemeit_run_summary_json(run, &mut json), GemeitStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        gemeit_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!((v["efficiency"].as_f64().unwrap() - eff).abs() < 1e-15);

        let dir = tempfile::tempdir().unwrap();
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(gemeit_run_write_artifacts(run, cfg, d.as_ptr()), GemeitStatus::Ok);
        assert!(dir.path().join("summary.json").is_file());

        gemeit_run_free(run);
        gemeit_config_free(cfg);
    }
}

#[test]
fn overrides_and_errors() {
    let (st, cfg) = parse(PASSIVE);
    assert_eq!(st, GemeitStatus::Ok);
    unsafe {
        let name = CString::new("ensemble.optical_depth").unwrap();
        assert_eq!(gemeit_config_set(cfg, name.as_ptr(), 2.0), GemeitStatus::Ok);
        assert_eq!(gemeit_config_set(cfg, name.as_ptr(), -1.0), GemeitStatus::Config);
        assert!(!last_error().is_empty());
        let bogus = CString::new("grid.bogus").unwrap();
        assert_eq!(gemeit_config_set(cfg, bogus.as_ptr(), 1.0), GemeitStatus::Config);
        assert_eq!(gemeit_config_set_seed(cfg, 9), GemeitStatus::Ok);

        let mut run = ptr::null_mut();
        assert_eq!(gemeit_run(cfg, &mut run), GemeitStatus::Ok);
        let (mut len, mut t0, mut dt) = (0usize, 0.0, 0.0);
        gemeit_run_output_info(run, &mut len, &mut t0, &mut dt);
        let (mut re, mut im) = (vec![0.0; len], vec![0.0; len]);
        gemeit_run_output(run, re.as_mut_ptr(), im.as_mut_ptr(), len);
        // the failed override left OD 2 in place
        let last = re[len - 1].hypot(im[len - 1]);
        assert!((last * last / (-2.0f64).exp() - 1.0).abs() < 0.01);
        gemeit_run_free(run);

        assert_eq!(gemeit_run(ptr::null(), &mut run), GemeitStatus::NullPointer);
        assert!(run.is_null());
        assert_eq!(gemeit_run(cfg, ptr::null_mut()), GemeitStatus::NullPointer);
        gemeit_config_free(cfg);
        gemeit_config_free(ptr::null_mut());
        gemeit_run_free(ptr::null_mut());
        gemeit_string_free(ptr::null_mut());
    }

    let (st, cfg) = parse("[grid]\nnz = 1\n");
    assert_eq!(st, GemeitStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("nz"), "{}", last_error());

    let missing = CString::new("/nonexistent/x.cfg").unwrap();
    let mut cfg = ptr::null_mut();
    assert_ne!(
        unsafe { gemeit_config_load(missing.as_ptr(), &mut cfg) },
        GemeitStatus::Ok
    );
    let bad_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { gemeit_config_parse(bad_utf8.as_ptr().cast(), &mut cfg) },
        GemeitStatus::InvalidUtf8
    );
}

#[test]
fn sweep_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{PASSIVE}[sweep]\nparameter = ensemble.optical_depth\nvalues = 1, 2\nmetric = transmission\n");
    let (st, cfg) = parse(&text);
    assert_eq!(st, GemeitStatus::Ok, "{}", last_error());
    unsafe {
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(gemeit_config_set_output(cfg, d.as_ptr(), false), GemeitStatus::Ok);
        let (mut json, mut passed) = (ptr::null_mut(), false);
        assert_eq!(
            gemeit_sweep(cfg, 1, &mut json, &mut passed),
            GemeitStatus::Ok,
            "{}",
            last_error()
        );
        assert!(passed);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        gemeit_string_free(json);
        assert_eq!(v["values"].as_array().unwrap().len(), 2);
        assert!(dir.path().join("sweep.json").is_file());
        gemeit_config_free(cfg);
    }
    let (_, cfg) = parse(PASSIVE);
    let (mut json, mut passed) = (ptr::null_mut(), false);
    assert_eq!(
        unsafe { gemeit_sweep(cfg, 1, &mut json, &mut passed) },
        GemeitStatus::Config
    );
    unsafe { gemeit_config_free(cfg) };
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(gemeit_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("gemeit.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(h.contains(&format!("{name}(")), "{name} missing from the header");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "gemeit.h"

int main(void) {
    const char *text = "[grid]\nz_max = 1\nnz = 16\nt_max = 10\nn_samples = 101\n"
                       "[ensemble]\noptical_depth = 1\ngamma_ge = 1\n"
                       "[protocol]\nmode = passive\n[pulse]\nkind = constant\namplitude = 1\n";
    GemeitConfig *cfg = NULL;
    if (gemeit_config_parse(text, &cfg) != GEMEIT_STATUS_OK) { puts(gemeit_last_error()); return 1; }
    GemeitRun *run = NULL;
    if (gemeit_run(cfg, &run) != GEMEIT_STATUS_OK) { puts(gemeit_last_error()); return 2; }
    double eff = -1.0;
    gemeit_run_efficiency(run, &eff);
    GemeitConfig *bad = NULL;
    GemeitStatus st = gemeit_config_parse("[grid]\nnz = 1\n", &bad);
    printf("%s %.3f %d %d\n", gemeit_version(), eff, (int)st, bad == NULL);
    gemeit_run_free(run);
    gemeit_config_free(cfg);
    return 0;
}
"#;

// Compiles and runs a C client against the header and the static library.
#[test]
fn c_client_links_and_runs() {
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libgemeit_ffi.a");
    assert!(lib.is_file(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    let exe = dir.path().join("client");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap_or_else(|e| panic!("cannot start C compiler `{cc}`: {e}"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success());
    let line = String::from_utf8(out.stdout).unwrap();
    let parts: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(parts[0], env!("CARGO_PKG_VERSION"));
    let eff: f64 = parts[1].parse().unwrap();
    assert!(eff > 0.0 && eff < 1.0);
    assert_eq!(parts[2], (GemeitStatus::Config as i32).to_string());
    assert_eq!(parts[3], "1");
}
