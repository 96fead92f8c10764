use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use spmagic_ffi::*;

fn last_error() -> String {
    let p = spm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_config() -> *mut SpmConfig {
    let cfg = spm_config_new();
    for (k, v) in [("epochs", "3"), ("batch_size", "32"), ("seed", "5")] {
        let (k, v) = (CString::new(k).unwrap(), CString::new(v).unwrap());
        assert_eq!(unsafe { spm_config_set(cfg, k.as_ptr(), v.as_ptr()) }, SpmStatus::Ok);
    }
    cfg
}

#[test]
fn impute_round_trip_through_handles() {
    let mut data = ptr::null_mut();
    let st = unsafe { spm_dataset_simulate(60, 12, 3, 2.0, 0.3, 0, 1, &mut data) };
    assert_eq!(st, SpmStatus::Ok);
    let (mut n, mut g) = (0usize, 0usize);
    assert_eq!(unsafe { spm_dataset_shape(data, &mut n, &mut g) }, SpmStatus::Ok);
    assert_eq!((n, g), (60, 12));

    let cfg = small_config();
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { spm_impute(data, cfg, &mut res) }, SpmStatus::Ok);
    let (mut rn, mut rg) = (0usize, 0usize);
    assert_eq!(unsafe { spm_result_shape(res, &mut rn, &mut rg) }, SpmStatus::Ok);
    assert_eq!((rn, rg), (60, 12));

    let mut values = vec![f64::NAN; rn * rg];
    assert_eq!(unsafe { spm_result_values(res, values.as_mut_ptr(), values.len()) }, SpmStatus::Ok);
    assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));

    let short = unsafe { spm_result_values(res, values.as_mut_ptr(), 3) };
    assert_eq!(short, SpmStatus::Shape);
    assert!(last_error().contains("3 elements"));

    assert_eq!(unsafe { spm_result_epochs(res) }, 3);
    let mut loss = [0.0; 3];
    assert_eq!(unsafe { spm_result_loss_history(res, loss.as_mut_ptr(), 3) }, SpmStatus::Ok);
    assert!(loss.iter().all(|l| l.is_finite() && *l > 0.0));

    let gene = unsafe { spm_result_gene_id(res, 0) };
    assert!(!gene.is_null());
    assert!(unsafe { spm_result_gene_id(res, 12) }.is_null());

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { spm_result_save_checkpoint(res, path.as_ptr()) }, SpmStatus::Ok);
    assert!(dir.path().join("m.ckpt").metadata().unwrap().len() > 0);

    let mut labels = vec![0i64; 60];
    assert_eq!(unsafe { spm_dataset_labels(data, labels.as_mut_ptr(), 60) }, SpmStatus::Ok);
    let mut ari = f64::NAN;
    assert_eq!(unsafe { spm_ari(labels.as_ptr(), labels.as_ptr(), 60, &mut ari) }, SpmStatus::Ok);
    assert_eq!(ari, 1.0);

    unsafe {
        spm_result_free(res);
        spm_config_free(cfg);
        spm_dataset_free(data);
    }
}

#[test]
fn dataset_from_buffers_and_errors() {
    let x = [1.0, 0.0, 2.0, 1.0, 0.0, 3.0];
    let s = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let mut data = ptr::null_mut();
    assert_eq!(
        unsafe { spm_dataset_new(3, 2, x.as_ptr(), s.as_ptr(), ptr::null(), &mut data) },
        SpmStatus::Ok
    );
    let mut buf = [0i64; 3];
    assert_eq!(unsafe { spm_dataset_labels(data, buf.as_mut_ptr(), 3) }, SpmStatus::MissingLabels);
    unsafe { spm_dataset_free(data) };

    let st = unsafe { spm_dataset_new(3, 2, ptr::null(), s.as_ptr(), ptr::null(), &mut data) };
    assert_eq!(st, SpmStatus::NullPointer);
    assert!(last_error().contains("expression"));

    let nan = [f64::NAN, 1.0, 1.0, 1.0, 1.0, 1.0];
    let st = unsafe { spm_dataset_new(3, 2, nan.as_ptr(), s.as_ptr(), ptr::null(), &mut data) };
    assert_eq!(st, SpmStatus::InvalidArgument);
}

#[test]
fn config_keys_are_checked() {
    let cfg = spm_config_new();
    let set = |k: &str, v: &str| {
        let (k, v) = (CString::new(k).unwrap(), CString::new(v).unwrap());
        unsafe { spm_config_set(cfg, k.as_ptr(), v.as_ptr()) }
    };
    assert_eq!(set("epoch", "3"), SpmStatus::InvalidArgument);
    assert!(last_error().contains("epoch"));
    assert_eq!(set("epochs", "\"many\""), SpmStatus::InvalidArgument);
    assert_eq!(set("heads", "3"), SpmStatus::Ok);
    assert_eq!(unsafe { spm_config_validate(cfg) }, SpmStatus::InvalidArgument);
    assert!(last_error().contains("heads"));
    assert_eq!(set("heads", "4"), SpmStatus::Ok);
    assert_eq!(unsafe { spm_config_validate(cfg) }, SpmStatus::Ok);
    assert!(spm_last_error().is_null());

    let missing = CString::new("/nonexistent/spm.toml").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { spm_config_load(missing.as_ptr(), &mut out) }, SpmStatus::Io);
    assert!(out.is_null());
    unsafe { spm_config_free(cfg) };
}

#[test]
fn ari_length_and_null_checks() {
    let a = [0i64, 0, 1, 1];
    let b = [1i64, 1, 0, 0];
    let mut out = 0.0;
    assert_eq!(unsafe { spm_ari(a.as_ptr(), b.as_ptr(), 4, &mut out) }, SpmStatus::Ok);
    assert_eq!(out, 1.0);
    assert_eq!(unsafe { spm_ari(ptr::null(), b.as_ptr(), 4, &mut out) }, SpmStatus::NullPointer);
    assert_eq!(unsafe { spm_ari(a.as_ptr(), b.as_ptr(), 4, ptr::null_mut()) }, SpmStatus::NullPointer);
}

#[test]
fn header_declares_every_export() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/spmagic.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "spmagic.h"

int main(void) {
    int64_t a[6] = {0, 0, 1, 1, 2, 2};
    int64_t b[6] = {5, 5, 7, 7, 9, 9};
    double ari = 0.0;
    if (spm_ari(a, b, 6, &ari) != SPM_STATUS_OK) return 1;
    SpmDataset *data = NULL;
    if (spm_dataset_simulate(40, 8, 2, 2.0, 0.2, 1, 3, &data) != SPM_STATUS_OK) return 2;
    SpmConfig *cfg = spm_config_new();
    if (spm_config_set(cfg, "epochs", "2") != SPM_STATUS_OK) return 3;
    SpmResult *res = NULL;
    if (spm_impute(data, cfg, &res) != SPM_STATUS_OK) {
        fprintf(stderr, "%s\n", spm_last_error());
        return 4;
    }
    size_t n = 0, g = 0;
    spm_result_shape(res, &n, &g);
    if (spm_config_set(cfg, "nope", "1") != SPM_STATUS_INVALID_ARGUMENT) return 5;
    printf("%.3f %zu %zu\n", ari, n, g);
    spm_result_free(res);
    spm_config_free(cfg);
    spm_dataset_free(data);
    return 0;
}
"#;

/// Compiles and runs a C client against the header and the static library.
#[test]
fn c_client_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let test_exe = std::env::current_exe().unwrap();
    let profile_dir = test_exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libspmagic_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("client");
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1.000 40 8");
}
