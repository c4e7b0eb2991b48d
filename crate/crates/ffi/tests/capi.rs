use std::ffi::{CStr, CString};
use std::ptr;

use tlm_ffi::*;

/// Two linear cells split at `f0 = 0` with disjoint response ranges.
fn two_cells(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut features = Vec::with_capacity(2 * n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let a = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
        let b = ((i * 37) % n) as f64 / n as f64 - 0.5;
        features.extend([a, b]);
        targets.push(if a <= 0.0 { 1.0 + a + b } else { 10.0 + a - b });
    }
    (features, targets)
}

fn last_error() -> String {
    let msg = tlm_last_error_message();
    assert!(!msg.is_null());
    unsafe { CStr::from_ptr(msg) }.to_string_lossy().into_owned()
}

fn trained() -> *mut TlmModel {
    let (f, y) = two_cells(400);
    let cfg = CString::new("[tree]\nmax_depth = 1\nn_thresholds = 400\n").unwrap();
    let mut model = ptr::null_mut();
    let status = unsafe { tlm_train(f.as_ptr(), y.as_ptr(), 400, 2, cfg.as_ptr(), &mut model) };
    assert_eq!(status, TLM_OK, "{}", last_error());
    model
}

#[test]
fn train_predict_and_free() {
    let model = trained();
    let mut dim = 0;
    assert_eq!(unsafe { tlm_model_dim(model, &mut dim) }, TLM_OK);
    assert_eq!(dim, 2);

    let (mut value, mut leaf) = (0.0, 0u64);
    let f = [-0.5, 0.2];
    assert_eq!(
        unsafe { tlm_model_predict(model, f.as_ptr(), 2, TLM_ROUTING_HARD, 0.0, &mut value, &mut leaf) },
        TLM_OK
    );
    assert!((value - 0.7).abs() < 1e-3, "{value}");
    assert_eq!(leaf, 1);

    let (f, y) = two_cells(50);
    let mut values = vec![0.0; 50];
    let mut leaves = vec![0u64; 50];
    for mode in [
        TLM_ROUTING_HARD,
        TLM_ROUTING_SOFT,
        TLM_ROUTING_SOFT_FULL,
        TLM_ROUTING_ORACLE,
    ] {
        let status = unsafe {
            tlm_model_predict_batch(
                model,
                f.as_ptr(),
                50,
                2,
                mode,
                y.as_ptr(),
                values.as_mut_ptr(),
                leaves.as_mut_ptr(),
            )
        };
        assert_eq!(status, TLM_OK, "{}", last_error());
        for (i, row) in f.chunks_exact(2).enumerate() {
            let mut single = 0.0;
            unsafe { tlm_model_predict(model, row.as_ptr(), 2, mode, y[i], &mut single, ptr::null_mut()) };
            assert_eq!(single, values[i]);
        }
    }
    unsafe { tlm_model_free(model) };
}

#[test]
fn json_and_file_round_trips_preserve_predictions() {
    let model = trained();
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { tlm_model_to_json(model, &mut text) }, TLM_OK);
    let mut copy = ptr::null_mut();
    assert_eq!(unsafe { tlm_model_from_json(text, &mut copy) }, TLM_OK);
    unsafe { tlm_string_free(text) };

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tlm_model_save(model, path.as_ptr()) }, TLM_OK);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { tlm_model_load(path.as_ptr(), &mut loaded) }, TLM_OK);

    for f in [[0.3, -0.4], [-0.9, 0.9], [0.0, 0.0]] {
        let mut want = 0.0;
        unsafe { tlm_model_predict(model, f.as_ptr(), 2, TLM_ROUTING_SOFT, 0.0, &mut want, ptr::null_mut()) };
        for other in [copy, loaded] {
            let mut got = 0.0;
            unsafe { tlm_model_predict(other, f.as_ptr(), 2, TLM_ROUTING_SOFT, 0.0, &mut got, ptr::null_mut()) };
            assert_eq!(got, want);
        }
    }
    unsafe {
        tlm_model_free(model);
        tlm_model_free(copy);
        tlm_model_free(loaded);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let model = trained();
    let mut value = 0.0;
    let mut out = ptr::null_mut();

    assert_eq!(unsafe { tlm_model_dim(ptr::null(), &mut 0) }, TLM_ERR_NULL);
    assert!(last_error().contains("model"));

    let short = [1.0];
    assert_eq!(
        unsafe {
            tlm_model_predict(
                model,
                short.as_ptr(),
                1,
                TLM_ROUTING_HARD,
                0.0,
                &mut value,
                ptr::null_mut(),
            )
        },
        TLM_ERR_DIMENSION
    );
    let f = [0.0, 0.0];
    assert_eq!(
        unsafe { tlm_model_predict(model, f.as_ptr(), 2, 42, 0.0, &mut value, ptr::null_mut()) },
        TLM_ERR_INVALID_ARGUMENT
    );

    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { tlm_model_load(missing.as_ptr(), &mut out) }, TLM_ERR_IO);
    let garbage = CString::new("{\"format_version\": 1}").unwrap();
    assert_eq!(
        unsafe { tlm_model_from_json(garbage.as_ptr(), &mut out) },
        TLM_ERR_PARSE
    );
    assert!(out.is_null());

    let (f, y) = two_cells(40);
    let bad = CString::new("[tree]\nmin_leaf = 0\n").unwrap();
    assert_eq!(
        unsafe { tlm_train(f.as_ptr(), y.as_ptr(), 40, 2, bad.as_ptr(), &mut out) },
        TLM_ERR_INVALID_ARGUMENT
    );
    let twins: Vec<f64> = f.chunks_exact(2).flat_map(|r| [r[0], r[0]]).collect();
    let singular = CString::new("[tree.fit]\nridge_lambda = 0.0\n").unwrap();
    assert_eq!(
        unsafe { tlm_train(twins.as_ptr(), y.as_ptr(), 40, 2, singular.as_ptr(), &mut out) },
        TLM_ERR_NUMERIC
    );
    unsafe {
        tlm_model_free(model);
        tlm_model_free(ptr::null_mut());
        tlm_string_free(ptr::null_mut());
    }
}

#[test]
fn header_and_static_library_work_from_c() {
    let crate_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    // Integration tests run from target/<profile>/deps; the library sits one up.
    let lib_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let archive = lib_dir.join("libtlm_ffi.a");
    assert!(archive.exists(), "missing {}", archive.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let built = std::process::Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(built.status.success(), "{}", String::from_utf8_lossy(&built.stderr));
    let run = std::process::Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "exit {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8(run.stdout).unwrap();
    let mut parts = stdout.split_whitespace();
    let value: f64 = parts.next().unwrap().parse().unwrap();
    assert!((value - 10.5).abs() < 1e-2, "{stdout}");
    assert_eq!(parts.next(), Some("2"));
}
