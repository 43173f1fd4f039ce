use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use vtada::*;
use vtada_core::adversarial::AdaptationMode;
use vtada_core::train::TrainConfig;

fn last_error() -> String {
    let p = vtada_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

/// A 2-epoch run on a small reference-shaped task.
fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = TrainConfig::reference(AdaptationMode::CdanConcat, 3);
    cfg.schedule.total_epochs = 2;
    cfg.data.n_per_class = 4;
    cfg.data.target_n_per_class = 4;
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, cfg.to_text()).unwrap();
    path
}

#[test]
fn schedules_match_closed_form() {
    let mut v = 0.0;
    assert_eq!(unsafe { vtada_lr_at(0.0, &mut v) }, VtadaStatus::Ok);
    assert_eq!(v, 0.01);
    assert_eq!(unsafe { vtada_lambda_at(0.5, &mut v) }, VtadaStatus::Ok);
    let e = (-5.0f64).exp();
    assert!((v - (1.0 - e) / (1.0 + e)).abs() < 1e-15);
    assert_eq!(unsafe { vtada_lr_at(1.5, &mut v) }, VtadaStatus::Contract);
    assert!(last_error().contains("1.5"), "{}", last_error());
    assert_eq!(unsafe { vtada_lr_at(0.5, ptr::null_mut()) }, VtadaStatus::NullPointer);
}

#[test]
fn train_load_evaluate_features() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cstr(&tiny_config(dir.path()));
    let out = cstr(&dir.path().join("run"));
    let mut trained: *mut VtadaModel = ptr::null_mut();
    assert_eq!(
        unsafe { vtada_train(cfg.as_ptr(), out.as_ptr(), &mut trained) },
        VtadaStatus::Ok
    );

    let ckpt = cstr(&dir.path().join("run/final.ckpt"));
    let mut model: *mut VtadaModel = ptr::null_mut();
    assert_eq!(
        unsafe { vtada_checkpoint_load(ckpt.as_ptr(), &mut model) },
        VtadaStatus::Ok
    );
    assert_eq!(unsafe { vtada_model_num_classes(model) }, 4);
    let m = unsafe { vtada_model_feature_dim(model) };
    assert_eq!(m, 32);

    let mut ds: *mut VtadaDataset = ptr::null_mut();
    assert_eq!(
        unsafe { vtada_dataset_builtin(model, VtadaDomain::Target, &mut ds) },
        VtadaStatus::Ok
    );
    let n = unsafe { vtada_dataset_len(ds) };
    assert_eq!(n, 16);

    let (mut a, mut b) = (0.0, 0.0);
    assert_eq!(unsafe { vtada_evaluate(model, ds, &mut a) }, VtadaStatus::Ok);
    assert_eq!(unsafe { vtada_evaluate(trained, ds, &mut b) }, VtadaStatus::Ok);
    assert_eq!(a.to_bits(), b.to_bits());

    let mut need = 0usize;
    assert_eq!(
        unsafe { vtada_features(model, ds, ptr::null_mut(), 0, &mut need) },
        VtadaStatus::BufferTooSmall
    );
    assert_eq!(need, n * m);
    let mut buf = vec![0.0; need];
    assert_eq!(
        unsafe { vtada_features(model, ds, buf.as_mut_ptr(), buf.len(), &mut need) },
        VtadaStatus::Ok
    );
    assert!(buf.iter().all(|v| v.is_finite()) && buf.iter().any(|&v| v != 0.0));

    unsafe {
        vtada_dataset_free(ds);
        vtada_model_free(model);
        vtada_model_free(trained);
        vtada_model_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut model: *mut VtadaModel = ptr::null_mut();
    let missing = cstr(&dir.path().join("nope.ckpt"));
    assert_eq!(
        unsafe { vtada_checkpoint_load(missing.as_ptr(), &mut model) },
        VtadaStatus::Data
    );
    assert!(model.is_null());

    let garbage = dir.path().join("g.ckpt");
    std::fs::write(&garbage, b"VTCK\x07\0\0\0rest").unwrap();
    let g = cstr(&garbage);
    assert_eq!(
        unsafe { vtada_checkpoint_load(g.as_ptr(), &mut model) },
        VtadaStatus::Checkpoint
    );
    assert!(last_error().contains("version 7"), "{}", last_error());

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "schedule.epochz = 3\n").unwrap();
    let (b, o) = (cstr(&bad), cstr(dir.path()));
    assert_eq!(
        unsafe { vtada_train(b.as_ptr(), o.as_ptr(), &mut model) },
        VtadaStatus::Config
    );
    assert_eq!(
        unsafe { vtada_train(ptr::null(), o.as_ptr(), &mut model) },
        VtadaStatus::NullPointer
    );

    let mut acc = 0.0;
    assert_eq!(
        unsafe { vtada_evaluate(ptr::null(), ptr::null(), &mut acc) },
        VtadaStatus::NullPointer
    );
    assert_eq!(unsafe { vtada_dataset_len(ptr::null()) }, 0);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vtada.h")).unwrap();
    for f in [
        "vtada_last_error_message",
        "vtada_version",
        "vtada_lr_at",
        "vtada_lambda_at",
        "vtada_checkpoint_load",
        "vtada_train",
        "vtada_model_free",
        "vtada_model_feature_dim",
        "vtada_model_num_classes",
        "vtada_dataset_load",
        "vtada_dataset_builtin",
        "vtada_dataset_len",
        "vtada_dataset_free",
        "vtada_evaluate",
        "vtada_features",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct VtadaModel VtadaModel;"));
    assert!(header.contains("VTADA_STATUS_OK = 0"));
    let v = unsafe { CStr::from_ptr(vtada_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
