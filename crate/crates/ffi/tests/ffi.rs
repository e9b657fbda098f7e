use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use slipflow_ffi::*;

const CONFIG: &str = r#"
[domain]
length_x = 6.283185307179586
modes_x = 2
nodes_y = 12
friction_alpha = 1.0
viscosity = 0.5

[basis]
size = 4

[time]
horizon = 0.1
dt = 0.01

[initial]
amplitude = 0.5

[noise]
mult_gain = [0.2]
"#;

fn config(text: &str) -> (SlipflowStatus, *mut SlipflowConfig) {
    let c = CString::new(text).unwrap();
    let mut out = ptr::null_mut();
    let s = unsafe { slipflow_config_from_toml(c.as_ptr(), &mut out) };
    (s, out)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(slipflow_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(slipflow_version()) };
    assert_eq!(v.to_str().unwrap(), slipflow::config::VERSION);
}

#[test]
fn bad_config_sets_status_and_message() {
    let (s, cfg) = config("[time]\nhorizon = 1.0\ndt = -1.0\n");
    assert_eq!(s, SlipflowStatus::InvalidConfig);
    assert!(cfg.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = ptr::null_mut();
    let s = unsafe { slipflow_config_from_toml(ptr::null(), &mut out) };
    assert_eq!(s, SlipflowStatus::NullPointer);
    let s = unsafe { slipflow_model_new(ptr::null(), &mut ptr::null_mut()) };
    assert_eq!(s, SlipflowStatus::NullPointer);
    unsafe {
        slipflow_config_free(ptr::null_mut());
        slipflow_trajectory_free(ptr::null_mut());
        assert_eq!(slipflow_basis_len(ptr::null()), 0);
    }
}

#[test]
fn hash_matches_core() {
    let (s, cfg) = config(CONFIG);
    assert_eq!(s, SlipflowStatus::Ok);
    let mut buf = [0 as std::ffi::c_char; 65];
    unsafe {
        assert_eq!(
            slipflow_config_hash(cfg, buf.as_mut_ptr(), 10),
            SlipflowStatus::BufferTooSmall
        );
        assert_eq!(
            slipflow_config_hash(cfg, buf.as_mut_ptr(), buf.len()),
            SlipflowStatus::Ok
        );
        let h = CStr::from_ptr(buf.as_ptr()).to_str().unwrap().to_owned();
        assert_eq!(
            h,
            slipflow::config::RunConfig::from_toml(CONFIG)
                .unwrap()
                .hash()
        );
        slipflow_config_free(cfg);
    }
}

#[test]
fn basis_and_simulation_round_trip() {
    let (_, cfg) = config(CONFIG);
    unsafe {
        let mut basis = ptr::null_mut();
        assert_eq!(slipflow_basis_build(cfg, &mut basis), SlipflowStatus::Ok);
        let n = slipflow_basis_len(basis);
        assert_eq!(n, 4);
        let mut ev = vec![0.0; n];
        assert_eq!(
            slipflow_basis_eigenvalues(basis, ev.as_mut_ptr(), 2),
            SlipflowStatus::BufferTooSmall
        );
        assert_eq!(
            slipflow_basis_eigenvalues(basis, ev.as_mut_ptr(), n),
            SlipflowStatus::Ok
        );
        assert!(ev.windows(2).all(|w| w[0] <= w[1]) && ev[0] > 0.0);

        let mut model = ptr::null_mut();
        assert_eq!(slipflow_model_new(cfg, &mut model), SlipflowStatus::Ok);
        assert_eq!(slipflow_model_dim(model), 4);
        assert_eq!(slipflow_model_param_dim(model), 2);
        let params = [0.2, -0.1];
        let mut ctrl = ptr::null_mut();
        assert_eq!(
            slipflow_control_from_params(model, params.as_ptr(), 2, &mut ctrl),
            SlipflowStatus::Ok
        );
        let mut tn = 0.0;
        assert_eq!(
            slipflow_control_trace_norm(ctrl, 0.05, &mut tn),
            SlipflowStatus::Ok
        );
        assert!(tn > 0.0);
        assert_eq!(
            slipflow_control_trace_norm(ctrl, 5.0, &mut tn),
            SlipflowStatus::OutsideHorizon
        );

        let run = || {
            let mut t = ptr::null_mut();
            assert_eq!(
                slipflow_simulate_path(model, ctrl, 3, 1, &mut t),
                SlipflowStatus::Ok
            );
            let len = slipflow_trajectory_len(t);
            let mut e = vec![0.0; len];
            let mut beta = vec![0.0; 4];
            assert_eq!(
                slipflow_trajectory_energy(t, e.as_mut_ptr(), len),
                SlipflowStatus::Ok
            );
            assert_eq!(
                slipflow_trajectory_final_state(t, beta.as_mut_ptr(), 4),
                SlipflowStatus::Ok
            );
            assert!(!slipflow_trajectory_blew_up(t));
            slipflow_trajectory_free(t);
            (e, beta)
        };
        let (e1, b1) = run();
        let (e2, b2) = run();
        assert_eq!(e1.len(), 11);
        assert_eq!(e1, e2);
        assert_eq!(b1, b2);

        let mut wrong = ptr::null_mut();
        assert_eq!(
            slipflow_control_from_params(model, params.as_ptr(), 1, &mut wrong),
            SlipflowStatus::Dimension
        );
        assert!(wrong.is_null());

        slipflow_control_free(ctrl);
        slipflow_model_free(model);
        slipflow_basis_free(basis);
        slipflow_config_free(cfg);
    }
}

fn find_static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    [
        deps.parent()?.join("libslipflow_ffi.a"),
        deps.join("libslipflow_ffi.a"),
    ]
    .into_iter()
    .find(|p| p.exists())
}

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = manifest.join("include/slipflow.h");
    assert!(header.exists(), "header not generated");
    let (Some(lib), Ok(_)) = (
        find_static_lib(),
        Command::new("cc").arg("--version").output(),
    ) else {
        eprintln!("no C toolchain or static library; skipping link test");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("c_smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c_smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "C smoke program failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("11 "));
    assert_eq!(lines[1], "1 1");
}
