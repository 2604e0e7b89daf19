use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use mvslab_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = mvs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const SIM: &str = r#"{"n_particles": 40, "n_paths": 6, "dt": 0.01, "t_end": 2.0, "seed": 9,
    "init": {"kind": "point", "x0": [2.0]}, "record_stride": 10}"#;

#[test]
fn simulate_and_read_back_through_handles() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(mvs_model_contractive(1.0, 1, &mut model), MvsStatus::Ok);
        let label = CStr::from_ptr(mvs_model_label(model)).to_str().unwrap();
        assert_eq!(label, "contractive(eps=1)");
        let mut ens = ptr::null_mut();
        assert_eq!(mvs_simulate(model, c(SIM).as_ptr(), &mut ens), MvsStatus::Ok);
        let mut shape = MvsEnsembleShape::default();
        assert_eq!(mvs_ensemble_shape(ens, &mut shape), MvsStatus::Ok);
        assert_eq!((shape.dim, shape.n_particles, shape.n_paths, shape.n_times), (1, 40, 6, 21));

        let mut times = vec![0.0; shape.n_times];
        assert_eq!(mvs_ensemble_times(ens, times.as_mut_ptr(), times.len()), MvsStatus::Ok);
        assert_eq!(times[0], 0.0);
        assert!((times[20] - 2.0).abs() < 1e-12);
        let mut frame = vec![0.0; 40];
        assert_eq!(mvs_ensemble_frame(ens, 0, 0, frame.as_mut_ptr(), 40), MvsStatus::Ok);
        assert!(frame.iter().all(|&x| x == 2.0));
        assert_eq!(mvs_ensemble_frame(ens, 6, 0, frame.as_mut_ptr(), 40), MvsStatus::InvalidArgument);

        let mut values = vec![0.0; 21];
        let mut se = vec![0.0; 21];
        assert_eq!(mvs_moment_curve(ens, 2, values.as_mut_ptr(), se.as_mut_ptr(), 21), MvsStatus::Ok);
        assert_eq!(values[0], 4.0);
        assert_eq!(se[0], 0.0);
        assert!(values[20] < 1.0);

        let dir = tempfile::tempdir().unwrap();
        for (format, name) in [(MvsFormat::Csv, "e.csv"), (MvsFormat::Packed, "e.mvse")] {
            let path = c(dir.path().join(name).to_str().unwrap());
            assert_eq!(mvs_ensemble_write(ens, path.as_ptr(), format), MvsStatus::Ok);
            let mut back = ptr::null_mut();
            assert_eq!(mvs_ensemble_read(path.as_ptr(), &mut back), MvsStatus::Ok);
            let mut again = vec![0.0; 21];
            assert_eq!(mvs_moment_curve(back, 2, again.as_mut_ptr(), ptr::null_mut(), 21), MvsStatus::Ok);
            assert_eq!(again, values);
            mvs_ensemble_free(back);
        }

        let mut env = MvsEnvelopeResult::default();
        let cert = c(r#"{"mode": "H21", "alpha": 1.0, "a1": 1.0, "a2": 1.0}"#);
        assert_eq!(mvs_envelope_check(ens, cert.as_ptr(), &mut env), MvsStatus::Ok);
        assert!(env.pass && !env.vacuous && env.n_violations == 0);

        mvs_ensemble_free(ens);
        mvs_model_free(model);
    }
}

#[test]
fn certificate_audit_matches_the_library() {
    unsafe {
        let mut model = ptr::null_mut();
        let mut v = ptr::null_mut();
        assert_eq!(mvs_model_example61(0.25, 50, &mut model), MvsStatus::Ok);
        assert_eq!(mvs_lyapunov_mean_centered(0.25, 1, &mut v), MvsStatus::Ok);
        let cert = c(r#"{"mode": "H22", "alpha": 1.5, "a1": 0.4375, "a2": 2.125, "M1": 1.2018608631649255}"#);
        let mut r = MvsCertificateResult::default();
        assert_eq!(mvs_check_certificate(v, model, cert.as_ptr(), 100, 7, &mut r), MvsStatus::Ok);
        assert!(r.pass && !r.vacuous, "{r:?}");
        assert_eq!(r.violations, 0);
        assert!(r.worst_margin <= 1.2018608631649255 + 1e-9);

        let mut expanding = ptr::null_mut();
        let json = c(r#"{"expr_drift": "x", "expr_diffusion": "0"}"#);
        assert_eq!(mvs_model_from_json(json.as_ptr(), &mut expanding), MvsStatus::Ok);
        let mut quad = ptr::null_mut();
        assert_eq!(mvs_lyapunov_quad(1, &mut quad), MvsStatus::Ok);
        let h21 = c(r#"{"mode": "H21", "alpha": 1.0, "a1": 1.0, "a2": 1.0}"#);
        assert_eq!(mvs_check_certificate(quad, expanding, h21.as_ptr(), 20, 1, &mut r), MvsStatus::Ok);
        assert!(!r.pass);

        let x = [1.0];
        let atoms = [1.0];
        let mut g = 0.0;
        assert_eq!(mvs_generator(quad, expanding, x.as_ptr(), atoms.as_ptr(), 1, &mut g), MvsStatus::Ok);
        assert_eq!(g, 2.0);
        let mut val = 0.0;
        assert_eq!(mvs_lyapunov_value(quad, x.as_ptr(), atoms.as_ptr(), 1, &mut val), MvsStatus::Ok);
        assert_eq!(val, 1.0);

        for h in [quad, v] {
            mvs_lyapunov_free(h);
        }
        mvs_model_free(model);
        mvs_model_free(expanding);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        mvs_clear_error();
        assert!(mvs_last_error().is_null());
        let mut model = ptr::null_mut();
        assert_eq!(mvs_model_example61(0.25, 0, &mut model), MvsStatus::InvalidArgument);
        assert!(last_error().contains("l positive"));
        assert_eq!(mvs_model_contractive(1.0, 1, ptr::null_mut()), MvsStatus::NullPointer);
        assert_eq!(mvs_model_from_json(c("{\"builtin\": \"nope\"}").as_ptr(), &mut model), MvsStatus::InvalidArgument);
        assert!(last_error().contains("nope"));
        assert_eq!(mvs_model_from_json(c("not json").as_ptr(), &mut model), MvsStatus::InvalidArgument);
        assert_eq!(mvs_model_from_json(ptr::null(), &mut model), MvsStatus::NullPointer);

        assert_eq!(mvs_model_contractive(1.0, 1, &mut model), MvsStatus::Ok);
        let mut ens = ptr::null_mut();
        let bad = c(&SIM.replace("\"dt\": 0.01", "\"dt\": -1"));
        assert_eq!(mvs_simulate(model, bad.as_ptr(), &mut ens), MvsStatus::InvalidArgument);
        assert!(last_error().contains("sim.dt"));
        assert!(ens.is_null());
        let mut q2 = ptr::null_mut();
        assert_eq!(mvs_lyapunov_quad(2, &mut q2), MvsStatus::Ok);
        let mut g = 0.0;
        let x = [0.0, 0.0];
        assert_eq!(mvs_generator(q2, model, x.as_ptr(), x.as_ptr(), 1, &mut g), MvsStatus::Structural);
        mvs_lyapunov_free(q2);
        mvs_model_free(model);
        mvs_model_free(ptr::null_mut());
        mvs_ensemble_free(ptr::null_mut());
    }
}

#[test]
fn blown_up_runs_report_integration_failure() {
    unsafe {
        let mut model = ptr::null_mut();
        let json = c(r#"{"builtin": "linear", "a": 200.0, "s": 0.0}"#);
        assert_eq!(mvs_model_from_json(json.as_ptr(), &mut model), MvsStatus::Ok);
        let sim = c(r#"{"n_particles": 4, "n_paths": 2, "dt": 0.01, "t_end": 1.0, "seed": 1,
            "init": {"kind": "point", "x0": [1.0]}}"#);
        let mut ens = ptr::null_mut();
        assert_eq!(mvs_simulate(model, sim.as_ptr(), &mut ens), MvsStatus::Integration);
        assert!(last_error().contains("step"));
        mvs_model_free(model);
    }
}

#[test]
fn wasserstein_on_the_line() {
    let a = [0.0, 1.0];
    let b = [2.0, 3.0];
    let mut w = 0.0;
    unsafe {
        assert_eq!(mvs_wasserstein1(1, a.as_ptr(), 2, b.as_ptr(), 2, &mut w), MvsStatus::Ok);
    }
    assert_eq!(w, 2.0);
}

#[test]
fn run_command_in_process() {
    let args: Vec<CString> = ["mvslab", "simulate", "--config", "/nonexistent.json"].iter().map(|s| c(s)).collect();
    let ptrs: Vec<_> = args.iter().map(|a| a.as_ptr()).collect();
    assert_eq!(unsafe { mvs_run_command(ptrs.len() as i32, ptrs.as_ptr()) }, 2);
    assert_eq!(unsafe { mvs_run_command(0, ptr::null()) }, 2);
    let v = unsafe { CStr::from_ptr(mvs_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn target_profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

/// Compiles the C smoke program against the generated header and the static
/// library, then runs it. Skipped when no C compiler or archive is present.
#[test]
fn c_program_links_and_runs() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/mvslab.h");
    assert!(header.exists(), "header not generated");
    let lib = target_profile_dir().join("libmvslab_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || std::process::Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "smoke exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
