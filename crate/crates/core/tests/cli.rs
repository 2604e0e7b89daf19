use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn mvslab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvslab"))
        .args(args)
        .env("MVSLAB_OUT", out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mvslab(tmp.path(), &["simulate", "--config", "missing.json"]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(text(&o).contains("missing.json"));
}

#[test]
fn unknown_subcommand_and_bad_flags_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&mvslab(tmp.path(), &["frobnicate"])), 2);
    let c = fixture("contractive.json");
    let c = c.to_str().unwrap();
    assert_eq!(code(&mvslab(tmp.path(), &["simulate", "--config", c, "--format", "xml"])), 2);
    assert_eq!(code(&mvslab(tmp.path(), &["simulate", "--config", c, "--threads", "0"])), 2);
    assert_eq!(code(&mvslab(tmp.path(), &["--version"])), 0);
}

#[test]
fn config_errors_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let c = fixture("contractive.json");
    let o = mvslab(tmp.path(), &["simulate", "--config", c.to_str().unwrap(), "--set", "sim.dtt=0.1"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("sim.dtt"), "{}", text(&o));
    let o = mvslab(tmp.path(), &["simulate", "--config", c.to_str().unwrap(), "--set", "sim.dt=-1"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("sim.dt"), "{}", text(&o));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"model\": {\n    \"builtin\": \"zero\",\n  }\n}\n").unwrap();
    let o = mvslab(tmp.path(), &["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("line 4"), "{}", text(&o));
}

#[test]
fn expanding_drift_fails_check_lyapunov() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mvslab(tmp.path(), &["check-lyapunov", "--config", fixture("expanding.json").to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("FAIL  certificate"), "{}", text(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("lyapunov.json")).unwrap()).unwrap();
    assert_eq!(report["certificate"]["pass"], false);
    assert_eq!(report["derivatives"]["pass"], true);
}

#[test]
fn example_model_passes_check_lyapunov_and_assumptions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture("example61_lyapunov.json");
    let o = mvslab(tmp.path(), &["check-lyapunov", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let o = mvslab(tmp.path(), &["check-assumptions", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(tmp.path().join("assumptions.json").exists());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let c = fixture("contractive.json");
    let mut dirs = Vec::new();
    for threads in ["1", "2", "3"] {
        let tmp = tempfile::tempdir().unwrap();
        for cmd in ["simulate", "diagnose"] {
            let o = mvslab(tmp.path(), &[cmd, "--config", c.to_str().unwrap(), "--threads", threads]);
            assert_eq!(code(&o), 0, "{}", text(&o));
        }
        dirs.push(tmp);
    }
    for name in ["ensemble.csv", "moments_p1.csv", "moments_p2.csv", "lyapunov.csv", "diagnose.json", "manifest.json"] {
        let a = std::fs::read_to_string(dirs[0].path().join(name)).unwrap();
        for d in &dirs[1..] {
            assert_eq!(a, std::fs::read_to_string(d.path().join(name)).unwrap(), "{name} differs");
        }
    }
}

#[test]
fn manifest_hashes_files_and_reproduces_the_run() {
    let first = tempfile::tempdir().unwrap();
    let c = fixture("contractive.json");
    let o = mvslab(first.path(), &["simulate", "--config", c.to_str().unwrap(), "--format", "packed"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let m = manifest(first.path());
    assert_eq!(m["tool"], "mvslab");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config"]["sim"]["n_particles"], 50);
    let files = m["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f["path"] == "ensemble.mvse"));
    for f in files {
        let bytes = std::fs::read(first.path().join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
    }
    let packed = std::fs::read(first.path().join("ensemble.mvse")).unwrap();
    assert!(packed.starts_with(b"MVSELAB\0ENSEMBLE"));

    let second = tempfile::tempdir().unwrap();
    let again = first.path().join("manifest.json");
    let o = mvslab(second.path(), &["simulate", "--config", again.to_str().unwrap(), "--format", "packed"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(packed, std::fs::read(second.path().join("ensemble.mvse")).unwrap());
    assert_eq!(m["files"], manifest(second.path())["files"]);
}

#[test]
fn diagnose_reads_a_stored_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let c = fixture("contractive.json");
    assert_eq!(code(&mvslab(tmp.path(), &["simulate", "--config", c.to_str().unwrap()])), 0);
    let stored = tmp.path().join("ensemble.csv");
    let fresh = tempfile::tempdir().unwrap();
    let o = mvslab(fresh.path(), &["diagnose", "--config", c.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let from_file = tempfile::tempdir().unwrap();
    let o = mvslab(
        from_file.path(),
        &["diagnose", "--config", c.to_str().unwrap(), "--ensemble", stored.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("PASS  envelope"), "{}", text(&o));
    assert!(text(&o).contains("PASS  supermartingale"), "{}", text(&o));
    for name in ["moments_p2.csv", "lyapunov.csv"] {
        assert_eq!(
            std::fs::read(fresh.path().join(name)).unwrap(),
            std::fs::read(from_file.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let svg = std::fs::read_to_string(from_file.path().join("moments.svg")).unwrap();
    assert!(svg.contains("viewBox=\"0 0 800 500\"") && svg.contains("stroke-dasharray"));
}

#[test]
fn blowup_exits_three_with_step() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mvslab(tmp.path(), &["simulate", "--config", fixture("blowup.json").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", text(&o));
    assert!(text(&o).contains("step"), "{}", text(&o));
}

#[test]
fn out_of_range_certificate_set_via_override_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mvslab(
        tmp.path(),
        &[
            "check-lyapunov",
            "--config",
            fixture("expanding.json").to_str().unwrap(),
            "--set",
            "certificate.alpha=-1",
        ],
    );
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(text(&o).contains("certificate"), "{}", text(&o));
}
