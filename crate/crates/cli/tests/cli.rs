use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nse_lab::wsu::ConstantsTable;

const TINY: &str = r#"{"torus_n": 16, "l_max": 6, "n_radial": 16, "n_frames": 32, "dt": 0.03}"#;

fn lab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nse-lab"))
        .args(args)
        .current_dir(cwd)
        .env("NSE_LAB_THREADS", "1")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn dns(dir: &Path, out: &str, amplitude: &str) -> PathBuf {
    let o = lab(
        &["dns-generate", "--initial", "random", "--amplitude", amplitude, "--seed", "11", "--resolution", TINY, "--out", out],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join(out).join("field.nsf")
}

fn write_table(dir: &Path, name: &str, t: &ConstantsTable) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(t).unwrap()).unwrap();
    p
}

#[test]
fn malformed_config_is_a_schema_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"stage": {"accept": {}}, "unknown": true}"#,
        r#"{"stage": {"slice": {}}}"#,
        r#"{"resolution": "huge", "stage": {"accept": {}}}"#,
        "{ not json",
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("bad{i}.json"));
        std::fs::write(&cfg, text).unwrap();
        let o = lab(&["slice", "--config", cfg.to_str().unwrap(), "--out", "o"], dir.path());
        assert_eq!(code(&o), 2, "{text}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!dir.path().join("o").exists());
    }
    let o = lab(&["slice", "--out", "o"], dir.path());
    assert_eq!(code(&o), 2);
    let o = lab(&["no-such-command"], dir.path());
    assert_eq!(code(&o), 2);
    let o = lab(&["slice", "--field", "missing.nsf", "--out", "o"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("o").exists());
}

#[test]
fn config_for_another_stage_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"stage": {"constants-estimate": {"samples": 5}}}"#).unwrap();
    let o = lab(&["accept", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn repeat_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dns(dir.path(), "a", "0.3");
    let b = dns(dir.path(), "b", "0.3");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ra = std::fs::read(dir.path().join("a/report.json")).unwrap();
    assert_eq!(ra, std::fs::read(dir.path().join("b/report.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["command"], "dns-generate");
    assert!(report["config"].get("out").is_none());
    assert!(dir.path().join("a/timings.json").exists());
    assert!(std::fs::read(&a).unwrap().starts_with(b"NSF1 "));
}

#[test]
fn config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("dns.json");
    let text = format!(
        r#"{{"seed": 3, "resolution": {{"custom": {TINY}}}, "out": "from-file",
            "stage": {{"dns-generate": {{"initial": {{"kind": "taylor_green", "amplitude": 0.2}}}}}}}}"#
    );
    std::fs::write(&cfg, text).unwrap();
    let o = lab(&["dns-generate", "--config", "dns.json", "--seed", "4", "--amplitude", "0.1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("from-file/report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 4);
    assert_eq!(report["config"]["stage"]["dns-generate"]["initial"]["amplitude"], 0.1);
    assert_eq!(report["resolution"]["l_max"], 6);
}

#[test]
fn pipeline_stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let field = dns(d, "dns", "0.3");
    let f = field.to_str().unwrap();
    let o = lab(&["slice", "--field", f, "--out", "slice", "--resolution", TINY], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = lab(
        &["stokes-solve", "--boundary", "slice/boundary.nsf", "--initial", "slice/initial.nsf", "--out", "stokes", "--resolution", TINY],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("stokes/solution.nsf").exists());
    let o = lab(&["lift", "--field", f, "--out", "lift", "--resolution", TINY], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // A generous table: Ubar is gated and Picard converges.
    let good = write_table(d, "good.json", &ConstantsTable::new(0.05, 0.04, 0.3, 0.25).unwrap());
    let o = lab(&["mild-solve", "--ubar", "lift/ubar.nsf", "--constants", good.to_str().unwrap(), "--out", "mild"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("mild/report.json")).unwrap()).unwrap();
    assert_eq!(report["constants"]["c0"], 0.05);
    assert!(report["inputs"].as_array().unwrap().len() == 2);

    // Large C0 shrinks the Picard gate below ||Ubar||: a numerical error.
    let tight = write_table(d, "tight.json", &ConstantsTable::new(10.0, 10.0, 0.3, 0.25).unwrap());
    let o = lab(&["mild-solve", "--ubar", "lift/ubar.nsf", "--constants", tight.to_str().unwrap(), "--out", "m2"], d);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mild-solve"));

    // A tiny K opens every gate but makes the critical-norm bound fail.
    let loose = write_table(d, "loose.json", &ConstantsTable::new(0.05, 0.04, 1e-3, 0.25).unwrap());
    let o = lab(&["epsreg-run", "--fields", f, "--constants", loose.to_str().unwrap(), "--out", "eps"], d);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("eps/epsreg.csv")).unwrap();
    assert!(csv.starts_with("field,gated,epsilon"));
    assert_eq!(csv.lines().count(), 2);
}
