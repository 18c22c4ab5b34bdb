use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn specs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs")
}

fn fragwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fragwave"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn spec(name: &str) -> String {
    specs().join(name).display().to_string()
}

fn path(dir: &TempDir, sub: &str) -> String {
    dir.path().join(sub).display().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn write_spec(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let tmp = TempDir::new().unwrap();
    let b = spec("binary_half.json");
    let mut outputs = Vec::new();
    for (sub, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out = path(&tmp, sub);
        let r = fragwave(&[
            "simulate",
            "--spec",
            &b,
            "--x",
            "1",
            "--c",
            "1",
            "--trials",
            "1000",
            "--seed",
            "7",
            "--threads",
            threads,
            "--out",
            &out,
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        outputs.push(fs::read(tmp.path().join(sub).join("trials.csv")).unwrap());
        assert_eq!(manifest(&tmp.path().join(sub))["seed"], 7);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with("trial_id,outcome,extinction_time,peak_blocks,events\n"));
    assert_eq!(text.lines().count(), 1001);
}

#[test]
fn scan_has_sixteen_rows_bracketing_the_critical_speed() {
    let tmp = TempDir::new().unwrap();
    let out = path(&tmp, "scan");
    let r = fragwave(&[
        "scan",
        "--spec",
        &spec("binary_half.json"),
        "--x",
        "1",
        "--c-min",
        "0.05",
        "--c-max",
        "0.8",
        "--steps",
        "16",
        "--trials",
        "500",
        "--out",
        &out,
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(tmp.path().join("scan/scan.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 16);
    let critical = manifest(&tmp.path().join("scan"))["params"]["critical_speed"]
        .as_f64()
        .unwrap();
    assert!((critical - 0.2589).abs() < 1e-3);
    assert!(rows[0][0] < critical && critical < rows[15][0]);
    assert_eq!(rows[0][1], 1.0);
    assert!(rows[15][1] < 0.2);
}

#[test]
fn critical_reports_and_scales() {
    let tmp = TempDir::new().unwrap();
    let doubled = write_spec(
        &tmp,
        "doubled.json",
        r#"{"name": "doubled", "atoms": [{"weight": 2.0, "fragments": [0.5, 0.5]}]}"#,
    );
    let mut found = Vec::new();
    for (sub, s) in [("one", spec("binary_half.json")), ("two", doubled)] {
        let r = fragwave(&["critical", "--spec", &s, "--out", &path(&tmp, sub)]);
        assert!(r.status.success());
        let m = manifest(&tmp.path().join(sub));
        found.push((
            m["params"]["critical_exponent"].as_f64().unwrap(),
            m["params"]["critical_speed"].as_f64().unwrap(),
        ));
        let table = fs::read_to_string(tmp.path().join(sub).join("critical.csv")).unwrap();
        assert!(table.starts_with("p,phi,phi_prime,c_p\n"));
    }
    assert!((found[0].0 - 1.421).abs() < 0.005);
    assert!((found[0].1 - 0.2589).abs() < 0.001);
    assert!((found[1].0 - found[0].0).abs() < 1e-8);
    assert!((found[1].1 - 2.0 * found[0].1).abs() < 1e-8);
}

#[test]
fn single_fragment_spec_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let bad = write_spec(
        &tmp,
        "single.json",
        "{\n  \"name\": \"single\",\n  \"atoms\": [\n    { \"weight\": 1.0, \"fragments\": [1.0] }\n  ]\n}\n",
    );
    let r = fragwave(&["critical", "--spec", &bad, "--out", &path(&tmp, "out")]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("s₂"), "{err}");
    assert!(err.contains("single.json:4:"), "{err}");
    assert!(err.contains("atoms[0].fragments"), "{err}");
}

#[test]
fn failures_use_the_documented_exit_codes_and_leave_no_files() {
    let tmp = TempDir::new().unwrap();
    let b = spec("binary_half.json");

    let out = path(&tmp, "sub");
    let r = fragwave(&["wave", "--spec", &b, "--c", "0.2", "--out", &out]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("subcritical"));

    let out = path(&tmp, "tight");
    let r = fragwave(&[
        "wave", "--spec", &b, "--c", "1", "--tol", "1e-9", "--out", &out,
    ]);
    assert_eq!(
        r.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    assert_eq!(fs::read_dir(tmp.path().join("tight")).unwrap().count(), 0);

    let r = fragwave(&[
        "simulate",
        "--spec",
        &b,
        "--x",
        "-1",
        "--c",
        "1",
        "--out",
        &path(&tmp, "neg"),
    ]);
    assert_eq!(r.status.code(), Some(1));
    let r = fragwave(&[
        "simulate",
        "--x",
        "1",
        "--c",
        "1",
        "--out",
        &path(&tmp, "nospec"),
    ]);
    assert_eq!(r.status.code(), Some(1));
    let r = fragwave(&["simulate", "--spec", &b, "--x", "1"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn wave_writes_all_tables() {
    let tmp = TempDir::new().unwrap();
    let out = path(&tmp, "w");
    let r = fragwave(&[
        "wave",
        "--spec",
        &spec("binary_half.json"),
        "--c",
        "1",
        "--validate",
        "0.5,1",
        "--trials",
        "1000",
        "--out",
        &out,
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let dir = tmp.path().join("w");
    for (file, header) in [
        ("wave.csv", "x,f"),
        ("residual.csv", "x,residual"),
        ("scale.csv", "x,W"),
        ("crossval.csv", "x,f_solver,phi_mc,se,pass"),
    ] {
        let text = fs::read_to_string(dir.join(file)).unwrap();
        assert_eq!(text.lines().next(), Some(header));
        assert!(text.lines().count() > 2);
    }
    let cross = fs::read_to_string(dir.join("crossval.csv")).unwrap();
    assert!(
        cross.lines().skip(1).all(|l| l.ends_with(",true")),
        "{cross}"
    );
    let m = manifest(&dir);
    assert_eq!(m["subcommand"], "wave");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 4);
}

#[test]
fn replay_reproduces_outputs() {
    let tmp = TempDir::new().unwrap();
    let first = path(&tmp, "first");
    let r = fragwave(&[
        "simulate",
        "--spec",
        &spec("lossy_quarter.json"),
        "--x",
        "0.5",
        "--c",
        "0.9",
        "--trials",
        "300",
        "--seed",
        "0x2a",
        "--out",
        &first,
    ]);
    assert!(r.status.success());
    let second = path(&tmp, "second");
    let manifest_path = tmp.path().join("first/manifest.json").display().to_string();
    let r = fragwave(&["replay", &manifest_path, "--out", &second]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for file in ["trials.csv", "estimate.csv"] {
        assert_eq!(
            fs::read(tmp.path().join("first").join(file)).unwrap(),
            fs::read(tmp.path().join("second").join(file)).unwrap()
        );
    }
    assert_eq!(manifest(&tmp.path().join("second"))["seed"], 42);
}

#[test]
fn quick_verification_passes() {
    let tmp = TempDir::new().unwrap();
    let out = path(&tmp, "v");
    let r = fragwave(&[
        "verify",
        "--spec",
        &spec("binary_half.json"),
        "--budget",
        "quick",
        "--out",
        &out,
    ]);
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert_eq!(r.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 8);
    let table = fs::read_to_string(tmp.path().join("v/verify.csv")).unwrap();
    assert_eq!(table.lines().count(), 9);
}
