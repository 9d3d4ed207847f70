use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn kw(dir: &Path, cmd: &str, config: &Value, extra: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, serde_json::to_string_pretty(config).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_kw"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn verdict(dir: &Path) -> String {
    let text = std::fs::read_to_string(dir.join("out/verdict.json")).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    v["verdict"].as_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn homogeneous() -> Value {
    json!({ "density": [{ "to": 1.0, "rho": 1.0 }], "xi_max": 1000.0 })
}

fn two_material(delta: impl Fn(f64) -> f64, cells: usize) -> Value {
    let mut density = Vec::new();
    for n in 0..cells {
        let x = n as f64;
        let d = delta(x);
        if d > 0.0 {
            density.push(json!({ "to": x + d, "rho": 2.0 }));
        }
        if d < 1.0 {
            density.push(json!({ "to": x + 1.0, "rho": 1.0 }));
        }
    }
    json!({ "density": density, "xi_max": cells as f64 })
}

#[test]
fn homogeneous_string_is_szego() {
    let dir = tempfile::tempdir().unwrap();
    let out = kw(dir.path(), "classify-string", &json!({ "model": homogeneous() }), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(verdict(dir.path()), "Szego");
    let rows = csv_rows(&dir.path().join("out/terms.csv"));
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap().abs() < 1e-9));
}

#[test]
fn log_thinned_string_is_not_szego() {
    let dir = tempfile::tempdir().unwrap();
    let model = two_material(|k| 1.0 / ((k + 1.0) * (std::f64::consts::E + k + 1.0).ln()), 10_003);
    let out = kw(dir.path(), "classify-string", &json!({ "model": model }), &["--n-max", "10000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(verdict(dir.path()), "NotSzego");
}

#[test]
fn malformed_json_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("model.json"), "{ \"density\": [ { \"to\": 1.0, ").unwrap();
    let out = kw(dir.path(), "classify-string", &json!({ "input": "model.json" }), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_input_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = kw(dir.path(), "classify-string", &json!({ "input": "absent.json" }), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_region_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = kw(dir.path(), "classify-wvn", &json!({ "alpha": [], "beta": [0.0] }), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn region_of_a_slow_oscillation() {
    let dir = tempfile::tempdir().unwrap();
    let out = kw(dir.path(), "classify-wvn", &json!({ "alpha": [-1.0], "beta": [0.0] }), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("out/regions.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][2], "A1");
}

#[test]
fn oversized_time_step_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "model": homogeneous(), "u0": { "center": 5.0, "width": 1.0 }, "t_end": 1.0 });
    let out = kw(dir.path(), "simulate", &cfg, &["--dt", "0.02"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt"));
}

#[test]
fn profile_needs_a_szego_string() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "model": two_material(|k| 1.0 / (k + 1.0).sqrt(), 400),
        "u0": { "center": 4.0, "width": 1.0 },
        "eta": { "start": -5.0, "stop": 5.0, "step": 0.5 },
        "resolution": { "lambda_max": 100.0, "n_lambda": 201 },
    });
    let out = kw(dir.path(), "profile", &cfg, &["--n-max", "390"]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(1), "{err}");
    assert!(err.contains("not in the Szeg"), "{err}");
}

#[test]
fn spectrum_of_the_free_string() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        json!({ "model": { "density": [{ "to": 1.0, "rho": 1.0 }], "xi_max": 1000.0 }, "lambda": [1.0, 4.0, 9.0] });
    let out = kw(dir.path(), "spectrum", &cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("out/density.csv"));
    assert_eq!(rows.len(), 3);
    for r in rows {
        let lambda: f64 = r[0].parse().unwrap();
        let d: f64 = r[1].parse().unwrap();
        let exact = 1.0 / (std::f64::consts::PI * lambda.sqrt());
        assert!((d - exact).abs() < 0.05 * exact, "λ = {lambda}: {d} vs {exact}");
    }
}

#[test]
fn identical_runs_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = json!({ "seed": 7 });
    for d in [&a, &b] {
        let out = kw(d.path(), "free-dirac", &cfg, &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["free_dirac.csv", "free_dirac_norms.csv"] {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        let y = std::fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let cfg = json!({ "model": homogeneous(), "u0": { "center": 5.0, "width": 1.0 }, "t_end": 2.0, "samples": 2 });
    for d in [&a, &b] {
        assert!(kw(d.path(), "simulate", &cfg, &[]).status.success());
    }
    for f in ["diagnostics.csv", "snapshots.csv"] {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        let y = std::fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}
