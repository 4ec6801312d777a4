use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn framecert(args: &[&str], out: &Path) -> Run {
    let output = Command::new(env!("CARGO_BIN_EXE_framecert"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn framecert");
    Run {
        code: output.status.code().expect("exit code"),
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

fn run_config(cmd: &str, name: &str, out: &Path) -> Run {
    let path = config(name);
    framecert(&[cmd, "--config", path.to_str().unwrap()], out)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Numbers agree to 1e-6 relative, everything else exactly; `timestamp` is
/// skipped.
fn assert_matches(path: &str, got: &Value, want: &Value) {
    match (got, want) {
        (Value::Object(g), Value::Object(w)) => {
            let mut gk: Vec<_> = g.keys().collect();
            let mut wk: Vec<_> = w.keys().collect();
            gk.sort();
            wk.sort();
            assert_eq!(gk, wk, "keys differ at {path}");
            for (k, wv) in w {
                if k == "timestamp" {
                    continue;
                }
                assert_matches(&format!("{path}.{k}"), &g[k], wv);
            }
        }
        (Value::Array(g), Value::Array(w)) => {
            assert_eq!(g.len(), w.len(), "length differs at {path}");
            for (i, (gv, wv)) in g.iter().zip(w).enumerate() {
                assert_matches(&format!("{path}[{i}]"), gv, wv);
            }
        }
        (Value::Number(g), Value::Number(w)) => {
            let (g, w) = (g.as_f64().unwrap(), w.as_f64().unwrap());
            let tol = 1e-6 * w.abs().max(f64::MIN_POSITIVE);
            assert!((g - w).abs() <= tol, "{path}: {g} vs golden {w}");
        }
        _ => assert_eq!(got, want, "value differs at {path}"),
    }
}

fn strip_timestamp(text: &str) -> String {
    text.lines().filter(|l| !l.trim_start().starts_with("\"timestamp\"")).collect::<Vec<_>>().join("\n")
}

#[test]
fn certify_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_config("certify", "gabor_gaussian.json", dir.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let got = read_json(&dir.path().join("certificate.json"));
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/gabor_gaussian_certificate.json");
    assert_matches("$", &got, &read_json(&golden_path));
    assert_eq!(got["command"], "certify");
    assert_eq!(got["version"], env!("CARGO_PKG_VERSION"));
    assert!(got["config_hash"].as_str().is_some_and(|h| h.len() == 16));
}

#[test]
fn certify_double_check_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let path = config("gabor_gaussian.json");
    let run = framecert(&["certify", "--double-check", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let report = read_json(&dir.path().join("certificate.json"));
    let check = &report["result"]["double_check"];
    assert_eq!(check["stable"], true);
    for (k, v) in check["relative_changes"].as_object().unwrap() {
        assert!(v.as_f64().unwrap() < 1e-2, "{k} changed by {v}");
    }
}

#[test]
fn certify_at_delta_one_is_not_invertible() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_config("certify", "gabor_gaussian_delta1.json", dir.path());
    assert_eq!(run.code, 2, "{}", run.stderr);
    let report = read_json(&dir.path().join("certificate.json"));
    let cert = &report["result"]["certificate"];
    assert_eq!(cert["invertible"], false);
    assert!(cert["delta_max"].as_f64().unwrap() < 1.0);
}

#[test]
fn certify_writes_matrices_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&config("gabor_gaussian.json"));
    cfg["output"] = serde_json::json!({ "matrices": true });
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let run = framecert(&["certify", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let yhat = std::fs::read_to_string(dir.path().join("yhat.csv")).unwrap();
    assert!(yhat.lines().count() > 1);
    assert!(dir.path().join("ytilde.csv").exists());
}

#[test]
fn schema_violations_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("malformed.json", "{\"version\": 1, \"cover\":"),
        (
            "unknown.json",
            r#"{"version":1,"cover":{"family":"uniform","d":1,"r":1.0,"index_radius":6},"generator":{"kind":"gaussian"},"bogus":3}"#,
        ),
        (
            "exponent.json",
            r#"{"version":1,"cover":{"family":"uniform","d":1,"r":1.0,"index_radius":6},"generator":{"kind":"gaussian"},"p":0.5}"#,
        ),
        (
            "version.json",
            r#"{"version":9,"cover":{"family":"uniform","d":1,"r":1.0,"index_radius":6},"generator":{"kind":"gaussian"}}"#,
        ),
    ];
    for (name, text) in cases {
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        let run = framecert(&["certify", "--config", path.to_str().unwrap()], dir.path());
        assert_eq!(run.code, 64, "{name}: {}", run.stderr);
        assert!(run.stderr.contains("configuration error"), "{name}: {}", run.stderr);
    }
    let run = framecert(&["certify", "--config", dir.path().join("exponent.json").to_str().unwrap()], dir.path());
    assert!(run.stderr.contains("field `p`"), "{}", run.stderr);
    let run = framecert(&["certify"], dir.path());
    assert_eq!(run.code, 64);
}

#[test]
fn reports_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        assert_eq!(run_config("certify", "gabor_gaussian.json", dir.path()).code, 0);
        assert_eq!(run_config("walnut-check", "tight_painless.json", dir.path()).code, 0);
    }
    for file in ["certificate.json", "walnut_check.json"] {
        let x = std::fs::read_to_string(a.path().join(file)).unwrap();
        let y = std::fs::read_to_string(b.path().join(file)).unwrap();
        assert_eq!(strip_timestamp(&x), strip_timestamp(&y), "{file}");
    }
    let x = std::fs::read(a.path().join("walnut_check.csv")).unwrap();
    let y = std::fs::read(b.path().join("walnut_check.csv")).unwrap();
    assert_eq!(x, y);
}

fn walnut_passes(name: &str) {
    let dir = tempfile::tempdir().unwrap();
    let run = run_config("walnut-check", name, dir.path());
    assert_eq!(run.code, 0, "{name}: {}", run.stderr);
    let report = read_json(&dir.path().join("walnut_check.json"));
    assert!(report["result"]["max_relative_error"].as_f64().unwrap() < 1e-6);
    let mut rows = csv::Reader::from_path(dir.path().join("walnut_check.csv")).unwrap();
    assert_eq!(rows.records().count(), 20);
}

#[test]
fn walnut_check_gaussian_delta_one() {
    walnut_passes("walnut_gaussian_delta1.json");
}

#[test]
fn walnut_check_gaussian_delta_half() {
    walnut_passes("walnut_gaussian_half.json");
}

#[test]
fn walnut_check_painless() {
    walnut_passes("walnut_painless.json");
}

#[test]
fn walnut_check_tight_painless() {
    walnut_passes("tight_painless.json");
}

#[test]
fn walnut_check_off_grid_exits_65() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_config("walnut-check", "offgrid_third.json", dir.path());
    assert_eq!(run.code, 65, "{}", run.stderr);
    assert!(run.stderr.contains("n = 1024"), "{}", run.stderr);
}

#[test]
fn invert_tight_system_in_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_config("invert", "tight_painless.json", dir.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let report = read_json(&dir.path().join("invert.json"));
    assert_eq!(report["result"]["iterations"], 1);
    assert!(report["result"]["reconstruction_error"].as_f64().unwrap() < 1e-12);
    assert!(dir.path().join("inverted.bin").exists());
}

#[test]
fn invert_gaussian_converges() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_config("invert", "invert_gaussian_half.json", dir.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let r = &read_json(&dir.path().join("invert.json"))["result"];
    assert_eq!(r["converged"], true);
    assert!(r["iterations"].as_u64().unwrap() < 50);
    assert!(r["final_relative_residual"].as_f64().unwrap() < 1e-8);
    let ratio = r["contraction_ratio"].as_f64().unwrap();
    let surrogate = r["contraction_surrogate"].as_f64().unwrap();
    assert!(ratio <= surrogate * 1.05, "{ratio} vs {surrogate}");
    let history = std::fs::read_to_string(dir.path().join("residual_history.csv")).unwrap();
    assert_eq!(history.lines().count() as u64, r["iterations"].as_u64().unwrap() + 1);
}

#[test]
fn invert_reads_an_input_signal() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_config("invert", "tight_painless.json", dir.path()).code, 0);
    let input = dir.path().join("input.bin");
    std::fs::rename(dir.path().join("inverted.bin"), &input).unwrap();
    let path = config("tight_painless.json");
    let run = framecert(
        &["invert", "--config", path.to_str().unwrap(), "--input", input.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let r = &read_json(&dir.path().join("invert.json"))["result"];
    assert_eq!(r["converged"], true);
    assert!(r["reconstruction_error"].is_null());
}

#[test]
fn invert_contraction_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_config("invert", "contraction_failure.json", dir.path());
    assert_eq!(run.code, 3, "{}", run.stderr);
    let r = &read_json(&dir.path().join("invert.json"))["result"];
    assert_eq!(r["contraction_failed"], true);
    assert!(r["contraction_ratio"].as_f64().unwrap() > 1.0);
}

#[test]
fn constants_table() {
    let dir = tempfile::tempdir().unwrap();
    let run = framecert(&["constants"], dir.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    for d in 1..=3 {
        assert!(run.stdout.contains(&format!("d = {d}")));
    }
    let r = &read_json(&dir.path().join("constants.json"))["result"];
    let d1 = &r["dimensions"][0];
    assert_eq!(d1["C'"].as_f64().unwrap(), 2304.0);
    assert_eq!(d1["C_pq(finite p, q)"].as_f64().unwrap(), 1.0);
    assert!((d1["C_d"].as_f64().unwrap() - 12.4045).abs() < 1e-3);
    for t in r["dimensions"].as_array().unwrap() {
        let k = t["kappa_d"].as_f64().unwrap();
        assert!(k.is_finite() && k > 0.0);
    }

    let run = framecert(&["constants", "--dim", "2"], dir.path());
    assert_eq!(run.code, 0);
    assert!(run.stdout.contains("d = 2") && !run.stdout.contains("d = 1"));
}

#[test]
fn constants_for_a_configured_cover() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_config("constants", "gabor_gaussian.json", dir.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let r = &read_json(&dir.path().join("constants.json"))["result"]["configured"];
    assert_eq!(r["constants"]["c_pq"].as_f64().unwrap(), 1.0);
    assert!(r["cover"].as_str().is_some());
}

#[test]
fn alphamod_half() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_config("alphamod", "alphamod_half.json", dir.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let r = &read_json(&dir.path().join("alphamod.json"))["result"]["report"];
    assert_eq!(r["required_decay"].as_f64().unwrap(), 14.0);
    assert!(r["decay"]["n_emp"].as_f64().unwrap() > 14.0);
    assert_eq!(r["envelope_decreasing"], true);
    assert!(r["m1_truncation_change"].as_f64().unwrap() < 0.02);
    let envelope = std::fs::read_to_string(dir.path().join("yhat_envelope.csv")).unwrap();
    assert!(envelope.starts_with("offset,yhat_max"));
}

#[test]
fn jobs_flag_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = config("gabor_gaussian.json");
    let run = framecert(&["certify", "--jobs", "2", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let output = Command::new(env!("CARGO_BIN_EXE_framecert"))
        .args(["certify", "--config", path.to_str().unwrap(), "--out"])
        .arg(dir.path())
        .env("FRAMECERT_JOBS", "1")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
}
