//! End-to-end runs of the binary: exit codes, report bytes, and overrides.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn exitlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exitlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SADDLE: &str = r#"
[experiment]
kind = "saddle"

[domain]
dimension = 1
extent = [[0.0, 1.0]]

[coefficients]
a = "identity"
b = "zero"

[numerics]
resolution = [513]
betas = [0.0]
expected = 12.0
tolerance = 0.05

[output]
format = "csv"
path = "saddle.csv"
"#;

const MC: &str = r#"
seed = 11

[experiment]
kind = "mc"

[domain]
dimension = 1
extent = [[0.0, 1.0]]

[coefficients]
a = "identity"

[numerics]
resolution = [65]
betas = [1.0]

[mc]
paths = 3000
dt = 1e-3
t_max = 3.0
start = [0.5]

[output]
format = "csv"
path = "mc.csv"
"#;

#[test]
fn saddle_config_reports_twelve_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "saddle.toml", SADDLE);
    let out = exitlab(dir.path(), &["saddle.toml"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");

    let csv = std::fs::read_to_string(dir.path().join("saddle.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "experiment,quantity,value,stderr,expected,tolerance,verdict"
    );
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(row[0], "saddle");
    assert_eq!(row[1], "saddle-value");
    let value: f64 = row[2].parse().unwrap();
    assert!((value - 12.0).abs() <= 0.05, "value {value}");
    assert_eq!(row[6], "pass");
    assert!(row[2].contains('.') && row[2].contains('e'), "scientific form");
    assert!(!csv.contains('\r'));
}

#[test]
fn peclet_violation_exits_three_and_names_the_node() {
    let dir = tempfile::tempdir().unwrap();
    let config = SADDLE.replace("b = \"zero\"", "b = \"constant-drift(2000.0)\"");
    write_config(dir.path(), "saddle.toml", &config);
    let out = exitlab(dir.path(), &["saddle.toml"]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Peclet number"), "{err}");
    assert!(err.contains("at x ="), "diagnostic names the node: {err}");
    assert!(!dir.path().join("saddle.csv").exists());
}

#[test]
fn dry_run_validates_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "saddle.toml", SADDLE);
    let out = exitlab(dir.path(), &["saddle.toml", "--dry-run"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("experiment: saddle"), "{text}");
    assert!(text.contains("expected: 12 within 0.05"), "{text}");
    assert!(!dir.path().join("saddle.csv").exists());
}

#[test]
fn unknown_keys_and_bad_kinds_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = SADDLE.replace("betas = [0.0]", "betas = [0.0]\ntypo = 1");
    write_config(dir.path(), "bad.toml", &config);
    let out = exitlab(dir.path(), &["bad.toml"]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo"));

    let config = SADDLE.replace("kind = \"saddle\"", "kind = \"frobnicate\"");
    write_config(dir.path(), "bad2.toml", &config);
    let out = exitlab(dir.path(), &["bad2.toml"]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn missing_mc_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
[experiment]
kind = "mc"

[domain]
dimension = 1
extent = [[0.0, 1.0]]

[coefficients]
a = "identity"

[numerics]
resolution = [65]
betas = [1.0]

[output]
format = "csv"
path = "mc.csv"
"#;
    write_config(dir.path(), "mc.toml", config);
    let out = exitlab(dir.path(), &["mc.toml"]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("[mc]"));
}

#[test]
fn failed_verdict_exits_one_but_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let config = SADDLE.replace("expected = 12.0", "expected = 11.0").replace(
        "tolerance = 0.05",
        "tolerance = 0.001",
    );
    write_config(dir.path(), "saddle.toml", &config);
    let out = exitlab(dir.path(), &["saddle.toml"]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let csv = std::fs::read_to_string(dir.path().join("saddle.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",fail"));
}

#[test]
fn reports_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "mc.toml", MC);
    let out = exitlab(dir.path(), &["mc.toml", "--workers", "1"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let one = std::fs::read(dir.path().join("mc.csv")).unwrap();
    let out = exitlab(dir.path(), &["mc.toml", "--workers", "3"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let three = std::fs::read(dir.path().join("mc.csv")).unwrap();
    assert_eq!(one, three);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "mc.toml", MC);
    exitlab(dir.path(), &["mc.toml"]);
    let config_seed = std::fs::read(dir.path().join("mc.csv")).unwrap();
    exitlab(dir.path(), &["mc.toml", "--seed", "11"]);
    let same_seed = std::fs::read(dir.path().join("mc.csv")).unwrap();
    assert_eq!(config_seed, same_seed, "matching seed reproduces bytes");
    exitlab(dir.path(), &["mc.toml", "--seed", "12"]);
    let other_seed = std::fs::read(dir.path().join("mc.csv")).unwrap();
    assert_ne!(config_seed, other_seed);
}

#[test]
fn json_report_reparses_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
[experiment]
kind = "laplace"

[domain]
dimension = 1
extent = [[0.0, 1.0]]

[coefficients]
a = "identity"

[numerics]
resolution = [129]
betas = [1.0, 4.0]

[output]
format = "json"
path = "laplace.json"
"#;
    write_config(dir.path(), "laplace.toml", config);
    let out = exitlab(dir.path(), &["laplace.toml"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let first = std::fs::read_to_string(dir.path().join("laplace.json")).unwrap();

    let doc: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(doc["experiment"], "laplace");
    let prov = &doc["provenance"];
    assert_eq!(prov["dimension"], 1);
    assert_eq!(prov["resolution"][0], 129);
    let h = prov["grid_spacing"][0].as_f64().unwrap();
    assert!((h - 1.0 / 128.0).abs() < 1e-15);
    assert_eq!(prov["schemes"][0], "flux-centered");
    assert_eq!(prov["seed"], 0);
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4, "two betas, integral plus closure each");
    for row in rows {
        assert!(row["value"].as_f64().unwrap().is_finite());
        assert!(matches!(
            row["verdict"].as_str().unwrap(),
            "pass" | "fail" | "n/a"
        ));
    }

    let out = exitlab(dir.path(), &["laplace.toml"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let second = std::fs::read_to_string(dir.path().join("laplace.json")).unwrap();
    assert_eq!(first, second, "identical run, identical bytes");
}

#[test]
fn output_dir_flag_redirects_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let other = dir.path().join("elsewhere");
    std::fs::create_dir(&other).unwrap();
    write_config(dir.path(), "saddle.toml", SADDLE);
    let out = exitlab(dir.path(), &["saddle.toml", "--output-dir", "elsewhere"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(other.join("saddle.csv").exists());
    assert!(!dir.path().join("saddle.csv").exists());
}
