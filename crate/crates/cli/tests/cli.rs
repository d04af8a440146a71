use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polya_core::corpus::{Expected, CORPUS};
use serde_json::Value;

fn polya(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polya")).args(args).env_remove("POLYA_ORDER").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus_file(name: &str) -> String {
    root().join("crates/core/corpus").join(format!("{name}.eq")).to_string_lossy().into_owned()
}

fn schema() -> jsonschema::Validator {
    let text = std::fs::read_to_string(root().join("schema/report.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).expect("schema compiles")
}

#[test]
fn coeffs_examples() {
    for (eq, n, want) in [
        ("w = z + z*MSet(w)", "10", "1,1,2,4,9,20,48,115,286,719"),
        ("w = z + z*Seq(w)", "5", "1,1,2,5,14"),
        ("w = z + z*w^2", "5", "1,0,1,0,2"),
        ("w = z + z*expm1(w)", "4", "1,1,3/2,8/3"),
    ] {
        let o = polya(&["coeffs", eq, "-n", n]);
        assert!(o.status.success());
        assert_eq!(stdout(&o).trim(), want, "{eq}");
    }
    let o = polya(&["coeffs", "--json", "z + z*w^2", "-n", "3"]);
    assert_eq!(stdout(&o).trim(), r#"["1","0","1"]"#);
}

#[test]
fn order_comes_from_the_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_polya"))
        .args(["coeffs", "z + z*Seq(w)"])
        .env("POLYA_ORDER", "3")
        .output()
        .unwrap();
    assert_eq!(stdout(&o).trim(), "1,1,2");
    let o = Command::new(env!("CARGO_BIN_EXE_polya"))
        .args(["analyze", "--json", "z + z*w^2"])
        .env("POLYA_ORDER", "301")
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["order"], 301);
}

#[test]
fn analyze_planar_binary() {
    let o = polya(&["analyze", "--json", "w = z + z*w^2"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(schema().is_valid(&v));
    assert_eq!(v["outcome"], "certified");
    assert_eq!(v["q"], 2);
    assert!((v["rho"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert!((v["C"].as_f64().unwrap() - 0.7979).abs() < 1e-4);
    let text = stdout(&polya(&["analyze", "w = z + z*w^2"]));
    assert!(text.contains("certified") && text.contains("0.797884560"));
}

#[test]
fn exit_codes() {
    let o = polya(&["analyze", "w = z + z*w"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("rejected (linear"));
    assert_eq!(polya(&["analyze", "w = z + "]).status.code(), Some(1));
    assert_eq!(polya(&["analyze", "--order", "16", "z + z*w^2"]).status.code(), Some(1));
    assert_eq!(polya(&["analyze", "--tol", "1e-2", "z + z*w^2"]).status.code(), Some(1));
    assert_eq!(polya(&["analyze", "-f", "/nonexistent.eq"]).status.code(), Some(1));
    assert_eq!(polya(&["analyze"]).status.code(), Some(1));
    // too few support points for the fit at this order
    assert_eq!(polya(&["analyze", "--order", "64", "z + z*w^2"]).status.code(), Some(3));
    assert_eq!(polya(&["--help"]).status.code(), Some(0));
}

#[test]
fn equation_from_a_file_or_stdin() {
    let o = polya(&["analyze", "--json", "--order", "200", "-f", &corpus_file("labelled_trees")]);
    assert_eq!(o.status.code(), Some(0));
    let mut child = Command::new(env!("CARGO_BIN_EXE_polya"))
        .args(["coeffs", "-f", "-", "-n", "4"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child.stdin.take().unwrap().write_all(b"# comment\nw = z + z*w^2\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(stdout(&o).trim(), "1,0,1,0");
}

#[test]
fn selftest_rows() {
    let o = polya(&["selftest", "-c", "1", "-c", "4", "--tol", "1e-12"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("PASS  1") && text.contains("PASS  4") && text.contains("2 of 2"));
    let o = polya(&["selftest", "-c", "3", "--order", "32"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("prefix estimate"));
    let o = polya(&["selftest", "-c", "7", "--json"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["pass"], true);
    assert_eq!(polya(&["selftest", "-c", "9"]).status.code(), Some(1));
}

/// Fields compared with a relative tolerance; everything else must match exactly.
const NUMERIC: [&str; 9] = [
    "rho",
    "rho_error",
    "tau",
    "tau_error",
    "C",
    "C_error",
    "growth_ratio_estimate",
    "growth_ratio_gap",
    "dominant_singularities",
];

fn assert_close(name: &str, got: &Value, want: &Value) {
    match (got, want) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            let tol = if name.ends_with("error") || name.ends_with("gap") { 1e-3 } else { 1e-9 };
            assert!((a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-3), "{name}: {a} vs {b}");
        }
        (Value::Array(a), Value::Array(b)) if a.len() == b.len() => {
            a.iter().zip(b).for_each(|(x, y)| assert_close(name, x, y));
        }
        _ => assert_eq!(got, want, "{name}"),
    }
}

#[test]
fn corpus_reports_match_snapshots() {
    let validator = schema();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots");
    let update = std::env::var_os("UPDATE_SNAPSHOTS").is_some();
    for entry in CORPUS {
        let order = entry.order.to_string();
        let o = polya(&["analyze", "--json", "--order", &order, "-f", &corpus_file(entry.name)]);
        let want_code = match entry.expected {
            Expected::Certified => 0,
            Expected::Rejected => 2,
        };
        assert_eq!(o.status.code(), Some(want_code), "{}", entry.name);
        let mut got: Value = serde_json::from_slice(&o.stdout).unwrap();
        let errors: Vec<String> = validator.iter_errors(&got).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{}: {errors:?}", entry.name);
        let path = dir.join(format!("{}.json", entry.name));
        if update {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
            continue;
        }
        let mut want: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        for key in NUMERIC {
            assert_close(key, &got[key], &want[key]);
            got[key] = Value::Null;
            want[key] = Value::Null;
        }
        assert_close("fit.deviation", &got["fit"]["deviation"], &want["fit"]["deviation"]);
        got["fit"]["deviation"] = Value::Null;
        want["fit"]["deviation"] = Value::Null;
        assert_eq!(got, want, "{}", entry.name);
    }
}
