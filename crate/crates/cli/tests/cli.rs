use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bilip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilip")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn without_runtime(text: &str) -> String {
    text.lines().filter(|l| !l.contains("\"runtime_ms\"")).collect::<Vec<_>>().join("\n")
}

fn results(json: &str) -> Vec<serde_json::Map<String, Value>> {
    let v: Value = serde_json::from_str(json).unwrap();
    v["results"].as_array().unwrap().iter().map(|r| r.as_object().unwrap().clone()).collect()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&bilip(&["--help"])), 0);
    assert_eq!(code(&bilip(&["sweep", "--help"])), 0);
    assert_eq!(code(&bilip(&[])), 1);
    assert_eq!(code(&bilip(&["frobnicate"])), 1);
    // Seeds are mandatory.
    let out = bilip(&["width", "--n", "3"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--seed"));
    assert_eq!(code(&bilip(&["width", "--n", "3", "--seed", "1", "--workers", "0"])), 1);
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.txt", "2 2\n1 0\n");
    let out = bilip(&["certify", "--matrix", &bad, "--seed", "1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2: expected 2 rows, found 1"), "{}", stderr(&out));

    let out = bilip(&["certify", "--matrix", "/no/such/file", "--seed", "1"]);
    assert_eq!(code(&out), 1);

    assert_eq!(code(&bilip(&["width", "--n", "10", "--cone", "sparse:0", "--seed", "1"])), 1);
    assert_eq!(code(&bilip(&["width", "--n", "10", "--cone", "ball", "--seed", "1"])), 1);
    assert_eq!(code(&bilip(&["band", "--delta", "0.7", "--m", "10", "--pairs", "10", "--seed", "1"])), 1);
    assert_eq!(code(&bilip(&["sweep", "--m", "100,10", "--pairs", "10", "--seed", "1"])), 1);

    // x1 >= 0 and -x1 >= 0 leave no interior.
    let cone = write(dir.path(), "cone.txt", "2 2\n1 0\n-1 0\n");
    let spec = format!("halfspaces:{cone}");
    let out = bilip(&["width", "--n", "2", "--cone", &spec, "--seed", "1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("interior"), "{}", stderr(&out));
}

#[test]
fn unwritable_output_exits_two() {
    let out = bilip(&["width", "--n", "2", "--draws", "10", "--seed", "1", "--out", "/no/such/dir/r.json"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn failed_check_exits_three_only_with_flag() {
    // Far too few rows for the band to hold.
    let args = ["band", "--n", "8", "--m", "3", "--pairs", "500", "--seed", "1"];
    assert_eq!(code(&bilip(&args)), 0);
    let mut checked = args.to_vec();
    checked.push("--check");
    assert_eq!(code(&bilip(&checked)), 3);
}

#[test]
fn certify_prints_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.txt", "3 2\n1 0.2\n-0.5 1\n0.3 -1\n");
    let out = bilip(&["certify", "--matrix", &m, "--probes", "64", "--seed", "1", "--check"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = results(&stdout(&out));
    let ratio = rows[0]["cert_ratio"].as_f64().unwrap();
    assert!(ratio >= std::f64::consts::SQRT_2 - 1e-9);
}

#[test]
fn analyze_reports_every_section() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.txt", "4 2\n1 0\n0 1\n-1 0\n0 -1\n");
    let r = dir.path().join("r.json");
    let out = bilip(&[
        "analyze", "--matrix", &m, "--pairs", "5000", "--seed", "7", "--resolution", "256",
        "--out", r.to_str().unwrap(), "--check",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&r).unwrap();
    let rows = results(&text);
    let kinds: Vec<&str> = rows.iter().map(|r| r["record"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["layer", "bounds", "bracket", "oracle", "certificate"]);
    let bounds = &rows[1];
    assert!((bounds["lambda_a"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert!((bounds["u_exact"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let bracket = &rows[2];
    let (u_lo, u_hi) = (bracket["u_lo"].as_f64().unwrap(), bracket["u_hi"].as_f64().unwrap());
    assert!(u_lo <= u_hi * (1.0 + 1e-12));
    let l_hi = bracket["l_hi"].as_f64().unwrap();
    assert!((l_hi - 0.5 / std::f64::consts::SQRT_2).abs() < 1e-3, "{l_hi}");
}

#[test]
fn analyze_with_bias_skips_exact_part() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.txt", "2 1\n1\n-1\n");
    let out = bilip(&["analyze", "--matrix", &m, "--bias", "-0.5,0.25", "--pairs", "2000", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("bias"));
    let rows = results(&stdout(&out));
    assert!(rows.iter().all(|r| r["record"] != "bounds"));
    let lim = rows.iter().find(|r| r["record"] == "bias_limit").unwrap();
    assert!(lim["abs_dev"].as_f64().unwrap() < 1e-3);
    let bad = bilip(&["analyze", "--matrix", &m, "--bias", "1", "--seed", "3"]);
    assert_eq!(code(&bad), 1);
}

/// Each CSV cell holds the same text as the JSON value of that key.
#[test]
fn csv_and_json_carry_the_same_numbers() {
    let args = ["sweep", "--n", "3", "--m", "10,40", "--pairs", "3000", "--seed", "5"];
    let json = stdout(&bilip(&args));
    let mut csv_args = args.to_vec();
    csv_args.extend(["--format", "csv"]);
    let csv = stdout(&bilip(&csv_args));
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config {"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows = results(&json);
    let data: Vec<&str> = lines.collect();
    assert_eq!(data.len(), rows.len());
    for (line, rec) in data.iter().zip(&rows) {
        for (key, cell) in header.iter().zip(line.split(',')) {
            let expected = match &rec[*key] {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            assert_eq!(cell, expected, "column {key}");
        }
    }
}

#[test]
fn replay_reproduces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.json");
    let out = bilip(&[
        "rip", "--n", "6", "--m", "300", "--pairs", "500", "--seed", "11", "--out", first.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let again = bilip(&["replay", "--config", first.to_str().unwrap()]);
    assert_eq!(code(&again), 0, "{}", stderr(&again));
    let original = std::fs::read_to_string(&first).unwrap();
    assert_eq!(without_runtime(&stdout(&again)), without_runtime(&original));

    let csv = dir.path().join("r.csv");
    let out = bilip(&["net", "--n", "2", "--eps", "0.5", "--seed", "2", "--format", "csv", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let replayed = bilip(&["replay", "--config", csv.to_str().unwrap()]);
    assert_eq!(stdout(&replayed), std::fs::read_to_string(&csv).unwrap());

    // The config block alone is accepted too.
    let v: Value = serde_json::from_str(&original).unwrap();
    let cfg = write(dir.path(), "cfg.json", &v["config"].to_string());
    let from_cfg = bilip(&["replay", "--config", &cfg]);
    assert_eq!(without_runtime(&stdout(&from_cfg)), without_runtime(&original));
}

#[test]
fn config_records_defaults() {
    let out = bilip(&["width", "--n", "4", "--seed", "9"]);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let cfg = &v["config"];
    assert_eq!(cfg["command"], "width");
    assert_eq!(cfg["cone"], "full");
    assert_eq!(cfg["draws"], 10_000);
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["format"], "json");
}

#[test]
fn workers_do_not_change_output() {
    let base = ["angle", "--n", "6", "--m", "2000", "--pairs", "300", "--seed", "4"];
    let run = |w: &str| {
        let mut a = base.to_vec();
        a.extend(["--workers", w]);
        without_runtime(&stdout(&bilip(&a)))
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn net_can_list_points() {
    let out = bilip(&["net", "--n", "2", "--eps", "0.5", "--probes", "2000", "--seed", "1", "--points", "--check"]);
    assert_eq!(code(&out), 0);
    let rows = results(&stdout(&out));
    let size = rows[0]["size"].as_u64().unwrap() as usize;
    assert_eq!(rows.len(), size + 1);
    assert!(rows[1..].iter().all(|r| r["record"] == "net_point"));
}
