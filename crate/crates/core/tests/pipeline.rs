use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use acuity::cli::run;

fn cli(args: &[&str]) {
    let mut full = vec!["acuity"];
    full.extend_from_slice(args);
    if let Err(e) = run(full) {
        panic!("{}: {e}", args.join(" "));
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
        }
    }
    out
}

const SYNTH: [&str; 8] = ["--n-patients", "20", "--window-hours", "0.1", "--max-days", "1", "--rates", "16"];

#[test]
fn synth_twice_gives_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("c1"), dir.path().join("c2"));
    for out in [&a, &b] {
        let mut args = vec!["synth", "--seed", "7", "--out", out.to_str().unwrap()];
        args.extend_from_slice(&SYNTH);
        cli(&args);
    }
    let first = snapshot(&a);
    assert!(first.len() >= 5, "{:?}", first.keys().collect::<Vec<_>>());
    assert_eq!(first, snapshot(&b));

    // Re-running into the same directory changes nothing.
    let mut args = vec!["synth", "--seed", "7", "--out", a.to_str().unwrap()];
    args.extend_from_slice(&SYNTH);
    cli(&args);
    assert_eq!(first, snapshot(&a));
}

#[test]
fn report_covers_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    let runs = dir.path().join("run");
    let (c, r) = (cohort.to_str().unwrap(), runs.to_str().unwrap());
    let mut args = vec!["synth", "--seed", "2", "--out", c];
    args.extend_from_slice(&SYNTH);
    cli(&args);
    cli(&["label", "--cohort", c, "--out", dir.path().join("labels.csv").to_str().unwrap()]);
    cli(&["preprocess", "--cohort", c, "--run", r, "--seed", "2", "--window-hours", "0.1"]);
    for scenario in ["accel", "accel+demo", "accel+clinical", "accel+demo+clinical"] {
        cli(&[
            "train", "--run", r, "--scenario", scenario, "--seed", "2", "--family", "vgg1d", "--batch-size", "16",
            "--learning-rate", "0.003", "--weight-decay", "0.0001", "--downsample-factor", "4", "--depth", "tiny",
            "--max-epochs", "2", "--patience", "2",
        ]);
        cli(&["evaluate", "--run", r, "--scenario", scenario, "--seed", "2"]);
    }
    cli(&["baseline", "--run", r, "--seed", "2"]);
    cli(&["report", "--run", r]);

    let table = std::fs::read_to_string(runs.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "Scenario,AUC,Precision,Sensitivity,Specificity,F1-score");
    assert_eq!(lines.len(), 6, "{table}");
    let labels: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["SOFA", "Accel", "Accel + Demo", "Accel + Clinical", "Accel + Demo + Clinical"]);
    for line in &lines[1..] {
        for field in line.split(',').skip(1) {
            assert!(is_table_cell(field), "bad cell `{field}` in {line}");
        }
    }
    assert!(std::fs::read_to_string(dir.path().join("labels.csv")).unwrap().starts_with("patient_id,"));
}

/// `0.69 (0.63-0.75)` or `NA`.
fn is_table_cell(field: &str) -> bool {
    if field == "NA" {
        return true;
    }
    let Some((median, rest)) = field.split_once(" (") else {
        return false;
    };
    let Some((lo, hi)) = rest.strip_suffix(')').and_then(|r| r.split_once('-')) else {
        return false;
    };
    [median, lo, hi].iter().all(|v| v.len() == 4 && v.parse::<f64>().is_ok_and(|x| (0.0..=1.0).contains(&x)))
}

#[test]
fn binary_reports_one_line_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_acuity"))
        .args(["evaluate", "--run", dir.path().to_str().unwrap(), "--scenario", "accel"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: "), "{stderr}");

    let out = Command::new(env!("CARGO_BIN_EXE_acuity")).args(["frobnicate"]).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(String::from_utf8(out.stderr).unwrap().lines().count(), 1);
}
