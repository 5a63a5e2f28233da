//! The whole command-line pipeline on a desk-scale cohort, ending with the
//! metrics table.
//!
//! `cargo run --release --example end_to_end -- [work_dir]`

use std::path::PathBuf;

fn acuity(args: &[&str]) -> Result<(), acuity::cli::CliError> {
    println!("$ acuity {}", args.join(" "));
    acuity::cli::run(std::iter::once("acuity").chain(args.iter().copied()))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let work = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("acuity-run"), PathBuf::from);
    let cohort = work.join("cohort");
    let run = work.join("run");
    let (c, r) = (cohort.to_str().unwrap(), run.to_str().unwrap());

    acuity(&[
        "synth", "--out", c, "--seed", "5", "--n-patients", "40", "--window-hours", "0.1", "--max-days", "2",
        "--rates", "16",
    ])?;
    acuity(&["preprocess", "--cohort", c, "--run", r, "--seed", "5", "--window-hours", "0.1"])?;
    let model = ["--depth", "tiny", "--max-epochs", "30", "--patience", "6", "--seed", "5", "--workers", "3"];
    let mut tune = vec!["tune", "--run", r, "--scenario", "accel", "--n-trials", "8", "--families", "vgg1d,resnet1d,senet1d"];
    tune.extend_from_slice(&model);
    acuity(&tune)?;
    let mut train = vec!["train", "--run", r, "--scenario", "accel"];
    train.extend_from_slice(&model);
    acuity(&train)?;
    let mut train = vec![
        "train", "--run", r, "--scenario", "accel+demo", "--family", "vgg1d", "--batch-size", "16",
        "--learning-rate", "0.003", "--weight-decay", "0.0001", "--downsample-factor", "4",
    ];
    train.extend_from_slice(&model);
    acuity(&train)?;
    for scenario in ["accel", "accel+demo"] {
        acuity(&["evaluate", "--run", r, "--scenario", scenario, "--seed", "5"])?;
    }
    acuity(&["baseline", "--run", r, "--seed", "5"])?;
    acuity(&["report", "--run", r])?;
    println!("\n{}", std::fs::read_to_string(run.join("metrics.csv"))?);
    Ok(())
}
