//! Random search with median pruning over a cross-validation objective.

use acuity::dataset::{prepare, PrepareConfig};
use acuity::eval::{Scenario, TrainConfig};
use acuity::hpo::{run_search, DevObjective, SearchConfig, SearchSpace};
use acuity::models::{DepthPreset, Family, ModelSpec};
use acuity::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cohort = generate(&SynthConfig {
        n_patients: 30,
        seed: 4,
        window_hours: 0.1,
        max_days: 2.0,
        nominal_rates: vec![16.0],
        ..SynthConfig::default()
    })?;
    let p = prepare(
        &cohort,
        &PrepareConfig {
            window_hours: 0.1,
            seed: 4,
            ..PrepareConfig::default()
        },
    )?;
    // Narrowed so the example finishes in seconds.
    let space = SearchSpace {
        families: vec![Family::Vgg1d, Family::Mobilenet1d, Family::Senet1d],
        downsample_factors: vec![2, 4],
        ..SearchSpace::default()
    };
    let template = ModelSpec::new(Family::Vgg1d)
        .with_depth(DepthPreset::Tiny)
        .with_fusion(Scenario::AccelDemo.fusion().expect("model scenario"));
    let base = TrainConfig {
        max_epochs: 8,
        patience: 3,
        ..TrainConfig::default()
    };
    let objective = DevObjective::new(&p.dev, &space, template, &base)?;
    let cfg = SearchConfig {
        n_trials: 8,
        seed: 4,
        workers: 2,
        ..SearchConfig::default()
    };
    let log = std::env::temp_dir().join("acuity-trials.jsonl");
    let _ = std::fs::remove_file(&log);
    let out = run_search(&space, &cfg, |h, fold, seed| objective.evaluate(h, fold, seed), Some(&log))?;
    for t in &out.trials {
        println!(
            "trial {}: {:<12} batch {:>2} lr {:.1e} wd {:.1e} x{}  {:?} folds {:.3?}",
            t.id,
            t.config.family.as_str(),
            t.config.batch_size,
            t.config.learning_rate,
            t.config.weight_decay,
            t.config.downsample_factor,
            t.status,
            t.fold_aucs
        );
    }
    println!("best: trial {} with mean AUC {:.3}", out.best.id, out.best.objective.unwrap_or(f64::NAN));
    println!("trial log: {}", log.display());
    Ok(())
}
