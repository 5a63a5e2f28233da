//! Patient-grouped three-fold cross-validation of a tiny model.

use acuity::dataset::{prepare, PrepareConfig};
use acuity::eval::{cross_validate, Scenario, TrainConfig};
use acuity::models::{DepthPreset, Family, ModelSpec};
use acuity::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let effect_size = std::env::args().nth(1).map_or(Ok(1.0), |s| s.parse())?;
    let cohort = generate(&SynthConfig {
        n_patients: 40,
        seed: 1,
        window_hours: 0.1,
        effect_size,
        max_days: 2.0,
        nominal_rates: vec![16.0],
        ..SynthConfig::default()
    })?;
    let p = prepare(
        &cohort,
        &PrepareConfig {
            window_hours: 0.1,
            seed: 1,
            ..PrepareConfig::default()
        },
    )?;
    let dev = p.dev.map_ref(|s| s.decimated(4)).try_map(|r| r)?;
    let spec = ModelSpec::new(Family::Vgg1d)
        .with_depth(DepthPreset::Tiny)
        .with_fusion(Scenario::AccelDemo.fusion().expect("model scenario"));
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 16,
        max_epochs: 30,
        patience: 6,
        seed: 1,
        ..TrainConfig::default()
    };
    println!("effect size {effect_size}: {} development windows", dev.len());
    for f in cross_validate(&dev, spec, &cfg, 3)? {
        println!(
            "fold {}: {} train / {} validation windows, best AUC {:.3} at epoch {}",
            f.fold, f.n_train, f.n_val, f.best_val_auc, f.best_epoch
        );
    }
    Ok(())
}
