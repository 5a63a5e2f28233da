//! The SOFA threshold baseline: Youden threshold on development windows,
//! bootstrap evaluation on the holdout.

use acuity::dataset::{prepare, PrepareConfig};
use acuity::eval::{bootstrap, sofa_baseline, sofa_scores, DEFAULT_RESAMPLES};
use acuity::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cohort = generate(&SynthConfig {
        n_patients: 40,
        seed: 11,
        window_hours: 0.1,
        max_days: 3.0,
        nominal_rates: vec![16.0],
        ..SynthConfig::default()
    })?;
    let p = prepare(
        &cohort,
        &PrepareConfig {
            window_hours: 0.1,
            seed: 11,
            ..PrepareConfig::default()
        },
    )?;

    let dev = p.dev.items();
    let sofa: Vec<Option<u8>> = dev.iter().map(|s| s.sofa).collect();
    let labels: Vec<bool> = dev.iter().map(|s| s.unstable).collect();
    let fit = sofa_baseline(&sofa, &labels)?;
    println!(
        "development: {} windows scored, {} without SOFA; threshold {:.3} (SOFA {:.0}), J = {:.3}",
        fit.data.scores.len(),
        fit.data.dropped,
        fit.choice.threshold,
        fit.choice.threshold * 24.0,
        fit.choice.j
    );

    let test = p.holdout.open();
    let sofa: Vec<Option<u8>> = test.iter().map(|s| s.sofa).collect();
    let labels: Vec<bool> = test.iter().map(|s| s.unstable).collect();
    let scored = sofa_scores(&sofa, &labels);
    let b = bootstrap(&scored.scores, &scored.labels, fit.choice.threshold, DEFAULT_RESAMPLES, 11)?;
    println!("holdout: {} windows, {} degenerate resamples", scored.scores.len(), b.degenerate);
    for name in ["auc", "precision", "sensitivity", "specificity", "f1"] {
        let cell = b.summary.get(name).map_or("NA".into(), |m| m.cell());
        println!("  {name:<12} {cell}");
    }
    Ok(())
}
