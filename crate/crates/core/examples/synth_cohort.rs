//! Generates a small synthetic cohort and writes it as CSV files.
//!
//! `cargo run --release --example synth_cohort -- [out_dir] [seed]`

use std::path::PathBuf;

use acuity::datamodel::TherapyKind;
use acuity::dataset::label_cohort;
use acuity::datamodel::AcuityLabel;
use acuity::synth::{generate_to_dir, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("acuity-cohort"), PathBuf::from);
    let seed = args.next().map_or(Ok(7), |s| s.parse())?;
    let config = SynthConfig {
        n_patients: 30,
        seed,
        window_hours: 0.1,
        max_days: 2.0,
        nominal_rates: vec![16.0],
        ..SynthConfig::default()
    };
    let cohort = generate_to_dir(&config, &out)?;

    let samples: usize = cohort.traces.iter().map(|t| t.samples().len()).sum();
    println!("wrote {} patients to {}", cohort.patients.len(), out.display());
    println!("accelerometer samples: {samples}");
    println!("clinical events: {}", cohort.clinical.len());
    for kind in TherapyKind::ALL {
        let n = cohort.therapy.iter().filter(|e| e.kind == *kind).count();
        println!("  {:<18} {n}", kind.as_str());
    }
    let labels = label_cohort(&cohort, config.assessment_period_hours);
    for label in AcuityLabel::ALL {
        let n = labels.iter().filter(|r| r.window.label == *label).count();
        println!("{:<20} {n} windows", label.as_str());
    }
    Ok(())
}
