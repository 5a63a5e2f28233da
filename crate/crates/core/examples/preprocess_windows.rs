//! Resamples, windows, scales and splits a synthetic cohort.

use acuity::dataset::{prepare, PrepareConfig};
use acuity::signal::{cut_windows, decimate, samples_per_window, CHANNEL_NAMES};
use acuity::phenotype::{assessment_times, HOUR};
use acuity::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let window_hours = 0.1;
    let cohort = generate(&SynthConfig {
        n_patients: 24,
        seed: 3,
        window_hours,
        max_days: 2.0,
        nominal_rates: vec![32.0, 100.0],
        ..SynthConfig::default()
    })?;

    let trace = &cohort.traces[0];
    let last = trace.samples().last().map_or(0.0, |s| s.t);
    let times = assessment_times(last, 4.0 * HOUR);
    let cut = cut_windows(trace, &times, window_hours);
    println!(
        "{}: device ~{:.0} Hz, {} windows kept, {} rejected, {} points each",
        trace.patient_id(),
        trace.device_rate_hint(),
        cut.accepted.len(),
        cut.rejected.len(),
        samples_per_window(window_hours)
    );

    let p = prepare(
        &cohort,
        &PrepareConfig {
            window_hours,
            ..PrepareConfig::default()
        },
    )?;
    println!(
        "development: {} windows from {} patients in {} folds; holdout: {} windows",
        p.dev.len(),
        p.plan.dev_patients().len(),
        p.dev.n_folds(),
        p.holdout.len()
    );
    for (c, name) in CHANNEL_NAMES.iter().enumerate() {
        println!("  {name}: development range [{:.3}, {:.3}] g", p.scales.accel.min[c], p.scales.accel.max[c]);
    }
    let first = &p.dev.items()[0];
    for factor in [1, 2, 4] {
        let w = decimate(&first.window, factor)?;
        let x = w.channel(0);
        let mean = x.iter().map(|&v| f64::from(v)).sum::<f64>() / x.len() as f64;
        println!("factor {factor}: {} points per channel, mean x {mean:.4}", w.len());
    }
    println!("rejected windows: {}", p.rejections.len());
    Ok(())
}
