//! Builds every family at every depth preset and runs a forward pass.

use acuity::autodiff::Tensor;
use acuity::models::{AcuityModel, DepthPreset, Family, FusionInputs, ModelSpec};
use acuity::signal::samples_per_window;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A four-hour window at 10 Hz, decimated by four.
    let len = samples_per_window(4.0) / 4;
    let fusion = FusionInputs {
        demographics: true,
        clinical: false,
    };
    println!("input: 3 x {len}, {} EHR features", fusion.len());
    for depth in [DepthPreset::Tiny, DepthPreset::Small, DepthPreset::Standard] {
        for family in Family::ALL {
            let spec = ModelSpec::new(family).with_depth(depth).with_fusion(fusion);
            let model = AcuityModel::build(spec, len, 0)?;
            let x = Tensor::full(&[2, 3, len], 0.5);
            let e = Tensor::full(&[2, fusion.len()], 0.5);
            let start = std::time::Instant::now();
            let logits = model.logits(&x, Some(&e))?;
            println!(
                "{depth:<9?} {:<14} {:>8} params, {:>3} features, logits {:?} in {:.0} ms",
                family.as_str(),
                model.count_params(),
                model.feature_dim(),
                logits.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
                start.elapsed().as_secs_f64() * 1e3
            );
        }
    }
    Ok(())
}
