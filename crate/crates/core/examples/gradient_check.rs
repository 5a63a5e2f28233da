//! Compares analytic gradients with central differences, one small
//! operation and then every model family.

use acuity::autodiff::{Graph, Tensor};
use acuity::models::{AcuityModel, DepthPreset, Family, FusionInputs, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

fn main() {
    // d/dw of sum(relu(conv(x, w))) for a single input.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_fn(&[1, 2, 10], |_| rng.random_range(-1.0..1.0));
    let w = Tensor::from_fn(&[3, 2, 3], |_| rng.random_range(-1.0..1.0));
    let loss = |w: &Tensor| {
        let mut g = Graph::new();
        let (xv, wv) = (g.leaf(x.clone()), g.leaf(w.clone()));
        let y = g.conv1d(xv, wv, None, 1, 1, 1).unwrap();
        let r = g.relu(y);
        let s = g.global_avg_pool(r).unwrap();
        (g.value(s).data().iter().sum::<f64>(), g, wv, s)
    };
    let (_, g, wv, s) = loss(&w);
    let analytic = g.backward_with(s, Tensor::full(g.value(s).shape(), 1.0)).unwrap();
    let analytic = analytic.get(wv).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..w.len() {
        let (mut plus, mut minus) = (w.clone(), w.clone());
        plus.data_mut()[j] += EPS;
        minus.data_mut()[j] -= EPS;
        let numeric = (loss(&plus).0 - loss(&minus).0) / (2.0 * EPS);
        worst = worst.max(rel(analytic.data()[j], numeric));
    }
    println!("conv1d + relu + pooling: worst relative error {worst:.2e}");

    let fusion = FusionInputs {
        demographics: true,
        clinical: true,
    };
    for family in Family::ALL {
        let spec = ModelSpec::new(family).with_depth(DepthPreset::Tiny).with_fusion(fusion);
        let mut model = AcuityModel::build(spec, 64, 5).unwrap();
        let ids: Vec<_> = model.params().ids().collect();
        for &id in &ids {
            for v in model.params_mut().get_mut(id).data_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
        }
        let x = Tensor::from_fn(&[2, 3, 64], |_| rng.random_range(0.0..1.0));
        let e = Tensor::from_fn(&[2, fusion.len()], |_| rng.random_range(0.0..1.0));
        let y = [1.0, 0.0];
        let (_, grads) = model.loss_and_gradients(&x, Some(&e), &y).unwrap();
        let mut worst: f64 = 0.0;
        // Every third scalar keeps the example quick.
        for (id, grad) in ids.iter().zip(&grads) {
            for j in (0..grad.len()).step_by(3) {
                let at = |d: f64| {
                    let mut m = model.clone();
                    m.params_mut().get_mut(*id).data_mut()[j] += d;
                    m.loss_and_gradients(&x, Some(&e), &y).unwrap().0
                };
                worst = worst.max(rel(grad.data()[j], (at(EPS) - at(-EPS)) / (2.0 * EPS)));
            }
        }
        println!("{:<14} {:>6} parameters, worst relative error {worst:.2e}", family.as_str(), model.count_params());
    }
}
