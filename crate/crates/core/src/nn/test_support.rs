//! Finite-difference gradient oracle. Only forward inference and the loss
//! are used here, so the check stays independent of the backprop path it
//! verifies. Compiled for tests (and the `test-support` feature used by the
//! acceptance suite).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::Dataset;
use crate::scalar::Real;
use crate::tensor::Tensor;

use super::{backward, cross_entropy, forward, NetworkModel};

/// Continuous random images for gradient checks. Finite-difference probing
/// needs inputs without the u8 quantization of the synthetic datasets, so
/// that pool/relu decision boundaries stay clear of the probe interval.
pub fn continuous_images(
    seed: u64,
    samples: usize,
    rows: usize,
    cols: usize,
    num_classes: usize,
) -> Dataset<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..samples * rows * cols)
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let labels: Vec<usize> = (0..samples).map(|i| i % num_classes).collect();
    let inputs = Tensor::new(vec![samples, 1, rows, cols], data).unwrap();
    Dataset::new(inputs, labels, num_classes).unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero gradients from
/// blowing up the ratio.
pub fn relative_error<S: Real>(a: S, b: S) -> f64 {
    let (a, b) = (a.to_f64_(), b.to_f64_());
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn loss_of<S: Real>(model: &NetworkModel<S>, batch: &Tensor<S>, labels: &[usize]) -> S {
    let logits = forward(model, batch).expect("forward in FD oracle");
    cross_entropy(&logits, labels).expect("loss in FD oracle")
}

/// Central finite differences over every weight and bias; panics if any
/// entry's relative error against `backward` exceeds `tol`. Returns the
/// largest relative error seen.
pub fn check_gradients<S: Real>(
    model: &NetworkModel<S>,
    batch: &Tensor<S>,
    labels: &[usize],
    step: f64,
    tol: f64,
) -> f64 {
    let (_, grads) = backward(model, batch, labels).expect("backward in FD check");
    let weighted = model.weighted_layer_indices();
    let h = S::from_f64_(step);
    let mut worst = 0.0f64;

    let mut scratch = model.clone();
    for (slot, &idx) in weighted.iter().enumerate() {
        for which in [0, 1] {
            let count = if which == 0 {
                grads.weights[slot].len()
            } else {
                grads.biases[slot].len()
            };
            for p in 0..count {
                let read = |m: &mut NetworkModel<S>, v: Option<S>| -> S {
                    let layer = m.layer_mut(idx);
                    let t = if which == 0 {
                        layer.weights_mut().unwrap()
                    } else {
                        layer.bias_mut().unwrap()
                    };
                    let old = t.data()[p];
                    if let Some(v) = v {
                        t.data_mut()[p] = v;
                    }
                    old
                };
                let orig = read(&mut scratch, None);
                read(&mut scratch, Some(orig + h));
                let plus = loss_of(&scratch, batch, labels);
                read(&mut scratch, Some(orig - h));
                let minus = loss_of(&scratch, batch, labels);
                read(&mut scratch, Some(orig));

                let numeric = (plus - minus) / (h + h);
                let analytic = if which == 0 {
                    grads.weights[slot].data()[p]
                } else {
                    grads.biases[slot].data()[p]
                };
                let err = relative_error(analytic, numeric);
                worst = worst.max(err);
                assert!(
                    err <= tol,
                    "gradient mismatch at layer {idx} param {p}: analytic {analytic}, numeric {numeric}, rel {err}"
                );
            }
        }
    }
    worst
}
