//! Plain SGD on the full parameter set, for producing pre-trained toy models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

use super::backward::{backward, Gradients};
use super::NetworkModel;

const BATCH_SIZE: usize = 32;

#[derive(Debug, Clone)]
pub struct TrainReport<S> {
    /// Full-training-set loss after each epoch.
    pub epoch_losses: Vec<S>,
}

/// One SGD update: `param -= lr * grad` for every weight and bias.
pub fn sgd_step<S: Real>(model: &mut NetworkModel<S>, grads: &Gradients<S>, lr: S) {
    let weighted = model.weighted_layer_indices();
    for (slot, &idx) in weighted.iter().enumerate() {
        let layer = model.layer_mut(idx);
        let w = layer.weights_mut().unwrap();
        for (p, g) in w.data_mut().iter_mut().zip(grads.weights[slot].data()) {
            *p = *p - lr * *g;
        }
        let b = layer.bias_mut().unwrap();
        for (p, g) in b.data_mut().iter_mut().zip(grads.biases[slot].data()) {
            *p = *p - lr * *g;
        }
    }
}

/// Mini-batch SGD over the dataset; the seed fixes the shuffle order, so two
/// runs with the same seed produce identical weights. Returns the trained
/// model and the per-epoch loss trajectory. A non-finite loss aborts.
pub fn train_toy<S: Real>(
    model: &NetworkModel<S>,
    dataset: &Dataset<S>,
    epochs: usize,
    lr: S,
    seed: u64,
) -> Result<(NetworkModel<S>, TrainReport<S>)> {
    if lr < S::zero() || !lr.is_finite() {
        return Err(Error::InvalidConfig(format!("learning rate {lr} must be >= 0")));
    }
    let mut model = model.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(epochs),
    };

    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(BATCH_SIZE) {
            let (batch, labels) = dataset.gather(chunk);
            let (loss, grads) = backward(&model, &batch, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            sgd_step(&mut model, &grads, lr);
        }
        let logits = super::forward(&model, dataset.inputs())?;
        let loss = super::cross_entropy(&logits, dataset.labels())?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        report.epoch_losses.push(loss);
    }
    Ok((model, report))
}

/// Convenience: loss and top-1 accuracy of a model on a dataset.
pub fn evaluate_model<S: Real>(
    model: &NetworkModel<S>,
    dataset: &Dataset<S>,
) -> Result<(S, f64)> {
    let logits = super::forward(model, dataset.inputs())?;
    let loss = super::cross_entropy(&logits, dataset.labels())?;
    let acc = super::accuracy(&logits, dataset.labels())?;
    Ok((loss, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize_dataset;
    use crate::toy::toy_dense_model;

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let model = toy_dense_model(9);
        let data = synthesize_dataset(4, 24, 4, 3).unwrap();
        let (trained, _) = train_toy(&model, &data, 3, 0.0, 7).unwrap();
        assert_eq!(trained, model);
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let model = toy_dense_model(9);
        let data = synthesize_dataset(4, 48, 4, 3).unwrap();
        let (a, _) = train_toy(&model, &data, 5, 0.05, 123).unwrap();
        let (b, _) = train_toy(&model, &data, 5, 0.05, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_trajectory_decreases_on_separable_data() {
        let model = toy_dense_model(9);
        let data = synthesize_dataset(4, 96, 4, 3).unwrap();
        let (_, report) = train_toy(&model, &data, 20, 0.05, 11).unwrap();
        for pair in report.epoch_losses.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "loss went up: {} -> {}",
                pair[0],
                pair[1]
            );
        }
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
    }
}
