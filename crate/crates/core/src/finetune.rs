//! Centroid fine-tuning: gradient descent on the shared centroid values with
//! every cluster assignment frozen.
//!
//! A weight reconstructs as the sum of its selected stage centroids, so the
//! gradient of a centroid is the sum of the gradients of all weights
//! assigned to it (chain-rule factor 1 per membership). Planes never change;
//! only the `2·Σ n_i` centroid values move, which is why a fine-tuned stream
//! differs from its source in at most `2·b·Σ n_i` bits.
//!
//! Fine-tuning minimizes cross-entropy, not per-stage MSE; the recomputed
//! stage MSE diagnostics of the returned stacks need not stay monotone.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hquant::StageStack;
use crate::nn::{backward, cross_entropy, forward, NetworkModel};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct FineTuneConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weighted-layer slots to tune; `None` tunes all layers jointly.
    pub layer_subset: Option<Vec<usize>>,
}

impl FineTuneConfig {
    pub fn new(learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            learning_rate,
            epochs,
            batch_size,
            seed,
            layer_subset: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "fine-tune learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "fine-tune epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per layer slot, per stage: gradient of the loss w.r.t. `(c0, c1)`.
pub type CentroidGradients<S> = Vec<Vec<(S, S)>>;

/// The trainable parameter vector: `(c0, c1)` per stage per layer, flattened
/// in layer-major order (length `2·Σ n_i`).
pub fn centroid_params<S: Real>(stacks: &[StageStack<S>]) -> Vec<S> {
    let mut out = Vec::new();
    for stack in stacks {
        for stage in &stack.stages {
            out.push(stage.centroids.0);
            out.push(stage.centroids.1);
        }
    }
    out
}

fn check_stacks_match_model<S: Real>(
    stacks: &[StageStack<S>],
    model: &NetworkModel<S>,
) -> Result<()> {
    let weighted = model.weighted_layer_indices();
    if stacks.len() != weighted.len() {
        return Err(Error::InvalidAllocation(format!(
            "{} stage stacks for {} weighted layers",
            stacks.len(),
            weighted.len()
        )));
    }
    for (stack, &idx) in stacks.iter().zip(&weighted) {
        let expected = model.layers()[idx].weights().unwrap().len();
        if stack.layer_index != idx || stack.weight_count != expected {
            return Err(Error::ShapeMismatch {
                layer: idx,
                detail: format!(
                    "stack {} with {} weights does not match layer with {}",
                    stack.layer_index, stack.weight_count, expected
                ),
            });
        }
    }
    Ok(())
}

/// Copy of `model` with every quantizable layer's weights replaced by the
/// stack reconstruction at full retained depth.
pub fn model_from_stacks<S: Real>(
    stacks: &[StageStack<S>],
    model: &NetworkModel<S>,
) -> Result<NetworkModel<S>> {
    check_stacks_match_model(stacks, model)?;
    let mut out = model.clone();
    for stack in stacks {
        let tensor = stack.reconstruct_tensor(stack.depth())?;
        *out.layer_mut(stack.layer_index).weights_mut().unwrap() = tensor;
    }
    Ok(out)
}

/// Gradient of the mean cross-entropy w.r.t. every stage centroid: for
/// cluster `z` of stage `k` in layer `i`, the sum of weight gradients over
/// all weights whose stage-`k` plane bit selects `z`.
pub fn centroid_gradients<S: Real>(
    stacks: &[StageStack<S>],
    model: &NetworkModel<S>,
    batch: &Tensor<S>,
    labels: &[usize],
) -> Result<(S, CentroidGradients<S>)> {
    check_stacks_match_model(stacks, model)?;
    let (loss, grads) = backward(model, batch, labels)?;
    let mut out = Vec::with_capacity(stacks.len());
    for (slot, stack) in stacks.iter().enumerate() {
        let dw = grads.weights[slot].data();
        let mut per_stage = Vec::with_capacity(stack.stages.len());
        for stage in &stack.stages {
            let mut g0 = S::zero();
            let mut g1 = S::zero();
            for (i, &g) in dw.iter().enumerate() {
                if stage.plane.get(i) {
                    g1 += g;
                } else {
                    g0 += g;
                }
            }
            per_stage.push((g0, g1));
        }
        out.push(per_stage);
    }
    Ok((loss, out))
}

#[derive(Debug, Clone)]
pub struct FineTuneReport<S> {
    /// Rebuilt stacks: planes untouched, centroids tuned, MSE diagnostics
    /// recomputed against the base model's weights.
    pub stacks: Vec<StageStack<S>>,
    /// Full-training-set loss after each completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Validation loss per epoch; empty when no validation set was given.
    pub val_losses: Vec<f64>,
    /// Epoch at which a non-finite loss aborted training, if any; the stacks
    /// and trajectory reflect the last finite state.
    pub diverged_at: Option<usize>,
}

/// SGD on the centroid values only. Deterministic given the seed; planes are
/// never modified. Centroids stay snapped to 32-bit storage precision after
/// every step so the result serializes losslessly.
pub fn fine_tune<S: Real>(
    stacks: &[StageStack<S>],
    model: &NetworkModel<S>,
    dataset: &Dataset<S>,
    config: &FineTuneConfig,
) -> Result<FineTuneReport<S>> {
    fine_tune_with_validation(stacks, model, dataset, None, config)
}

/// As [`fine_tune`], additionally recording validation loss after each
/// epoch. Training touches only the training split.
pub fn fine_tune_with_validation<S: Real>(
    stacks: &[StageStack<S>],
    model: &NetworkModel<S>,
    dataset: &Dataset<S>,
    validation: Option<&Dataset<S>>,
    config: &FineTuneConfig,
) -> Result<FineTuneReport<S>> {
    config.validate()?;
    check_stacks_match_model(stacks, model)?;
    if let Some(subset) = &config.layer_subset {
        if let Some(&bad) = subset.iter().find(|&&slot| slot >= stacks.len()) {
            return Err(Error::InvalidConfig(format!(
                "fine-tune layer subset names slot {bad}, model has {}",
                stacks.len()
            )));
        }
    }

    let lr = S::from_f64_(config.learning_rate);
    let tuned_slot = |slot: usize| {
        config
            .layer_subset
            .as_ref()
            .map_or(true, |subset| subset.contains(&slot))
    };

    let mut tuned = stacks.to_vec();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut val_losses = Vec::new();
    let mut diverged_at = None;

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let (batch, labels) = dataset.gather(chunk);
            let assembled = model_from_stacks(&tuned, model)?;
            let (loss, grads) = centroid_gradients(&tuned, &assembled, &batch, &labels)?;
            if !loss.is_finite() {
                diverged_at = Some(epoch);
                break 'epochs;
            }
            for (slot, (stack, layer_grads)) in tuned.iter_mut().zip(&grads).enumerate() {
                if !tuned_slot(slot) {
                    continue;
                }
                for (stage, &(g0, g1)) in stack.stages.iter_mut().zip(layer_grads) {
                    let c0 = (stage.centroids.0 - lr * g0).snap_to_stored();
                    let c1 = (stage.centroids.1 - lr * g1).snap_to_stored();
                    stage.centroids = (c0, c1);
                    stage.degenerate = c0.to_stored().to_bits() == c1.to_stored().to_bits()
                        && stage.plane.count_ones() == 0;
                }
            }
        }
        let assembled = model_from_stacks(&tuned, model)?;
        let logits = forward(&assembled, dataset.inputs())?;
        let loss = cross_entropy(&logits, dataset.labels())?.to_f64_();
        if !loss.is_finite() {
            diverged_at = Some(epoch);
            break;
        }
        epoch_losses.push(loss);
        if let Some(val) = validation {
            let logits = forward(&assembled, val.inputs())?;
            val_losses.push(cross_entropy(&logits, val.labels())?.to_f64_());
        }
    }

    refresh_mse(&mut tuned, model);
    Ok(FineTuneReport {
        stacks: tuned,
        epoch_losses,
        val_losses,
        diverged_at,
    })
}

/// Recompute stage MSE diagnostics the same way the quantizer does:
/// sequential residual subtraction against the base model's weights.
fn refresh_mse<S: Real>(stacks: &mut [StageStack<S>], model: &NetworkModel<S>) {
    for stack in stacks.iter_mut() {
        let weights = model.layers()[stack.layer_index].weights().unwrap();
        let mut residual: Vec<S> = weights.data().to_vec();
        for stage in &mut stack.stages {
            let mut acc = S::zero();
            for (i, r) in residual.iter_mut().enumerate() {
                *r = *r - stage.centroid_for(i);
                acc += *r * *r;
            }
            stage.mse = acc / S::from_usize_(residual.len());
        }
    }
}
