//! Minimal network engine: dense / conv2d / relu / maxpool2x2 / flatten
//! layers with forward inference, cross-entropy loss, and backpropagation.
//! Just enough to evaluate and fine-tune compressed models; not a framework.

mod backward;
mod forward;
mod loss;
#[cfg(any(test, feature = "test-support"))]
pub mod test_support;
mod train;

pub use backward::{backward, Gradients};
pub use forward::forward;
pub use loss::{accuracy, cross_entropy, log_softmax};
pub use train::{evaluate_model, sgd_step, train_toy, TrainReport};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Marks which initial bit depth a weighted layer receives during
/// quantization (M bits for CONV layers, P bits for FC layers).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindTag {
    Conv,
    Fc,
}

impl KindTag {
    pub fn as_byte(self) -> u8 {
        match self {
            KindTag::Conv => 1,
            KindTag::Fc => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(KindTag::Conv),
            2 => Some(KindTag::Fc),
            _ => None,
        }
    }
}

impl std::fmt::Display for KindTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KindTag::Conv => write!(f, "CONV"),
            KindTag::Fc => write!(f, "FC"),
        }
    }
}

/// One network layer.
///
/// Dense weights are `[out, in]`; conv2d weights are
/// `[out_ch, in_ch, kh, kw]` with stride 1 and valid padding. Bias length
/// equals the output unit/channel count. Biases are never quantized by the
/// toolkit; they travel uncompressed.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<S> {
    Dense { weights: Tensor<S>, bias: Tensor<S> },
    Conv2d { weights: Tensor<S>, bias: Tensor<S> },
    Relu,
    MaxPool2x2,
    Flatten,
}

impl<S: Real> Layer<S> {
    pub fn dense(weights: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::InvalidModel(format!(
                "dense weights must be 2-D [out, in], got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::InvalidModel(format!(
                "dense bias shape {:?} does not match {} output units",
                bias.shape(),
                weights.shape()[0]
            )));
        }
        Ok(Layer::Dense { weights, bias })
    }

    pub fn conv2d(weights: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        if weights.shape().len() != 4 {
            return Err(Error::InvalidModel(format!(
                "conv2d weights must be 4-D [out_ch, in_ch, kh, kw], got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::InvalidModel(format!(
                "conv2d bias shape {:?} does not match {} output channels",
                bias.shape(),
                weights.shape()[0]
            )));
        }
        Ok(Layer::Conv2d { weights, bias })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2x2 => "maxpool2x2",
            Layer::Flatten => "flatten",
        }
    }

    /// CONV for conv2d, FC for dense, none otherwise.
    pub fn kind_tag(&self) -> Option<KindTag> {
        match self {
            Layer::Conv2d { .. } => Some(KindTag::Conv),
            Layer::Dense { .. } => Some(KindTag::Fc),
            _ => None,
        }
    }

    pub fn weights(&self) -> Option<&Tensor<S>> {
        match self {
            Layer::Dense { weights, .. } | Layer::Conv2d { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn weights_mut(&mut self) -> Option<&mut Tensor<S>> {
        match self {
            Layer::Dense { weights, .. } | Layer::Conv2d { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor<S>> {
        match self {
            Layer::Dense { bias, .. } | Layer::Conv2d { bias, .. } => Some(bias),
            _ => None,
        }
    }

    pub fn bias_mut(&mut self) -> Option<&mut Tensor<S>> {
        match self {
            Layer::Dense { bias, .. } | Layer::Conv2d { bias, .. } => Some(bias),
            _ => None,
        }
    }

    /// Output shape (per sample) for a given input shape, or an error when
    /// the shapes do not compose.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            Layer::Dense { weights, .. } => {
                let (out, inp) = (weights.shape()[0], weights.shape()[1]);
                if input != [inp] {
                    return Err(format!(
                        "dense expects input [{inp}], got {input:?} (flatten first?)"
                    ));
                }
                Ok(vec![out])
            }
            Layer::Conv2d { weights, .. } => {
                let [oc, ic, kh, kw] = [
                    weights.shape()[0],
                    weights.shape()[1],
                    weights.shape()[2],
                    weights.shape()[3],
                ];
                match input {
                    [c, h, w] if *c == ic && *h >= kh && *w >= kw => {
                        Ok(vec![oc, h - kh + 1, w - kw + 1])
                    }
                    _ => Err(format!(
                        "conv2d with kernel [{oc},{ic},{kh},{kw}] cannot take input {input:?}"
                    )),
                }
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2x2 => match input {
                [c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*c, h / 2, w / 2]),
                _ => Err(format!("maxpool2x2 needs [c, h>=2, w>=2], got {input:?}")),
            },
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// An ordered stack of layers plus the per-sample input shape.
///
/// Consecutive layer shapes are validated to compose at construction.
/// `L`, the number of weighted layers, is `weighted_layer_indices().len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel<S> {
    layers: Vec<Layer<S>>,
    input_shape: Vec<usize>,
}

impl<S: Real> NetworkModel<S> {
    pub fn new(layers: Vec<Layer<S>>, input_shape: Vec<usize>) -> Result<Self> {
        let model = Self {
            layers,
            input_shape,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.iter().all(|l| l.weights().is_none()) {
            return Err(Error::InvalidModel(
                "model has no weighted layer".into(),
            ));
        }
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|detail| Error::ShapeMismatch { layer: i, detail })?;
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layer_mut(&mut self, idx: usize) -> &mut Layer<S> {
        &mut self.layers[idx]
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape of the whole stack.
    pub fn output_shape(&self) -> Vec<usize> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.output_shape(&shape).expect("validated at construction");
        }
        shape
    }

    /// Indices (into `layers`) of the weighted layers, in order.
    pub fn weighted_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.weights().is_some())
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of weighted layers.
    pub fn num_weighted_layers(&self) -> usize {
        self.weighted_layer_indices().len()
    }

    /// Weight element counts of the weighted layers, in order (the N_i).
    pub fn weight_counts(&self) -> Vec<u64> {
        self.weighted_layer_indices()
            .iter()
            .map(|&i| self.layers[i].weights().unwrap().len() as u64)
            .collect()
    }

    /// Copy with every weight and bias rounded through 32-bit storage
    /// precision, matching what a save/load round trip would produce.
    pub fn snapped_to_stored(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense { weights, bias } => Layer::Dense {
                    weights: weights.snapped_to_stored(),
                    bias: bias.snapped_to_stored(),
                },
                Layer::Conv2d { weights, bias } => Layer::Conv2d {
                    weights: weights.snapped_to_stored(),
                    bias: bias.snapped_to_stored(),
                },
                other => other.clone(),
            })
            .collect();
        Self {
            layers,
            input_shape: self.input_shape.clone(),
        }
    }

    /// Total stored parameter payload (weights + biases) in bytes at 32 bits
    /// per value.
    pub fn parameter_payload_bytes(&self) -> u64 {
        let values: u64 = self
            .layers
            .iter()
            .map(|l| {
                (l.weights().map_or(0, Tensor::len) + l.bias().map_or(0, Tensor::len)) as u64
            })
            .sum();
        values * 4
    }
}
