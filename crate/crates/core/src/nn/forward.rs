//! Forward inference. Pure: repeated calls on identical inputs are
//! bit-identical, and the model is never mutated.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

use super::{Layer, NetworkModel};

/// Run the model on a batch (leading axis = samples) and return logits
/// `[samples, num_classes]`.
pub fn forward<S: Real>(model: &NetworkModel<S>, batch: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(forward_trace(model, batch)?.pop().unwrap())
}

/// Forward pass keeping every layer's output; `result[i]` is the output of
/// layer `i`. Used by backprop.
pub(super) fn forward_trace<S: Real>(
    model: &NetworkModel<S>,
    batch: &Tensor<S>,
) -> Result<Vec<Tensor<S>>> {
    let shape = batch.shape();
    if shape.len() != model.input_shape().len() + 1 || &shape[1..] != model.input_shape() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            detail: format!(
                "batch shape {shape:?} does not match input shape {:?} with a leading sample axis",
                model.input_shape()
            ),
        });
    }

    let mut outputs = Vec::with_capacity(model.layers().len());
    let mut current = batch;
    for (i, layer) in model.layers().iter().enumerate() {
        let out = apply_layer(layer, current)
            .map_err(|detail| Error::ShapeMismatch { layer: i, detail })?;
        outputs.push(out);
        current = outputs.last().unwrap();
    }
    Ok(outputs)
}

fn apply_layer<S: Real>(
    layer: &Layer<S>,
    input: &Tensor<S>,
) -> std::result::Result<Tensor<S>, String> {
    let samples = input.batch_len();
    let per_sample = &input.shape()[1..];
    let out_shape = layer.output_shape(per_sample)?;

    let out = match layer {
        Layer::Dense { weights, bias } => {
            let (units, in_dim) = (weights.shape()[0], weights.shape()[1]);
            let w = weights.data();
            let b = bias.data();
            let x = input.data();
            let mut y = vec![S::zero(); samples * units];
            for s in 0..samples {
                let xs = &x[s * in_dim..(s + 1) * in_dim];
                let ys = &mut y[s * units..(s + 1) * units];
                for (o, yo) in ys.iter_mut().enumerate() {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    let mut acc = b[o];
                    for (wv, xv) in row.iter().zip(xs) {
                        acc += *wv * *xv;
                    }
                    *yo = acc;
                }
            }
            y
        }
        Layer::Conv2d { weights, bias } => {
            let [oc, ic, kh, kw] = [
                weights.shape()[0],
                weights.shape()[1],
                weights.shape()[2],
                weights.shape()[3],
            ];
            let (h, w_in) = (per_sample[1], per_sample[2]);
            let (oh, ow) = (h - kh + 1, w_in - kw + 1);
            let wt = weights.data();
            let b = bias.data();
            let x = input.data();
            let mut y = vec![S::zero(); samples * oc * oh * ow];
            for s in 0..samples {
                for o in 0..oc {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            let mut acc = b[o];
                            for i in 0..ic {
                                for dy in 0..kh {
                                    let xrow = ((s * ic + i) * h + yy + dy) * w_in + xx;
                                    let wrow = ((o * ic + i) * kh + dy) * kw;
                                    for dx in 0..kw {
                                        acc += wt[wrow + dx] * x[xrow + dx];
                                    }
                                }
                            }
                            y[((s * oc + o) * oh + yy) * ow + xx] = acc;
                        }
                    }
                }
            }
            y
        }
        Layer::Relu => input
            .data()
            .iter()
            .map(|&v| if v > S::zero() { v } else { S::zero() })
            .collect(),
        Layer::MaxPool2x2 => {
            let (c, h, w_in) = (per_sample[0], per_sample[1], per_sample[2]);
            let (oh, ow) = (h / 2, w_in / 2);
            let x = input.data();
            let mut y = vec![S::zero(); samples * c * oh * ow];
            for sc in 0..samples * c {
                for yy in 0..oh {
                    for xx in 0..ow {
                        let base = (sc * h + 2 * yy) * w_in + 2 * xx;
                        let m = x[base]
                            .max(x[base + 1])
                            .max(x[base + w_in])
                            .max(x[base + w_in + 1]);
                        y[(sc * oh + yy) * ow + xx] = m;
                    }
                }
            }
            y
        }
        Layer::Flatten => input.data().to_vec(),
    };

    let mut shape = vec![samples];
    shape.extend(out_shape);
    Tensor::new(shape, out).map_err(|e| e.to_string())
}
