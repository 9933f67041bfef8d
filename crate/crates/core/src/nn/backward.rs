//! Backpropagation of mean cross-entropy through the supported layer set.

use crate::error::Result;
use crate::scalar::Real;
use crate::tensor::Tensor;

use super::forward::forward_trace;
use super::loss::log_softmax;
use super::{Layer, NetworkModel};

/// Parameter gradients, one entry per weighted layer in model order, with
/// the same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    pub weights: Vec<Tensor<S>>,
    pub biases: Vec<Tensor<S>>,
}

/// Gradients of the mean cross-entropy w.r.t. every weight and bias.
/// Also returns the loss, which comes for free from the same pass.
pub fn backward<S: Real>(
    model: &NetworkModel<S>,
    batch: &Tensor<S>,
    labels: &[usize],
) -> Result<(S, Gradients<S>)> {
    let trace = forward_trace(model, batch)?;
    let logits = trace.last().unwrap();
    let log_probs = log_softmax(logits);
    super::loss::cross_entropy(logits, labels)?; // validates labels/batch pairing
    let samples = labels.len();
    let classes = logits.shape()[1];
    let inv = S::one() / S::from_usize_(samples);

    // d loss / d logits = (softmax - onehot) / samples
    let mut d_out = Vec::with_capacity(log_probs.len());
    for i in 0..samples {
        let row = log_probs.row(i);
        for (c, &lp) in row.iter().enumerate() {
            let soft = lp.exp();
            let one = if c == labels[i] { S::one() } else { S::zero() };
            d_out.push((soft - one) * inv);
        }
    }
    let mut d_current = Tensor::new(vec![samples, classes], d_out).expect("logit shape");

    let mut loss = S::zero();
    for (i, &label) in labels.iter().enumerate() {
        loss -= log_probs.row(i)[label];
    }
    loss = loss * inv;

    let mut d_weights = vec![None; model.layers().len()];
    let mut d_biases = vec![None; model.layers().len()];

    for idx in (0..model.layers().len()).rev() {
        let layer = &model.layers()[idx];
        let input: &Tensor<S> = if idx == 0 { batch } else { &trace[idx - 1] };
        let output = &trace[idx];
        let (d_in, dw, db) = layer_backward(layer, input, output, &d_current);
        d_weights[idx] = dw;
        d_biases[idx] = db;
        d_current = d_in;
    }

    let grads = Gradients {
        weights: d_weights.into_iter().flatten().collect(),
        biases: d_biases.into_iter().flatten().collect(),
    };
    Ok((loss, grads))
}

#[allow(clippy::type_complexity)]
fn layer_backward<S: Real>(
    layer: &Layer<S>,
    input: &Tensor<S>,
    output: &Tensor<S>,
    d_out: &Tensor<S>,
) -> (Tensor<S>, Option<Tensor<S>>, Option<Tensor<S>>) {
    let samples = input.batch_len();
    match layer {
        Layer::Dense { weights, .. } => {
            let (units, in_dim) = (weights.shape()[0], weights.shape()[1]);
            let w = weights.data();
            let x = input.data();
            let dz = d_out.data();
            let mut dw = vec![S::zero(); units * in_dim];
            let mut db = vec![S::zero(); units];
            let mut dx = vec![S::zero(); samples * in_dim];
            for s in 0..samples {
                let xs = &x[s * in_dim..(s + 1) * in_dim];
                let dzs = &dz[s * units..(s + 1) * units];
                let dxs = &mut dx[s * in_dim..(s + 1) * in_dim];
                for (o, &g) in dzs.iter().enumerate() {
                    db[o] += g;
                    let wrow = &w[o * in_dim..(o + 1) * in_dim];
                    let dwrow = &mut dw[o * in_dim..(o + 1) * in_dim];
                    for i in 0..in_dim {
                        dwrow[i] += g * xs[i];
                        dxs[i] += g * wrow[i];
                    }
                }
            }
            (
                Tensor::new(input.shape().to_vec(), dx).unwrap(),
                Some(Tensor::new(vec![units, in_dim], dw).unwrap()),
                Some(Tensor::new(vec![units], db).unwrap()),
            )
        }
        Layer::Conv2d { weights, .. } => {
            let [oc, ic, kh, kw] = [
                weights.shape()[0],
                weights.shape()[1],
                weights.shape()[2],
                weights.shape()[3],
            ];
            let (h, w_in) = (input.shape()[2], input.shape()[3]);
            let (oh, ow) = (h - kh + 1, w_in - kw + 1);
            let wt = weights.data();
            let x = input.data();
            let dz = d_out.data();
            let mut dw = vec![S::zero(); weights.len()];
            let mut db = vec![S::zero(); oc];
            let mut dx = vec![S::zero(); input.len()];
            for s in 0..samples {
                for o in 0..oc {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            let g = dz[((s * oc + o) * oh + yy) * ow + xx];
                            db[o] += g;
                            for i in 0..ic {
                                for dy in 0..kh {
                                    let xrow = ((s * ic + i) * h + yy + dy) * w_in + xx;
                                    let wrow = ((o * ic + i) * kh + dy) * kw;
                                    for dxk in 0..kw {
                                        dw[wrow + dxk] += g * x[xrow + dxk];
                                        dx[xrow + dxk] += g * wt[wrow + dxk];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (
                Tensor::new(input.shape().to_vec(), dx).unwrap(),
                Some(Tensor::new(weights.shape().to_vec(), dw).unwrap()),
                Some(Tensor::new(vec![oc], db).unwrap()),
            )
        }
        Layer::Relu => {
            let dx: Vec<S> = output
                .data()
                .iter()
                .zip(d_out.data())
                .map(|(&y, &g)| if y > S::zero() { g } else { S::zero() })
                .collect();
            (Tensor::new(input.shape().to_vec(), dx).unwrap(), None, None)
        }
        Layer::MaxPool2x2 => {
            let (c, h, w_in) = (input.shape()[1], input.shape()[2], input.shape()[3]);
            let (oh, ow) = (h / 2, w_in / 2);
            let x = input.data();
            let dz = d_out.data();
            let mut dx = vec![S::zero(); input.len()];
            for sc in 0..samples * c {
                for yy in 0..oh {
                    for xx in 0..ow {
                        let base = (sc * h + 2 * yy) * w_in + 2 * xx;
                        // Ties route to the first entry in scan order.
                        let window = [base, base + 1, base + w_in, base + w_in + 1];
                        let mut best = window[0];
                        for &p in &window[1..] {
                            if x[p] > x[best] {
                                best = p;
                            }
                        }
                        dx[best] += dz[(sc * oh + yy) * ow + xx];
                    }
                }
            }
            (Tensor::new(input.shape().to_vec(), dx).unwrap(), None, None)
        }
        Layer::Flatten => (
            Tensor::new(input.shape().to_vec(), d_out.data().to_vec()).unwrap(),
            None,
            None,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::test_support::check_gradients;
    use crate::tensor::Tensor;
    use crate::toy::{toy_conv_model, toy_dense_model};

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let model = toy_dense_model(7);
        let batch = crate::data::synthesize_dataset(11, 12, 4, 3).unwrap();
        check_gradients(&model, batch.inputs(), batch.labels(), 1e-5, 1e-4);
    }

    #[test]
    fn conv_model_gradients_match_finite_differences() {
        let model = toy_conv_model(3);
        let images = crate::nn::test_support::continuous_images(5, 6, 6, 6, 3);
        check_gradients(&model, images.inputs(), images.labels(), 1e-5, 1e-4);
    }

    #[test]
    fn zero_input_gives_zero_weight_gradient_but_nonzero_bias_gradient() {
        // Single dense layer: with a zero batch the weight gradient dz*x
        // vanishes while the bias gradient keeps the softmax-label residual.
        let model = crate::toy::seeded_mlp::<f64>(4, &[], 3, 1);
        let batch = t(&[3, 4], &[0.0; 12]);
        let (_, grads) = backward(&model, &batch, &[0, 1, 2]).unwrap();
        assert!(grads.weights[0].data().iter().all(|&g| g == 0.0));
        assert!(grads.biases[0].data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn duplicating_samples_preserves_mean_gradient() {
        let model = toy_dense_model(2);
        let data = crate::data::synthesize_dataset(3, 6, 4, 3).unwrap();
        let (_, g1) = backward(&model, data.inputs(), data.labels()).unwrap();

        let mut doubled = data.inputs().data().to_vec();
        doubled.extend_from_slice(data.inputs().data());
        let mut labels = data.labels().to_vec();
        labels.extend_from_slice(data.labels());
        let batch = t(&[12, 4], &doubled);
        let (_, g2) = backward(&model, &batch, &labels).unwrap();

        for (a, b) in g1.weights.iter().zip(&g2.weights) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
