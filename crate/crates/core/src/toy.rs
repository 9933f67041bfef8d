//! Seeded toy model builders for demos and tests. Weights are snapped to
//! 32-bit storage precision at construction so that a fresh model survives a
//! save/load round trip bit-exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::nn::{Layer, NetworkModel};
use crate::scalar::Real;
use crate::tensor::Tensor;

fn uniform_tensor<S: Real>(shape: Vec<usize>, scale: f64, rng: &mut ChaCha20Rng) -> Tensor<S> {
    let len: usize = shape.iter().product();
    let data: Vec<S> = (0..len)
        .map(|_| S::from_f64_(rng.gen_range(-scale..scale)).snap_to_stored())
        .collect();
    Tensor::new(shape, data).expect("finite init")
}

fn dense<S: Real>(out: usize, inp: usize, rng: &mut ChaCha20Rng) -> Layer<S> {
    let scale = (6.0 / (out + inp) as f64).sqrt();
    Layer::dense(
        uniform_tensor(vec![out, inp], scale, rng),
        Tensor::zeros(vec![out]),
    )
    .expect("valid dense layer")
}

fn conv<S: Real>(oc: usize, ic: usize, k: usize, rng: &mut ChaCha20Rng) -> Layer<S> {
    let fan = ic * k * k + oc * k * k;
    let scale = (6.0 / fan as f64).sqrt();
    Layer::conv2d(
        uniform_tensor(vec![oc, ic, k, k], scale, rng),
        Tensor::zeros(vec![oc]),
    )
    .expect("valid conv layer")
}

/// MLP over flat vectors: dense/relu pairs through `hidden`, then a dense
/// classifier head.
pub fn seeded_mlp<S: Real>(
    input_dim: usize,
    hidden: &[usize],
    num_classes: usize,
    seed: u64,
) -> NetworkModel<S> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut width = input_dim;
    for &h in hidden {
        layers.push(dense(h, width, &mut rng));
        layers.push(Layer::Relu);
        width = h;
    }
    layers.push(dense(num_classes, width, &mut rng));
    NetworkModel::new(layers, vec![input_dim]).expect("mlp composes")
}

/// Small 4-dim, 3-class MLP used across unit tests.
pub fn toy_dense_model(seed: u64) -> NetworkModel<f64> {
    seeded_mlp(4, &[6], 3, seed)
}

/// Tiny convnet over `[1, 6, 6]` images: conv3x3, relu, pool, flatten, dense.
pub fn toy_conv_model(seed: u64) -> NetworkModel<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let layers = vec![
        conv(3, 1, 3, &mut rng),
        Layer::Relu,
        Layer::MaxPool2x2,
        Layer::Flatten,
        dense(3, 12, &mut rng),
    ];
    NetworkModel::new(layers, vec![1, 6, 6]).expect("convnet composes")
}

/// Two CONV + two FC layers over `[1, 8, 8]` images (LeNet-style layout at
/// desk scale, ~800 parameters). Weight counts per quantizable layer:
/// `[36, 128, 512, 64]`.
pub fn lenet_shaped<S: Real>(num_classes: usize, seed: u64) -> NetworkModel<S> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let layers = vec![
        conv(4, 1, 3, &mut rng),
        Layer::Relu,
        Layer::MaxPool2x2,
        conv(8, 4, 2, &mut rng),
        Layer::Relu,
        Layer::Flatten,
        dense(16, 32, &mut rng),
        Layer::Relu,
        dense(num_classes, 16, &mut rng),
    ];
    NetworkModel::new(layers, vec![1, 8, 8]).expect("lenet-shaped model composes")
}

/// MLP head over images: flatten then dense layers. All-FC counterpart to
/// [`lenet_shaped`].
pub fn mlp_on_images<S: Real>(
    rows: usize,
    cols: usize,
    hidden: &[usize],
    num_classes: usize,
    seed: u64,
) -> NetworkModel<S> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut layers = vec![Layer::Flatten];
    let mut width = rows * cols;
    for &h in hidden {
        layers.push(dense(h, width, &mut rng));
        layers.push(Layer::Relu);
        width = h;
    }
    layers.push(dense(num_classes, width, &mut rng));
    NetworkModel::new(layers, vec![1, rows, cols]).expect("image mlp composes")
}
