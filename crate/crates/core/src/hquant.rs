//! Hierarchical residual quantization.
//!
//! Each stage is a 1-bit (K=2) Lloyd clustering of the residuals left by the
//! stages before it: stage 1 clusters the raw weights, stage 2 clusters the
//! stage-1 errors, and so on. A weight reconstructs as the sum of its
//! selected centroids through any prefix of stages, so the representation
//! can be truncated to fewer bits without re-clustering.
//!
//! Centroids are computed in the working scalar but snapped to 32-bit
//! storage precision before use; residuals, MSE, and reconstructions all see
//! the snapped values, which makes reconstruction bit-reproducible from a
//! serialized stream.

use num_rational::Ratio;
use rayon::prelude::*;

use crate::bits::BitPlane;
use crate::error::{Error, Result};
use crate::nn::{KindTag, NetworkModel};
use crate::scalar::Real;
use crate::tensor::Tensor;

const MAX_LLOYD_ITERS: usize = 100;

/// One 1-bit quantization stage: two centroids and a bit-plane assigning
/// every weight to one of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage<S> {
    /// `(c0, c1)` with `c0 <= c1` unless degenerate; snapped to 32-bit
    /// storage precision.
    pub centroids: (S, S),
    pub plane: BitPlane,
    /// Mean squared residual after subtracting this stage.
    pub mse: S,
    /// All inputs were equal; both centroids carry that value and the plane
    /// is all zeros.
    pub degenerate: bool,
}

impl<S: Real> Stage<S> {
    pub fn centroid_for(&self, index: usize) -> S {
        if self.plane.get(index) {
            self.centroids.1
        } else {
            self.centroids.0
        }
    }
}

/// The full hierarchical representation of one network layer: `n_i` stages
/// over `weight_count` weights, base stage first.
#[derive(Debug, Clone, PartialEq)]
pub struct StageStack<S> {
    /// Index of the source layer in `model.layers()`.
    pub layer_index: usize,
    pub kind_tag: KindTag,
    pub original_shape: Vec<usize>,
    pub weight_count: usize,
    pub stages: Vec<Stage<S>>,
}

impl<S: Real> StageStack<S> {
    /// Quantize `weights` into `n` stages, carrying layer metadata.
    pub fn build(
        layer_index: usize,
        kind_tag: KindTag,
        original_shape: Vec<usize>,
        weights: &[S],
        n: u16,
    ) -> Result<Self> {
        let stages = residual_stages(weights, n)?;
        Ok(Self {
            layer_index,
            kind_tag,
            original_shape,
            weight_count: weights.len(),
            stages,
        })
    }

    pub fn depth(&self) -> u16 {
        self.stages.len() as u16
    }

    /// Copy truncated to the first `k` stages.
    pub fn truncated(&self, k: u16) -> Result<Self> {
        if k < 1 || k > self.depth() {
            return Err(Error::InvalidAllocation(format!(
                "depth {k} out of range 1..={} for layer {}",
                self.depth(),
                self.layer_index
            )));
        }
        Ok(Self {
            layer_index: self.layer_index,
            kind_tag: self.kind_tag,
            original_shape: self.original_shape.clone(),
            weight_count: self.weight_count,
            stages: self.stages[..k as usize].to_vec(),
        })
    }

    /// Reconstruction at depth `k` reshaped to the original weight tensor.
    pub fn reconstruct_tensor(&self, k: u16) -> Result<Tensor<S>> {
        Tensor::new(self.original_shape.clone(), reconstruct(self, k)?)
    }
}

/// One K=2 Lloyd clustering with linear initialization (the range endpoints
/// at K=2). Assignment ties go to cluster 0; iteration stops when the
/// assignment is stable or after 100 rounds; an emptied cluster is re-seeded
/// with the point farthest from the surviving centroid.
pub fn kmeans2<S: Real>(values: &[S]) -> Result<Stage<S>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("kmeans2"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidTensor("non-finite input to kmeans2".into()));
    }

    let min = values.iter().copied().fold(S::infinity(), S::min);
    let max = values.iter().copied().fold(S::neg_infinity(), S::max);
    if min == max {
        let c = min.snap_to_stored();
        let mse = mean_sq_residual(values, |_| c);
        return Ok(Stage {
            centroids: (c, c),
            plane: BitPlane::zeros(values.len()),
            mse,
            degenerate: true,
        });
    }

    let mut c0 = min;
    let mut c1 = max;
    let mut assign = vec![false; values.len()];
    let mut prev: Option<Vec<bool>> = None;

    for _ in 0..MAX_LLOYD_ITERS {
        for (slot, &v) in assign.iter_mut().zip(values) {
            *slot = (v - c1).abs() < (v - c0).abs();
        }
        if prev.as_deref() == Some(assign.as_slice()) {
            break;
        }
        let (mut s0, mut n0, mut s1, mut n1) = (S::zero(), 0usize, S::zero(), 0usize);
        for (&bit, &v) in assign.iter().zip(values) {
            if bit {
                s1 += v;
                n1 += 1;
            } else {
                s0 += v;
                n0 += 1;
            }
        }
        if n0 == 0 {
            c1 = s1 / S::from_usize_(n1);
            c0 = farthest_from(values, c1);
        } else if n1 == 0 {
            c0 = s0 / S::from_usize_(n0);
            c1 = farthest_from(values, c0);
        } else {
            c0 = s0 / S::from_usize_(n0);
            c1 = s1 / S::from_usize_(n1);
        }
        prev = Some(assign.clone());
    }

    // Final centroids: means of the final assignment (bit-identical to the
    // loop's values in the converged case, and restores the centroid==mean
    // invariant if the iteration cap was hit mid-update).
    let (mut s0, mut n0, mut s1, mut n1) = (S::zero(), 0usize, S::zero(), 0usize);
    for (&bit, &v) in assign.iter().zip(values) {
        if bit {
            s1 += v;
            n1 += 1;
        } else {
            s0 += v;
            n0 += 1;
        }
    }
    if n0 > 0 {
        c0 = s0 / S::from_usize_(n0);
    }
    if n1 > 0 {
        c1 = s1 / S::from_usize_(n1);
    }

    if c1 < c0 {
        std::mem::swap(&mut c0, &mut c1);
        assign.iter_mut().for_each(|b| *b = !*b);
    }

    let c0 = c0.snap_to_stored();
    let c1 = c1.snap_to_stored();
    let plane = BitPlane::from_bits(&assign);
    let mse = mean_sq_residual(values, |i| if plane.get(i) { c1 } else { c0 });
    Ok(Stage {
        centroids: (c0, c1),
        plane,
        mse,
        degenerate: false,
    })
}

fn farthest_from<S: Real>(values: &[S], anchor: S) -> S {
    let mut best = values[0];
    for &v in values {
        if (v - anchor).abs() > (best - anchor).abs() {
            best = v;
        }
    }
    best
}

fn mean_sq_residual<S: Real>(values: &[S], centroid: impl Fn(usize) -> S) -> S {
    let mut acc = S::zero();
    for (i, &v) in values.iter().enumerate() {
        let r = v - centroid(i);
        acc += r * r;
    }
    acc / S::from_usize_(values.len())
}

fn residual_stages<S: Real>(weights: &[S], n: u16) -> Result<Vec<Stage<S>>> {
    if n < 1 {
        return Err(Error::InvalidAllocation(
            "stage count must be at least 1".into(),
        ));
    }
    if weights.is_empty() {
        return Err(Error::EmptyInput("hierarchical_quantize"));
    }
    let mut residual: Vec<S> = weights.to_vec();
    let mut stages = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let stage = kmeans2(&residual)?;
        for (i, r) in residual.iter_mut().enumerate() {
            *r = *r - stage.centroid_for(i);
        }
        stages.push(stage);
    }
    Ok(stages)
}

/// Quantize a bare weight vector into an `n`-stage stack (no layer
/// metadata; `quantize_model` attaches real metadata).
pub fn hierarchical_quantize<S: Real>(weights: &[S], n: u16) -> Result<StageStack<S>> {
    StageStack::build(0, KindTag::Fc, vec![weights.len()], weights, n)
}

/// Sum of selected centroids through stages `1..=k` for every weight.
pub fn reconstruct<S: Real>(stack: &StageStack<S>, k: u16) -> Result<Vec<S>> {
    if k < 1 || k > stack.depth() {
        return Err(Error::InvalidAllocation(format!(
            "reconstruction depth {k} out of range 1..={}",
            stack.depth()
        )));
    }
    let mut out = vec![S::zero(); stack.weight_count];
    for stage in &stack.stages[..k as usize] {
        for (i, o) in out.iter_mut().enumerate() {
            *o += stage.centroid_for(i);
        }
    }
    Ok(out)
}

/// Per-layer compression-rate arithmetic for an `n`-stage hierarchical
/// quantization of `N` weights at `b` stored bits per value.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub weight_count: u64,
    pub stage_count: u16,
    pub stored_bits: u32,
    /// `N * n` — the bit-planes, which dominate storage.
    pub index_bits: u64,
    /// `2 * n * b` — the centroid table.
    pub centroid_bits: u64,
    /// `N*b / (N*n + 2*n*b)`, exact.
    pub ratio: Ratio<u128>,
    /// Conventional single-shot K-means comparator `N*b / (N*n + 2^n*b)`.
    pub conventional_ratio: f64,
    /// Payload size as serialized: planes byte-padded per stage, plus the
    /// two centroids per stage. Headers are not included.
    pub on_disk_bits: u64,
}

impl RateReport {
    pub fn ratio_f64(&self) -> f64 {
        *self.ratio.numer() as f64 / *self.ratio.denom() as f64
    }
}

pub fn compression_rate(weight_count: u64, stage_count: u16, stored_bits: u32) -> RateReport {
    let (big_n, n, b) = (
        weight_count as u128,
        stage_count as u128,
        stored_bits as u128,
    );
    let index_bits = big_n * n;
    let centroid_bits = 2 * n * b;
    let ratio = Ratio::new(big_n * b, index_bits + centroid_bits);
    let conventional_denominator = index_bits as f64 + 2f64.powi(stage_count as i32) * b as f64;
    RateReport {
        weight_count,
        stage_count,
        stored_bits,
        index_bits: index_bits as u64,
        centroid_bits: centroid_bits as u64,
        ratio,
        conventional_ratio: (big_n * b) as f64 / conventional_denominator,
        on_disk_bits: stage_count as u64 * (2 * stored_bits as u64 + 8 * weight_count.div_ceil(8)),
    }
}

/// Whole-model rate: original bits over compressed bits.
pub fn whole_model_ratio(original_bits: u64, compressed_bits: u64) -> f64 {
    original_bits as f64 / compressed_bits as f64
}

/// The initial bit assignment of the search: `conv_bits` stages for every
/// CONV layer, `fc_bits` for every FC layer.
pub fn initial_allocation<S: Real>(
    model: &NetworkModel<S>,
    conv_bits: u16,
    fc_bits: u16,
) -> Vec<u16> {
    model
        .weighted_layer_indices()
        .iter()
        .map(|&i| match model.layers()[i].kind_tag().unwrap() {
            KindTag::Conv => conv_bits,
            KindTag::Fc => fc_bits,
        })
        .collect()
}

/// Hierarchically quantize every weighted layer at its allocated depth.
/// Layers are independent and quantized in parallel; the result order is
/// the weighted-layer order either way.
pub fn quantize_model<S: Real>(
    model: &NetworkModel<S>,
    bits_per_layer: &[u16],
) -> Result<Vec<StageStack<S>>> {
    let weighted = model.weighted_layer_indices();
    if weighted.len() != bits_per_layer.len() {
        return Err(Error::InvalidAllocation(format!(
            "allocation has {} entries but the model has {} weighted layers",
            bits_per_layer.len(),
            weighted.len()
        )));
    }
    if let Some(&bad) = bits_per_layer.iter().find(|&&n| n < 1) {
        return Err(Error::InvalidAllocation(format!(
            "every layer needs at least 1 bit, got {bad}"
        )));
    }
    weighted
        .par_iter()
        .zip(bits_per_layer)
        .map(|(&idx, &n)| {
            let layer = &model.layers()[idx];
            let weights = layer.weights().unwrap();
            StageStack::build(
                idx,
                layer.kind_tag().unwrap(),
                weights.shape().to_vec(),
                weights.data(),
                n,
            )
        })
        .collect()
}

/// Brute-force 1-D 2-means oracle: optimal clusters are contiguous runs of
/// the sorted values, so the best split is found by scanning all of them.
/// Test-side reference, independent of the Lloyd path.
#[cfg(any(test, feature = "test-support"))]
pub mod test_oracle {
    /// Minimal mean squared error of any 2-cluster partition.
    pub fn optimal_two_means_mse(values: &[f64]) -> f64 {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        if n <= 2 {
            return 0.0;
        }
        let sse = |slice: &[f64]| -> f64 {
            let mean = slice.iter().sum::<f64>() / slice.len() as f64;
            slice.iter().map(|v| (v - mean) * (v - mean)).sum()
        };
        let mut best = f64::INFINITY;
        for split in 1..n {
            let cost = sse(&sorted[..split]) + sse(&sorted[split..]);
            if cost < best {
                best = cost;
            }
        }
        best / n as f64
    }

    /// Population variance, the 1-cluster cost: an upper bound for Lloyd.
    pub fn population_variance(values: &[f64]) -> f64 {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::test_oracle::{optimal_two_means_mse, population_variance};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn clusters_outlier_away_from_bulk() {
        let stage = kmeans2::<f64>(&[1.0, 2.0, 3.0, 100.0]).unwrap();
        assert_eq!(stage.centroids, (2.0, 100.0));
        assert_eq!(
            stage.plane.iter().collect::<Vec<_>>(),
            [false, false, false, true]
        );
        assert!((stage.mse - 0.5).abs() < 1e-15);
        assert!(!stage.degenerate);
        // Matches the brute-force optimal contiguous split.
        let opt = optimal_two_means_mse(&[1.0, 2.0, 3.0, 100.0]);
        assert!((stage.mse - opt).abs() < 1e-12);
    }

    #[test]
    fn all_equal_input_degenerates() {
        let stage = kmeans2::<f64>(&[5.0, 5.0, 5.0]).unwrap();
        assert!(stage.degenerate);
        assert_eq!(stage.centroids, (5.0, 5.0));
        assert_eq!(stage.mse, 0.0);
        assert_eq!(stage.plane.count_ones(), 0);
    }

    #[test]
    fn two_points_are_exact() {
        let stage = kmeans2::<f64>(&[-1.0, 1.0]).unwrap();
        assert_eq!(stage.centroids, (-1.0, 1.0));
        assert_eq!(stage.mse, 0.0);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(
            kmeans2::<f64>(&[]),
            Err(Error::EmptyInput("kmeans2"))
        ));
    }

    #[test]
    fn hand_traced_two_stage_stack() {
        // Stage 1 from linear init (0, 5): clusters {0,1} / {4,5}, centroids
        // (0.5, 4.5). Stage 2 over residuals [-0.5, 0.5, -0.5, 0.5] gives
        // (-0.5, 0.5) and exact reconstruction.
        let stack = hierarchical_quantize::<f64>(&[0.0, 1.0, 4.0, 5.0], 2).unwrap();
        assert_eq!(stack.stages[0].centroids, (0.5, 4.5));
        assert_eq!(stack.stages[1].centroids, (-0.5, 0.5));
        assert_eq!(stack.stages[1].mse, 0.0);
        assert_eq!(reconstruct(&stack, 1).unwrap(), vec![0.5, 0.5, 4.5, 4.5]);
        assert_eq!(reconstruct(&stack, 2).unwrap(), vec![0.0, 1.0, 4.0, 5.0]);
    }

    #[test]
    fn single_stage_equals_kmeans2() {
        let weights: [f64; 5] = [0.3, -1.0, 2.5, 0.3, 7.0];
        let stack = hierarchical_quantize(&weights, 1).unwrap();
        let direct = kmeans2(&weights).unwrap();
        assert_eq!(stack.stages.len(), 1);
        assert_eq!(stack.stages[0], direct);
    }

    #[test]
    fn two_point_layer_is_exact_at_one_bit() {
        let stack = hierarchical_quantize::<f64>(&[0.0, 4.0], 1).unwrap();
        assert_eq!(stack.stages[0].mse, 0.0);
        assert_eq!(reconstruct(&stack, 1).unwrap(), vec![0.0, 4.0]);
    }

    #[test]
    fn degenerate_stack_reconstructs_constant() {
        let stack = hierarchical_quantize::<f64>(&[5.0, 5.0, 5.0], 3).unwrap();
        for k in 1..=3 {
            assert_eq!(reconstruct(&stack, k).unwrap(), vec![5.0, 5.0, 5.0]);
        }
    }

    #[test]
    fn depth_out_of_range_is_rejected() {
        let stack = hierarchical_quantize::<f64>(&[0.0, 1.0], 2).unwrap();
        assert!(reconstruct(&stack, 0).is_err());
        assert!(reconstruct(&stack, 3).is_err());
    }

    #[test]
    fn prefix_property_quantizing_fewer_bits_matches_truncation() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let weights: Vec<f64> = (0..257).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let full = hierarchical_quantize(&weights, 6).unwrap();
        for k in 1..=6u16 {
            let fresh = hierarchical_quantize(&weights, k).unwrap();
            assert_eq!(&full.stages[..k as usize], fresh.stages.as_slice());
            let via_truncate = reconstruct(&full, k).unwrap();
            let via_fresh = reconstruct(&fresh, k).unwrap();
            assert_eq!(via_truncate, via_fresh);
        }
    }

    #[test]
    fn stage_mse_is_nonincreasing() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..50 {
            let len = rng.gen_range(16..512);
            let weights: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = rng.gen_range(1..=8);
            let stack = hierarchical_quantize(&weights, n).unwrap();
            for pair in stack.stages.windows(2) {
                assert!(pair[1].mse <= pair[0].mse);
            }
        }
    }

    #[test]
    fn lloyd_is_bounded_by_optimum_and_variance() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..200 {
            let len = rng.gen_range(2..=64);
            let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let stage = kmeans2(&values).unwrap();
            let opt = optimal_two_means_mse(&values);
            let var = population_variance(&values);
            assert!(stage.mse >= opt - 1e-9, "beat the optimum: {} < {opt}", stage.mse);
            assert!(stage.mse <= var + 1e-9, "worse than variance: {} > {var}", stage.mse);
        }
    }

    #[test]
    fn eq2_hand_arithmetic() {
        let report = compression_rate(1000, 4, 32);
        assert_eq!(report.ratio, Ratio::new(32000u128, 4256u128));
        assert!((report.ratio_f64() - 7.518796992481203).abs() < 1e-12);
        assert_eq!(report.index_bits, 4000);
        assert_eq!(report.centroid_bits, 256);
        assert!(report.on_disk_bits >= report.index_bits + report.centroid_bits);
    }

    #[test]
    fn rate_fixed_point_is_one() {
        // N*n + 2nb == N*b  =>  ratio exactly 1. E.g. n=16, b=32, N=64:
        // 64*16 + 2*16*32 = 2048 = 64*32.
        let report = compression_rate(64, 16, 32);
        assert_eq!(report.ratio, Ratio::new(1u128, 1u128));
    }

    #[test]
    fn conventional_rate_uses_exponential_codebook() {
        let report = compression_rate(1000, 4, 32);
        let expected = 32000.0 / (4000.0 + 16.0 * 32.0);
        assert!((report.conventional_ratio - expected).abs() < 1e-12);
    }

    #[test]
    fn quantize_model_applies_conv_and_fc_defaults() {
        let model = crate::toy::lenet_shaped::<f64>(4, 3);
        assert_eq!(initial_allocation(&model, 8, 5), vec![8, 8, 5, 5]);
        assert_eq!(initial_allocation(&model, 10, 5), vec![10, 10, 5, 5]);

        let stacks = quantize_model(&model, &initial_allocation(&model, 8, 5)).unwrap();
        assert_eq!(stacks.len(), 4);
        assert_eq!(stacks[0].depth(), 8);
        assert_eq!(stacks[3].depth(), 5);
        assert_eq!(stacks[0].kind_tag, KindTag::Conv);
        assert_eq!(stacks[3].kind_tag, KindTag::Fc);
    }

    #[test]
    fn all_ones_allocation_keeps_only_base_layers() {
        let model = crate::toy::lenet_shaped::<f64>(4, 3);
        let stacks = quantize_model(&model, &[1, 1, 1, 1]).unwrap();
        assert!(stacks.iter().all(|s| s.depth() == 1));
    }

    #[test]
    fn allocation_length_mismatch_is_rejected() {
        let model = crate::toy::lenet_shaped::<f64>(4, 3);
        assert!(matches!(
            quantize_model(&model, &[8, 8, 5]),
            Err(Error::InvalidAllocation(_))
        ));
        assert!(matches!(
            quantize_model(&model, &[8, 8, 5, 0]),
            Err(Error::InvalidAllocation(_))
        ));
    }
}
