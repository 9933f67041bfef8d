//! Property suites over the core invariants.

use proptest::collection::vec;
use proptest::prelude::*;

use scalq::bitstream::{allocation_of, stream_from_bytes, stream_to_bytes, truncate};
use scalq::hquant::test_oracle::{optimal_two_means_mse, population_variance};
use scalq::hquant::{hierarchical_quantize, kmeans2, reconstruct};
use scalq::nn::cross_entropy;
use scalq::tensor::Tensor;

fn finite_weights(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-1e3f64..1e3, 1..max_len)
}

proptest! {
    #[test]
    fn lloyd_sits_between_optimum_and_variance(values in finite_weights(64)) {
        let stage = kmeans2(&values).unwrap();
        let opt = optimal_two_means_mse(&values);
        let var = population_variance(&values);
        let scale = var.max(1.0);
        prop_assert!(stage.mse >= opt - 1e-9 * scale);
        prop_assert!(stage.mse <= var + 1e-9 * scale);
    }

    #[test]
    fn stage_mse_never_increases(values in finite_weights(256), n in 1u16..8) {
        let stack = hierarchical_quantize(&values, n).unwrap();
        for pair in stack.stages.windows(2) {
            prop_assert!(pair[1].mse <= pair[0].mse);
        }
    }

    #[test]
    fn truncation_equals_shallow_quantization(values in finite_weights(128), n in 2u16..7) {
        let full = hierarchical_quantize(&values, n).unwrap();
        for k in 1..=n {
            let fresh = hierarchical_quantize(&values, k).unwrap();
            let via_truncate = truncate(std::slice::from_ref(&full), &[k]).unwrap();
            prop_assert_eq!(
                stream_to_bytes(&via_truncate).unwrap(),
                stream_to_bytes(std::slice::from_ref(&fresh)).unwrap()
            );
            prop_assert_eq!(
                reconstruct(&via_truncate[0], k).unwrap(),
                reconstruct(&fresh, k).unwrap()
            );
        }
    }

    #[test]
    fn stream_bytes_round_trip(values in finite_weights(96), n in 1u16..6) {
        let stack = hierarchical_quantize(&values, n).unwrap();
        let bytes = stream_to_bytes(std::slice::from_ref(&stack)).unwrap();
        let restored = stream_from_bytes::<f64>(&bytes).unwrap();
        prop_assert_eq!(allocation_of(&restored), vec![n]);
        prop_assert_eq!(&stream_to_bytes(&restored).unwrap(), &bytes);
        prop_assert_eq!(
            reconstruct(&restored[0], n).unwrap(),
            reconstruct(&stack, n).unwrap()
        );
    }

    #[test]
    fn cross_entropy_is_shift_invariant(
        rows in vec(vec(-30.0f64..30.0, 4), 1..12),
        shifts in vec(-100.0f64..100.0, 12),
        label in 0usize..4,
    ) {
        let samples = rows.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let mut shifted = Vec::with_capacity(flat.len());
        for (row, shift) in rows.iter().zip(&shifts) {
            shifted.extend(row.iter().map(|v| v + shift));
        }
        let labels = vec![label; samples];
        let a = cross_entropy(&Tensor::new(vec![samples, 4], flat).unwrap(), &labels).unwrap();
        let b = cross_entropy(&Tensor::new(vec![samples, 4], shifted).unwrap(), &labels).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
    }
}
