//! Property tests over the forward pass: output means form a probability
//! simplex, variances stay non-negative and finite, and the deterministic
//! and variational paths agree in the zero-variance limit.

use proptest::prelude::*;

use vdp_core::layers::{relu_forward, softmax_forward};
use vdp_core::network::{MultiHeadNetwork, NetworkMode};
use vdp_core::{GaussianTensor, SeededRng, Tensor};

fn net_from_seed(seed: u64, pi: f64, mode: NetworkMode) -> MultiHeadNetwork {
    let mut rng = SeededRng::new(seed);
    let mut net = MultiHeadNetwork::mlp(4, &[6], mode, pi, &mut rng);
    net.attach_head(0, 3, pi, &mut rng).unwrap();
    net
}

proptest! {
    #[test]
    fn output_mean_is_a_probability_simplex(
        seed in 0u64..1000,
        pi in -8.0f64..0.0,
        x in proptest::collection::vec(-3.0f64..3.0, 4),
    ) {
        let net = net_from_seed(seed, pi, NetworkMode::Variational);
        let out = net.forward(&Tensor::from_vec(x), 0).unwrap().output;
        let sum: f64 = out.mean.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12, "mean sums to {sum}");
        for &p in out.mean.data() {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn output_variances_are_non_negative_and_finite(
        seed in 0u64..1000,
        pi in -8.0f64..2.0,
        x in proptest::collection::vec(-5.0f64..5.0, 4),
    ) {
        let net = net_from_seed(seed, pi, NetworkMode::Variational);
        let out = net.forward(&Tensor::from_vec(x), 0).unwrap().output;
        for &v in out.variance.data() {
            prop_assert!(v.is_finite());
            prop_assert!(v >= 0.0);
        }
    }

    #[test]
    fn deterministic_probs_form_a_simplex(
        seed in 0u64..1000,
        x in proptest::collection::vec(-3.0f64..3.0, 4),
    ) {
        let net = net_from_seed(seed, -4.0, NetworkMode::Deterministic);
        let probs = net.det_forward(&Tensor::from_vec(x), 0).unwrap().probs;
        let sum: f64 = probs.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relu_preserves_non_negativity(
        mean in proptest::collection::vec(-10.0f64..10.0, 6),
        var in proptest::collection::vec(0.0f64..10.0, 6),
    ) {
        let z = GaussianTensor::new(Tensor::from_vec(mean), Tensor::from_vec(var)).unwrap();
        let out = relu_forward(&z);
        for i in 0..6 {
            prop_assert!(out.mean.data()[i] >= 0.0);
            prop_assert!(out.variance.data()[i] >= 0.0);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(
        mean in proptest::collection::vec(-5.0f64..5.0, 4),
        var in proptest::collection::vec(0.0f64..2.0, 4),
        shift in -100.0f64..100.0,
    ) {
        let z = GaussianTensor::new(
            Tensor::from_vec(mean.clone()),
            Tensor::from_vec(var.clone()),
        ).unwrap();
        let shifted = GaussianTensor::new(
            Tensor::from_vec(mean.iter().map(|m| m + shift).collect()),
            Tensor::from_vec(var),
        ).unwrap();
        let (a, _) = softmax_forward(&z);
        let (b, _) = softmax_forward(&shifted);
        for i in 0..4 {
            prop_assert!((a.mean.data()[i] - b.mean.data()[i]).abs() < 1e-12);
            prop_assert!((a.variance.data()[i] - b.variance.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_logits_stay_finite(
        scale in 1.0f64..500.0,
        var in 0.0f64..1e6,
    ) {
        let z = GaussianTensor::new(
            Tensor::from_vec(vec![scale, -scale, 0.0]),
            Tensor::from_vec(vec![var, var, var]),
        ).unwrap();
        let (out, _) = softmax_forward(&z);
        let sum: f64 = out.mean.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for &v in out.variance.data() {
            prop_assert!(v.is_finite() && v >= 0.0);
        }
    }
}
