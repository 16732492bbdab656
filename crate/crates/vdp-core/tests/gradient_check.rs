//! Analytic gradients of the full objective (data term + KL) against
//! central finite differences, across layer types, modes, and scopes.

mod common;

use vdp_core::network::{NetworkMode, Scope};
use vdp_core::prior::PriorSnapshot;
use vdp_core::training::gradient_check;
use vdp_core::SeededRng;

const TOL: f64 = 1e-4;

#[test]
fn vdp_mlp_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(2024);
    for trial in 0..20 {
        let pi = -2.0 - rng.next_f64() * 3.0;
        let (net, n_in, n_classes) = common::random_mlp(NetworkMode::Variational, pi, &mut rng);
        let samples = common::random_batch(3, n_in, n_classes, &mut rng);
        let batch: Vec<_> = samples.iter().collect();
        let scope = Scope::task(0);
        let prior = PriorSnapshot::standard_normal(&net, &scope).unwrap();
        let err = gradient_check(&net, &batch, 0.1, &prior, &scope).unwrap();
        assert!(err < TOL, "trial {trial}: max relative error {err}");
    }
}

#[test]
fn vdp_gradients_without_kl_term() {
    let mut rng = SeededRng::new(7);
    let (net, n_in, n_classes) = common::random_mlp(NetworkMode::Variational, -3.0, &mut rng);
    let samples = common::random_batch(4, n_in, n_classes, &mut rng);
    let batch: Vec<_> = samples.iter().collect();
    let scope = Scope::task(0);
    let err = gradient_check(&net, &batch, 0.0, &PriorSnapshot::empty(), &scope).unwrap();
    assert!(err < TOL, "max relative error {err}");
}

#[test]
fn vdp_gradients_against_informative_prior() {
    // KL anchored to a non-trivial posterior snapshot, as in later tasks.
    let mut rng = SeededRng::new(11);
    let (mut net, n_in, n_classes) = common::random_mlp(NetworkMode::Variational, -2.5, &mut rng);
    let samples = common::random_batch(3, n_in, n_classes, &mut rng);
    let batch: Vec<_> = samples.iter().collect();
    let scope = Scope::task(0);
    let prior = PriorSnapshot::of_posterior(&net, &scope).unwrap();
    // Move the posterior off the snapshot so the KL term is active.
    let layout = net.scope_layout(&scope).unwrap();
    let mut flat = net.flatten(&layout).unwrap();
    for v in &mut flat {
        *v += 0.1 * rng.next_normal();
    }
    net.load_flat(&layout, &flat).unwrap();
    let err = gradient_check(&net, &batch, 0.05, &prior, &scope).unwrap();
    assert!(err < TOL, "max relative error {err}");
}

#[test]
fn frozen_trunk_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(31);
    let (net, n_in, n_classes) = common::random_mlp(NetworkMode::Variational, -3.0, &mut rng);
    let samples = common::random_batch(3, n_in, n_classes, &mut rng);
    let batch: Vec<_> = samples.iter().collect();
    let scope = Scope::head_only(0);
    let prior = PriorSnapshot::standard_normal(&net, &scope).unwrap();
    let err = gradient_check(&net, &batch, 0.1, &prior, &scope).unwrap();
    assert!(err < TOL, "max relative error {err}");
}

#[test]
fn deterministic_mlp_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(47);
    for trial in 0..5 {
        let (net, n_in, n_classes) = common::random_mlp(NetworkMode::Deterministic, -3.0, &mut rng);
        let samples = common::random_batch(3, n_in, n_classes, &mut rng);
        let batch: Vec<_> = samples.iter().collect();
        let scope = Scope::task(0);
        let err = gradient_check(&net, &batch, 0.0, &PriorSnapshot::empty(), &scope).unwrap();
        assert!(err < TOL, "trial {trial}: max relative error {err}");
    }
}

#[test]
fn vdp_conv_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(61);
    let (net, _, n_classes) = common::small_conv_net(NetworkMode::Variational, -3.0, &mut rng);
    let samples = common::random_conv_batch(2, n_classes, &mut rng);
    let batch: Vec<_> = samples.iter().collect();
    let scope = Scope::task(0);
    let prior = PriorSnapshot::standard_normal(&net, &scope).unwrap();
    let err = gradient_check(&net, &batch, 0.1, &prior, &scope).unwrap();
    assert!(err < TOL, "max relative error {err}");
}

#[test]
fn deterministic_conv_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(71);
    let (net, _, n_classes) = common::small_conv_net(NetworkMode::Deterministic, -3.0, &mut rng);
    let samples = common::random_conv_batch(2, n_classes, &mut rng);
    let batch: Vec<_> = samples.iter().collect();
    let scope = Scope::task(0);
    let err = gradient_check(&net, &batch, 0.0, &PriorSnapshot::empty(), &scope).unwrap();
    assert!(err < TOL, "max relative error {err}");
}
