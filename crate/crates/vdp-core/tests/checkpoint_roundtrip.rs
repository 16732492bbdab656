//! Checkpoints must round-trip bit-exactly: every f64 is persisted via
//! its raw bits.

mod common;

use vdp_core::network::{MultiHeadNetwork, NetworkMode, Scope};
use vdp_core::prior::PriorSnapshot;
use vdp_core::training::{train_task, TrainConfig};
use vdp_core::SeededRng;

fn assert_bit_identical(a: &MultiHeadNetwork, b: &MultiHeadNetwork, scope: &Scope) {
    let la = a.scope_layout(scope).unwrap();
    let lb = b.scope_layout(scope).unwrap();
    let fa = a.flatten(&la).unwrap();
    let fb = b.flatten(&lb).unwrap();
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn fresh_network_round_trips_bitwise() {
    let mut rng = SeededRng::new(123);
    let (net, _, _) = common::random_mlp(NetworkMode::Variational, -4.0, &mut rng);
    let mut buf = Vec::new();
    net.save(&mut buf).unwrap();
    let back = MultiHeadNetwork::load(&mut buf.as_slice()).unwrap();
    assert_eq!(back.mode, net.mode);
    assert_bit_identical(&net, &back, &Scope::task(0));
    // A second serialization of the loaded network is byte-identical.
    let mut buf2 = Vec::new();
    back.save(&mut buf2).unwrap();
    assert_eq!(buf, buf2);
}

#[test]
fn trained_network_round_trips_bitwise() {
    let mut rng = SeededRng::new(456);
    let (mut net, n_in, n_classes) = common::random_mlp(NetworkMode::Variational, -4.0, &mut rng);
    let samples = common::random_batch(24, n_in, n_classes, &mut rng);
    let prior = PriorSnapshot::standard_normal(&net, &Scope::task(0)).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 8, tau: 1e-2, ..TrainConfig::default() };
    train_task(&mut net, &samples, &prior, &cfg).unwrap();

    let mut buf = Vec::new();
    net.save(&mut buf).unwrap();
    let back = MultiHeadNetwork::load(&mut buf.as_slice()).unwrap();
    assert_bit_identical(&net, &back, &Scope::task(0));
}

#[test]
fn conv_network_round_trips_bitwise() {
    let mut rng = SeededRng::new(789);
    let (net, _, _) = common::small_conv_net(NetworkMode::Variational, -4.0, &mut rng);
    let mut buf = Vec::new();
    net.save(&mut buf).unwrap();
    let back = MultiHeadNetwork::load(&mut buf.as_slice()).unwrap();
    assert_bit_identical(&net, &back, &Scope::task(0));
}

#[test]
fn corrupted_magic_is_rejected() {
    let mut rng = SeededRng::new(1);
    let (net, _, _) = common::random_mlp(NetworkMode::Variational, -4.0, &mut rng);
    let mut buf = Vec::new();
    net.save(&mut buf).unwrap();
    buf[0] ^= 0xFF;
    assert!(MultiHeadNetwork::load(&mut buf.as_slice()).is_err());
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let mut rng = SeededRng::new(2);
    let (net, _, _) = common::random_mlp(NetworkMode::Variational, -4.0, &mut rng);
    let mut buf = Vec::new();
    net.save(&mut buf).unwrap();
    buf.truncate(buf.len() / 2);
    assert!(MultiHeadNetwork::load(&mut buf.as_slice()).is_err());
}
