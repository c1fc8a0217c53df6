use std::fs;
use std::path::Path;

use gmac::checkpoint::Checkpoint;
use gmac::run::{read_metrics, MetricsRecord, RunDir, RunWriter, METRICS};
use gmac_core::nn::{Activation, AdamState, NetSpec, Network, PolicyKind, ValueHeadKind};
use gmac_core::rng;
use proptest::prelude::*;

fn head() -> impl Strategy<Value = ValueHeadKind> {
    prop_oneof![
        Just(ValueHeadKind::Scalar),
        (1usize..8).prop_map(|k| ValueHeadKind::Gmm { k }),
        (1usize..16).prop_map(|m| ValueHeadKind::Quantile { m }),
    ]
}

fn policy() -> impl Strategy<Value = PolicyKind> {
    prop_oneof![(1usize..6).prop_map(|actions| PolicyKind::Discrete { actions }), (1usize..3).prop_map(|dim| PolicyKind::Gaussian { dim })]
}

fn record(i: u64, x: f64) -> MetricsRecord {
    MetricsRecord {
        iteration: i,
        frames: 100 * i,
        episodes: i as usize,
        mean_return: (i % 2 == 0).then_some(x),
        policy_loss: -x,
        value_loss: x * x,
        entropy: 1.0 / (1.0 + x.abs()),
        clip_fraction: 0.25,
        grad_norm: x.abs(),
        skipped_updates: 0,
        intrinsic_reward: x / 3.0,
        flops_inference: 7 * i,
        flops_update: 11 * i,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn checkpoints_round_trip_byte_exact(
        input in 1usize..6,
        hidden in prop::collection::vec(1usize..9, 0..3),
        value in head(),
        policy in policy(),
        seed in any::<u64>(),
        step in any::<u64>(),
        iteration in any::<u64>(),
    ) {
        let spec = NetSpec { input, hidden, activation: Activation::Tanh, policy, value };
        let net = Network::new(spec, &mut rng::stream(seed, 0)).unwrap();
        let n = net.parameter_count();
        let mut adam = AdamState::new(n, 1e-3);
        adam.step = step;
        adam.m = net.params().iter().map(|p| p * 0.1).collect();
        adam.v = net.params().iter().map(|p| p * p).collect();
        let c = Checkpoint { iteration, net, adam };
        let bytes = c.encode();
        let back = Checkpoint::decode(&bytes, Path::new("c")).unwrap();
        prop_assert_eq!(back.encode(), bytes);
        prop_assert_eq!(back, c);
    }

    #[test]
    fn metrics_survive_a_crash_at_any_byte(
        xs in prop::collection::vec(-1e6f64..1e6, 1..12),
        cut in 0.0f64..1.0,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::create(dir.path()).unwrap();
        let recs: Vec<MetricsRecord> = xs.iter().enumerate().map(|(i, &x)| record(i as u64, x)).collect();
        for r in &recs {
            w.append_metrics(r).unwrap();
        }
        let path = dir.path().join(METRICS);
        let full = fs::read(&path).unwrap();
        prop_assert_eq!(read_metrics(&path).unwrap(), recs.clone());
        let keep = (cut * full.len() as f64) as usize;
        fs::write(&path, &full[..keep]).unwrap();
        let survived = read_metrics(&path).unwrap();
        let complete_lines = full[..keep].iter().filter(|&&b| b == b'\n').count();
        prop_assert_eq!(survived.len(), complete_lines);
        prop_assert_eq!(&survived[..], &recs[..complete_lines]);
    }

    #[test]
    fn any_flipped_byte_is_caught_by_the_manifest(
        payload in prop::collection::vec(any::<u8>(), 1..256),
        at in any::<prop::sample::Index>(),
        flip in 1u8..=255,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::create(dir.path()).unwrap();
        w.write_file("blob.bin", &payload).unwrap();
        w.commit().unwrap();
        let mut bad = payload.clone();
        let i = at.index(bad.len());
        bad[i] ^= flip;
        fs::write(dir.path().join("blob.bin"), &bad).unwrap();
        prop_assert!(RunDir::open(dir.path()).unwrap().read_verified("blob.bin").is_err());
    }
}
