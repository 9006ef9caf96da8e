mod common;

use common::*;
use posekit_core::losses::{total_loss, Stage};

#[test]
fn every_loss_matches_finite_differences() {
    let names = [
        "soft_bce",
        "delta_geodesic",
        "huber",
        "cross_entropy",
        "l1_embedding",
    ];
    for (name, err) in names.iter().zip(gradient_suite(100, 21)) {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn composite_matches_finite_differences() {
    let mut rng = rng(5);
    for stage in [Stage::One, Stage::Two] {
        for _ in 0..100 {
            let (out, tgt) = random_composite_point(&mut rng);
            let err = composite_error(&out, &tgt, stage);
            assert!(err < 1e-4, "{stage:?}: relative error {err:e}");
        }
    }
}

#[test]
fn composite_is_the_sum_of_its_parts() {
    let mut rng = rng(6);
    for _ in 0..50 {
        let (out, tgt) = random_composite_point(&mut rng);
        let (b, _) = total_loss(&out, &tgt, Stage::Two).unwrap();
        assert!((b.total - b.components().iter().sum::<f64>()).abs() < 1e-12);
        assert!(b.components().iter().all(|&c| c >= 0.0));
        let (b1, g1) = total_loss(&out, &tgt, Stage::One).unwrap();
        assert_eq!((b1.embed, b1.bin_t, b1.delta_t), (0.0, 0.0, 0.0));
        assert!(g1
            .embedding
            .concat()
            .iter()
            .chain(&g1.trans_logits)
            .all(|&v| v == 0.0));
    }
}
