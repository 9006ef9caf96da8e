#![allow(dead_code)]

use posekit_core::losses::{
    cross_entropy_loss, delta_geodesic_loss, huber_loss, soft_bce_loss, total_loss, HeadOutputs,
    LossTargets, Stage,
};
use posekit_core::retrieval::{l1_embedding_loss, EmbeddingPair};
use posekit_core::rotation::{random_rotation, SixDRep};
use posekit_core::so3_grid::SoftLabelVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `max |a − n| / max(max |n|, max |a|)`; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

fn soft_labels(rng: &mut ChaCha8Rng, n: usize) -> SoftLabelVector {
    let hot = rng.random_range(0..n);
    let y = (0..n)
        .map(|i| {
            if i == hot {
                1.0
            } else if rng.random_bool(0.3) {
                0.1
            } else {
                0.0
            }
        })
        .collect();
    SoftLabelVector { y }
}

/// A 6D pair that is well away from the Gram–Schmidt singularity.
fn regular_sixd(rng: &mut ChaCha8Rng) -> [f64; 6] {
    loop {
        let v: [f64; 6] = normal_vec(rng, 6, 1.0).try_into().unwrap();
        let (a1, a2) = (
            nalgebra::Vector3::new(v[0], v[1], v[2]),
            nalgebra::Vector3::new(v[3], v[4], v[5]),
        );
        if a1.norm() > 0.3 && a1.normalize().cross(&a2).norm() > 0.3 {
            return v;
        }
    }
}

/// Max relative error of each loss over `points` random points:
/// `[soft_bce, delta_geodesic, huber, cross_entropy, l1_embedding]`.
pub fn gradient_suite(points: usize, seed: u64) -> [f64; 5] {
    let mut rng = rng(seed);
    let mut worst = [0.0f64; 5];
    let mut record = |k: usize, e: f64| worst[k] = worst[k].max(e);

    for _ in 0..points {
        let n = rng.random_range(2..12);
        let z = normal_vec(&mut rng, n, 3.0);
        let y = soft_labels(&mut rng, n);
        let (_, g) = soft_bce_loss(&z, &y).unwrap();
        record(
            0,
            relative_error(
                &g,
                &numeric_gradient(|x| soft_bce_loss(x, &y).unwrap().0, &z),
            ),
        );
    }

    let mut accepted = 0;
    while accepted < points {
        let n = rng.random_range(1..6);
        let flat: Vec<f64> = (0..n).flat_map(|_| regular_sixd(&mut rng)).collect();
        let targets: Vec<_> = (0..n).map(|_| random_rotation(&mut rng)).collect();
        let mut active: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
        if active.is_empty() {
            active.push(rng.random_range(0..n));
        }
        let sixd = |x: &[f64]| {
            x.chunks(6)
                .map(|c| SixDRep::from_slice(c).unwrap())
                .collect::<Vec<_>>()
        };
        // Stay away from GD = 0 and GD = π, where acos is not differentiable.
        let pred = sixd(&flat);
        let singular = active.iter().any(|&i| {
            let d = posekit_core::rotation::geodesic_distance(
                &pred[i].to_rotation().unwrap(),
                &targets[i],
            );
            !(0.05..=std::f64::consts::PI - 0.05).contains(&d)
        });
        if singular {
            continue;
        }
        accepted += 1;
        let (_, g) = delta_geodesic_loss(&pred, &targets, &active).unwrap();
        let g: Vec<f64> = g.into_iter().flatten().collect();
        let numeric = numeric_gradient(
            |x| delta_geodesic_loss(&sixd(x), &targets, &active).unwrap().0,
            &flat,
        );
        record(1, relative_error(&g, &numeric));
    }

    let mut accepted = 0;
    while accepted < points {
        let n = rng.random_range(1..8);
        let delta = rng.random_range(0.2..2.0);
        let p = normal_vec(&mut rng, n, 2.0);
        let t = normal_vec(&mut rng, n, 2.0);
        // Skip the kink at |r| = delta.
        if p.iter()
            .zip(&t)
            .any(|(a, b)| ((a - b).abs() - delta).abs() < 1e-3)
        {
            continue;
        }
        accepted += 1;
        let (_, g) = huber_loss(&p, &t, delta).unwrap();
        record(
            2,
            relative_error(
                &g,
                &numeric_gradient(|x| huber_loss(x, &t, delta).unwrap().0, &p),
            ),
        );
    }

    for _ in 0..points {
        let n = rng.random_range(2..12);
        let z = normal_vec(&mut rng, n, 3.0);
        let c = rng.random_range(0..n);
        let (_, g) = cross_entropy_loss(&z, c).unwrap();
        record(
            3,
            relative_error(
                &g,
                &numeric_gradient(|x| cross_entropy_loss(x, c).unwrap().0, &z),
            ),
        );
    }

    let mut accepted = 0;
    while accepted < points {
        let (s, p) = (rng.random_range(1..10), rng.random_range(1..10));
        let pred = normal_vec(&mut rng, s + p, 1.0);
        let target = normal_vec(&mut rng, s + p, 1.0);
        // Skip the kink at equality.
        if pred.iter().zip(&target).any(|(a, b)| (a - b).abs() < 1e-3) {
            continue;
        }
        accepted += 1;
        let t = EmbeddingPair::from_concat(&target, s);
        let (_, g) = l1_embedding_loss(&EmbeddingPair::from_concat(&pred, s), &t).unwrap();
        let numeric = numeric_gradient(
            |x| {
                l1_embedding_loss(&EmbeddingPair::from_concat(x, s), &t)
                    .unwrap()
                    .0
            },
            &pred,
        );
        record(4, relative_error(&g.concat(), &numeric));
    }
    worst
}

pub fn flatten_heads(o: &HeadOutputs) -> Vec<f64> {
    let mut v = o.embedding.concat();
    v.extend(&o.cls_logits);
    v.extend(&o.rot_logits);
    v.extend(o.rot_deltas.iter().flatten());
    v.extend(&o.trans_logits);
    v.extend(o.trans_deltas.iter().flatten());
    v
}

pub fn unflatten_heads(v: &[f64], like: &HeadOutputs) -> HeadOutputs {
    let mut it = v.iter().copied();
    let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
    let s = like.embedding.shape.len();
    let e = take(like.embedding.len());
    HeadOutputs {
        embedding: EmbeddingPair::from_concat(&e, s),
        cls_logits: take(like.cls_logits.len()),
        rot_logits: take(like.rot_logits.len()),
        rot_deltas: take(6 * like.rot_deltas.len())
            .chunks(6)
            .map(|c| c.try_into().unwrap())
            .collect(),
        trans_logits: take(like.trans_logits.len()),
        trans_deltas: take(3 * like.trans_deltas.len())
            .chunks(3)
            .map(|c| c.try_into().unwrap())
            .collect(),
    }
}

/// A random Stage II sample away from every kink of the composite loss.
pub fn random_composite_point(rng: &mut ChaCha8Rng) -> (HeadOutputs, LossTargets) {
    loop {
        let (classes, bins, tbins, sd, pd) = (4, 5, 6, 3, 4);
        let out = HeadOutputs {
            embedding: EmbeddingPair::from_concat(&normal_vec(rng, sd + pd, 1.0), sd),
            cls_logits: normal_vec(rng, classes, 2.0),
            rot_logits: normal_vec(rng, bins, 2.0),
            rot_deltas: (0..bins).map(|_| regular_sixd(rng)).collect(),
            trans_logits: normal_vec(rng, tbins, 2.0),
            trans_deltas: (0..tbins)
                .map(|_| normal_vec(rng, 3, 1.0).try_into().unwrap())
                .collect(),
        };
        let tgt = LossTargets {
            class: rng.random_range(0..classes),
            rot_labels: soft_labels(rng, bins),
            rot_delta_targets: (0..bins).map(|_| random_rotation(rng)).collect(),
            trans_bin: rng.random_range(0..tbins),
            trans_delta: [rng.random(), rng.random(), rng.random()],
            embedding: Some(EmbeddingPair::from_concat(
                &normal_vec(rng, sd + pd, 1.0),
                sd,
            )),
        };
        let l1_kink = flatten_heads(&out)[..sd + pd]
            .iter()
            .zip(tgt.embedding.as_ref().unwrap().concat())
            .any(|(a, b)| (a - b).abs() < 1e-3);
        let huber_kink = out.trans_deltas[tgt.trans_bin]
            .iter()
            .zip(tgt.trans_delta)
            .any(|(a, b)| ((a - b).abs() - 1.0).abs() < 1e-3);
        let gd_kink = tgt.rot_labels.active().iter().any(|&i| {
            let r = SixDRep::from_slice(&out.rot_deltas[i])
                .unwrap()
                .to_rotation()
                .unwrap();
            let d = posekit_core::rotation::geodesic_distance(&r, &tgt.rot_delta_targets[i]);
            !(0.05..=std::f64::consts::PI - 0.05).contains(&d)
        });
        if !(l1_kink || huber_kink || gd_kink) {
            return (out, tgt);
        }
    }
}

/// Relative error of the composite gradient at one point.
pub fn composite_error(out: &HeadOutputs, tgt: &LossTargets, stage: Stage) -> f64 {
    let (_, g) = total_loss(out, tgt, stage).unwrap();
    let x = flatten_heads(out);
    let numeric = numeric_gradient(
        |v| {
            total_loss(&unflatten_heads(v, out), tgt, stage)
                .unwrap()
                .0
                .total
        },
        &x,
    );
    relative_error(&flatten_heads(&g), &numeric)
}
