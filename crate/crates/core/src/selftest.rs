//! Quick built-in checks: finite-difference gradients for every loss and
//! roundtrips through each codec. Used by `posekit selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::losses::{cross_entropy_loss, delta_geodesic_loss, huber_loss, soft_bce_loss};
use crate::retrieval::{l1_embedding_loss, EmbeddingPair, ShapeDatabase, ShapeEntry};
use crate::rotation::{geodesic_distance, random_rotation, SixDRep};
use crate::so3_grid::{decode_pose, encode_pose, RotationBinTable, SoftLabelVector};
use crate::translation::TranslationBinTable;
use crate::voxel::{read_binvox, write_binvox, OccupancyGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

const POINTS: usize = 20;
const GRAD_TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn fd_error(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    let mut p = x.to_vec();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..x.len() {
        p[i] = x[i] + STEP;
        let up = f(&p);
        p[i] = x[i] - STEP;
        let down = f(&p);
        p[i] = x[i];
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max((numeric - analytic[i]).abs());
        scale = scale.max(numeric.abs()).max(analytic[i].abs());
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

fn grad_check(name: &'static str, errs: impl Iterator<Item = f64>) -> Check {
    let worst = errs.fold(0.0, f64::max);
    Check {
        name,
        pass: worst < GRAD_TOL,
        detail: format!("max rel err {worst:.1e} over {POINTS} points"),
    }
}

fn labels(rng: &mut ChaCha8Rng, n: usize) -> SoftLabelVector {
    let hot = rng.random_range(0..n);
    SoftLabelVector {
        y: (0..n)
            .map(|i| {
                if i == hot {
                    1.0
                } else if rng.random_bool(0.3) {
                    0.1
                } else {
                    0.0
                }
            })
            .collect(),
    }
}

fn gradient_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let bce = (0..POINTS).map(|_| {
        let z = normals(rng, 8, 3.0);
        let y = labels(rng, 8);
        let (_, g) = soft_bce_loss(&z, &y).unwrap();
        fd_error(|x| soft_bce_loss(x, &y).unwrap().0, &z, &g)
    });
    let bce = grad_check("grad soft_bce", bce.collect::<Vec<_>>().into_iter());

    let mut geo = vec![];
    while geo.len() < POINTS {
        let a = normals(rng, 6, 1.0);
        let t = random_rotation(rng);
        let s = SixDRep::from_slice(&a).unwrap();
        let Ok(r) = s.to_rotation() else { continue };
        let d = geodesic_distance(&r, &t);
        if !(0.05..std::f64::consts::PI - 0.05).contains(&d) {
            continue;
        }
        let f = |x: &[f64]| {
            delta_geodesic_loss(&[SixDRep::from_slice(x).unwrap()], &[t], &[0])
                .unwrap()
                .0
        };
        let (_, g) = delta_geodesic_loss(&[s], &[t], &[0]).unwrap();
        geo.push(fd_error(f, &a, &g[0]));
    }

    let mut hub = vec![];
    while hub.len() < POINTS {
        let (p, t) = (normals(rng, 5, 2.0), normals(rng, 5, 2.0));
        if p.iter()
            .zip(&t)
            .any(|(a, b)| ((a - b).abs() - 1.0).abs() < 1e-3)
        {
            continue;
        }
        let (_, g) = huber_loss(&p, &t, 1.0).unwrap();
        hub.push(fd_error(|x| huber_loss(x, &t, 1.0).unwrap().0, &p, &g));
    }

    let ce: Vec<f64> = (0..POINTS)
        .map(|_| {
            let z = normals(rng, 8, 3.0);
            let c = rng.random_range(0..8);
            let (_, g) = cross_entropy_loss(&z, c).unwrap();
            fd_error(|x| cross_entropy_loss(x, c).unwrap().0, &z, &g)
        })
        .collect();

    let mut l1 = vec![];
    while l1.len() < POINTS {
        let (p, t) = (normals(rng, 8, 1.0), normals(rng, 8, 1.0));
        if p.iter().zip(&t).any(|(a, b)| (a - b).abs() < 1e-3) {
            continue;
        }
        let target = EmbeddingPair::from_concat(&t, 3);
        let f = |x: &[f64]| {
            l1_embedding_loss(&EmbeddingPair::from_concat(x, 3), &target)
                .unwrap()
                .0
        };
        let (_, g) = l1_embedding_loss(&EmbeddingPair::from_concat(&p, 3), &target).unwrap();
        l1.push(fd_error(f, &p, &g.concat()));
    }

    vec![
        bce,
        grad_check("grad delta_geodesic", geo.into_iter()),
        grad_check("grad huber", hub.into_iter()),
        grad_check("grad cross_entropy", ce.into_iter()),
        grad_check("grad l1_embedding", l1.into_iter()),
    ]
}

fn roundtrip_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut out = vec![];

    let mut worst: f64 = 0.0;
    for n in [1, 8, 72] {
        let table = RotationBinTable::generate_with_samples(n, 0, 1000).expect("valid bin count");
        for _ in 0..500 {
            let r = random_rotation(rng);
            worst = worst.max(
                decode_pose(&encode_pose(&r, &table), &table)
                    .unwrap()
                    .max_abs_diff(&r),
            );
            worst = worst.max(
                SixDRep::from_rotation(&r)
                    .to_rotation()
                    .unwrap()
                    .max_abs_diff(&r),
            );
        }
    }
    out.push(Check {
        name: "pose codec + 6D",
        pass: worst < 1e-9,
        detail: format!("max abs diff {worst:.1e}"),
    });

    let table = TranslationBinTable::default_table();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t: [f64; 3] =
            std::array::from_fn(|a| rng.random_range(table.ranges[a][0]..table.ranges[a][1]));
        let back = table.decode(&table.encode(t).0).unwrap();
        worst = (0..3).map(|a| (back[a] - t[a]).abs()).fold(worst, f64::max);
    }
    out.push(Check {
        name: "translation codec",
        pass: worst < 1e-9,
        detail: format!("max abs diff {worst:.1e}"),
    });

    let mut bad = 0;
    for res in [1, 2, 5, 16] {
        let mut g = OccupancyGrid::empty(res);
        g.data.iter_mut().for_each(|v| *v = rng.random_bool(0.4));
        if read_binvox(&write_binvox(&g)).ok().as_ref() != Some(&g) {
            bad += 1;
        }
    }
    out.push(Check {
        name: "binvox",
        pass: bad == 0,
        detail: format!("{bad}/4 grids differ after write/read"),
    });

    let vecs: Vec<Vec<f64>> = (0..50).map(|_| normals(rng, 16, 1.0)).collect();
    let db = ShapeDatabase::build(
        16,
        vecs.iter().enumerate().map(|(i, v)| ShapeEntry {
            id: i.to_string(),
            category: String::new(),
            vec: v.clone(),
        }),
    )
    .expect("distinct ids");
    let mut bad = 0;
    for _ in 0..50 {
        let q = normals(rng, 16, 1.0);
        let d = |v: &Vec<f64>| {
            v.iter()
                .zip(&q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        let scan = (0..vecs.len())
            .min_by(|&i, &j| d(&vecs[i]).total_cmp(&d(&vecs[j])))
            .unwrap();
        if db.nearest_shape(&q).unwrap().index != scan {
            bad += 1;
        }
    }
    out.push(Check {
        name: "retrieval",
        pass: bad == 0,
        detail: format!("{bad}/50 queries differ from a linear scan"),
    });
    out
}

pub fn run(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = gradient_checks(&mut rng);
    checks.extend(roundtrip_checks(&mut rng));
    checks
}
