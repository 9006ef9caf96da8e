use std::f64::consts::PI;
use std::sync::OnceLock;

use posekit_core::metrics::{acc_pi6, med_err, top1_acc, PredictionRecord};
use posekit_core::retrieval::{ShapeDatabase, ShapeEntry};
use posekit_core::rotation::{
    euler_to_rotation, geodesic_distance, random_rotation_seeded, rotation_to_euler,
    rotation_to_quat, EulerPose, RotationMatrix, SixDRep,
};
use posekit_core::so3_grid::{decode_pose, encode_pose, soft_labels, RotationBinTable};
use posekit_core::translation::TranslationBinTable;
use posekit_core::voxel::{read_binvox, write_binvox, OccupancyGrid};
use proptest::prelude::*;

fn rotation() -> impl Strategy<Value = RotationMatrix> {
    any::<u64>().prop_map(random_rotation_seeded)
}

fn tables() -> &'static [RotationBinTable] {
    static T: OnceLock<Vec<RotationBinTable>> = OnceLock::new();
    T.get_or_init(|| {
        [1, 2, 8, 32, 72, 100]
            .iter()
            .map(|&n| RotationBinTable::generate_with_samples(n, 0, 2000).unwrap())
            .collect()
    })
}

proptest! {
    #[test]
    fn geodesic_is_a_metric(a in rotation(), b in rotation(), c in rotation()) {
        let d = geodesic_distance;
        prop_assert!(d(&a, &a) < 1e-6);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
        prop_assert!((0.0..=PI).contains(&d(&a, &b)));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn geodesic_is_bi_invariant(a in rotation(), b in rotation(), g in rotation()) {
        let base = geodesic_distance(&a, &b);
        prop_assert!((geodesic_distance(&g.compose(&a), &g.compose(&b)) - base).abs() < 1e-7);
        prop_assert!((geodesic_distance(&a.compose(&g), &b.compose(&g)) - base).abs() < 1e-7);
    }

    #[test]
    fn geodesic_agrees_with_quaternions(a in rotation(), b in rotation()) {
        let q = rotation_to_quat(&a).angle_to(&rotation_to_quat(&b));
        prop_assert!((geodesic_distance(&a, &b) - q).abs() < 1e-6);
    }

    #[test]
    fn sixd_roundtrip(r in rotation()) {
        let back = SixDRep::from_rotation(&r).to_rotation().unwrap();
        prop_assert!(back.max_abs_diff(&r) < 1e-12);
    }

    #[test]
    fn sixd_decoding_ignores_positive_scale(r in rotation(), s1 in 0.1f64..10.0, s2 in 0.1f64..10.0) {
        let [a, b, c, d, e, f] = SixDRep::from_rotation(&r).to_array();
        let scaled = SixDRep::new([a * s1, b * s1, c * s1], [d * s2, e * s2, f * s2]);
        prop_assert!(scaled.to_rotation().unwrap().max_abs_diff(&r) < 1e-12);
    }

    #[test]
    fn euler_roundtrip(az in -3.1f64..3.1, el in -1.5f64..1.5, th in -3.1f64..3.1) {
        let r = euler_to_rotation(&EulerPose { azimuth: az, elevation: el, inplane: th });
        let back = euler_to_rotation(&rotation_to_euler(&r));
        prop_assert!(back.max_abs_diff(&r) < 1e-9);
    }

    #[test]
    fn pose_codec_roundtrip(r in rotation(), t in 0usize..6) {
        let table = &tables()[t];
        let code = encode_pose(&r, table);
        prop_assert!(decode_pose(&code, table).unwrap().max_abs_diff(&r) < 1e-9);
        // The chosen bin really is the nearest one.
        let best = geodesic_distance(&table.bins[code.bin_index], &r);
        prop_assert!(table.bins.iter().all(|b| geodesic_distance(b, &r) >= best));
    }

    #[test]
    fn soft_labels_are_well_formed(r in rotation(), t in 0usize..6, alpha in 0.01f64..0.99, beta in 0.01f64..3.2) {
        let table = &tables()[t];
        let y = soft_labels(&r, table, alpha, beta).unwrap().y;
        prop_assert_eq!(y.len(), table.len());
        prop_assert_eq!(y.iter().filter(|&&v| v == 1.0).count(), 1);
        prop_assert_eq!(y[table.nearest_bin(&r)], 1.0);
        for (i, v) in y.iter().enumerate() {
            if *v != 1.0 {
                let inside = geodesic_distance(&table.bins[i], &r) < beta;
                prop_assert_eq!(*v, if inside { alpha } else { 0.0 });
            }
        }
    }

    #[test]
    fn translation_roundtrip(x in -0.25f64..1.5, y in -0.25f64..1.5, z in 0.5f64..10.0) {
        let table = TranslationBinTable::default_table();
        let (code, clamped) = table.encode([x, y, z]);
        prop_assert!(!clamped);
        prop_assert!(code.bin_index < table.len());
        prop_assert!(code.delta.iter().all(|d| (0.0..=1.0).contains(d)));
        let back = table.decode(&code).unwrap();
        for (a, b) in back.iter().zip([x, y, z]) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_clamps_outside_the_range(x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..20.0) {
        let table = TranslationBinTable::default_table();
        let (code, clamped) = table.encode([x, y, z]);
        let back = table.decode(&code).unwrap();
        let expect = [x.clamp(-0.25, 1.5), y.clamp(-0.25, 1.5), z.clamp(0.5, 10.0)];
        prop_assert_eq!(clamped, expect != [x, y, z]);
        for (a, b) in back.iter().zip(expect) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn binvox_roundtrip(res in 1usize..12, bits in proptest::collection::vec(any::<bool>(), 1728), run in 0usize..300) {
        let mut grid = OccupancyGrid::empty(res);
        let n = grid.data.len();
        grid.data.copy_from_slice(&bits[..n]);
        // A long run exercises the 255-count split.
        for v in grid.data.iter_mut().take(run) {
            *v = true;
        }
        grid.translate = [0.5, -1.25, 2.0];
        grid.scale = 1.5;
        let back = read_binvox(&write_binvox(&grid)).unwrap();
        prop_assert_eq!(back, grid);
    }

    #[test]
    fn retrieval_matches_a_linear_scan(
        raw in proptest::collection::vec(proptest::collection::vec(-3i8..3, 6), 1..40),
        q in proptest::collection::vec(-3i8..3, 6),
    ) {
        // Small integer coordinates force plenty of exact ties.
        let to_f = |v: &[i8]| v.iter().map(|&x| x as f64 * 0.5).collect::<Vec<f64>>();
        let entries = raw.iter().enumerate().map(|(i, v)| ShapeEntry {
            id: format!("s{i}"),
            category: "c".into(),
            vec: to_f(v),
        });
        let db = ShapeDatabase::build(6, entries).unwrap();
        let query = to_f(&q);
        let dists: Vec<f64> = db.entries.iter()
            .map(|e| e.vec.iter().zip(&query).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = dists.iter().position(|&d| d == best).unwrap();
        let hit = db.nearest_shape(&query).unwrap();
        prop_assert_eq!(hit.index, first);
        prop_assert!((hit.distance - best).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_record_order(seeds in proptest::collection::vec(any::<u64>(), 1..30), shift in 0usize..30) {
        let records: Vec<PredictionRecord> = seeds.iter().enumerate().map(|(i, &s)| PredictionRecord {
            instance_id: format!("i{i}"),
            pred_rotation: random_rotation_seeded(s),
            gt_rotation: random_rotation_seeded(s.wrapping_mul(31).wrapping_add(1)),
            pred_shape_id: format!("s{}", s % 3),
            gt_shape_id: format!("s{}", s % 2),
            bbox_area: 1.0,
            occluded: false,
            truncated: false,
            category: "c".into(),
        }).collect();
        let mut rotated = records.clone();
        rotated.rotate_left(shift % records.len());
        rotated.reverse();
        prop_assert_eq!(med_err(&records).unwrap(), med_err(&rotated).unwrap());
        prop_assert_eq!(acc_pi6(&records).unwrap(), acc_pi6(&rotated).unwrap());
        prop_assert_eq!(top1_acc(&records).unwrap(), top1_acc(&rotated).unwrap());
    }
}
