use std::path::{Path, PathBuf};

use posekit_core::learner::{
    train_stage1, train_stage2, EpochRecord, ModelParams, Stage1Result, ToyConfig, ToyWorld,
    TRAJECTORY_CSV_HEADER,
};
use posekit_core::metrics::{bucketed_report, BucketMetrics, PredictionRecord};
use posekit_core::retrieval::{ShapeDatabase, ShapeEntry};
use posekit_core::rotation::{
    euler_to_rotation, random_rotation_seeded, rotation_to_euler, EulerPose, RotationMatrix,
};
use posekit_core::so3_grid::{decode_pose, encode_pose, PoseCode, RotationBinTable};
use posekit_core::translation::TranslationBinTable;
use posekit_core::voxel::{
    parse_obj, read_binvox, rotate_grid, voxelize_mesh, write_binvox, OccupancyGrid,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::run::*;

pub fn gen_bins(flags: &GenBinsArgs) -> Outcome<()> {
    let (a, resolved) = resolve(flags, flags.config.as_deref())?;
    if let Some(out) = &a.out {
        require_parent(out)?;
    }
    let meta = Metadata::new(a.seed, &resolved);
    let table =
        RotationBinTable::generate_with_samples(a.n, a.seed, a.samples).usage_err("gen-bins")?;
    emit_json(a.out.as_deref(), &with_metadata(&meta, &table))
}

pub fn gen_tbins(flags: &GenTbinsArgs) -> Outcome<()> {
    let (a, resolved) = resolve(flags, flags.config.as_deref())?;
    if let Some(out) = &a.out {
        require_parent(out)?;
    }
    let ranges = match a.ranges.as_slice() {
        [a0, a1, b0, b1, c0, c1] => [[*a0, *a1], [*b0, *b1], [*c0, *c1]],
        _ => {
            return Err(usage(
                "--ranges takes six numbers: xmin,xmax,ymin,ymax,zmin,zmax",
            ))
        }
    };
    let divisions = match a.divisions.as_slice() {
        [x, y, z] => [*x, *y, *z],
        _ => return Err(usage("--divisions takes three counts")),
    };
    let table = TranslationBinTable::new(ranges, divisions).usage_err("gen-tbins")?;
    let meta = Metadata::new(a.seed, &resolved);
    emit_json(a.out.as_deref(), &with_metadata(&meta, &table))
}

#[derive(Serialize)]
struct GridSidecar<'a> {
    format: &'a str,
    resolution: usize,
    translate: [f64; 3],
    scale: f64,
    occupied: usize,
    /// Bit order of the raw export; binvox files carry their own.
    #[serde(skip_serializing_if = "Option::is_none")]
    bit_order: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rotation: Option<RotationMatrix>,
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `grid` in `format` plus a `<out>.json` sidecar with the metadata.
fn write_grid(
    grid: &OccupancyGrid,
    format: GridFormat,
    out: &Path,
    meta: &Metadata,
    rotation: Option<RotationMatrix>,
) -> Outcome<()> {
    let (bytes, bit_order) = match format {
        GridFormat::Binvox => (write_binvox(grid), None),
        GridFormat::Raw => {
            let (bytes, m) = grid.to_raw_bits();
            (bytes, Some(m.order))
        }
    };
    write_file(out, bytes)?;
    let side = GridSidecar {
        format: format.name(),
        resolution: grid.resolution,
        translate: grid.translate,
        scale: grid.scale,
        occupied: grid.occupied_count(),
        bit_order,
        rotation,
    };
    write_file(&sidecar_path(out), to_pretty(&with_metadata(meta, side)))
}

pub fn voxelize(flags: &VoxelizeArgs) -> Outcome<()> {
    let (a, resolved) = resolve(flags, flags.config.as_deref())?;
    require_files(&[&a.mesh])?;
    require_parent(&a.out)?;
    if a.res < 3 {
        return Err(usage("--res must be at least 3"));
    }
    let mesh = parse_obj(&read_text(&a.mesh)?).data_err(&a.mesh.display().to_string())?;
    let grid = voxelize_mesh(&mesh, a.res).data_err("voxelize")?;
    write_grid(
        &grid,
        a.format,
        &a.out,
        &Metadata::new(a.seed, &resolved),
        None,
    )?;
    eprintln!(
        "{} of {} voxels occupied",
        grid.occupied_count(),
        grid.data.len()
    );
    Ok(())
}

fn rotation_from_flags(
    matrix: &Option<Vec<f64>>,
    euler_deg: &Option<Vec<f64>>,
) -> Outcome<Option<RotationMatrix>> {
    match (matrix, euler_deg) {
        (Some(_), Some(_)) => Err(usage("give either --rotation or --euler, not both")),
        (Some(m), None) => RotationMatrix::from_row_major(m)
            .usage_err("--rotation")
            .map(Some),
        (None, Some(e)) => match e.as_slice() {
            [az, el, th] => Ok(Some(euler_to_rotation(&EulerPose {
                azimuth: az.to_radians(),
                elevation: el.to_radians(),
                inplane: th.to_radians(),
            }))),
            _ => Err(usage(
                "--euler takes three angles in degrees: azimuth,elevation,inplane",
            )),
        },
        (None, None) => Ok(None),
    }
}

pub fn rotate_voxel(flags: &RotateVoxelArgs) -> Outcome<()> {
    let (a, resolved) = resolve(flags, flags.config.as_deref())?;
    require_files(&[&a.input])?;
    require_parent(&a.out)?;
    let r = rotation_from_flags(&a.rotation, &a.euler)?
        .unwrap_or_else(|| random_rotation_seeded(a.seed));
    let grid = read_binvox(&read_bytes(&a.input)?).data_err(&a.input.display().to_string())?;
    let rotated = rotate_grid(&grid, &r);
    write_grid(
        &rotated,
        a.format,
        &a.out,
        &Metadata::new(a.seed, &resolved),
        Some(r),
    )
}

#[derive(Serialize)]
struct EulerDeg {
    azimuth: f64,
    elevation: f64,
    inplane: f64,
}

fn euler_deg(r: &RotationMatrix) -> EulerDeg {
    let e = rotation_to_euler(r);
    EulerDeg {
        azimuth: e.azimuth.to_degrees(),
        elevation: e.elevation.to_degrees(),
        inplane: e.inplane.to_degrees(),
    }
}

pub fn encode_pose_cmd(flags: &EncodePoseArgs) -> Outcome<()> {
    let (a, resolved) = resolve(flags, flags.config.as_deref())?;
    require_files(&[&a.bins])?;
    let r = rotation_from_flags(&a.rotation, &a.euler)?
        .ok_or_else(|| usage("give --rotation or --euler"))?;
    let table: RotationBinTable = parse_artifact(&a.bins)?;
    let code = encode_pose(&r, &table);
    let meta = Metadata::new(a.seed, &resolved);
    emit_json(a.out.as_deref(), &with_metadata(&meta, code))
}

pub fn decode_pose_cmd(flags: &DecodePoseArgs) -> Outcome<()> {
    let (a, resolved) = resolve(flags, flags.config.as_deref())?;
    require_files(&[&a.bins])?;
    let code = match (&a.code, a.bin, &a.delta) {
        (Some(p), None, None) => {
            require_files(&[p])?;
            parse_artifact::<PoseCode>(p)?
        }
        (None, Some(bin_index), Some(d)) => PoseCode {
            bin_index,
            delta: RotationMatrix::from_row_major(d).usage_err("--delta")?,
        },
        _ => return Err(usage("give either --code, or both --bin and --delta")),
    };
    let table: RotationBinTable = parse_artifact(&a.bins)?;
    let r = decode_pose(&code, &table).data_err("decode-pose")?;
    let meta = Metadata::new(a.seed, &resolved);
    emit_json(
        a.out.as_deref(),
        &with_metadata(&meta, json!({ "rotation": r, "euler_deg": euler_deg(&r) })),
    )
}

/// Entries as a JSON array or as JSON lines.
fn read_entries(path: &Path) -> Outcome<Vec<ShapeEntry>> {
    let text = read_text(path)?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).data_err(&path.display().to_string());
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).data_err(&format!("{} line {}", path.display(), i + 1))
        })
        .collect()
}

pub fn build_db(flags: &BuildDbArgs) -> Outcome<()> {
    let (a, resolved) = resolve(flags, flags.config.as_deref())?;
    require_files(&[&a.entries])?;
    if let Some(out) = &a.out {
        require_parent(out)?;
    }
    let entries = read_entries(&a.entries)?;
    let dim = match (a.dim, entries.first()) {
        (Some(d), _) => d,
        (None, Some(e)) => e.vec.len(),
        (None, None) => return Err(data(format!("{} holds no entries", a.entries.display()))),
    };
    let db = ShapeDatabase::build(dim, entries).data_err("build-db")?;
    let meta = Metadata::new(a.seed, &resolved);
    emit_json(a.out.as_deref(), &with_metadata(&meta, &db))
}

pub fn retrieve(flags: &RetrieveArgs) -> Outcome<()> {
    let (a, resolved) = resolve(flags, flags.config.as_deref())?;
    require_files(&[&a.query, &a.db])?;
    let q: Value = parse_artifact(&a.query)?;
    // One vector, or a list of them.
    let queries: Vec<Vec<f64>> = if q.as_array().is_some_and(|v| v.iter().all(Value::is_number)) {
        vec![serde_json::from_value(q).data_err("query")?]
    } else {
        serde_json::from_value(q).data_err("query must be a vector or a list of vectors")?
    };
    let db: ShapeDatabase = parse_artifact(&a.db)?;
    let db = ShapeDatabase::from_json(&serde_json::to_string(&db).expect("database serializes"))
        .data_err("database")?;
    let hits = queries
        .iter()
        .map(|q| {
            db.nearest_shape(q)
                .map(|h| json!({ "index": h.index, "id": h.id, "distance": h.distance }))
        })
        .collect::<Result<Vec<_>, _>>()
        .data_err("retrieve")?;
    let meta = Metadata::new(a.seed, &resolved);
    emit_json(
        a.out.as_deref(),
        &with_metadata(&meta, json!({ "hits": hits })),
    )
}

fn trajectory_csv(meta: &Metadata, rows: &[EpochRecord]) -> String {
    let mut s = meta.csv_comment();
    s.push_str(TRAJECTORY_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Default config, then flags, then the config file on top.
fn toy_config(a: &TrainToyArgs) -> Outcome<ToyConfig> {
    let mut v = serde_json::to_value(ToyConfig::default()).expect("config serializes");
    let set = |v: &mut Value, path: &[&str], x: Option<usize>| {
        if let Some(x) = x {
            let mut slot = v;
            for k in path {
                slot = &mut slot[*k];
            }
            *slot = json!(x);
        }
    };
    set(&mut v, &["num_shapes"], a.num_shapes);
    set(&mut v, &["rot_bins"], a.rot_bins);
    set(&mut v, &["stage1", "epochs"], a.epochs1);
    set(&mut v, &["stage2", "epochs"], a.epochs2);
    let v = overlay_config(v, a.config.as_deref())?;
    ToyConfig::from_json(&v.to_string()).usage_err("training config")
}

pub fn train_toy(a: &TrainToyArgs) -> Outcome<()> {
    let cfg = toy_config(a)?;
    let stage1_dir = a.stage1_dir.clone().unwrap_or_else(|| a.out_dir.clone());
    let (s1_model, s1_db) = (
        stage1_dir.join("stage1_model.json"),
        stage1_dir.join("database.json"),
    );
    if a.stage == 2 {
        require_files(&[&s1_model, &s1_db])?;
    }
    std::fs::create_dir_all(&a.out_dir)
        .data_err(&format!("cannot create {}", a.out_dir.display()))?;
    let resolved = json!({ "stage": a.stage, "toy": cfg });
    let meta = Metadata::new(a.seed, &resolved);
    let out = |name: &str| a.out_dir.join(name);
    let world = ToyWorld::new(&cfg, a.seed).usage_err("training config")?;
    let bins = json!({
        "n": world.rot_table.n,
        "spacing_deg": world.rot_table.spacing.to_degrees(),
        "covering_radius_deg": world.rot_table.covering_radius.to_degrees(),
    });

    if a.stage == 1 {
        let s1 = train_stage1(&world, a.seed).data_err("stage 1")?;
        write_file(
            &out("stage1_model.json"),
            to_pretty(&with_metadata(&meta, &s1.model)),
        )?;
        write_file(
            &out("database.json"),
            to_pretty(&with_metadata(&meta, &s1.database)),
        )?;
        write_file(
            &out("stage1_trajectory.csv"),
            trajectory_csv(&meta, &s1.trajectory),
        )?;
        let report = json!({
            "stage": 1,
            "config": cfg,
            "bins": bins,
            "heldout": {
                "count": s1.heldout_records.len(),
                "cls_acc": s1.heldout_cls_acc,
                "top1_acc": s1.heldout_top1,
                "med_err_deg": s1.heldout_med_err_deg,
            },
            "probe": s1.probe,
        });
        write_file(
            &out("stage1_report.json"),
            to_pretty(&with_metadata(&meta, report)),
        )?;
        eprintln!(
            "stage 1: held-out top1 {:.3}, MedErr {:.1}°, probe bin {:.3} / retrieval {:.3}",
            s1.heldout_top1,
            s1.heldout_med_err_deg,
            s1.probe.bin_stability,
            s1.probe.retrieval_stability
        );
        return Ok(());
    }

    let model: ModelParams = parse_artifact(&s1_model)?;
    if model.dims != world.stage1_dims() {
        return Err(data(format!(
            "{} was trained with a different config",
            s1_model.display()
        )));
    }
    let db: ShapeDatabase = parse_artifact(&s1_db)?;
    let s2 = train_stage2(&world, &Stage1Result::from_checkpoint(model, db), a.seed)
        .data_err("stage 2")?;
    write_file(
        &out("stage2_model.json"),
        to_pretty(&with_metadata(&meta, &s2.model)),
    )?;
    write_file(
        &out("stage2_trajectory.csv"),
        trajectory_csv(&meta, &s2.trajectory),
    )?;
    let mut preds =
        serde_json::to_string(&json!({ "metadata": meta })).expect("metadata serializes");
    preds.push('\n');
    for r in &s2.eval.records {
        preds.push_str(&serde_json::to_string(r).expect("records serialize"));
        preds.push('\n');
    }
    write_file(&out("stage2_predictions.jsonl"), preds)?;
    let mut eval = serde_json::to_value(&s2.eval).expect("eval serializes");
    eval.as_object_mut()
        .expect("eval is an object")
        .remove("records");
    let report = json!({ "stage": 2, "config": cfg, "bins": bins, "heldout": eval });
    write_file(
        &out("stage2_report.json"),
        to_pretty(&with_metadata(&meta, report)),
    )?;
    let e = &s2.eval;
    eprintln!(
        "stage 2: top1 {:.3}, MedErr {:.1}° (covering radius {:.1}°), translation error {:.3} (diagonal {:.3})",
        e.top1_acc, e.med_err_deg, e.covering_radius_deg, e.trans_err_mean, e.cube_diagonal
    );
    Ok(())
}

/// Records from JSON lines; a line holding only a metadata object is skipped.
fn read_records(path: &Path) -> Outcome<Vec<PredictionRecord>> {
    let mut out = vec![];
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ctx = format!("{} line {}", path.display(), i + 1);
        let v: Value = serde_json::from_str(line).data_err(&ctx)?;
        if v.as_object()
            .is_some_and(|m| m.len() == 1 && m.contains_key("metadata"))
        {
            continue;
        }
        out.push(serde_json::from_value(v).data_err(&ctx)?);
    }
    Ok(out)
}

pub fn evaluate(flags: &EvaluateArgs) -> Outcome<()> {
    let (a, resolved) = resolve(flags, flags.config.as_deref())?;
    require_files(&[&a.pred])?;
    if let Some(out) = &a.report {
        require_parent(out)?;
    }
    let records = read_records(&a.pred)?;
    if records.is_empty() {
        return Err(data(format!(
            "{} holds no prediction records",
            a.pred.display()
        )));
    }
    let overall = BucketMetrics::compute(&records).data_err("evaluate")?;
    let report = match bucketed_report(&records) {
        Ok(r) => json!({
            "count": records.len(),
            "overall": overall,
            "buckets": r.buckets,
            "per_category": r.per_category,
            "warnings": r.warnings,
        }),
        Err(e) => json!({
            "count": records.len(),
            "overall": overall,
            "buckets": {},
            "per_category": {},
            "warnings": [format!("buckets omitted: {e}")],
        }),
    };
    let meta = Metadata::new(a.seed, &resolved);
    emit_json(a.report.as_deref(), &with_metadata(&meta, report))
}

pub fn selftest(a: &SelftestArgs) -> Outcome<()> {
    let checks = posekit_core::selftest::run(a.seed);
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(data(format!("{failed} self-checks failed")));
    }
    Ok(())
}
