use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posekit_core::rotation::{euler_to_rotation, EulerPose, RotationMatrix};
use posekit_core::voxel::{read_binvox, rotate_grid};
use serde_json::{json, Value};
use tempfile::TempDir;

fn posekit(args: &[&str]) -> Output {
    posekit_env(args, None)
}

fn posekit_env(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_posekit"));
    cmd.args(args).env_remove("POSEKIT_SEED");
    if let Some(s) = seed_env {
        cmd.env("POSEKIT_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = posekit(args);
    assert_eq!(code(&o), 0, "{args:?} failed: {}", stderr(&o));
    o
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn check_metadata(v: &Value, seed: u64) {
    let m = &v["metadata"];
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["seed"], seed);
    let h = m["config_hash"].as_str().unwrap();
    assert!(h.len() == 64 && h.chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&posekit(&["--help"])), 0);
    assert_eq!(code(&posekit(&["--version"])), 0);
    assert_eq!(code(&posekit(&["gen-bins", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one_with_synopsis() {
    for args in [
        &["frobnicate"][..],
        &[],
        &["gen-bins"],
        &["gen-bins", "--n", "x"],
        &["train-toy", "--stage", "3"],
    ] {
        let o = posekit(args);
        assert_eq!(code(&o), 1, "{args:?}");
        assert!(stderr(&o).contains("Usage"), "{args:?}: {}", stderr(&o));
    }
    assert!(stderr(&posekit(&["frobnicate"])).contains("train-toy"));
    // Out-of-range values found after parsing are usage errors too.
    let o = posekit(&["gen-bins", "--n", "0"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage: posekit gen-bins"));
}

#[test]
fn missing_inputs_exit_two() {
    let dir = TempDir::new().unwrap();
    let nowhere = path(&dir, "missing.json");
    assert_eq!(
        code(&posekit(&[
            "retrieve",
            "--query",
            s(&nowhere),
            "--db",
            s(&nowhere)
        ])),
        2
    );
    assert_eq!(code(&posekit(&["evaluate", "--pred", s(&nowhere)])), 2);
    let out = dir.path().join("no/such/dir/b.json");
    assert_eq!(
        code(&posekit(&["gen-bins", "--n", "8", "--out", s(&out)])),
        2
    );
}

#[test]
fn gen_bins_writes_a_deterministic_table() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path(&dir, "a.json"), path(&dir, "b.json"));
    for p in [&a, &b] {
        ok(&[
            "gen-bins",
            "--n",
            "32",
            "--seed",
            "7",
            "--samples",
            "5000",
            "--out",
            s(p),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let v = read_json(&a);
    check_metadata(&v, 7);
    assert_eq!(v["n"], 32);
    assert_eq!(v["bins"].as_array().unwrap().len(), 32);
    assert_eq!(v["bins"][0].as_array().unwrap().len(), 9);
    let spacing = v["spacing"].as_f64().unwrap().to_degrees();
    assert!((47.0..=67.0).contains(&spacing), "{spacing}");
    assert!(v["covering_radius"].as_f64().unwrap() > v["spacing"].as_f64().unwrap() / 2.0);
}

#[test]
fn seed_comes_from_flag_then_env() {
    let o = posekit_env(&["gen-bins", "--n", "2", "--samples", "10"], Some("41"));
    assert_eq!(stdout_json(&o)["metadata"]["seed"], 41);
    let o = posekit_env(
        &["gen-bins", "--n", "2", "--samples", "10", "--seed", "5"],
        Some("41"),
    );
    assert_eq!(stdout_json(&o)["metadata"]["seed"], 5);
    let o = posekit_env(&["gen-bins", "--n", "2", "--samples", "10"], None);
    assert_eq!(stdout_json(&o)["metadata"]["seed"], 0);
}

#[test]
fn config_file_overrides_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "c.json");
    fs::write(&cfg, r#"{"n": 8, "samples": 100}"#).unwrap();
    let v = stdout_json(&ok(&["gen-bins", "--n", "32", "--config", s(&cfg)]));
    assert_eq!(v["n"], 8);
    // Same resolved config, same hash, regardless of how it was given.
    let direct = stdout_json(&ok(&["gen-bins", "--n", "8", "--samples", "100"]));
    assert_eq!(
        v["metadata"]["config_hash"],
        direct["metadata"]["config_hash"]
    );
    let other = stdout_json(&ok(&["gen-bins", "--n", "9", "--samples", "100"]));
    assert_ne!(
        other["metadata"]["config_hash"],
        direct["metadata"]["config_hash"]
    );

    fs::write(&cfg, r#"{"bins": 8}"#).unwrap();
    assert_eq!(
        code(&posekit(&["gen-bins", "--n", "32", "--config", s(&cfg)])),
        1
    );
    fs::write(&cfg, "not json").unwrap();
    assert_eq!(
        code(&posekit(&["gen-bins", "--n", "32", "--config", s(&cfg)])),
        2
    );
}

#[test]
fn gen_tbins_defaults() {
    let v = stdout_json(&ok(&["gen-tbins"]));
    assert_eq!(v["divisions"], json!([4, 4, 8]));
    assert_eq!(v["centers"].as_array().unwrap().len(), 128);
    let v = stdout_json(&ok(&[
        "gen-tbins",
        "--ranges",
        "-1,1,-1,1,0,2",
        "--divisions",
        "2,2,2",
    ]));
    assert_eq!(v["centers"].as_array().unwrap().len(), 8);
    assert_eq!(code(&posekit(&["gen-tbins", "--divisions", "2,2"])), 1);
}

const CUBE_OBJ: &str = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\nf 2 3 7\nf 2 7 6\nf 3 4 8\nf 3 8 7\nf 4 1 5\nf 4 5 8\n";

#[test]
fn voxelize_and_rotate() {
    let dir = TempDir::new().unwrap();
    let obj = path(&dir, "cube.obj");
    fs::write(&obj, CUBE_OBJ).unwrap();
    let grid_path = path(&dir, "cube.binvox");
    ok(&[
        "voxelize",
        "--mesh",
        s(&obj),
        "--res",
        "8",
        "--out",
        s(&grid_path),
    ]);
    let grid = read_binvox(&fs::read(&grid_path).unwrap()).unwrap();
    // The cube fills the inner 6³ block.
    assert_eq!(grid.occupied_count(), 216);
    let side = read_json(&path(&dir, "cube.binvox.json"));
    check_metadata(&side, 0);
    assert_eq!(
        (side["format"].as_str(), side["occupied"].as_u64()),
        (Some("binvox"), Some(216))
    );

    let raw = path(&dir, "cube.bits");
    ok(&[
        "voxelize",
        "--mesh",
        s(&obj),
        "--res",
        "8",
        "--format",
        "raw",
        "--out",
        s(&raw),
    ]);
    assert_eq!(fs::read(&raw).unwrap().len(), 64);
    assert_eq!(
        read_json(&path(&dir, "cube.bits.json"))["bit_order"],
        "x-fastest, lsb-first"
    );

    let rotated = path(&dir, "rot.binvox");
    ok(&[
        "rotate-voxel",
        "--input",
        s(&grid_path),
        "--seed",
        "3",
        "--out",
        s(&rotated),
    ]);
    let side = read_json(&path(&dir, "rot.binvox.json"));
    let r: RotationMatrix = serde_json::from_value(side["rotation"].clone()).unwrap();
    assert_eq!(
        read_binvox(&fs::read(&rotated).unwrap()).unwrap(),
        rotate_grid(&grid, &r)
    );

    fs::write(&obj, "v 0 0 0\nf 1 2 3\n").unwrap();
    assert_eq!(
        code(&posekit(&[
            "voxelize",
            "--mesh",
            s(&obj),
            "--out",
            s(&grid_path)
        ])),
        2
    );
}

#[test]
fn encode_then_decode_recovers_the_rotation() {
    let dir = TempDir::new().unwrap();
    let bins = path(&dir, "bins.json");
    let code_path = path(&dir, "code.json");
    ok(&[
        "gen-bins",
        "--n",
        "72",
        "--samples",
        "100",
        "--out",
        s(&bins),
    ]);
    ok(&[
        "encode-pose",
        "--bins",
        s(&bins),
        "--euler",
        "30,-20,100",
        "--out",
        s(&code_path),
    ]);
    let c = read_json(&code_path);
    assert!(c["bin_index"].as_u64().unwrap() < 72);
    let v = stdout_json(&ok(&[
        "decode-pose",
        "--bins",
        s(&bins),
        "--code",
        s(&code_path),
    ]));
    // Euler angles alias, so compare matrices.
    let want = euler_to_rotation(&EulerPose {
        azimuth: 30f64.to_radians(),
        elevation: (-20f64).to_radians(),
        inplane: 100f64.to_radians(),
    });
    let got: RotationMatrix = serde_json::from_value(v["rotation"].clone()).unwrap();
    assert!(got.max_abs_diff(&want) < 1e-9);
    let e = &v["euler_deg"];
    let [az, el, th] =
        ["azimuth", "elevation", "inplane"].map(|k| e[k].as_f64().unwrap().to_radians());
    assert!(
        euler_to_rotation(&EulerPose {
            azimuth: az,
            elevation: el,
            inplane: th
        })
        .max_abs_diff(&want)
            < 1e-9
    );
    // Explicit bin and delta flags give the same answer.
    let delta: Vec<String> = c["delta"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.to_string())
        .collect();
    let bin = c["bin_index"].to_string();
    let w = stdout_json(&ok(&[
        "decode-pose",
        "--bins",
        s(&bins),
        "--bin",
        &bin,
        "--delta",
        &delta.join(","),
    ]));
    assert_eq!(v["rotation"], w["rotation"]);

    assert_eq!(
        code(&posekit(&[
            "encode-pose",
            "--bins",
            s(&bins),
            "--rotation",
            "1,0,0,0,1,0,0,0,2"
        ])),
        1
    );
    assert_eq!(
        code(&posekit(&[
            "decode-pose",
            "--bins",
            s(&bins),
            "--bin",
            "72",
            "--delta",
            "1,0,0,0,1,0,0,0,1"
        ])),
        2
    );
}

#[test]
fn build_db_and_retrieve() {
    let dir = TempDir::new().unwrap();
    let entries = path(&dir, "e.jsonl");
    fs::write(
        &entries,
        "{\"id\":\"a\",\"category\":\"x\",\"vec\":[0,0]}\n{\"id\":\"b\",\"category\":\"x\",\"vec\":[1,1]}\n\
         {\"id\":\"c\",\"category\":\"y\",\"vec\":[0,0]}\n",
    )
    .unwrap();
    let db = path(&dir, "db.json");
    ok(&["build-db", "--entries", s(&entries), "--out", s(&db)]);
    assert_eq!(read_json(&db)["dim"], 2);
    let q = path(&dir, "q.json");
    fs::write(&q, "[[0.1, 0], [0.9, 1.2]]").unwrap();
    let v = stdout_json(&ok(&["retrieve", "--query", s(&q), "--db", s(&db)]));
    // "a" and "c" tie for the first query; the earlier entry wins.
    assert_eq!(v["hits"][0]["id"], "a");
    assert_eq!(v["hits"][1]["id"], "b");
    fs::write(&q, "[0.9, 1.2]").unwrap();
    assert_eq!(
        stdout_json(&ok(&["retrieve", "--query", s(&q), "--db", s(&db)]))["hits"][0]["id"],
        "b"
    );
    fs::write(&q, "[1, 2, 3]").unwrap();
    assert_eq!(
        code(&posekit(&["retrieve", "--query", s(&q), "--db", s(&db)])),
        2
    );

    fs::write(&entries, "{\"id\":\"a\",\"category\":\"x\",\"vec\":[0,0]}\n{\"id\":\"a\",\"category\":\"x\",\"vec\":[1,1]}\n")
        .unwrap();
    assert_eq!(code(&posekit(&["build-db", "--entries", s(&entries)])), 2);
}

fn record(id: &str, err_deg: f64, hit: bool, area: f64, occluded: bool) -> String {
    let r = RotationMatrix::rot_z(err_deg.to_radians());
    json!({
        "instance_id": id,
        "pred_rotation": r,
        "gt_rotation": RotationMatrix::identity(),
        "pred_shape_id": if hit { "a" } else { "b" },
        "gt_shape_id": "a",
        "bbox_area": area,
        "occluded": occluded,
        "category": "car",
    })
    .to_string()
}

#[test]
fn evaluate_reports_buckets() {
    let dir = TempDir::new().unwrap();
    let pred = path(&dir, "p.jsonl");
    let lines = [
        record("r0", 10.0, true, 1.0, false),
        record("r1", 20.0, true, 2.0, false),
        record("r2", 40.0, false, 3.0, false),
        record("r3", 50.0, false, 4.0, true),
    ];
    fs::write(&pred, lines.join("\n")).unwrap();
    let report = path(&dir, "r.json");
    ok(&["evaluate", "--pred", s(&pred), "--report", s(&report)]);
    let v = read_json(&report);
    check_metadata(&v, 0);
    assert_eq!(v["count"], 4);
    assert!((v["overall"]["med_err_deg"].as_f64().unwrap() - 30.0).abs() < 1e-9);
    assert_eq!(v["overall"]["acc_pi6"], 0.5);
    let d = &v["buckets"]["default"];
    assert_eq!(
        (
            d["count"].as_u64(),
            d["med_err_deg"].as_f64().map(|x| (x * 1e6).round() / 1e6)
        ),
        (Some(3), Some(20.0))
    );
    assert_eq!(v["buckets"]["small"]["count"], 1);
    assert_eq!(v["buckets"]["occluded"]["count"], 1);
    assert!(v["buckets"].get("truncated").is_none());
    assert_eq!(v["warnings"], json!(["bucket truncated is empty; omitted"]));
    assert_eq!(v["per_category"]["car"], *d);

    fs::write(&pred, format!("{}\n{{\"instance_id\": 3}}\n", lines[0])).unwrap();
    let o = posekit(&["evaluate", "--pred", s(&pred)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"));
}

#[test]
fn selftest_passes() {
    let o = ok(&["selftest"]);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().count() >= 9);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

const TINY: &str = r#"{
    "num_shapes": 4, "rot_bins": 4, "covering_samples": 2000, "voxel_resolution": 16,
    "raster_resolution": 8, "shape_dim": 4, "pose_dim": 6, "heldout": 24, "probe_pairs": 8,
    "stage1": {"hidden": 24, "epochs": 3, "samples": 48, "resample": true, "batch_size": 16, "lr": 0.003},
    "stage2": {"hidden": 24, "depth": 2, "epochs": 3, "samples": 48, "resample": true, "batch_size": 16, "lr": 0.003}
}"#;

#[test]
fn train_toy_two_stages_end_to_end() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let (a, b) = (path(&dir, "a"), path(&dir, "b"));

    // Stage 2 needs a stage 1 run first.
    let o = posekit(&[
        "train-toy",
        "--stage",
        "2",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&a),
    ]);
    assert_eq!(code(&o), 2);

    for d in [&a, &b] {
        ok(&[
            "train-toy",
            "--stage",
            "1",
            "--config",
            s(&cfg),
            "--seed",
            "7",
            "--out-dir",
            s(d),
        ]);
        ok(&[
            "train-toy",
            "--stage",
            "2",
            "--config",
            s(&cfg),
            "--seed",
            "7",
            "--out-dir",
            s(d),
        ]);
    }
    for f in [
        "stage1_model.json",
        "database.json",
        "stage1_trajectory.csv",
        "stage1_report.json",
        "stage2_model.json",
        "stage2_trajectory.csv",
        "stage2_report.json",
        "stage2_predictions.jsonl",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs between runs"
        );
    }
    let csv = fs::read_to_string(a.join("stage1_trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# tool_version="));
    assert_eq!(
        lines[1],
        "stage,epoch,embed,cls,bin_r,delta_r,bin_t,delta_t,total"
    );
    assert_eq!(lines.len(), 2 + 3);
    let r2 = read_json(&a.join("stage2_report.json"));
    check_metadata(&r2, 7);
    assert_eq!(r2["heldout"]["count"], 24);
    assert_eq!(r2["config"]["num_shapes"], 4);
    assert_eq!(
        read_json(&a.join("database.json"))["entries"]
            .as_array()
            .unwrap()
            .len(),
        4
    );

    // The prediction stream feeds straight into evaluate.
    let v = stdout_json(&ok(&[
        "evaluate",
        "--pred",
        s(&a.join("stage2_predictions.jsonl")),
    ]));
    assert_eq!(v["count"], 24);
    assert_eq!(v["overall"]["top1_acc"], r2["heldout"]["top1_acc"]);

    // A stage 1 model from a different config is refused.
    let other = TINY.replace("\"shape_dim\": 4", "\"shape_dim\": 5");
    fs::write(&cfg, other).unwrap();
    assert_eq!(
        code(&posekit(&[
            "train-toy",
            "--stage",
            "2",
            "--config",
            s(&cfg),
            "--out-dir",
            s(&a)
        ])),
        2
    );
    fs::write(&cfg, r#"{"learning_rate": 1}"#).unwrap();
    assert_eq!(
        code(&posekit(&[
            "train-toy",
            "--stage",
            "1",
            "--config",
            s(&cfg),
            "--out-dir",
            s(&a)
        ])),
        1
    );
}
