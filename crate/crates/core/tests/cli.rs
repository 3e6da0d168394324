use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shardmend::dataset::{Manifest, Split};
use shardmend::geometry::random_downsample;
use shardmend::io::{read_xyz, write_xyz};
use shardmend::shapes::{bowl_mesh, icosphere, BowlParams};

const TINY: &str = r#"{
  "points_complete": 600,
  "points_broken": 256,
  "points_repair": 64,
  "schedule": { "steps": 10, "beta_start": 0.0001, "beta_end": 0.05 },
  "training": { "epochs": 2, "batch_size": 4, "learning_rate": 0.001 },
  "architecture": { "encoder_widths": [8, 16], "trunk_widths": [16, 16], "time_dim": 8 },
  "evaluation": { "m": 32 }
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shardmend")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn write_meshes(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let sphere = icosphere(2);
    let mut obj = String::new();
    for v in &sphere.vertices {
        obj.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    for f in &sphere.faces {
        obj.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    std::fs::write(dir.join("sphere.obj"), obj).unwrap();
    for i in 0..3 {
        let m = bowl_mesh(&BowlParams::random(i));
        let mut off = format!("OFF\n{} {} 0\n", m.vertices.len(), m.faces.len());
        for v in &m.vertices {
            off.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
        }
        for f in &m.faces {
            off.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
        }
        std::fs::write(dir.join(format!("bowl{i}.off")), off).unwrap();
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// prepare -> augment -> split -> train -> complete -> evaluate -> report
fn pipeline(root: &Path) {
    let cfg = root.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    write_meshes(&root.join("meshes"));
    let c = s(&cfg);
    let p = |x: &str| s(&root.join(x));
    ok(&["--config", &c, "prepare", "--in", &p("meshes"), "--out", &p("clouds"), "--seed", "1"]);
    ok(&["--config", &c, "augment", "--in", &p("clouds"), "--out", &p("data"), "--class-label", "vessel", "--seed", "2"]);
    ok(&["--config", &c, "split", "--dataset", &p("data"), "--train-fraction", "0.5", "--seed", "3"]);
    ok(&["--config", &c, "train", "--dataset", &p("data"), "--checkpoint", &p("model.pcdf"), "--seed", "4"]);
    ok(&["--config", &c, "complete", "--checkpoint", &p("model.pcdf"), "--dataset", &p("data"), "--out", &p("pred"), "--seed", "5"]);
    ok(&[
        "--config", &c, "evaluate", "--pred", &p("pred/repair"), "--gt", &p("data/reference"),
        "--manifest", &p("data/manifest.json"), "--out", &p("records.csv"), "--seed", "6",
    ]);
    ok(&["report", "--records", &p("records.csv"), "--out", &p("report"), "--group-by", "class"]);
}

#[test]
fn full_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());

    let root = a.path();
    let clouds = std::fs::read_dir(root.join("clouds")).unwrap().count();
    assert_eq!(clouds, 4);
    assert_eq!(read_xyz(root.join("clouds/sphere.xyz")).unwrap().len(), 600);

    let manifest = Manifest::read(root.join("data/manifest.json")).unwrap();
    assert_eq!(manifest.entries.len(), 16);
    assert_eq!(manifest.by_split(Split::Train).count(), 8);
    assert!(manifest.entries.iter().all(|e| e.class_label == "vessel"));
    let test_ids: Vec<&str> = manifest.by_split(Split::Test).map(|e| e.object_id.as_str()).collect();

    for id in &test_ids {
        let repair = read_xyz(root.join(format!("pred/repair/{id}.xyz"))).unwrap();
        let composite = read_xyz(root.join(format!("pred/composite/{id}.xyz"))).unwrap();
        assert_eq!(repair.len(), 64);
        assert_eq!(composite.len(), 256 + 64);
    }
    let records = std::fs::read_to_string(root.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + test_ids.len());
    let loss = std::fs::read_to_string(root.join("model.pcdf.loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("step,loss"));
    assert_eq!(loss.lines().count(), 1 + 2 * 2);
    assert!(root.join("model.pcdf.opt").exists());
    for f in ["summary.csv", "summary.txt", "barplot.csv"] {
        assert!(root.join("report").join(f).exists());
    }

    // Everything except the config copy and inputs is byte-identical.
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn resumed_training_continues_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let root = dir.path();
    let c = s(&root.join("tiny.json"));
    let p = |x: &str| s(&root.join(x));
    let train = |ckpt: &str, epochs: &str, extra: &[&str]| {
        let data = p("data");
        let mut args = vec!["--config", &c, "train", "--dataset", &data, "--checkpoint", ckpt, "--epochs", epochs, "--seed", "4"];
        args.extend_from_slice(extra);
        ok(&args);
    };
    let (split_ckpt, whole_ckpt) = (p("split.pcdf"), p("whole.pcdf"));
    train(&split_ckpt, "1", &[]);
    train(&split_ckpt, "2", &["--resume"]);
    train(&whole_ckpt, "3", &[]);

    let log = std::fs::read_to_string(root.join("split.pcdf.loss.csv")).unwrap();
    let steps: Vec<u64> = log.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, (1..=6).collect::<Vec<_>>());
    assert_eq!(log, std::fs::read_to_string(root.join("whole.pcdf.loss.csv")).unwrap());
    assert_eq!(std::fs::read(&split_ckpt).unwrap(), std::fs::read(&whole_ckpt).unwrap());
}

#[test]
fn augment_makes_four_triplets_per_object() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    write_meshes(&root.join("meshes"));
    let p = |x: &str| s(&root.join(x));
    ok(&["--config", &s(&cfg), "prepare", "--in", &p("meshes"), "--out", &p("D"), "--seed", "1"]);
    ok(&[
        "--config", &s(&cfg), "augment", "--in", &p("D"), "--out", &p("E"), "--cuts", "4", "--low", "0.18", "--high",
        "0.22", "--max-angle", "30", "--seed", "9",
    ]);
    let manifest = Manifest::read(root.join("E/manifest.json")).unwrap();
    let mut per_base: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &manifest.entries {
        *per_base.entry(&e.base_id).or_default() += 1;
        let cut = e.cut.unwrap();
        assert!(cut.theta_x.abs() < 30.0 && cut.theta_z.abs() < 30.0);
        assert!((0.18..=0.22).contains(&cut.height_fraction));
    }
    assert_eq!(per_base.len(), 4);
    assert!(per_base.values().all(|&n| n == 4));
    manifest.validate(&root.join("E")).unwrap();
}

#[test]
fn oracle_predictions_evaluate_near_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    write_meshes(&root.join("meshes"));
    let p = |x: &str| s(&root.join(x));
    ok(&["--config", &s(&cfg), "prepare", "--in", &p("meshes"), "--out", &p("gt"), "--points", "2000", "--seed", "1"]);
    std::fs::create_dir_all(root.join("pred")).unwrap();
    for e in std::fs::read_dir(root.join("gt")).unwrap() {
        let path = e.unwrap().path();
        let gt = read_xyz(&path).unwrap();
        write_xyz(root.join("pred").join(path.file_name().unwrap()), &random_downsample(&gt, 400, 17).unwrap()).unwrap();
    }
    ok(&["evaluate", "--pred", &p("pred"), "--gt", &p("gt"), "--m", "400", "--out", &p("records.csv"), "--seed", "2"]);
    ok(&["report", "--records", &p("records.csv"), "--out", &p("report")]);
    let summary = std::fs::read_to_string(root.join("report/summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[0], "all");
    let (cdf_med, hdf_med): (f64, f64) = (row[5].parse().unwrap(), row[10].parse().unwrap());
    assert!((0.7..=1.5).contains(&cdf_med), "{cdf_med}");
    assert!((0.5..=2.0).contains(&hdf_med), "{hdf_med}");
}

#[test]
fn usage_and_config_errors() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"augmentation": {"height_low": 0.3, "height_high": 0.2}}"#).unwrap();
    let out = run(&["--config", &s(&cfg), "augment", "--in", "x", "--out", "y", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("augmentation.height_low"));

    let out = run(&["augment", "--in", &s(&dir.path().join("missing")), "--out", &s(dir.path()), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["prepare", "--in", "a", "--out", "b"]);
    assert_eq!(out.status.code(), Some(2), "missing --seed");
}
