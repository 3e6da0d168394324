//! Exit criteria. Each test prints one `PASS` or `FAIL` line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use shardmend::augment::{make_fixed_triplets, AugmentBounds};
use shardmend::dataset::{write_triplet, Manifest, Split, MANIFEST_FILE};
use shardmend::denoiser::{gradients, init_params, AdamConfig, Architecture, OptimizerState};
use shardmend::diffusion::{
    gaussian_points, q_sample, reverse_step, training_loss, DiffusionState, LossSample, NoisePredictor, NoiseSchedule,
    ScheduleParams,
};
use shardmend::distance::{chamfer, hausdorff};
use shardmend::geometry::{normalize, random_downsample, uniform_surface_sample, Point3, PointCloud};
use shardmend::metrics::{evaluate_pair, parse_records_csv, Stats};
use shardmend::rng;
use shardmend::shapes::{bowl_mesh, cylinder_cloud, icosphere, BowlParams};
use shardmend::train::{Trainer, TrainingPair};

fn verdict(id: u32, pass: bool, detail: &str) {
    println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn random_cloud(rng: &mut rng::Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect(),
    )
    .unwrap()
}

fn d(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn brute_directed(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
    a.points()
        .iter()
        .map(|&p| b.points().iter().map(|&q| d(p, q)).fold(f64::INFINITY, f64::min))
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[test]
fn criterion_1_distance_kernels_match_brute_force() {
    let start = Instant::now();
    let mut rng = rng::rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let na = rng.random_range(1..=256);
        let nb = rng.random_range(1..=256);
        let a = random_cloud(&mut rng, na);
        let b = random_cloud(&mut rng, nb);
        let ab = brute_directed(&a, &b);
        let ba = brute_directed(&b, &a);
        let ch = ab.iter().sum::<f64>() / ab.len() as f64 + ba.iter().sum::<f64>() / ba.len() as f64;
        let hd = ab.iter().chain(&ba).copied().fold(0.0, f64::max);
        worst = worst.max(rel(chamfer(&a, &b), ch)).max(rel(hausdorff(&a, &b), hd));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && secs < 30.0;
    verdict(1, pass, &format!("200 pairs, worst relative error {worst:.3e}, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn criterion_2_gradients_match_finite_differences() {
    let start = Instant::now();
    let schedule = ScheduleParams::DESK.build().unwrap();
    let mut rng = rng::rng(202);
    let mut params = init_params(&Architecture::reduced(), 7).unwrap();
    // Move biases off zero so every parameter sees a generic point.
    for v in params.values_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let repair = random_cloud(&mut rng, 16);
    let condition = random_cloud(&mut rng, 32);
    let eps = gaussian_points(&mut rng, 16);
    let batch = [LossSample {
        repair: &repair,
        condition: &condition,
        t: 37,
        eps: &eps,
    }];
    let (_, grad) = gradients(&params, &batch, &schedule).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut worst_at = 0;
    let mut probe = params.clone();
    for i in 0..params.len() {
        let x = params.values()[i];
        probe.values_mut()[i] = x + h;
        let up = training_loss(&probe, &batch, &schedule).unwrap();
        probe.values_mut()[i] = x - h;
        let down = training_loss(&probe, &batch, &schedule).unwrap();
        probe.values_mut()[i] = x;
        let fd = (up - down) / (2.0 * h);
        let e = rel(grad[i], fd);
        if e > worst {
            worst = e;
            worst_at = i;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-3 && secs < 120.0;
    verdict(
        2,
        pass,
        &format!(
            "{} parameters, worst relative error {worst:.3e} at #{worst_at}, {secs:.1}s",
            params.len()
        ),
    );
    assert!(pass);
}

/// Returns the true noise of a known forward sample.
struct Oracle(Vec<Point3>);

impl NoisePredictor for Oracle {
    type Encoded = ();

    fn encode(&self, _: &PointCloud) -> shardmend::Result<()> {
        Ok(())
    }

    fn predict(&self, _: &(), _: &[Point3], _: usize, _: usize) -> shardmend::Result<Vec<Point3>> {
        Ok(self.0.clone())
    }
}

fn q_sample_moments(schedule: &NoiseSchedule, t: usize, x0: Point3, draws: usize, seed: u64) -> bool {
    let cloud = PointCloud::new(vec![x0]).unwrap();
    let mut rng = rng::rng(seed);
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..draws {
        let eps = gaussian_points(&mut rng, 1);
        let x = q_sample(&cloud, t, &eps, schedule).unwrap().points()[0];
        for k in 0..3 {
            sum[k] += x[k];
            sq[k] += x[k] * x[k];
        }
    }
    let n = draws as f64;
    let ab = schedule.alpha_bar(t);
    let var_true = 1.0 - ab;
    let mut ok = true;
    for k in 0..3 {
        let mean = sum[k] / n;
        let var = (sq[k] - n * mean * mean) / (n - 1.0);
        let se_mean = (var_true / n).sqrt();
        let se_var = var_true * (2.0 / (n - 1.0)).sqrt();
        ok &= (mean - ab.sqrt() * x0[k]).abs() <= 3.0 * se_mean;
        ok &= (var - var_true).abs() <= 3.0 * se_var;
    }
    ok
}

#[test]
fn criterion_3_diffusion_algebra() {
    let schedule = ScheduleParams::STANDARD.build().unwrap();
    let steps = schedule.steps();
    let identity = (2..=steps)
        .map(|t| (schedule.alpha_bar(t) - schedule.alpha_bar(t - 1) * schedule.alpha(t)).abs())
        .fold(0.0, f64::max);

    let mut rng = rng::rng(303);
    let x0 = random_cloud(&mut rng, 64);
    let eps = gaussian_points(&mut rng, 64);
    let x1 = q_sample(&x0, 1, &eps, &schedule).unwrap();
    let state = DiffusionState {
        x_tilde: x1,
        condition: random_cloud(&mut rng, 8),
        t: 1,
    };
    let back = reverse_step(&Oracle(eps), state, &vec![[0.0; 3]; 64], &schedule).unwrap();
    let inversion = back
        .x_tilde
        .points()
        .iter()
        .zip(x0.points())
        .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
        .fold(0.0, f64::max);

    let x = [0.3, -0.2, 0.5];
    let moments: Vec<bool> = [1, steps / 2, steps]
        .iter()
        .map(|&t| q_sample_moments(&schedule, t, x, 100_000, 3000 + t as u64))
        .collect();

    let pass = identity <= 1e-15 && inversion <= 1e-12 && moments.iter().all(|&m| m);
    verdict(
        3,
        pass,
        &format!("identity {identity:.1e}, inversion {inversion:.1e}, moments at t=1/500/1000 {moments:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_overfit_single_triplet() {
    let start = Instant::now();
    let cloud = normalize(&uniform_surface_sample(&icosphere(3), 100, 5).unwrap()).unwrap().0;
    let fixed = make_fixed_triplets(&cloud, "sphere", 1, &AugmentBounds::default(), (32, 16), 11)
        .unwrap()
        .remove(0);
    let data = vec![TrainingPair {
        id: "sphere".into(),
        repair: fixed.repair,
        condition: fixed.broken,
    }];
    let schedule = ScheduleParams::DESK.build().unwrap();
    let params = init_params(&Architecture::reduced(), 1).unwrap();
    let config = AdamConfig {
        learning_rate: 1e-3,
        ..AdamConfig::default()
    };
    let optimizer = OptimizerState::new(config, params.len());
    let mut trainer = Trainer::new(params, optimizer, &schedule, &data).unwrap();
    let mut draws = rng::rng(3);
    let losses: Vec<f64> = (0..2000).map(|_| trainer.step(&[0], &mut draws).unwrap().loss).collect();

    let moving: Vec<f64> = losses.windows(50).map(|w| w.iter().sum::<f64>() / 50.0).collect();
    let initial = moving[0];
    let best = moving.iter().copied().fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    let pass = best < 0.05 * initial && secs < 600.0;
    verdict(
        4,
        pass,
        &format!(
            "initial 50-step average {initial:.4}, best {best:.4} (ratio {:.3}, needs < 0.05), final {:.4}, {secs:.1}s",
            best / initial,
            moving[moving.len() - 1]
        ),
    );
    assert!(pass);
}

fn write_off(path: &Path, vertices: &[Point3], faces: &[[usize; 3]]) {
    let mut s = format!("OFF\n{} {} 0\n", vertices.len(), faces.len());
    for v in vertices {
        s.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
    }
    for f in faces {
        s.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    std::fs::write(path, s).unwrap();
}

fn shardmend(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_shardmend")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "shardmend {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json")
}

#[test]
fn criterion_5_end_to_end_bowls() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    std::fs::create_dir_all(root.join("meshes")).unwrap();
    for i in 0..40u64 {
        let mesh = bowl_mesh(&BowlParams::random(rng::derive(5, i)));
        write_off(&root.join(format!("meshes/bowl{i:02}.off")), &mesh.vertices, &mesh.faces);
    }
    let config = desk_config().to_string_lossy().into_owned();
    let c = config.as_str();
    shardmend(&["--config", c, "prepare", "--in", &p("meshes"), "--out", &p("clouds"), "--seed", "5"]);
    shardmend(&["--config", c, "augment", "--in", &p("clouds"), "--out", &p("data"), "--class-label", "bowl", "--seed", "5"]);
    shardmend(&["--config", c, "split", "--dataset", &p("data"), "--seed", "5"]);
    shardmend(&["--config", c, "train", "--dataset", &p("data"), "--checkpoint", &p("model.pcdf"), "--seed", "5"]);
    shardmend(&["--config", c, "complete", "--checkpoint", &p("model.pcdf"), "--dataset", &p("data"), "--out", &p("pred"), "--seed", "5"]);
    shardmend(&[
        "--config", c, "evaluate", "--pred", &p("pred/repair"), "--gt", &p("data/reference"),
        "--manifest", &p("data/manifest.json"), "--out", &p("records.csv"), "--seed", "5",
    ]);
    shardmend(&["report", "--records", &p("records.csv"), "--out", &p("report")]);

    let manifest = Manifest::read(root.join("data").join(MANIFEST_FILE)).unwrap();
    let train_bases: std::collections::BTreeSet<&str> =
        manifest.by_split(Split::Train).map(|e| e.base_id.as_str()).collect();
    let records = parse_records_csv(&std::fs::read_to_string(root.join("records.csv")).unwrap()).unwrap();
    let valid: Vec<_> = records.iter().filter(|r| r.is_valid()).collect();
    let cdf = Stats::of(&valid.iter().map(|r| r.cdf).collect::<Vec<_>>()).unwrap();
    let hdf = Stats::of(&valid.iter().map(|r| r.hdf).collect::<Vec<_>>()).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let shape_ok = manifest.entries.len() == 160 && train_bases.len() == 28 && records.len() == 48;
    let pass = shape_ok && valid.len() == 48 && cdf.med < 5.0 && hdf.med < 10.0 && secs <= 4.0 * 3600.0;
    verdict(
        5,
        pass,
        &format!(
            "{} triplets, {} train objects, {} held-out scored; CDF median {:.3}, HDF median {:.3}, {secs:.0}s",
            manifest.entries.len(),
            train_bases.len(),
            valid.len(),
            cdf.med,
            hdf.med
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_oracle_repairs_score_near_one() {
    let start = Instant::now();
    let gt = unit_sphere_cloud(4096, 606);
    let mut cdf = Vec::new();
    let mut hdf = Vec::new();
    for trial in 0..100u64 {
        let oracle = random_downsample(&gt, 820, rng::derive(9_000, trial)).unwrap();
        let rec = evaluate_pair(&format!("trial{trial}"), "sphere", &oracle, &gt, 820, trial);
        cdf.push(rec.cdf);
        hdf.push(rec.hdf);
    }
    let cm = Stats::of(&cdf).unwrap().med;
    let hm = Stats::of(&hdf).unwrap().med;
    let secs = start.elapsed().as_secs_f64();
    let pass = (0.7..=1.5).contains(&cm) && (0.7..=1.5).contains(&hm) && secs < 60.0;
    verdict(6, pass, &format!("CDF median {cm:.3}, HDF median {hm:.3}, {secs:.1}s"));
    assert!(pass);
}

fn unit_sphere_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = rng::rng(seed);
    let pts = gaussian_points(&mut rng, n)
        .into_iter()
        .map(|p| {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            [p[0] / r, p[1] / r, p[2] / r]
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

fn object(i: u64) -> PointCloud {
    let seed = rng::derive(707, i);
    let raw = match i % 3 {
        0 => uniform_surface_sample(&icosphere(3), 1000, seed).unwrap(),
        1 => cylinder_cloud(1000, 0.4, 1.0, seed).unwrap(),
        _ => uniform_surface_sample(&bowl_mesh(&BowlParams::random(seed)), 1000, seed).unwrap(),
    };
    normalize(&raw).unwrap().0
}

/// Rotated height of `p` for a cut, built independently of the library.
fn height(p: Point3, theta_x: f64, theta_z: f64) -> f64 {
    let (sx, cx) = theta_x.to_radians().sin_cos();
    let (sz, cz) = theta_z.to_radians().sin_cos();
    // y' of R_z(theta_z) * R_x(theta_x) * p
    let y = cx * p[1] - sx * p[2];
    sz * p[0] + cz * y
}

fn sorted_bits(points: &[Point3]) -> Vec<[u64; 3]> {
    let mut v: Vec<[u64; 3]> = points.iter().map(|p| p.map(f64::to_bits)).collect();
    v.sort_unstable();
    v
}

fn dir_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
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

fn augment_all(root: &Path, bounds: &AugmentBounds) -> (Vec<shardmend::augment::FixedTriplet>, Vec<usize>) {
    let mut manifest = Manifest::default();
    let mut all = Vec::new();
    let mut per_object = Vec::new();
    for i in 0..100u64 {
        let seed = rng::derive(808, i);
        let ts = make_fixed_triplets(&object(i), &format!("obj{i:03}"), 4, bounds, (600, 150), seed).unwrap();
        per_object.push(ts.len());
        for t in &ts {
            manifest.entries.push(write_triplet(root, t, "mixed", seed).unwrap());
        }
        all.extend(ts);
    }
    manifest.write(root.join(MANIFEST_FILE)).unwrap();
    (all, per_object)
}

#[test]
fn criterion_7_augmentation_invariants() {
    let bounds = AugmentBounds::default();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (triplets, per_object) = augment_all(a.path(), &bounds);
    augment_all(b.path(), &bounds);

    let four_each = per_object.iter().all(|&n| n == 4);
    let mut partition = true;
    let mut fractions = true;
    let mut angles = true;
    for ft in &triplets {
        let t = &ft.triplet;
        let mut union: Vec<Point3> = t.broken.points().to_vec();
        union.extend_from_slice(t.repair.points());
        partition &= t.broken.len() + t.repair.len() == t.complete.len();
        partition &= sorted_bits(&union) == sorted_bits(t.complete.points());

        let c = t.cut;
        angles &= c.theta_x.abs() < 30.0 && c.theta_z.abs() < 30.0;
        let h = |p: &Point3| height(*p, c.theta_x, c.theta_z);
        let all: Vec<f64> = t.complete.points().iter().map(h).collect();
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let top_of_repair = t.repair.points().iter().map(h).fold(f64::NEG_INFINITY, f64::max);
        let bottom_of_broken = t.broken.points().iter().map(h).fold(f64::INFINITY, f64::min);
        fractions &= (0.18..=0.22).contains(&c.height_fraction);
        // The plane sits between the two parts.
        fractions &= (top_of_repair - lo) / (hi - lo) < 0.22 + 1e-9;
        fractions &= (bottom_of_broken - lo) / (hi - lo) >= 0.18 - 1e-9;
    }
    let identical = dir_bytes(a.path()) == dir_bytes(b.path());

    let pass = four_each && partition && fractions && angles && identical;
    verdict(
        7,
        pass,
        &format!(
            "100 objects, {} triplets; four each {four_each}, exact partition {partition}, fractions {fractions}, angles {angles}, byte-identical rerun {identical}",
            triplets.len()
        ),
    );
    assert!(pass);
}

fn run_report(records: &Path, out: &Path, group_by: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    let (r, o) = (records.to_string_lossy(), out.to_string_lossy());
    shardmend(&["report", "--records", &r, "--out", &o, "--group-by", group_by]);
    dir_bytes(out)
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn criterion_8_report_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let records = data("golden_records.csv");
    let first = run_report(&records, &dir.path().join("one"), "class");
    let second = run_report(&records, &dir.path().join("two"), "class");
    let repeatable = first == second;

    let summary = String::from_utf8(first[Path::new("summary.csv")].clone()).unwrap();
    let barplot = String::from_utf8(first[Path::new("barplot.csv")].clone()).unwrap();
    let header_ok = summary.lines().nth(1)
        == Some("group,n,cdf_min,cdf_max,cdf_avg,cdf_med,cdf_std,hdf_min,hdf_max,hdf_avg,hdf_med,hdf_std")
        && barplot.lines().next() == Some("class_label,metric,avg,std");
    let golden = summary == std::fs::read_to_string(data("golden_summary_by_class.csv")).unwrap()
        && barplot == std::fs::read_to_string(data("golden_barplot.csv")).unwrap();

    let pass = repeatable && header_ok && golden;
    verdict(
        8,
        pass,
        &format!("byte-identical reruns {repeatable}, column structure {header_ok}, matches golden outputs {golden}"),
    );
    assert!(pass);
}
