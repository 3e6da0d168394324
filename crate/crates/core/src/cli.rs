//! The `shardmend` command line.
//!
//! Exit status: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error. `SHARDMEND_THREADS` caps the worker pool.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::augment::make_fixed_triplets;
use crate::config::PipelineConfig;
use crate::dataset::{
    assign_split, dedup_candidates, dedup_csv, ingest_manifest, resolve, write_triplet, xyz_stems, Manifest, Split,
    BROKEN_DIR, COMPLETE_DIR, MANIFEST_FILE, REPAIR_DIR,
};
use crate::denoiser::{init_params, load_checkpoint, save_checkpoint, AdamConfig, Checkpoint, OptimizerState};
use crate::diffusion::sample_repair;
use crate::error::{Error, Result};
use crate::geometry::{load_mesh, normalize, poisson_disk_sample, random_downsample, PointCloud};
use crate::io::{format_g9, read_xyz, write_xyz};
use crate::metrics::{aggregate_stats, barplot_csv, evaluate_corpus, parse_records_csv, records_csv, summary_csv, summary_table, GroupBy};
use crate::rng;
use crate::train::{Trainer, TrainingPair};

#[derive(Debug, Parser)]
#[command(name = "shardmend", version, about = "Diffusion repair of fractured point clouds")]
struct Cli {
    /// JSON experiment profile; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample meshes (.obj/.off) into normalized point clouds.
    Prepare(PrepareArgs),
    /// Cut complete clouds into broken/repair triplets with a manifest.
    Augment(AugmentArgs),
    /// List the nearest clouds of one set within another by Chamfer distance.
    Dedup(DedupArgs),
    /// Assign train/test splits by base object.
    Split(SplitArgs),
    /// Train the denoiser on the training split.
    Train(TrainArgs),
    /// Generate repairs for broken clouds.
    Complete(CompleteArgs),
    /// Score predicted repairs against ground truth.
    Evaluate(EvaluateArgs),
    /// Summarize an evaluation records file.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Mesh file or directory of meshes.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Directory of complete `.xyz` clouds.
    #[arg(long = "in")]
    input: PathBuf,
    /// Dataset root; an existing manifest there is merged into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cuts: Option<usize>,
    #[arg(long)]
    low: Option<f64>,
    #[arg(long)]
    high: Option<f64>,
    #[arg(long = "max-angle")]
    max_angle: Option<f64>,
    #[arg(long = "points-broken")]
    points_broken: Option<usize>,
    #[arg(long = "points-repair")]
    points_repair: Option<usize>,
    #[arg(long = "class-label", default_value = "")]
    class_label: String,
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DedupArgs {
    /// Query clouds.
    #[arg(long)]
    a: PathBuf,
    /// Candidate clouds.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Common point count after normalization.
    #[arg(long, default_value_t = 2048)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Dataset root. Without a manifest, one is built from the
    /// complete/, broken/ and repair/ subdirectories.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long = "train-fraction")]
    train_fraction: Option<f64>,
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Continue from the checkpoint and its optimizer sidecar.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Loss log (CSV `step,loss`); defaults to `<checkpoint>.loss.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long = "log-every", default_value_t = 1)]
    log_every: u64,
    /// Also write the checkpoint every this many epochs.
    #[arg(long = "save-every")]
    save_every: Option<usize>,
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CompleteArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Broken cloud or directory of broken clouds.
    #[arg(long = "in", conflicts_with = "dataset", required_unless_present = "dataset")]
    input: Option<PathBuf>,
    /// Complete the test entries of this dataset instead.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output root; receives `repair/` and `composite/`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "points-repair")]
    points_repair: Option<usize>,
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Manifest supplying class labels.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GroupArg {
    None,
    Class,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "group-by", value_enum, default_value = "none")]
    group_by: GroupArg,
    /// Group name used without grouping.
    #[arg(long, default_value = "all")]
    label: String,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `argv` (program name first) and runs the subcommand.
pub fn execute_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            if e.kind() == ErrorKind::InvalidSubcommand {
                let _ = writeln!(std::io::stderr(), "\n{}", Cli::command().render_help());
            }
            return code;
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("SHARDMEND_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            // Fails only if the pool already exists, e.g. when called twice in-process.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => PipelineConfig::load(p).map_err(|e| Failure::Usage(format!("config {}: {e}", p.display()))),
    }
}

fn checked(cfg: PipelineConfig) -> CliResult<PipelineConfig> {
    cfg.validate().map_err(|e| Failure::Usage(format!("invalid config: {e}")))?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Prepare(a) => {
            if let Some(v) = a.points {
                cfg.points_complete = v;
            }
            prepare(&checked(cfg)?, &a)
        }
        Command::Augment(a) => {
            let aug = &mut cfg.augmentation;
            override_opt(&mut aug.cuts_per_object, a.cuts);
            override_opt(&mut aug.height_low, a.low);
            override_opt(&mut aug.height_high, a.high);
            override_opt(&mut aug.max_angle, a.max_angle);
            override_opt(&mut cfg.points_broken, a.points_broken);
            override_opt(&mut cfg.points_repair, a.points_repair);
            augment(&checked(cfg)?, &a)
        }
        Command::Dedup(a) => dedup(&a),
        Command::Split(a) => {
            override_opt(&mut cfg.train_fraction, a.train_fraction);
            split(&checked(cfg)?, &a)
        }
        Command::Train(a) => {
            override_opt(&mut cfg.training.epochs, a.epochs);
            override_opt(&mut cfg.training.batch_size, a.batch_size);
            override_opt(&mut cfg.training.learning_rate, a.lr);
            cfg.training.seed = a.seed;
            train(&checked(cfg)?, &a)
        }
        Command::Complete(a) => {
            override_opt(&mut cfg.points_repair, a.points_repair);
            complete(&checked(cfg)?, &a)
        }
        Command::Evaluate(a) => {
            override_opt(&mut cfg.evaluation.m, a.m);
            cfg.evaluation.seed = a.seed;
            evaluate(&checked(cfg)?, &a)
        }
        Command::Report(a) => report(&a),
    }
}

fn override_opt<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn stem_of(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// A single file, or the sorted files of a directory with one of `exts`.
fn list_inputs(input: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let rd = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(input, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if p.is_file() && ext.is_some_and(|e| exts.contains(&e.as_str())) {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("no input files in {}", input.display())));
    }
    Ok(out)
}

fn prepare(cfg: &PipelineConfig, a: &PrepareArgs) -> CliResult<()> {
    create_dir(&a.out)?;
    for path in list_inputs(&a.input, &["obj", "off"])? {
        let stem = stem_of(&path);
        let mesh = load_mesh(&path)?;
        let cloud = poisson_disk_sample(&mesh, cfg.points_complete, rng::derive_named(a.seed, &stem))?;
        let (normalized, _) = normalize(&cloud)?;
        write_xyz(a.out.join(format!("{stem}.xyz")), &normalized)?;
        eprintln!("prepared {stem}: {} points", normalized.len());
    }
    Ok(())
}

fn augment(cfg: &PipelineConfig, a: &AugmentArgs) -> CliResult<()> {
    let bounds = cfg.augmentation.bounds();
    create_dir(&a.out)?;
    let manifest_path = a.out.join(MANIFEST_FILE);
    let mut manifest = if manifest_path.exists() {
        Manifest::read(&manifest_path)?
    } else {
        Manifest::default()
    };
    let mut produced = 0usize;
    for path in list_inputs(&a.input, &["xyz"])? {
        let stem = stem_of(&path);
        let cloud = read_xyz(&path)?;
        let seed = rng::derive_named(a.seed, &stem);
        let triplets = make_fixed_triplets(
            &cloud,
            &stem,
            cfg.augmentation.cuts_per_object,
            &bounds,
            (cfg.points_broken, cfg.points_repair),
            seed,
        )?;
        manifest.entries.retain(|e| e.base_id != stem);
        for t in &triplets {
            manifest.entries.push(write_triplet(&a.out, t, &a.class_label, seed)?);
        }
        produced += triplets.len();
    }
    manifest.entries.sort_by(|x, y| x.object_id.cmp(&y.object_id));
    manifest.write(&manifest_path)?;
    eprintln!("wrote {produced} triplets to {}", a.out.display());
    Ok(())
}

fn load_normalized_set(dir: &Path, points: usize, seed: u64) -> Result<Vec<(String, PointCloud)>> {
    xyz_stems(dir)?
        .into_iter()
        .map(|(stem, p)| {
            let (c, _) = normalize(&read_xyz(&p)?)?;
            let c = if c.len() > points {
                random_downsample(&c, points, rng::derive_named(seed, &stem))?
            } else {
                c
            };
            Ok((stem, c))
        })
        .collect()
}

fn dedup(a: &DedupArgs) -> CliResult<()> {
    if a.points == 0 {
        return Err(Failure::Usage("--points must be positive".into()));
    }
    let set_a = load_normalized_set(&a.a, a.points, rng::derive(a.seed, 0))?;
    let set_b = load_normalized_set(&a.b, a.points, rng::derive(a.seed, 1))?;
    let rows = dedup_candidates(&set_a, &set_b, a.k)?;
    write_text(&a.out, &dedup_csv(&rows))?;
    Ok(())
}

fn split(cfg: &PipelineConfig, a: &SplitArgs) -> CliResult<()> {
    let manifest_path = a.dataset.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        Manifest::read(&manifest_path)?
    } else {
        let ing = ingest_manifest(
            &a.dataset.join(COMPLETE_DIR),
            &a.dataset.join(BROKEN_DIR),
            &a.dataset.join(REPAIR_DIR),
        )?;
        for u in &ing.unmatched {
            eprintln!("unmatched: {} (present in {})", u.stem, u.present_in.join(", "));
        }
        ing.manifest
    };
    let out = assign_split(&manifest, cfg.train_fraction, a.seed)?;
    out.write(&manifest_path)?;
    let count = |s: Split| out.entries.iter().filter(|e| e.split == Some(s)).count();
    eprintln!(
        "train {} / test {} / test-only {}",
        count(Split::Train),
        count(Split::Test),
        count(Split::TestOnly)
    );
    Ok(())
}

fn optimizer_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".opt");
    PathBuf::from(s)
}

fn load_training_pairs(root: &Path) -> Result<Vec<TrainingPair>> {
    let manifest = Manifest::read(root.join(MANIFEST_FILE))?;
    manifest
        .by_split(Split::Train)
        .map(|e| {
            let repair = e
                .repair
                .as_deref()
                .ok_or_else(|| Error::Manifest(format!("{} has no repair", e.object_id)))?;
            Ok(TrainingPair {
                id: e.object_id.clone(),
                repair: read_xyz(resolve(root, repair))?,
                condition: read_xyz(resolve(root, &e.broken))?,
            })
        })
        .collect()
}

fn save_state(path: &Path, params: &crate::denoiser::DenoiserParameters, schedule: crate::diffusion::ScheduleParams, opt: &OptimizerState) -> Result<()> {
    save_checkpoint(
        path,
        &Checkpoint {
            params: params.clone(),
            schedule,
        },
    )?;
    let op = optimizer_path(path);
    std::fs::write(&op, opt.to_bytes()).map_err(|e| Error::io(&op, e))
}

fn train(cfg: &PipelineConfig, a: &TrainArgs) -> CliResult<()> {
    let data = load_training_pairs(&a.dataset)?;
    if data.is_empty() {
        return Err(Error::Manifest("no training entries; run `split` first".into()).into());
    }
    let tc = cfg.training;
    let (params, schedule_params, optimizer) = if a.resume {
        let ckpt = load_checkpoint(&a.checkpoint)?;
        let op = optimizer_path(&a.checkpoint);
        let bytes = std::fs::read(&op).map_err(|e| Error::io(&op, e))?;
        let mut opt = OptimizerState::from_bytes(&bytes)?;
        opt.config.learning_rate = tc.learning_rate;
        (ckpt.params, ckpt.schedule, opt)
    } else {
        let params = init_params(&cfg.architecture, rng::derive(tc.seed, 0))?;
        let config = AdamConfig {
            learning_rate: tc.learning_rate,
            ..AdamConfig::default()
        };
        let opt = OptimizerState::new(config, params.len());
        (params, cfg.schedule.params(), opt)
    };
    let schedule = schedule_params.build()?;

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.checkpoint.as_os_str().to_owned();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    let fresh_log = !a.resume || !log_path.exists();
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh_log)
        .truncate(fresh_log)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if fresh_log {
        writeln!(log, "step,loss").map_err(|e| Error::io(&log_path, e))?;
    }

    let mut trainer = Trainer::new(params, optimizer, &schedule, &data)?;
    let every = a.log_every.max(1);
    let mut lines = String::new();
    for epoch in 1..=tc.epochs {
        trainer.run_epochs(1, tc.batch_size, rng::derive(tc.seed, 1), |r| {
            if r.step % every == 0 {
                let _ = writeln!(lines, "{},{}", r.step, format_g9(r.loss));
            }
        })?;
        log.write_all(lines.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
        lines.clear();
        if a.save_every.is_some_and(|k| k > 0 && epoch % k == 0) {
            save_state(&a.checkpoint, &trainer.params, schedule_params, &trainer.optimizer)?;
        }
    }
    save_state(&a.checkpoint, &trainer.params, schedule_params, &trainer.optimizer)?;
    eprintln!("trained to step {}", trainer.optimizer.step);
    Ok(())
}

fn complete(cfg: &PipelineConfig, a: &CompleteArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let schedule = ckpt.schedule.build()?;
    let jobs: Vec<(String, PathBuf)> = match (&a.input, &a.dataset) {
        (Some(input), _) => list_inputs(input, &["xyz"])?
            .into_iter()
            .map(|p| (stem_of(&p), p))
            .collect(),
        (None, Some(root)) => {
            let manifest = Manifest::read(root.join(MANIFEST_FILE))?;
            manifest
                .entries
                .iter()
                .filter(|e| matches!(e.split, Some(Split::Test | Split::TestOnly)))
                .map(|e| (e.object_id.clone(), resolve(root, &e.broken)))
                .collect()
        }
        (None, None) => return Err(Failure::Usage("one of --in or --dataset is required".into())),
    };
    let repair_dir = a.out.join("repair");
    let composite_dir = a.out.join("composite");
    create_dir(&repair_dir)?;
    create_dir(&composite_dir)?;
    for (id, path) in jobs {
        let condition = read_xyz(&path)?;
        let repair = sample_repair(&ckpt.params, &condition, cfg.points_repair, &schedule, rng::derive_named(a.seed, &id))?;
        write_xyz(repair_dir.join(format!("{id}.xyz")), &repair)?;
        write_xyz(composite_dir.join(format!("{id}.xyz")), &condition.concat(&repair))?;
        eprintln!("completed {id}");
    }
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, a: &EvaluateArgs) -> CliResult<()> {
    let labels: BTreeMap<String, String> = match &a.manifest {
        Some(p) => Manifest::read(p)?
            .entries
            .into_iter()
            .map(|e| (e.object_id, e.class_label))
            .collect(),
        None => BTreeMap::new(),
    };
    let result = evaluate_corpus(&a.pred, &a.gt, cfg.evaluation.m, cfg.evaluation.seed, &labels)?;
    for u in &result.unmatched {
        eprintln!("unmatched: {u}");
    }
    write_text(&a.out, &records_csv(&result.records)?)?;
    let flagged = result.records.iter().filter(|r| !r.is_valid()).count();
    eprintln!("evaluated {} objects ({flagged} flagged)", result.records.len());
    Ok(())
}

fn report(a: &ReportArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.records).map_err(|e| Error::io(&a.records, e))?;
    let records = parse_records_csv(&text)?;
    let group_by = match a.group_by {
        GroupArg::None => GroupBy::None,
        GroupArg::Class => GroupBy::ClassLabel,
    };
    let rows = aggregate_stats(&records, group_by, &a.label)?;
    let per_class = aggregate_stats(&records, GroupBy::ClassLabel, &a.label)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("summary.csv"), &summary_csv(&rows)?)?;
    let table = summary_table(&rows);
    write_text(&a.out.join("summary.txt"), &table)?;
    write_text(&a.out.join("barplot.csv"), &barplot_csv(&per_class)?)?;
    print!("{table}");
    Ok(())
}
