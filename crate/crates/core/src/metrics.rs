//! Distance factors: how far a generated repair is from its ground truth,
//! relative to how far two random subsamples of that ground truth are from
//! each other.
//!
//! `F_D = D(S_r, R1(S_g, m)) / D(R2(S_g, m), R3(S_g, m))` with three
//! independent uniform downsamples `R1..R3`. Lower is better; about 1 means
//! the repair is as close as a resampling of the truth itself.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::xyz_stems;
use crate::distance::{Metric, CHAMFER_VARIANT};
use crate::error::{Error, Result};
use crate::geometry::{random_downsample, PointCloud};
use crate::io::read_xyz;
use crate::rng;

/// Denominators below this are treated as zero.
pub const MIN_DENOMINATOR: f64 = 1e-12;

pub fn distance_factor(s_r: &PointCloud, s_g: &PointCloud, m: usize, metric: Metric, seed: u64) -> Result<f64> {
    if m == 0 || s_g.len() <= m {
        return Err(Error::InvalidArgument(format!(
            "ground truth needs more than m = {m} points, has {}",
            s_g.len()
        )));
    }
    if s_r.len() < m {
        return Err(Error::NotEnoughPoints {
            requested: m,
            available: s_r.len(),
        });
    }
    let repair = if s_r.len() > m {
        random_downsample(s_r, m, rng::derive(seed, 3))?
    } else {
        s_r.clone()
    };
    let r1 = random_downsample(s_g, m, rng::derive(seed, 0))?;
    let r2 = random_downsample(s_g, m, rng::derive(seed, 1))?;
    let r3 = random_downsample(s_g, m, rng::derive(seed, 2))?;
    let denominator = metric.apply(&r2, &r3);
    if denominator < MIN_DENOMINATOR {
        return Err(Error::DegenerateDenominator(denominator));
    }
    Ok(metric.apply(&repair, &r1) / denominator)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub object_id: String,
    pub class_label: String,
    pub m: usize,
    /// NaN when flagged.
    pub cdf: f64,
    pub hdf: f64,
    pub cdf_seed: u64,
    pub hdf_seed: u64,
    /// Why the instance could not be scored, if it could not.
    pub flag: Option<String>,
}

impl EvaluationRecord {
    pub fn is_valid(&self) -> bool {
        self.flag.is_none()
    }
}

fn flag_for(e: &Error) -> String {
    match e {
        Error::DegenerateDenominator(_) => "degenerate_denominator".into(),
        Error::NotEnoughPoints { .. } | Error::InvalidArgument(_) => "insufficient_points".into(),
        other => other.to_string().replace([',', '\n'], " "),
    }
}

/// Scores one (prediction, ground truth) pair with both metrics. Seeds derive
/// from `(seed, object_id)` only.
pub fn evaluate_pair(
    object_id: &str,
    class_label: &str,
    pred: &PointCloud,
    gt: &PointCloud,
    m: usize,
    seed: u64,
) -> EvaluationRecord {
    let instance = rng::derive_named(seed, object_id);
    let cdf_seed = rng::derive(instance, 0);
    let hdf_seed = rng::derive(instance, 1);
    let cdf = distance_factor(pred, gt, m, Metric::Chamfer, cdf_seed);
    let hdf = distance_factor(pred, gt, m, Metric::Hausdorff, hdf_seed);
    let flag = match (&cdf, &hdf) {
        (Err(e), _) | (_, Err(e)) => Some(flag_for(e)),
        _ => None,
    };
    EvaluationRecord {
        object_id: object_id.to_string(),
        class_label: class_label.to_string(),
        m,
        cdf: cdf.unwrap_or(f64::NAN),
        hdf: hdf.unwrap_or(f64::NAN),
        cdf_seed,
        hdf_seed,
        flag,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEvaluation {
    /// Sorted by object id.
    pub records: Vec<EvaluationRecord>,
    /// Stems present in only one of the two directories.
    pub unmatched: Vec<String>,
}

/// Evaluates every stem present in both directories. `labels` maps object
/// ids to class labels; missing ids get an empty label.
pub fn evaluate_corpus(
    pred_dir: &Path,
    gt_dir: &Path,
    m: usize,
    seed: u64,
    labels: &BTreeMap<String, String>,
) -> Result<CorpusEvaluation> {
    let preds = xyz_stems(pred_dir)?;
    let gts = xyz_stems(gt_dir)?;
    let unmatched = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .chain(gts.keys().filter(|k| !preds.contains_key(*k)))
        .cloned()
        .collect();
    let pairs: Vec<(&String, &Path, &Path)> = preds
        .iter()
        .filter_map(|(stem, p)| gts.get(stem).map(|g| (stem, p.as_path(), g.as_path())))
        .collect();
    let records = pairs
        .par_iter()
        .map(|(stem, p, g)| {
            let pred = read_xyz(p)?;
            let gt = read_xyz(g)?;
            let label = labels.get(*stem).map(String::as_str).unwrap_or("");
            Ok(evaluate_pair(stem, label, &pred, &gt, m, seed))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusEvaluation { records, unmatched })
}

fn check_field(s: &str) -> Result<&str> {
    if s.contains([',', '\n', '\r', '"']) {
        return Err(Error::InvalidArgument(format!("CSV field may not contain separators: {s:?}")));
    }
    Ok(s)
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.9}")
    }
}

pub const RECORDS_HEADER: &str = "object_id,class_label,m,cdf,hdf,flag";

pub fn records_csv(records: &[EvaluationRecord]) -> Result<String> {
    let mut out = format!("{RECORDS_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            check_field(&r.object_id)?,
            check_field(&r.class_label)?,
            r.m,
            fmt_value(r.cdf),
            fmt_value(r.hdf),
            check_field(r.flag.as_deref().unwrap_or(""))?
        );
    }
    Ok(out)
}

pub fn parse_records_csv(text: &str) -> Result<Vec<EvaluationRecord>> {
    let bad = |line: usize, msg: &str| Error::Parse {
        path: "records.csv".into(),
        line,
        message: msg.to_string(),
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == RECORDS_HEADER => {}
        _ => return Err(bad(1, "missing records header")),
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i + 1, "expected 6 fields"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
            Ok(EvaluationRecord {
                object_id: f[0].to_string(),
                class_label: f[1].to_string(),
                m: f[2].trim().parse().map_err(|_| bad(i + 1, "bad m"))?,
                cdf: num(f[3])?,
                hdf: num(f[4])?,
                cdf_seed: 0,
                hdf_seed: 0,
                flag: (!f[5].is_empty()).then(|| f[5].to_string()),
            })
        })
        .collect()
}

/// Minimum, maximum, mean, lower median and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub avg: f64,
    pub med: f64,
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let avg = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / n;
        Some(Stats {
            min: v[0],
            max: v[v.len() - 1],
            avg,
            med: v[(v.len() - 1) / 2],
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    None,
    ClassLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsSummary {
    pub group: String,
    pub count: usize,
    pub cdf: Stats,
    pub hdf: Stats,
}

/// Statistics per group over unflagged records, sorted ascending by CDF
/// median (lower is better), then by group name.
pub fn aggregate_stats(records: &[EvaluationRecord], group_by: GroupBy, overall_label: &str) -> Result<Vec<StatsSummary>> {
    let mut groups: BTreeMap<String, Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in records {
        let key = match group_by {
            GroupBy::None => overall_label.to_string(),
            GroupBy::ClassLabel => r.class_label.clone(),
        };
        groups.entry(key).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::EmptyGroup(overall_label.to_string()));
    }
    let mut rows = Vec::new();
    for (group, rs) in groups {
        let valid: Vec<&&EvaluationRecord> = rs.iter().filter(|r| r.is_valid()).collect();
        let cdf: Vec<f64> = valid.iter().map(|r| r.cdf).collect();
        let hdf: Vec<f64> = valid.iter().map(|r| r.hdf).collect();
        let (Some(c), Some(h)) = (Stats::of(&cdf), Stats::of(&hdf)) else {
            return Err(Error::EmptyGroup(group));
        };
        rows.push(StatsSummary {
            group,
            count: valid.len(),
            cdf: c,
            hdf: h,
        });
    }
    rows.sort_by(|a, b| a.cdf.med.total_cmp(&b.cdf.med).then_with(|| a.group.cmp(&b.group)));
    Ok(rows)
}

fn stat_cells(s: &Stats) -> [f64; 5] {
    [s.min, s.max, s.avg, s.med, s.std]
}

pub fn summary_csv(rows: &[StatsSummary]) -> Result<String> {
    let mut out = format!("# {CHAMFER_VARIANT}\n");
    out.push_str("group,n,cdf_min,cdf_max,cdf_avg,cdf_med,cdf_std,hdf_min,hdf_max,hdf_avg,hdf_med,hdf_std\n");
    for r in rows {
        let _ = write!(out, "{},{}", check_field(&r.group)?, r.count);
        for v in stat_cells(&r.cdf).iter().chain(&stat_cells(&r.hdf)) {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Aligned plain-text table: CDF min/max/avg/med/std, then the same for HDF.
pub fn summary_table(rows: &[StatsSummary]) -> String {
    let name_w = rows.iter().map(|r| r.group.len()).chain([5]).max().unwrap_or(5);
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            stat_cells(&r.cdf)
                .iter()
                .chain(&stat_cells(&r.hdf))
                .map(|v| format!("{v:.2}"))
                .collect()
        })
        .collect();
    let col_w = cells.iter().flatten().map(String::len).chain([6]).max().unwrap_or(6);
    let block = 5 * (col_w + 1) - 1;

    let mut out = String::new();
    let _ = writeln!(out, "{:<name_w$} | {:^block$} | {:^block$}", "", "CDF", "HDF");
    let heads = ["min", "max", "avg", "med", "std"];
    let head_row = heads.iter().map(|h| format!("{h:>col_w$}")).collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "{:<name_w$} | {head_row} | {head_row}", "group");
    let _ = writeln!(out, "{}", "-".repeat(name_w + 2 * block + 6));
    for (r, c) in rows.iter().zip(&cells) {
        let left = c[..5].iter().map(|s| format!("{s:>col_w$}")).collect::<Vec<_>>().join(" ");
        let right = c[5..].iter().map(|s| format!("{s:>col_w$}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "{:<name_w$} | {left} | {right}", r.group);
    }
    out
}

/// Bar-plot companion: mean and one standard deviation per class and metric.
pub fn barplot_csv(per_class: &[StatsSummary]) -> Result<String> {
    let mut rows: Vec<&StatsSummary> = per_class.iter().collect();
    rows.sort_by(|a, b| a.group.cmp(&b.group));
    let mut out = String::from("class_label,metric,avg,std\n");
    for (metric, pick) in [("cdf", 0usize), ("hdf", 1)] {
        for r in &rows {
            let s = if pick == 0 { r.cdf } else { r.hdf };
            let _ = writeln!(out, "{},{metric},{:.6},{:.6}", check_field(&r.group)?, s.avg, s.std);
        }
    }
    Ok(out)
}
