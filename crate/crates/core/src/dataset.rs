//! On-disk datasets: the `complete/`, `broken/`, `repair/` directory layout,
//! the JSON manifest, train/test splitting by base object, and the
//! cross-dataset duplicate search.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::augment::{CutSpec, FixedTriplet};
use crate::distance::{chamfer, CHAMFER_VARIANT};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::io::{format_g9, write_xyz};
use crate::rng;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const XYZ_EXT: &str = "xyz";

pub const COMPLETE_DIR: &str = "complete";
pub const BROKEN_DIR: &str = "broken";
pub const REPAIR_DIR: &str = "repair";
/// Dense (not count-fixed) repair parts, used as ground truth by the
/// evaluation metric, which needs more points than the generated repair.
pub const REFERENCE_DIR: &str = "reference";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "test")]
    Test,
    /// No ground-truth repair; never trained on.
    #[serde(rename = "test-only")]
    TestOnly,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::TestOnly => "test-only",
        })
    }
}

mod cut_or_external {
    use super::*;

    pub fn serialize<S: Serializer>(cut: &Option<CutSpec>, s: S) -> Result<S::Ok, S::Error> {
        match cut {
            Some(c) => c.serialize(s),
            None => s.serialize_str("external"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<CutSpec>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Cut(CutSpec),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Cut(c) => Ok(Some(c)),
            Repr::Tag(t) if t == "external" => Ok(None),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!(
                "expected a cut or \"external\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Unique per (object, cut).
    pub object_id: String,
    /// Shared by every variant of one source object.
    pub base_id: String,
    pub class_label: String,
    pub complete: Option<String>,
    pub broken: String,
    pub repair: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// `None` for triplets that came from outside (serialized `"external"`).
    #[serde(with = "cut_or_external")]
    pub cut: Option<CutSpec>,
    pub split: Option<Split>,
    pub seed: Option<u64>,
}

impl ManifestEntry {
    fn paths(&self) -> impl Iterator<Item = &str> {
        [Some(&self.broken), self.complete.as_ref(), self.repair.as_ref(), self.reference.as_ref()]
            .into_iter()
            .flatten()
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            entries: Vec::new(),
        }
    }
}

impl Manifest {
    /// Pretty JSON with lexicographically sorted keys and a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        // serde_json::Value objects are BTreeMap-backed, hence sorted.
        let value = serde_json::to_value(self)?;
        let mut s = serde_json::to_string_pretty(&value)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported format_version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Checks id uniqueness, split consistency per base object, and that
    /// every referenced file exists (relative paths resolve against `root`).
    pub fn validate(&self, root: &Path) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut splits: BTreeMap<&str, Option<Split>> = BTreeMap::new();
        for e in &self.entries {
            if !ids.insert(e.object_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate object_id {}", e.object_id)));
            }
            if let Some(prev) = splits.insert(&e.base_id, e.split) {
                if prev != e.split {
                    return Err(Error::Manifest(format!(
                        "variants of {} are on different sides of the split",
                        e.base_id
                    )));
                }
            }
            for p in e.paths() {
                if !resolve(root, p).exists() {
                    return Err(Error::Manifest(format!("missing file {p}")));
                }
            }
        }
        Ok(())
    }

    pub fn by_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }
}

pub fn resolve(root: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

/// Stem of every `.xyz` file in `dir`, mapped to its path.
pub fn xyz_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some(XYZ_EXT) || !path.is_file() {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// A stem that was not present in all three directories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unmatched {
    pub stem: String,
    pub present_in: Vec<&'static str>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub manifest: Manifest,
    pub unmatched: Vec<Unmatched>,
}

/// Builds a manifest from three directories matched by case-sensitive file
/// stem. Stems missing from any directory are reported and excluded.
pub fn ingest_manifest(complete_dir: &Path, broken_dir: &Path, repair_dir: &Path) -> Result<Ingested> {
    let dirs = [
        (COMPLETE_DIR, xyz_stems(complete_dir)?),
        (BROKEN_DIR, xyz_stems(broken_dir)?),
        (REPAIR_DIR, xyz_stems(repair_dir)?),
    ];
    let all: BTreeSet<&String> = dirs.iter().flat_map(|(_, m)| m.keys()).collect();
    let mut manifest = Manifest::default();
    let mut unmatched = Vec::new();
    for stem in all {
        let present_in: Vec<&'static str> = dirs
            .iter()
            .filter(|(_, m)| m.contains_key(stem))
            .map(|(name, _)| *name)
            .collect();
        if present_in.len() < 3 {
            unmatched.push(Unmatched {
                stem: stem.clone(),
                present_in,
            });
            continue;
        }
        let path = |i: usize| dirs[i].1[stem].to_string_lossy().into_owned();
        manifest.entries.push(ManifestEntry {
            object_id: stem.clone(),
            base_id: stem.clone(),
            class_label: String::new(),
            complete: Some(path(0)),
            broken: path(1),
            repair: Some(path(2)),
            reference: None,
            cut: None,
            split: None,
            seed: None,
        });
    }
    Ok(Ingested { manifest, unmatched })
}

/// Number of training base objects for `b` objects at `fraction`:
/// `ceil(fraction * b)`, guarded against products like `0.7 * 10 = 7.000000000000001`.
pub fn train_count(fraction: f64, b: usize) -> usize {
    let raw = fraction * b as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Assigns train/test by base object. Base objects carrying a test-only
/// entry stay test-only as a whole and are not counted.
pub fn assign_split(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<Manifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    if manifest.entries.is_empty() {
        return Err(Error::Manifest("cannot split an empty manifest".into()));
    }
    let test_only: BTreeSet<&str> = manifest
        .entries
        .iter()
        .filter(|e| e.split == Some(Split::TestOnly))
        .map(|e| e.base_id.as_str())
        .collect();
    let mut bases: Vec<&str> = manifest
        .entries
        .iter()
        .map(|e| e.base_id.as_str())
        .filter(|b| !test_only.contains(b))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    bases.shuffle(&mut rng::rng(seed));
    let n_train = train_count(train_fraction, bases.len());
    let train: BTreeSet<&str> = bases[..n_train].iter().copied().collect();

    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.split = Some(if test_only.contains(e.base_id.as_str()) {
            Split::TestOnly
        } else if train.contains(e.base_id.as_str()) {
            Split::Train
        } else {
            Split::Test
        });
    }
    Ok(out)
}

/// Writes one count-fixed triplet into the dataset layout under `root` and
/// returns its manifest entry (paths relative to `root`).
pub fn write_triplet(root: &Path, t: &FixedTriplet, class_label: &str, seed: u64) -> Result<ManifestEntry> {
    let id = &t.triplet.object_id;
    let rel = |dir: &str| format!("{dir}/{id}.{XYZ_EXT}");
    for (dir, cloud) in [
        (COMPLETE_DIR, &t.triplet.complete),
        (BROKEN_DIR, &t.broken),
        (REPAIR_DIR, &t.repair),
        (REFERENCE_DIR, &t.triplet.repair),
    ] {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        write_xyz(root.join(rel(dir)), cloud)?;
    }
    Ok(ManifestEntry {
        object_id: id.clone(),
        base_id: t.triplet.base_id.clone(),
        class_label: class_label.to_string(),
        complete: Some(rel(COMPLETE_DIR)),
        broken: rel(BROKEN_DIR),
        repair: Some(rel(REPAIR_DIR)),
        reference: Some(rel(REFERENCE_DIR)),
        cut: Some(t.triplet.cut),
        split: None,
        seed: Some(seed),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupRow {
    pub query_id: String,
    /// 1-based.
    pub rank: usize,
    pub candidate_id: String,
    pub chamfer: f64,
}

/// For each cloud of `set_a`, the `k` closest clouds of `set_b` by Chamfer
/// distance, ascending (ties broken by position in `set_b`).
pub fn dedup_candidates(
    set_a: &[(String, PointCloud)],
    set_b: &[(String, PointCloud)],
    k: usize,
) -> Result<Vec<DedupRow>> {
    if k == 0 || k > set_b.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} but the candidate set has {} clouds",
            set_b.len()
        )));
    }
    let matrix: Vec<Vec<f64>> = set_a
        .par_iter()
        .map(|(_, a)| set_b.iter().map(|(_, b)| chamfer(a, b)).collect())
        .collect();
    let mut rows = Vec::with_capacity(set_a.len() * k);
    for ((qid, _), dists) in set_a.iter().zip(&matrix) {
        let mut order: Vec<usize> = (0..set_b.len()).collect();
        order.sort_by(|&i, &j| dists[i].total_cmp(&dists[j]).then(i.cmp(&j)));
        for (rank, &j) in order.iter().take(k).enumerate() {
            rows.push(DedupRow {
                query_id: qid.clone(),
                rank: rank + 1,
                candidate_id: set_b[j].0.clone(),
                chamfer: dists[j],
            });
        }
    }
    Ok(rows)
}

pub fn dedup_csv(rows: &[DedupRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {CHAMFER_VARIANT}; inputs normalized then sampled to a common count");
    out.push_str("query_id,rank,candidate_id,chamfer\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.query_id, r.rank, r.candidate_id, format_g9(r.chamfer));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(base: &str, i: usize) -> ManifestEntry {
        ManifestEntry {
            object_id: format!("{base}-cut{i}"),
            base_id: base.to_string(),
            class_label: "bowl".into(),
            complete: None,
            broken: format!("broken/{base}-cut{i}.xyz"),
            repair: None,
            reference: None,
            cut: None,
            split: None,
            seed: None,
        }
    }

    fn manifest(bases: usize, variants: usize) -> Manifest {
        Manifest {
            format_version: MANIFEST_VERSION,
            entries: (0..bases)
                .flat_map(|b| (0..variants).map(move |i| entry(&format!("obj{b:02}"), i)))
                .collect(),
        }
    }

    #[test]
    fn seventy_thirty() {
        let m = assign_split(&manifest(10, 1), 0.7, 3).unwrap();
        assert_eq!(m.by_split(Split::Train).count(), 7);
        assert_eq!(m.by_split(Split::Test).count(), 3);
        assert_eq!(m, assign_split(&manifest(10, 1), 0.7, 3).unwrap());
    }

    #[test]
    fn variants_share_a_side() {
        let m = assign_split(&manifest(10, 4), 0.7, 9).unwrap();
        let mut sides: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for e in &m.entries {
            sides.entry(&e.base_id).or_default().insert(e.split.unwrap());
        }
        assert!(sides.values().all(|s| s.len() == 1));
        assert_eq!(m.by_split(Split::Train).count(), 28);
    }

    #[test]
    fn test_only_never_trains() {
        let mut m = manifest(5, 2);
        for e in m.entries.iter_mut().filter(|e| e.base_id == "obj01") {
            e.split = Some(Split::TestOnly);
        }
        let out = assign_split(&m, 0.99, 1).unwrap();
        for e in out.entries.iter().filter(|e| e.base_id == "obj01") {
            assert_eq!(e.split, Some(Split::TestOnly));
        }
        assert_eq!(out.by_split(Split::Train).count(), 8);
    }

    #[test]
    fn bad_fraction() {
        assert!(assign_split(&manifest(3, 1), 1.0, 1).is_err());
        assert!(assign_split(&manifest(3, 1), 0.0, 1).is_err());
        assert!(assign_split(&Manifest::default(), 0.5, 1).is_err());
    }

    #[test]
    fn train_count_rounding() {
        assert_eq!(train_count(0.7, 10), 7);
        assert_eq!(train_count(0.7, 40), 28);
        assert_eq!(train_count(0.7, 3), 3);
        assert_eq!(train_count(0.5, 3), 2);
    }

    #[test]
    fn manifest_json_is_sorted_and_round_trips() {
        let mut m = manifest(2, 2);
        m.entries[0].cut = Some(CutSpec {
            theta_x: 1.5,
            theta_z: -2.0,
            height_fraction: 0.2,
            seed: 42,
        });
        m.entries[1].split = Some(Split::TestOnly);
        let json = m.to_json().unwrap();
        assert!(json.contains("\"cut\": \"external\""));
        assert!(json.contains("\"test-only\""));
        let first_keys: Vec<&str> = json
            .lines()
            .filter(|l| l.starts_with("  \""))
            .map(|l| l.trim())
            .collect();
        assert!(first_keys[0].starts_with("\"entries\""));
        assert!(first_keys[1].starts_with("\"format_version\""));
        assert_eq!(Manifest::from_json(&json).unwrap(), m);
    }

    #[test]
    fn dedup_requires_enough_candidates() {
        let c = PointCloud::new(vec![[0.0; 3]]).unwrap();
        let a = vec![("a".to_string(), c.clone())];
        assert!(dedup_candidates(&a, &a, 2).is_err());
        let rows = dedup_candidates(&a, &a, 1).unwrap();
        assert_eq!(rows[0].chamfer, 0.0);
    }
}
