//! Chamfer and Hausdorff distances between point clouds.
//!
//! Chamfer is the unsquared, bidirectional mean-of-nearest-neighbor sum:
//! `mean_{p in a} min_{q in b} |p - q| + mean_{q in b} min_{p in a} |p - q|`.

use rayon::prelude::*;

use crate::geometry::PointCloud;
use crate::spatial::SpatialIndex;

/// Label written into report files so numbers are only compared within one
/// Chamfer convention.
pub const CHAMFER_VARIANT: &str = "chamfer=unsquared-mean-bidirectional";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Chamfer,
    Hausdorff,
}

impl Metric {
    pub fn apply(self, a: &PointCloud, b: &PointCloud) -> f64 {
        match self {
            Metric::Chamfer => chamfer(a, b),
            Metric::Hausdorff => hausdorff(a, b),
        }
    }
}

/// Euclidean distance from every point of `from` to its nearest point in `to`.
pub fn nearest_distances(from: &PointCloud, to: &SpatialIndex) -> Vec<f64> {
    from.points()
        .par_iter()
        .with_min_len(256)
        .map(|&p| to.nearest(p).expect("non-empty index").distance())
        .collect()
}

fn directed(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
    nearest_distances(a, &SpatialIndex::new(b.points()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    mean(&directed(a, b)) + mean(&directed(b, a))
}

pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> f64 {
    max(&directed(a, b)).max(max(&directed(b, a)))
}
