//! Surface sampling: area-weighted uniform draws and blue-noise sample
//! elimination.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;

use super::{Mesh, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::rng;
use crate::spatial::SpatialIndex;

/// Size of the uniform candidate pool relative to the requested count.
pub const OVERSAMPLE_FACTOR: usize = 4;

fn area_table(mesh: &Mesh) -> Result<Vec<f64>> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.triangle_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::ZeroArea);
    }
    Ok(cumulative)
}

fn draw(mesh: &Mesh, cumulative: &[f64], rng: &mut impl Rng) -> Point3 {
    let total = *cumulative.last().expect("non-empty area table");
    let r = rng.random::<f64>() * total;
    let face = cumulative
        .partition_point(|&c| c <= r)
        .min(cumulative.len() - 1);
    let [a, b, c] = mesh.triangle(face);
    let s = rng.random::<f64>().sqrt();
    let v = rng.random::<f64>();
    let (wa, wb, wc) = (1.0 - s, s * (1.0 - v), s * v);
    [
        wa * a[0] + wb * b[0] + wc * c[0],
        wa * a[1] + wb * b[1] + wc * c[1],
        wa * a[2] + wb * b[2] + wc * c[2],
    ]
}

/// `count` independent area-weighted uniform points on the surface.
pub fn uniform_surface_sample(mesh: &Mesh, count: usize, seed: u64) -> Result<PointCloud> {
    let cumulative = area_table(mesh)?;
    let mut rng = rng::rng(seed);
    PointCloud::new((0..count).map(|_| draw(mesh, &cumulative, &mut rng)).collect())
}

/// Poisson-disk-like sampling of exactly `count` surface points.
///
/// Draws `4 * count` uniform candidates, then repeatedly removes the candidate
/// whose nearest surviving neighbor is closest until `count` remain.
pub fn poisson_disk_sample(mesh: &Mesh, count: usize, seed: u64) -> Result<PointCloud> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let pool = count
        .checked_mul(OVERSAMPLE_FACTOR)
        .ok_or_else(|| Error::InvalidArgument("sample count too large".into()))?;
    let candidates = uniform_surface_sample(mesh, pool, seed)?;
    eliminate(candidates.points(), count)
}

#[derive(PartialEq)]
struct Entry {
    dist2: f64,
    index: usize,
    version: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on distance, then on index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist2
            .total_cmp(&self.dist2)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy sample elimination down to `count` points. Survivors keep their
/// candidate order.
pub(crate) fn eliminate(candidates: &[Point3], count: usize) -> Result<PointCloud> {
    let n = candidates.len();
    if count > n {
        return Err(Error::NotEnoughPoints {
            requested: count,
            available: n,
        });
    }
    if count == n {
        return PointCloud::new(candidates.to_vec());
    }
    let index = SpatialIndex::new(candidates);
    let mut alive = vec![true; n];
    let mut version = vec![0u32; n];
    let mut nearest = vec![usize::MAX; n];
    // dependents[j] lists points whose recorded nearest neighbor is j.
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut heap = BinaryHeap::with_capacity(n);

    for i in 0..n {
        let nb = index
            .nearest_where(candidates[i], |j| j != i)
            .expect("at least two candidates");
        nearest[i] = nb.index;
        dependents[nb.index].push(i);
        heap.push(Entry {
            dist2: nb.dist2,
            index: i,
            version: 0,
        });
    }

    let mut remaining = n;
    while remaining > count {
        let Some(top) = heap.pop() else { break };
        if !alive[top.index] || version[top.index] != top.version {
            continue;
        }
        let victim = top.index;
        alive[victim] = false;
        remaining -= 1;
        for i in std::mem::take(&mut dependents[victim]) {
            if !alive[i] || nearest[i] != victim {
                continue;
            }
            // The last survivor has no neighbor left; nothing to requeue.
            let Some(nb) = index.nearest_where(candidates[i], |j| j != i && alive[j]) else {
                continue;
            };
            nearest[i] = nb.index;
            dependents[nb.index].push(i);
            version[i] += 1;
            heap.push(Entry {
                dist2: nb.dist2,
                index: i,
                version: version[i],
            });
        }
    }

    PointCloud::new(
        candidates
            .iter()
            .zip(&alive)
            .filter(|(_, &a)| a)
            .map(|(&p, _)| p)
            .collect(),
    )
}
