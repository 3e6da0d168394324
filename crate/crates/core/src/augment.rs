//! Synthetic breakage: oblique planar cuts near the bottom of an object split
//! a complete cloud into a broken part and the missing repair part.
//!
//! The cut plane is horizontal in a frame rotated by `R_z * R_x`; both parts
//! are returned in the object's original frame, as exact subsets of the input.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, rotation_xz, PointCloud};
use crate::rng;

/// Redraws allowed per triplet before giving up on an object.
pub const MAX_CUT_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutSpec {
    /// Degrees.
    pub theta_x: f64,
    /// Degrees.
    pub theta_z: f64,
    /// Height of the cut plane above the lowest point, as a fraction of the
    /// rotated-frame height.
    pub height_fraction: f64,
    /// Seed for the count-fixing draws of this cut.
    pub seed: u64,
}

/// Sampling bounds for cuts: angles uniform in the open interval
/// `(-max_angle, max_angle)`, height fractions uniform in `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentBounds {
    pub max_angle: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for AugmentBounds {
    fn default() -> Self {
        Self {
            max_angle: 30.0,
            low: 0.18,
            high: 0.22,
        }
    }
}

impl AugmentBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_angle > 0.0 && self.max_angle < 90.0) {
            return Err(Error::InvalidArgument(format!(
                "max_angle must be in (0, 90), got {}",
                self.max_angle
            )));
        }
        if !(self.low > 0.0 && self.high < 1.0 && self.low <= self.high) {
            return Err(Error::InvalidArgument(format!(
                "height bounds must satisfy 0 < low <= high < 1, got [{}, {}]",
                self.low, self.high
            )));
        }
        Ok(())
    }

    pub fn contains(&self, cut: &CutSpec) -> bool {
        cut.theta_x.abs() < self.max_angle
            && cut.theta_z.abs() < self.max_angle
            && cut.height_fraction >= self.low
            && cut.height_fraction <= self.high
    }

    pub fn draw(&self, rng: &mut impl Rng) -> CutSpec {
        let mut angle = || loop {
            let a = rng.random_range(-self.max_angle..self.max_angle);
            if a > -self.max_angle {
                break a;
            }
        };
        let theta_x = angle();
        let theta_z = angle();
        let height_fraction = rng.random_range(self.low..=self.high);
        CutSpec {
            theta_x,
            theta_z,
            height_fraction,
            seed: rng.next_u64(),
        }
    }
}

/// One breakage instance. Before count fixing, `broken` and `repair`
/// partition `complete` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub object_id: String,
    pub base_id: String,
    pub complete: PointCloud,
    pub broken: PointCloud,
    pub repair: PointCloud,
    pub cut: CutSpec,
}

/// Splits `cloud` by the cut plane. Returns `(broken, repair)`; the repair is
/// everything strictly below the plane.
pub fn apply_cut(cloud: &PointCloud, cut: &CutSpec) -> Result<(PointCloud, PointCloud)> {
    if !(0.0..=1.0).contains(&cut.height_fraction) {
        return Err(Error::InvalidArgument(format!(
            "height fraction {} outside [0, 1]",
            cut.height_fraction
        )));
    }
    let row_y = rotation_xz(cut.theta_x, cut.theta_z)[1];
    let heights: Vec<f64> = cloud.points().iter().map(|&p| dot(row_y, p)).collect();
    let lo = heights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let plane = lo + cut.height_fraction * (hi - lo);

    let mut broken = Vec::new();
    let mut repair = Vec::new();
    for (&p, &h) in cloud.points().iter().zip(&heights) {
        if h < plane {
            repair.push(p);
        } else {
            broken.push(p);
        }
    }
    if broken.is_empty() || repair.is_empty() {
        return Err(Error::DegenerateCut);
    }
    Ok((PointCloud::new(broken)?, PointCloud::new(repair)?))
}

/// Resamples a part to exactly `target` points: a uniform subset when there
/// are enough, sampling with replacement when there are at least half as many.
pub fn fix_counts(part: &PointCloud, target: usize, seed: u64) -> Result<PointCloud> {
    if target == 0 {
        return Err(Error::InvalidArgument("target count must be positive".into()));
    }
    let n = part.len();
    let mut rng = rng::rng(seed);
    if n >= target {
        let picked = index::sample(&mut rng, n, target).into_vec();
        return part.select(&picked);
    }
    if 2 * n < target {
        return Err(Error::InsufficientDensity { have: n, target });
    }
    let picked: Vec<usize> = (0..target).map(|_| rng.random_range(0..n)).collect();
    part.select(&picked)
}

fn cut_id(base: &str, i: usize) -> String {
    format!("{base}-cut{i}")
}

/// Draws cuts until `accept` succeeds, at most [`MAX_CUT_ATTEMPTS`] times.
fn draw_accepted<T>(
    cloud: &PointCloud,
    bounds: &AugmentBounds,
    rng: &mut rng::Rng,
    mut accept: impl FnMut(CutSpec, PointCloud, PointCloud) -> Result<T>,
) -> Result<T> {
    for _ in 0..MAX_CUT_ATTEMPTS {
        let cut = bounds.draw(rng);
        let (broken, repair) = match apply_cut(cloud, &cut) {
            Ok(parts) => parts,
            Err(Error::DegenerateCut) => continue,
            Err(e) => return Err(e),
        };
        match accept(cut, broken, repair) {
            Ok(v) => return Ok(v),
            Err(Error::DegenerateCut | Error::InsufficientDensity { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::CutAttemptsExhausted(MAX_CUT_ATTEMPTS))
}

/// `k` independent cuts of one object, deterministic in `seed`.
pub fn make_triplets(
    cloud: &PointCloud,
    object_id: &str,
    k: usize,
    bounds: &AugmentBounds,
    seed: u64,
) -> Result<Vec<Triplet>> {
    bounds.validate()?;
    let mut rng = rng::rng(seed);
    (0..k)
        .map(|i| {
            draw_accepted(cloud, bounds, &mut rng, |cut, broken, repair| {
                Ok(Triplet {
                    object_id: cut_id(object_id, i),
                    base_id: object_id.to_string(),
                    complete: cloud.clone(),
                    broken,
                    repair,
                    cut,
                })
            })
        })
        .collect()
}

/// A triplet together with its count-fixed training parts.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTriplet {
    pub triplet: Triplet,
    pub broken: PointCloud,
    pub repair: PointCloud,
}

/// Like [`make_triplets`], additionally resampling each part to the model's
/// point counts. Cuts whose parts are too sparse are redrawn.
pub fn make_fixed_triplets(
    cloud: &PointCloud,
    object_id: &str,
    k: usize,
    bounds: &AugmentBounds,
    counts: (usize, usize),
    seed: u64,
) -> Result<Vec<FixedTriplet>> {
    bounds.validate()?;
    let (n_broken, m_repair) = counts;
    let mut rng = rng::rng(seed);
    (0..k)
        .map(|i| {
            draw_accepted(cloud, bounds, &mut rng, |cut, broken, repair| {
                let fixed_broken = fix_counts(&broken, n_broken, rng::derive(cut.seed, 0))?;
                let fixed_repair = fix_counts(&repair, m_repair, rng::derive(cut.seed, 1))?;
                Ok(FixedTriplet {
                    triplet: Triplet {
                        object_id: cut_id(object_id, i),
                        base_id: object_id.to_string(),
                        complete: cloud.clone(),
                        broken,
                        repair,
                        cut,
                    },
                    broken: fixed_broken,
                    repair: fixed_repair,
                })
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    fn column(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| [0.0, i as f64 / (n - 1) as f64, 0.0]).collect()).unwrap()
    }

    #[test]
    fn zero_rotation_is_a_threshold() {
        let c = column(101);
        let cut = CutSpec {
            theta_x: 0.0,
            theta_z: 0.0,
            height_fraction: 0.2,
            seed: 0,
        };
        let (broken, repair) = apply_cut(&c, &cut).unwrap();
        assert!(repair.points().iter().all(|p| p[1] < 0.2));
        assert!(broken.points().iter().all(|p| p[1] >= 0.2));
        assert_eq!(repair.len() + broken.len(), 101);
    }

    #[test]
    fn degenerate_cut() {
        let c = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let cut = CutSpec {
            theta_x: 0.0,
            theta_z: 0.0,
            height_fraction: 0.2,
            seed: 0,
        };
        assert!(matches!(apply_cut(&c, &cut), Err(Error::DegenerateCut)));
    }

    #[test]
    fn fix_counts_policies() {
        let part = column(1000);
        let sub = fix_counts(&part, 820, 1).unwrap();
        assert_eq!(sub.len(), 820);
        let mut ys: Vec<f64> = sub.points().iter().map(|p| p[1]).collect();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        assert_eq!(ys.len(), 820);

        let half = column(500);
        let up = fix_counts(&half, 820, 1).unwrap();
        assert_eq!(up.len(), 820);
        let members: Vec<Point3> = half.points().to_vec();
        assert!(up.points().iter().all(|p| members.contains(p)));

        assert!(matches!(
            fix_counts(&column(300), 820, 1),
            Err(Error::InsufficientDensity { have: 300, target: 820 })
        ));
        assert_eq!(fix_counts(&column(410), 820, 1).unwrap().len(), 820);
    }

    #[test]
    fn four_distinct_cuts() {
        let c = column(200);
        let ts = make_triplets(&c, "obj", 4, &AugmentBounds::default(), 5).unwrap();
        assert_eq!(ts.len(), 4);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(ts[i].cut, ts[j].cut);
            }
        }
        assert_eq!(ts[2].object_id, "obj-cut2");
        assert_eq!(ts, make_triplets(&c, "obj", 4, &AugmentBounds::default(), 5).unwrap());
    }

    #[test]
    fn exhausted_attempts() {
        let c = PointCloud::new(vec![[0.0; 3], [0.0; 3]]).unwrap();
        assert!(matches!(
            make_triplets(&c, "flat", 1, &AugmentBounds::default(), 1),
            Err(Error::CutAttemptsExhausted(16))
        ));
    }
}
