//! Point clouds, meshes and the elementary transforms shared by the pipeline.

mod mesh;
mod sampling;

pub use mesh::{load_mesh, parse_obj, parse_off, Mesh};
pub use sampling::{poisson_disk_sample, uniform_surface_sample, OVERSAMPLE_FACTOR};

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng;

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// An ordered, non-empty set of finite 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for the `len`/`is_empty` convention.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    /// Axis-aligned bounds as (min, max).
    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    pub fn max_extent(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max)
    }

    /// Union of two clouds, `self` first.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        PointCloud { points }
    }

    pub fn map(&self, f: impl Fn(Point3) -> Point3) -> Result<PointCloud> {
        PointCloud::new(self.points.iter().map(|&p| f(p)).collect())
    }

    /// Picks the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

/// Translation and uniform scale taking a cloud to its normalized pose:
/// `normalized = (p - translation) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub translation: Point3,
    pub scale: f64,
}

impl NormalizationRecord {
    pub fn apply(&self, p: Point3) -> Point3 {
        let t = self.translation;
        [
            (p[0] - t[0]) / self.scale,
            (p[1] - t[1]) / self.scale,
            (p[2] - t[2]) / self.scale,
        ]
    }

    pub fn invert(&self, p: Point3) -> Point3 {
        let t = self.translation;
        [
            p[0] * self.scale + t[0],
            p[1] * self.scale + t[1],
            p[2] * self.scale + t[2],
        ]
    }

    pub fn denormalize(&self, cloud: &PointCloud) -> Result<PointCloud> {
        cloud.map(|p| self.invert(p))
    }
}

/// Moves the centroid to the origin and scales so the largest bounding-box
/// extent is 1.
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, NormalizationRecord)> {
    if cloud.len() < 2 {
        return Err(Error::ZeroExtent);
    }
    let scale = cloud.max_extent();
    if !(scale > 0.0) {
        return Err(Error::ZeroExtent);
    }
    let record = NormalizationRecord {
        translation: cloud.centroid(),
        scale,
    };
    let out = cloud.map(|p| record.apply(p))?;
    Ok((out, record))
}

/// Uniform subset of `m` points without replacement.
pub fn random_downsample(cloud: &PointCloud, m: usize, seed: u64) -> Result<PointCloud> {
    if m == 0 || m > cloud.len() {
        return Err(Error::NotEnoughPoints {
            requested: m,
            available: cloud.len(),
        });
    }
    let mut rng = rng::rng(seed);
    let picked = index::sample(&mut rng, cloud.len(), m).into_vec();
    cloud.select(&picked)
}

/// Rotation matrix `R_z(theta_z) * R_x(theta_x)`, angles in degrees,
/// counter-clockwise positive looking down each axis toward the origin.
pub fn rotation_xz(theta_x: f64, theta_z: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = theta_x.to_radians().sin_cos();
    let (sz, cz) = theta_z.to_radians().sin_cos();
    // R_x = [[1,0,0],[0,cx,-sx],[0,sx,cx]], R_z = [[cz,-sz,0],[sz,cz,0],[0,0,1]]
    [
        [cz, -sz * cx, sz * sx],
        [sz, cz * cx, -cz * sx],
        [0.0, sx, cx],
    ]
}

#[inline]
pub fn mat_vec(m: &[[f64; 3]; 3], p: Point3) -> Point3 {
    [dot(m[0], p), dot(m[1], p), dot(m[2], p)]
}

pub fn rotate_xz(cloud: &PointCloud, theta_x: f64, theta_z: f64) -> Result<PointCloud> {
    let r = rotation_xz(theta_x, theta_z);
    cloud.map(|p| mat_vec(&r, p))
}
