//! Procedural test shapes: icospheres, open cylinders and bowl shells.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;

use crate::error::Result;
use crate::geometry::{Mesh, Point3, PointCloud};
use crate::rng;

fn unit(p: Point3) -> Point3 {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

/// Unit icosphere after `subdivisions` rounds of 4-way splitting.
pub fn icosphere(subdivisions: usize) -> Mesh {
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3> = [
        [-1.0, g, 0.0],
        [1.0, g, 0.0],
        [-1.0, -g, 0.0],
        [1.0, -g, 0.0],
        [0.0, -1.0, g],
        [0.0, 1.0, g],
        [0.0, -1.0, -g],
        [0.0, 1.0, -g],
        [g, 0.0, -1.0],
        [g, 0.0, 1.0],
        [-g, 0.0, -1.0],
        [-g, 0.0, 1.0],
    ]
    .into_iter()
    .map(unit)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vs: &mut Vec<Point3>| {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let (p, q) = (vs[a], vs[b]);
                vs.push(unit([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]));
                vs.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh { vertices, faces }
}

/// Points spread uniformly over the lateral surface of an open cylinder of
/// the given radius, with `y` in `[0, height]`.
pub fn cylinder_cloud(n: usize, radius: f64, height: f64, seed: u64) -> Result<PointCloud> {
    let mut rng = rng::rng(seed);
    PointCloud::new(
        (0..n)
            .map(|_| {
                let a = rng.random_range(0.0..2.0 * PI);
                [radius * a.cos(), rng.random_range(0.0..height), radius * a.sin()]
            })
            .collect(),
    )
}

/// Shape parameters of a bowl: a spherical cap shell opening upward (+y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BowlParams {
    pub radius: f64,
    pub thickness: f64,
    /// Outward flare of the rim, as a fraction of the radius.
    pub rim: f64,
    /// Polar angle of the opening edge measured from the bottom, radians
    /// (`PI / 2` is a full hemisphere).
    pub opening: f64,
}

impl BowlParams {
    pub fn random(seed: u64) -> Self {
        let mut rng = rng::rng(seed);
        Self {
            radius: rng.random_range(0.8..1.2),
            thickness: rng.random_range(0.03..0.1),
            rim: rng.random_range(0.0..0.15),
            opening: rng.random_range(0.42 * PI..0.5 * PI),
        }
    }
}

/// Closed shell mesh of a bowl: outer cap, inner cap and a flat annular rim
/// joining them.
pub fn bowl_mesh(p: &BowlParams) -> Mesh {
    const RINGS: usize = 16;
    const SEGMENTS: usize = 32;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let inner_r = p.radius - p.thickness;

    // Each cap: a pole vertex plus RINGS rings of SEGMENTS vertices.
    let mut cap = |r: f64, flip: bool, vertices: &mut Vec<Point3>| -> usize {
        let pole = vertices.len();
        vertices.push([0.0, -r, 0.0]);
        for i in 1..=RINGS {
            let polar = p.opening * i as f64 / RINGS as f64;
            for j in 0..SEGMENTS {
                let az = 2.0 * PI * j as f64 / SEGMENTS as f64;
                vertices.push([r * polar.sin() * az.cos(), -r * polar.cos(), r * polar.sin() * az.sin()]);
            }
        }
        let ring = |i: usize, j: usize| pole + 1 + (i - 1) * SEGMENTS + j % SEGMENTS;
        let mut tri = |a: usize, b: usize, c: usize| {
            faces.push(if flip { [a, c, b] } else { [a, b, c] });
        };
        for j in 0..SEGMENTS {
            tri(pole, ring(1, j + 1), ring(1, j));
        }
        for i in 1..RINGS {
            for j in 0..SEGMENTS {
                tri(ring(i, j), ring(i, j + 1), ring(i + 1, j + 1));
                tri(ring(i, j), ring(i + 1, j + 1), ring(i + 1, j));
            }
        }
        ring(RINGS, 0)
    };
    let outer_edge = cap(p.radius, false, &mut vertices);
    let inner_edge = cap(inner_r, true, &mut vertices);

    // Rim: flare outward from the outer edge, then back to the inner edge.
    let edge_y = -p.radius * p.opening.cos();
    let flare = p.radius * p.opening.sin() * (1.0 + p.rim);
    let lip = vertices.len();
    for j in 0..SEGMENTS {
        let az = 2.0 * PI * j as f64 / SEGMENTS as f64;
        vertices.push([flare * az.cos(), edge_y, flare * az.sin()]);
    }
    let o = |j: usize| outer_edge + j % SEGMENTS;
    let i = |j: usize| inner_edge + j % SEGMENTS;
    let l = |j: usize| lip + j % SEGMENTS;
    for j in 0..SEGMENTS {
        faces.push([o(j), o(j + 1), l(j + 1)]);
        faces.push([o(j), l(j + 1), l(j)]);
        faces.push([l(j), l(j + 1), i(j + 1)]);
        faces.push([l(j), i(j + 1), i(j)]);
    }
    Mesh { vertices, faces }
}
