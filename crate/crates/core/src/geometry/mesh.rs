use std::path::Path;

use super::{cross, norm, sub, Point3};
use crate::error::{Error, Result};

/// Triangle mesh. Polygon faces are fan-triangulated on load.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for f in &faces {
            for &i in f {
                if i >= vertices.len() {
                    return Err(Error::IndexOutOfRange {
                        index: i as i64,
                        vertex_count: vertices.len(),
                    });
                }
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.triangle_area(f)).sum()
    }
}

/// Loads an OBJ or OFF file, chosen by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    if ext != "obj" && ext != "off" {
        return Err(Error::UnsupportedFormat(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if ext == "obj" {
        parse_obj(&text, path)
    } else {
        parse_off(&text, path)
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: Option<&str>, path: &Path, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| parse_err(path, line, "missing coordinate"))?;
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("bad number {tok:?}")))
}

fn fan(polygon: &[usize], faces: &mut Vec<[usize; 3]>) {
    for k in 1..polygon.len() - 1 {
        faces.push([polygon[0], polygon[k], polygon[k + 1]]);
    }
}

/// Parses OBJ text. Only `v` and `f` records matter; normals, texture
/// coordinates, groups and materials are skipped.
pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut raw_faces: Vec<(usize, Vec<i64>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), path, lineno)?;
                let y = parse_f64(toks.next(), path, lineno)?;
                let z = parse_f64(toks.next(), path, lineno)?;
                vertices.push([x, y, z]);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in toks {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| parse_err(path, lineno, format!("bad face index {tok:?}")))?;
                    idx.push(i);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, lineno, "face with fewer than 3 vertices"));
                }
                raw_faces.push((vertices.len(), idx));
            }
            _ => {}
        }
    }
    // Negative indices are relative to the vertices defined before the face.
    let n = vertices.len();
    let mut faces = Vec::new();
    for (seen, idx) in raw_faces {
        let mut poly = Vec::with_capacity(idx.len());
        for i in idx {
            let resolved = if i > 0 { i - 1 } else { seen as i64 + i };
            if i == 0 || resolved < 0 || resolved as usize >= n {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    vertex_count: n,
                });
            }
            poly.push(resolved as usize);
        }
        fan(&poly, &mut faces);
    }
    Mesh::new(vertices, faces)
}

/// Parses OFF text (`OFF` header, counts line, vertices, polygon faces).
pub fn parse_off(text: &str, path: &Path) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (lineno, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(path, lineno, "missing OFF header"))?
        .trim();
    let counts_line = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| parse_err(path, lineno, "missing counts"))?
    } else {
        (lineno, rest)
    };
    let counts: Vec<usize> = counts_line
        .1
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, counts_line.0, "bad counts line"))?;
    if counts.len() < 2 {
        return Err(parse_err(path, counts_line.0, "bad counts line"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, counts_line.0, "truncated vertex list"))?;
        let mut toks = l.split_whitespace();
        let x = parse_f64(toks.next(), path, ln)?;
        let y = parse_f64(toks.next(), path, ln)?;
        let z = parse_f64(toks.next(), path, ln)?;
        vertices.push([x, y, z]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, counts_line.0, "truncated face list"))?;
        let nums: Vec<i64> = l
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(path, ln, "bad face record"))?;
        let k = *nums.first().ok_or_else(|| parse_err(path, ln, "empty face"))? as usize;
        if k < 3 || nums.len() < k + 1 {
            return Err(parse_err(path, ln, "bad face record"));
        }
        let mut poly = Vec::with_capacity(k);
        for &i in &nums[1..=k] {
            if i < 0 || i as usize >= vertices.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    vertex_count: vertices.len(),
                });
            }
            poly.push(i as usize);
        }
        fan(&poly, &mut faces);
    }
    Mesh::new(vertices, faces)
}
