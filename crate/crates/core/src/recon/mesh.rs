//! Marching-cubes extraction, OBJ I/O and deterministic surface sampling.
//!
//! Values strictly greater than the iso level count as inside, matching the
//! positive-inside SDF produced by [`density_to_sdf`](super::density_to_sdf).
//! Triangles wind counter-clockwise seen from outside, so face normals point
//! towards decreasing SDF.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::camera::Vec3;

use super::mc_tables::TRIANGLE_TABLE;
use super::{ReconError, SdfGrid};

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive for outward-facing winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Drops triangles with repeated indices or area below `min_area`, then
    /// removes unreferenced vertices.
    pub fn cleanup(&mut self, min_area: f64) {
        let keep: Vec<[u32; 3]> = (0..self.triangles.len())
            .filter(|&t| {
                let [a, b, c] = self.triangles[t];
                a != b && b != c && a != c && self.triangle_area(t) > min_area
            })
            .map(|t| self.triangles[t])
            .collect();
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut triangles = Vec::with_capacity(keep.len());
        for tri in keep {
            let mapped = tri.map(|v| {
                let slot = &mut remap[v as usize];
                if *slot == u32::MAX {
                    *slot = vertices.len() as u32;
                    vertices.push(self.vertices[v as usize]);
                }
                *slot
            });
            triangles.push(mapped);
        }
        self.vertices = vertices;
        self.triangles = triangles;
    }

    /// `n` points spread over the surface proportionally to area. Fully
    /// deterministic: stratified over the area CDF, with an R2 low-discrepancy
    /// sequence for barycentric coordinates.
    pub fn sample_surface(&self, n: usize) -> Vec<Vec3> {
        if self.triangles.is_empty() || n == 0 {
            return Vec::new();
        }
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for t in 0..self.triangles.len() {
            acc += self.triangle_area(t);
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return self.vertices.iter().take(n).copied().collect();
        }
        const A1: f64 = 0.754_877_666_246_692_7;
        const A2: f64 = 0.569_840_290_998_053_3;
        (0..n)
            .map(|k| {
                let u = (k as f64 + 0.5) / n as f64 * acc;
                let t = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                let mut r1 = (0.5 + A1 * k as f64).fract();
                let mut r2 = (0.5 + A2 * k as f64).fract();
                if r1 + r2 > 1.0 {
                    r1 = 1.0 - r1;
                    r2 = 1.0 - r2;
                }
                let [a, b, c] = self.triangle(t);
                a + (b - a) * r1 + (c - a) * r2
            })
            .collect()
    }

    /// ASCII OBJ with six-decimal vertex coordinates and 1-based faces.
    pub fn to_obj(&self) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 24);
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    /// Parses `v` and triangular `f` records; other records are ignored.
    pub fn from_obj(text: &str) -> Result<Self, ReconError> {
        let mut mesh = Mesh::default();
        let err = |line: usize, reason: &str| ReconError::ObjParse {
            line,
            reason: reason.to_string(),
        };
        for (no, raw) in text.lines().enumerate() {
            let line_no = no + 1;
            let mut parts = raw.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|p| p.parse::<f64>().map_err(|_| err(line_no, "bad vertex coordinate")))
                        .collect::<Result<_, _>>()?;
                    if coords.len() != 3 {
                        return Err(err(line_no, "vertex needs three coordinates"));
                    }
                    mesh.vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = parts
                        .map(|p| {
                            p.split('/')
                                .next()
                                .and_then(|i| i.parse::<u32>().ok())
                                .filter(|&i| i >= 1)
                                .ok_or_else(|| err(line_no, "bad face index"))
                        })
                        .collect::<Result<_, _>>()?;
                    if idx.len() != 3 {
                        return Err(err(line_no, "only triangular faces are supported"));
                    }
                    mesh.triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {}
            }
        }
        if mesh.triangles.is_empty() {
            return Err(err(text.lines().count(), "mesh has no faces"));
        }
        let n = mesh.vertices.len() as u32;
        if let Some(t) = mesh.triangles.iter().position(|t| t.iter().any(|&i| i >= n)) {
            return Err(err(0, &format!("face {} references a missing vertex", t + 1)));
        }
        Ok(mesh)
    }
}

/// Extracts the `iso` level set of `sdf` by marching cubes with linear edge
/// interpolation. Vertices are shared between cells through their grid edge.
pub fn extract_mesh(sdf: &SdfGrid, iso: f64) -> Result<Mesh, ReconError> {
    if !sdf.has_sign_change(iso) {
        return Err(ReconError::EmptyMesh);
    }
    let layout = &sdf.layout;
    let r = layout.resolution();
    let v = &sdf.values;
    let mut mesh = Mesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();

    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let mut corner_idx = [0usize; 8];
                let mut case = 0usize;
                for (n, off) in CORNERS.iter().enumerate() {
                    let idx = layout.index(i + off[0], j + off[1], k + off[2]);
                    corner_idx[n] = idx;
                    if v[idx] > iso {
                        case |= 1 << n;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                let mut tri = 0;
                while tri < 15 && row[tri] >= 0 {
                    let mut ids = [0u32; 3];
                    for m in 0..3 {
                        let [ca, cb] = EDGES[row[tri + m] as usize];
                        let (a, b) = (corner_idx[ca], corner_idx[cb]);
                        let key = (a.min(b), a.max(b));
                        ids[m] = *edge_vertex.entry(key).or_insert_with(|| {
                            let pa = layout.node_position(
                                i + CORNERS[ca][0],
                                j + CORNERS[ca][1],
                                k + CORNERS[ca][2],
                            );
                            let pb = layout.node_position(
                                i + CORNERS[cb][0],
                                j + CORNERS[cb][1],
                                k + CORNERS[cb][2],
                            );
                            let (va, vb) = (v[a], v[b]);
                            let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
                            mesh.vertices.push(pa + (pb - pa) * t);
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    // The table winds for "below iso = inside"; we flag the
                    // opposite side, so reverse each triangle.
                    mesh.triangles.push([ids[0], ids[2], ids[1]]);
                    tri += 3;
                }
            }
        }
    }
    let cell = layout.cell();
    let min_area = 1e-12 * cell.x * cell.y;
    mesh.cleanup(min_area);
    if mesh.triangles.is_empty() {
        return Err(ReconError::EmptyMesh);
    }
    Ok(mesh)
}
