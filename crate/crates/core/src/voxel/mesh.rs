use std::collections::HashMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rotation::RotationMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("invalid shape parameters: {0}")]
    InvalidParams(String),
    #[error("OBJ parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let m = Self {
            vertices,
            triangles,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.triangles.is_empty() {
            return Err(MeshError::DegenerateMesh("no triangles".into()));
        }
        let n = self.vertices.len();
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(MeshError::DegenerateMesh(format!(
                "triangle {t:?} indexes past {n} vertices"
            )));
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MeshError::DegenerateMesh("non-finite vertex".into()));
        }
        Ok(())
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }

    /// Every undirected edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !edges.is_empty() && edges.values().all(|&c| c == 2)
    }

    pub fn transformed(&self, r: &RotationMatrix, translation: [f64; 3]) -> Self {
        let t = Vector3::from(translation);
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                let p = r.apply(&Vector3::from(*v)) + t;
                [p.x, p.y, p.z]
            })
            .collect();
        Self {
            vertices,
            triangles: self.triangles.clone(),
        }
    }

    pub fn scaled(&self, s: [f64; 3]) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|v| [v[0] * s[0], v[1] * s[1], v[2] * s[2]])
            .collect();
        Self {
            vertices,
            triangles: self.triangles.clone(),
        }
    }

    /// Signed volume by the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| Vector3::from(self.vertices[i]));
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
        }
        for t in &self.triangles {
            s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        s
    }
}

/// Reads `v` and `f` lines of a Wavefront OBJ; polygons are fan-triangulated
/// and everything else is ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let mut it = raw.split_whitespace();
        match it.next() {
            Some("v") => {
                let vals: Vec<f64> = it
                    .take(3)
                    .map(|f| f.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| MeshError::Parse {
                        line,
                        msg: e.to_string(),
                    })?;
                if vals.len() != 3 {
                    return Err(MeshError::Parse {
                        line,
                        msg: "vertex needs 3 coordinates".into(),
                    });
                }
                vertices.push([vals[0], vals[1], vals[2]]);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| MeshError::Parse {
                        line,
                        msg: format!("bad face index {tok:?}"),
                    })?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        -1
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(MeshError::Parse {
                            line,
                            msg: format!("face index {i} out of range"),
                        });
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(MeshError::Parse {
                        line,
                        msg: "face needs at least 3 vertices".into(),
                    });
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    /// `[size_x, size_y, size_z]`
    Box,
    /// `[radius, height, segments]`, axis along z
    Cylinder,
    /// `[radius_x, radius_y, radius_z, subdivisions]`, icosphere based
    Ellipsoid,
    /// `[arm_x, arm_y, thick_x, thick_y, depth]`: an L polygon in the xy
    /// plane (arm along x of thickness `thick_y`, arm along y of thickness
    /// `thick_x`) extruded along z
    Lshape,
    /// `[arm_x, arm_y, thick_x, thick_y, depth_x, depth_y]`: the same L
    /// outline built from two boxes whose depths differ, both flush with
    /// `z = 0`; no mirror symmetry unless the depths match
    Bracket,
    /// `[x0, y0, z0, x1, y1, z1]` per block: a union of axis-aligned boxes
    /// with pairwise disjoint interiors
    Blocks,
}

/// A procedural shape: kind, parameters and a relative per-axis size jitter
/// drawn from the seed (0 disables it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub params: Vec<f64>,
    #[serde(default)]
    pub jitter: f64,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, params: &[f64]) -> Self {
        Self {
            kind,
            params: params.to_vec(),
            jitter: 0.0,
        }
    }
}

/// Checks the parameter count and that the first `dims` entries are
/// positive lengths.
fn expect_params(spec: &ShapeSpec, n: usize, dims: usize) -> Result<&[f64], MeshError> {
    if spec.params.len() != n {
        return Err(MeshError::InvalidParams(format!(
            "{:?} takes {n} parameters, got {}",
            spec.kind,
            spec.params.len()
        )));
    }
    if spec.params[..dims]
        .iter()
        .any(|p| !(p.is_finite() && *p > 0.0))
    {
        return Err(MeshError::InvalidParams(format!(
            "{:?} parameters must be positive",
            spec.kind
        )));
    }
    Ok(&spec.params)
}

fn as_count(v: f64, what: &str, min: usize) -> Result<usize, MeshError> {
    if !v.is_finite() || v.fract() != 0.0 || v < min as f64 || v > 64.0 * 1024.0 {
        return Err(MeshError::InvalidParams(format!(
            "{what} must be an integer >= {min}"
        )));
    }
    Ok(v as usize)
}

/// Builds a closed, outward-wound mesh centered on its bounding box.
pub fn make_synthetic_shape(spec: &ShapeSpec, seed: u64) -> Result<TriangleMesh, MeshError> {
    if !(spec.jitter >= 0.0 && spec.jitter < 1.0) {
        return Err(MeshError::InvalidParams("jitter must be in [0, 1)".into()));
    }
    let mesh = match spec.kind {
        ShapeKind::Box => {
            let p = expect_params(spec, 3, 3)?;
            box_mesh([p[0], p[1], p[2]])
        }
        ShapeKind::Cylinder => {
            let p = expect_params(spec, 3, 2)?;
            cylinder_mesh(p[0], p[1], as_count(p[2], "segments", 3)?)
        }
        ShapeKind::Ellipsoid => {
            let p = expect_params(spec, 4, 3)?;
            let subdivisions = as_count(p[3], "subdivisions", 0)?;
            if subdivisions > 6 {
                return Err(MeshError::InvalidParams("at most 6 subdivisions".into()));
            }
            ellipsoid_mesh([p[0], p[1], p[2]], subdivisions)
        }
        ShapeKind::Lshape => {
            let p = expect_params(spec, 5, 5)?;
            let [ax, ay, tx, ty, d] = [p[0], p[1], p[2], p[3], p[4]];
            if tx >= ax || ty >= ay {
                return Err(MeshError::InvalidParams(
                    "L thickness must be below arm length".into(),
                ));
            }
            lshape_mesh(ax, ay, tx, ty, d)
        }
        ShapeKind::Blocks => {
            let p = &spec.params;
            if p.is_empty() || !p.len().is_multiple_of(6) || p.iter().any(|v| !v.is_finite()) {
                return Err(MeshError::InvalidParams(
                    "Blocks takes 6 finite values per block".into(),
                ));
            }
            let blocks: Vec<[f64; 6]> = p
                .chunks_exact(6)
                .map(|c| c.try_into().expect("chunk of 6"))
                .collect();
            for (i, b) in blocks.iter().enumerate() {
                if (0..3).any(|a| !(b[a + 3] > b[a])) {
                    return Err(MeshError::InvalidParams(format!(
                        "block {i} has non-positive extent"
                    )));
                }
                for (j, c) in blocks[..i].iter().enumerate() {
                    if (0..3).all(|a| b[a] < c[a + 3] && c[a] < b[a + 3]) {
                        return Err(MeshError::InvalidParams(format!(
                            "blocks {j} and {i} overlap"
                        )));
                    }
                }
            }
            let mut mesh = TriangleMesh {
                vertices: Vec::new(),
                triangles: Vec::new(),
            };
            for b in &blocks {
                let m = box_between([b[0], b[1], b[2]], [b[3], b[4], b[5]]);
                let offset = mesh.vertices.len();
                mesh.vertices.extend(m.vertices);
                mesh.triangles
                    .extend(m.triangles.iter().map(|t| t.map(|i| i + offset)));
            }
            mesh
        }
        ShapeKind::Bracket => {
            let p = expect_params(spec, 6, 6)?;
            let [ax, ay, tx, ty, dx, dy] = [p[0], p[1], p[2], p[3], p[4], p[5]];
            if tx >= ax || ty >= ay {
                return Err(MeshError::InvalidParams(
                    "L thickness must be below arm length".into(),
                ));
            }
            let foot = box_between([0.0, 0.0, 0.0], [ax, ty, dx]);
            let upright = box_between([0.0, ty, 0.0], [tx, ay, dy]);
            let offset = foot.vertices.len();
            let mut vertices = foot.vertices;
            vertices.extend(upright.vertices);
            let mut triangles = foot.triangles;
            triangles.extend(upright.triangles.iter().map(|t| t.map(|i| i + offset)));
            TriangleMesh {
                vertices,
                triangles,
            }
        }
    };
    let mesh = if spec.jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: [f64; 3] =
            std::array::from_fn(|_| 1.0 + rng.random_range(-spec.jitter..=spec.jitter));
        mesh.scaled(s)
    } else {
        mesh
    };
    Ok(center_on_bounds(mesh))
}

fn center_on_bounds(mut mesh: TriangleMesh) -> TriangleMesh {
    let (lo, hi) = mesh.bounds();
    let c: [f64; 3] = std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]));
    for v in &mut mesh.vertices {
        for a in 0..3 {
            v[a] -= c[a];
        }
    }
    mesh
}

fn box_mesh(size: [f64; 3]) -> TriangleMesh {
    let h = size.map(|s| s / 2.0);
    let vertices = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -h[0] } else { h[0] },
                if i & 2 == 0 { -h[1] } else { h[1] },
                if i & 4 == 0 { -h[2] } else { h[2] },
            ]
        })
        .collect();
    let triangles = vec![
        [0, 2, 1],
        [1, 2, 3], // z-
        [4, 5, 6],
        [5, 7, 6], // z+
        [0, 1, 4],
        [1, 5, 4], // y-
        [2, 6, 3],
        [3, 6, 7], // y+
        [0, 4, 2],
        [2, 4, 6], // x-
        [1, 3, 5],
        [3, 7, 5], // x+
    ];
    TriangleMesh {
        vertices,
        triangles,
    }
}

fn box_between(lo: [f64; 3], hi: [f64; 3]) -> TriangleMesh {
    let mut m = box_mesh(std::array::from_fn(|a| hi[a] - lo[a]));
    for v in &mut m.vertices {
        for a in 0..3 {
            v[a] += 0.5 * (lo[a] + hi[a]);
        }
    }
    m
}

fn cylinder_mesh(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    let h = height / 2.0;
    let mut vertices = Vec::with_capacity(2 * segments + 2);
    for k in 0..segments {
        let a = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
        vertices.push([radius * a.cos(), radius * a.sin(), -h]);
    }
    for k in 0..segments {
        let a = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
        vertices.push([radius * a.cos(), radius * a.sin(), h]);
    }
    let bottom = 2 * segments;
    let top = bottom + 1;
    vertices.push([0.0, 0.0, -h]);
    vertices.push([0.0, 0.0, h]);
    let mut triangles = Vec::with_capacity(4 * segments);
    for k in 0..segments {
        let k1 = (k + 1) % segments;
        let (b0, b1, t0, t1) = (k, k1, segments + k, segments + k1);
        triangles.push([b0, b1, t1]);
        triangles.push([b0, t1, t0]);
        triangles.push([bottom, b1, b0]);
        triangles.push([top, t0, t1]);
    }
    TriangleMesh {
        vertices,
        triangles,
    }
}

fn ellipsoid_mesh(radii: [f64; 3], subdivisions: usize) -> TriangleMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::from(*v).normalize())
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
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
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let vertices = verts
        .iter()
        .map(|v| [v.x * radii[0], v.y * radii[1], v.z * radii[2]])
        .collect();
    TriangleMesh {
        vertices,
        triangles: tris,
    }
}

fn lshape_mesh(ax: f64, ay: f64, tx: f64, ty: f64, depth: f64) -> TriangleMesh {
    // Counter-clockwise outline; vertex 3 is the reflex corner the caps fan from.
    let outline = [
        [0.0, 0.0],
        [ax, 0.0],
        [ax, ty],
        [tx, ty],
        [tx, ay],
        [0.0, ay],
    ];
    let h = depth / 2.0;
    let mut vertices: Vec<[f64; 3]> = outline.iter().map(|p| [p[0], p[1], -h]).collect();
    vertices.extend(outline.iter().map(|p| [p[0], p[1], h]));
    let mut triangles = Vec::with_capacity(20);
    for [a, b] in [[4, 5], [5, 0], [0, 1], [1, 2]] {
        triangles.push([3 + 6, a + 6, b + 6]);
        triangles.push([3, b, a]);
    }
    for i in 0..6 {
        let j = (i + 1) % 6;
        triangles.push([i, j, j + 6]);
        triangles.push([i, j + 6, i + 6]);
    }
    TriangleMesh {
        vertices,
        triangles,
    }
}
