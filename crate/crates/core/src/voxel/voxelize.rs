use nalgebra::Vector3;

use super::mesh::{MeshError, TriangleMesh};
use super::OccupancyGrid;

/// Placement of a grid in world space: world point `p` has grid coordinate
/// `(p − origin) / voxel_size`; voxel `i` spans `[i, i+1)` along each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub origin: [f64; 3],
    pub voxel_size: f64,
}

impl GridFrame {
    /// Frame that fits the box `[lo, hi]` into the grid with a one-voxel
    /// margin on the longest axis, centered on every axis.
    pub fn fit_bounds(lo: [f64; 3], hi: [f64; 3], resolution: usize) -> Option<Self> {
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        if !(extent > 0.0) || !extent.is_finite() || resolution < 3 {
            return None;
        }
        let voxel_size = extent / (resolution - 2) as f64;
        let half = resolution as f64 / 2.0 * voxel_size;
        Some(Self {
            origin: std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]) - half),
            voxel_size,
        })
    }

    /// Frame centered on `center` whose inner `resolution − 2` voxels span a
    /// sphere of `radius`; every rotation of an object inside that sphere
    /// about `center` fits the same frame.
    pub fn fit_sphere(center: [f64; 3], radius: f64, resolution: usize) -> Option<Self> {
        let lo = center.map(|c| c - radius);
        let hi = center.map(|c| c + radius);
        Self::fit_bounds(lo, hi, resolution)
    }

    fn to_grid(self, p: &[f64; 3]) -> Vector3<f64> {
        Vector3::new(
            (p[0] - self.origin[0]) / self.voxel_size,
            (p[1] - self.origin[1]) / self.voxel_size,
            (p[2] - self.origin[2]) / self.voxel_size,
        )
    }
}

/// Voxelizes `mesh` scaled to fit the grid with a one-voxel margin.
///
/// Watertight meshes are filled by parity ray casting along +x from every
/// voxel-center row (voxel occupied iff its center is inside); open meshes
/// fall back to marking voxels that intersect the surface.
pub fn voxelize_mesh(mesh: &TriangleMesh, resolution: usize) -> Result<OccupancyGrid, MeshError> {
    mesh.validate()?;
    let (lo, hi) = mesh.bounds();
    let frame = GridFrame::fit_bounds(lo, hi, resolution)
        .ok_or_else(|| MeshError::DegenerateMesh("zero extent or resolution below 3".into()))?;
    voxelize_mesh_in_frame(mesh, resolution, &frame)
}

pub fn voxelize_mesh_in_frame(
    mesh: &TriangleMesh,
    resolution: usize,
    frame: &GridFrame,
) -> Result<OccupancyGrid, MeshError> {
    mesh.validate()?;
    let mut grid = OccupancyGrid {
        resolution,
        data: vec![false; resolution.pow(3)],
        translate: frame.origin,
        scale: frame.voxel_size * resolution as f64,
    };
    let pts: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| frame.to_grid(v)).collect();
    if mesh.is_watertight() {
        fill_by_parity(&mut grid, &pts, &mesh.triangles);
    } else {
        rasterize_surface(&mut grid, &pts, &mesh.triangles);
    }
    Ok(grid)
}

// Sub-voxel offset of every ray so rays never pass exactly through mesh
// edges or vertices that sit on voxel-center lines.
const RAY_JITTER: [f64; 2] = [
    1.0e-7 * std::f64::consts::SQRT_2,
    1.0e-7 * std::f64::consts::E,
];

fn fill_by_parity(grid: &mut OccupancyGrid, pts: &[Vector3<f64>], tris: &[[usize; 3]]) {
    let res = grid.resolution;
    // Bucket triangles by the rows (y, z) their yz-footprint can cover.
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); res * res];
    for (ti, t) in tris.iter().enumerate() {
        let ys = t.map(|i| pts[i].y);
        let zs = t.map(|i| pts[i].z);
        let span = |v: [f64; 3]| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let first = (lo - 0.5 - 1e-6).ceil().max(0.0) as usize;
            let last = ((hi - 0.5 + 1e-6).floor()).min(res as f64 - 1.0);
            (first, last)
        };
        let (y0, y1) = span(ys);
        let (z0, z1) = span(zs);
        if y1 < 0.0 || z1 < 0.0 {
            continue;
        }
        for k in z0..=z1 as usize {
            for j in y0..=y1 as usize {
                rows[j + res * k].push(ti);
            }
        }
    }
    let mut hits = Vec::new();
    for k in 0..res {
        for j in 0..res {
            let py = j as f64 + 0.5 + RAY_JITTER[0];
            let pz = k as f64 + 0.5 + RAY_JITTER[1];
            hits.clear();
            for &ti in &rows[j + res * k] {
                let [a, b, c] = tris[ti].map(|i| pts[i]);
                if let Some(x) = ray_x_hit(py, pz, &a, &b, &c) {
                    hits.push(x);
                }
            }
            if hits.is_empty() {
                continue;
            }
            hits.sort_by(f64::total_cmp);
            let mut h = 0;
            for i in 0..res {
                let cx = i as f64 + 0.5;
                while h < hits.len() && hits[h] < cx {
                    h += 1;
                }
                if h % 2 == 1 {
                    grid.set(i, j, k, true);
                }
            }
        }
    }
}

/// x coordinate where the line `{(x, py, pz)}` crosses triangle `abc`, if
/// it passes strictly inside the triangle's yz projection.
fn ray_x_hit(
    py: f64,
    pz: f64,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<f64> {
    let edge =
        |p: &Vector3<f64>, q: &Vector3<f64>| (q.y - p.y) * (pz - p.z) - (q.z - p.z) * (py - p.y);
    let w0 = edge(b, c);
    let w1 = edge(c, a);
    let w2 = edge(a, b);
    let inside = (w0 > 0.0 && w1 > 0.0 && w2 > 0.0) || (w0 < 0.0 && w1 < 0.0 && w2 < 0.0);
    if !inside {
        return None;
    }
    let sum = w0 + w1 + w2;
    Some((w0 * a.x + w1 * b.x + w2 * c.x) / sum)
}

fn rasterize_surface(grid: &mut OccupancyGrid, pts: &[Vector3<f64>], tris: &[[usize; 3]]) {
    let res = grid.resolution as i64;
    for t in tris {
        let v = t.map(|i| pts[i]);
        let lo: [i64; 3] = std::array::from_fn(|a| {
            let m = v.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            (m.floor() as i64 - 1).max(0)
        });
        let hi: [i64; 3] = std::array::from_fn(|a| {
            let m = v.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
            (m.floor() as i64 + 1).min(res - 1)
        });
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let c = Vector3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5);
                    if triangle_box_overlap(&c, 0.5, &v) {
                        grid.set(x as usize, y as usize, z as usize, true);
                    }
                }
            }
        }
    }
}

/// Separating-axis test between a triangle and the cube centered at
/// `center` with half edge `half`.
pub(crate) fn triangle_box_overlap(
    center: &Vector3<f64>,
    half: f64,
    tri: &[Vector3<f64>; 3],
) -> bool {
    let v = tri.map(|p| p - center);
    let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let project = |axis: &Vector3<f64>| {
        let p = v.map(|q| axis.dot(&q));
        let r = half * (axis.x.abs() + axis.y.abs() + axis.z.abs());
        let min = p[0].min(p[1]).min(p[2]);
        let max = p[0].max(p[1]).max(p[2]);
        min > r || max < -r
    };
    for edge in &e {
        for basis in [Vector3::x(), Vector3::y(), Vector3::z()] {
            let axis = basis.cross(edge);
            if axis.norm_squared() > 1e-24 && project(&axis) {
                return false;
            }
        }
    }
    for a in 0..3 {
        let min = v[0][a].min(v[1][a]).min(v[2][a]);
        let max = v[0][a].max(v[1][a]).max(v[2][a]);
        if min > half || max < -half {
            return false;
        }
    }
    let normal = e[0].cross(&e[1]);
    !(normal.norm_squared() > 1e-24 && project(&normal))
}
