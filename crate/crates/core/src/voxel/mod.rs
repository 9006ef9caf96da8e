//! Occupancy grids: binvox I/O, mesh voxelization, volume rotation,
//! procedural shapes and silhouette rasters.
//!
//! Grids are cubic and stored x-fastest: `index = x + res·(y + res·z)`.

mod binvox;
mod mesh;
mod render;
mod voxelize;

pub use binvox::{read_binvox, write_binvox, BinvoxError};
pub use mesh::{make_synthetic_shape, parse_obj, MeshError, ShapeKind, ShapeSpec, TriangleMesh};
pub use render::{render_shaded, render_silhouette, RasterView, LIGHT_DIR};
pub use voxelize::{voxelize_mesh, voxelize_mesh_in_frame, GridFrame};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::rotation::RotationMatrix;

pub const DEFAULT_RESOLUTION: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: usize,
    pub data: Vec<bool>,
    /// World position of the grid's minimum corner (binvox `translate`).
    pub translate: [f64; 3],
    /// World edge length spanned by the whole grid (binvox `scale`).
    pub scale: f64,
}

/// Sidecar metadata for the raw bitset export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGridMeta {
    pub resolution: usize,
    pub translate: [f64; 3],
    pub scale: f64,
    /// Bit order of the payload: bit `i % 8` (LSB first) of byte `i / 8`
    /// holds voxel `i`, x-fastest.
    pub order: String,
    pub occupied: usize,
}

impl OccupancyGrid {
    pub fn empty(resolution: usize) -> Self {
        Self {
            resolution,
            data: vec![false; resolution.pow(3)],
            translate: [0.0; 3],
            scale: 1.0,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution * (y + self.resolution * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn occupied_count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Average-pools `factor³` blocks into a flat feature vector
    /// (x-fastest over the pooled grid).
    pub fn average_pool(&self, factor: usize) -> Vec<f64> {
        assert!(
            factor > 0 && self.resolution.is_multiple_of(factor),
            "pool factor must divide resolution"
        );
        let out_res = self.resolution / factor;
        let norm = 1.0 / (factor * factor * factor) as f64;
        let mut out = vec![0.0; out_res.pow(3)];
        for z in 0..self.resolution {
            for y in 0..self.resolution {
                for x in 0..self.resolution {
                    if self.get(x, y, z) {
                        let o = x / factor + out_res * (y / factor + out_res * (z / factor));
                        out[o] += norm;
                    }
                }
            }
        }
        out
    }

    pub fn to_raw_bits(&self) -> (Vec<u8>, RawGridMeta) {
        let mut bytes = vec![0u8; self.data.len().div_ceil(8)];
        for (i, &v) in self.data.iter().enumerate() {
            if v {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        let meta = RawGridMeta {
            resolution: self.resolution,
            translate: self.translate,
            scale: self.scale,
            order: "x-fastest, lsb-first".to_string(),
            occupied: self.occupied_count(),
        };
        (bytes, meta)
    }

    pub fn from_raw_bits(bytes: &[u8], meta: &RawGridMeta) -> Option<Self> {
        let n = meta.resolution.pow(3);
        if bytes.len() != n.div_ceil(8) {
            return None;
        }
        let data = (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect();
        Some(Self {
            resolution: meta.resolution,
            data,
            translate: meta.translate,
            scale: meta.scale,
        })
    }
}

/// Nearest-neighbor inverse-mapping rotation about the grid center
/// `(res − 1)/2`: output voxel `v` copies input voxel `round(rᵀ(v − c) + c)`
/// when that lies inside the grid.
pub fn rotate_grid(grid: &OccupancyGrid, r: &RotationMatrix) -> OccupancyGrid {
    let res = grid.resolution;
    let c = (res as f64 - 1.0) / 2.0;
    let rt = r.matrix().transpose();
    let mut out = OccupancyGrid {
        data: vec![false; grid.data.len()],
        ..grid.clone()
    };
    for z in 0..res {
        for y in 0..res {
            for x in 0..res {
                let v = Vector3::new(x as f64 - c, y as f64 - c, z as f64 - c);
                let p = rt * v;
                let src = [p.x + c, p.y + c, p.z + c].map(|s| s.round());
                if src.iter().all(|&s| s >= 0.0 && s < res as f64) {
                    let [sx, sy, sz] = src.map(|s| s as usize);
                    if grid.get(sx, sy, sz) {
                        out.set(x, y, z, true);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn box_grid(res: usize, lo: [usize; 3], hi: [usize; 3]) -> OccupancyGrid {
        let mut g = OccupancyGrid::empty(res);
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    g.set(x, y, z, true);
                }
            }
        }
        g
    }

    #[test]
    fn identity_rotation_is_exact() {
        let g = box_grid(16, [2, 3, 4], [9, 7, 12]);
        assert_eq!(rotate_grid(&g, &RotationMatrix::identity()), g);
    }

    #[test]
    fn quarter_turn_is_a_permutation() {
        let res = 16;
        let g = box_grid(res, [1, 3, 2], [12, 7, 10]);
        let out = rotate_grid(&g, &RotationMatrix::rot_z(FRAC_PI_2));
        for z in 0..res {
            for y in 0..res {
                for x in 0..res {
                    assert_eq!(out.get(x, y, z), g.get(y, res - 1 - x, z));
                }
            }
        }
        assert_eq!(out.occupied_count(), g.occupied_count());
    }

    #[test]
    fn pooling_averages_blocks() {
        let g = box_grid(4, [0, 0, 0], [2, 2, 1]);
        let p = g.average_pool(2);
        assert_eq!(p.len(), 8);
        assert_eq!(p[0], 0.5);
        assert!(p[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn raw_bits_roundtrip() {
        let g = box_grid(5, [1, 0, 2], [4, 3, 5]);
        let (bytes, meta) = g.to_raw_bits();
        assert_eq!(meta.occupied, g.occupied_count());
        assert_eq!(OccupancyGrid::from_raw_bits(&bytes, &meta).unwrap(), g);
    }
}
