//! Cube bins plus a normalized in-cube residual for up-to-scale translation.
//!
//! Cubes are indexed x-fastest: `index = ix + dx·(iy + dy·iz)`. Along every
//! axis a cube owns the half-open interval `[lo, hi)`, except the last cube
//! which is closed, so a point on a shared face belongs to the higher-index
//! cube.

use serde::{Deserialize, Serialize};

/// Default per-axis translation ranges `[min, max]` for x, y, z.
pub const DEFAULT_RANGES: [[f64; 2]; 3] = [[-0.25, 1.5], [-0.25, 1.5], [0.5, 10.0]];
pub const DEFAULT_DIVISIONS: [usize; 3] = [4, 4, 8];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TranslationError {
    #[error("invalid range on axis {axis}: [{min}, {max}] with {divisions} divisions")]
    InvalidRange {
        axis: usize,
        min: f64,
        max: f64,
        divisions: usize,
    },
    #[error("translation bin {index} out of range for {n} bins")]
    BinIndexOutOfRange { index: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationBinTable {
    pub ranges: [[f64; 2]; 3],
    pub divisions: [usize; 3],
    pub cube_dims: [f64; 3],
    /// Cube centers `t_bin`, in index order.
    pub centers: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationCode {
    pub bin_index: usize,
    /// `(t − cube_min) / cube_dims`, in `[0, 1]³` for in-range inputs.
    pub delta: [f64; 3],
}

impl TranslationBinTable {
    pub fn new(ranges: [[f64; 2]; 3], divisions: [usize; 3]) -> Result<Self, TranslationError> {
        for axis in 0..3 {
            let [min, max] = ranges[axis];
            let divisions = divisions[axis];
            if !(max > min) || !min.is_finite() || !max.is_finite() || divisions == 0 {
                return Err(TranslationError::InvalidRange {
                    axis,
                    min,
                    max,
                    divisions,
                });
            }
        }
        let cube_dims: [f64; 3] =
            std::array::from_fn(|a| (ranges[a][1] - ranges[a][0]) / divisions[a] as f64);
        let mut table = Self {
            ranges,
            divisions,
            cube_dims,
            centers: Vec::new(),
        };
        let n = table.len();
        table.centers = (0..n)
            .map(|i| {
                let idx = table.unflatten(i);
                std::array::from_fn(|a| table.cube_min(a, idx[a]) + 0.5 * cube_dims[a])
            })
            .collect();
        Ok(table)
    }

    pub fn default_table() -> Self {
        Self::new(DEFAULT_RANGES, DEFAULT_DIVISIONS).expect("default ranges are valid")
    }

    pub fn len(&self) -> usize {
        self.divisions.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Length of a cube's space diagonal.
    pub fn cube_diagonal(&self) -> f64 {
        self.cube_dims.iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    fn cube_min(&self, axis: usize, i: usize) -> f64 {
        self.ranges[axis][0] + i as f64 * self.cube_dims[axis]
    }

    fn flatten(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.divisions[0] * (idx[1] + self.divisions[1] * idx[2])
    }

    fn unflatten(&self, i: usize) -> [usize; 3] {
        let [dx, dy, _] = self.divisions;
        [i % dx, (i / dx) % dy, i / (dx * dy)]
    }

    /// Lower corner of cube `index`.
    pub fn cube_origin(&self, index: usize) -> Result<[f64; 3], TranslationError> {
        if index >= self.len() {
            return Err(TranslationError::BinIndexOutOfRange {
                index,
                n: self.len(),
            });
        }
        let idx = self.unflatten(index);
        Ok(std::array::from_fn(|a| self.cube_min(a, idx[a])))
    }

    fn axis_cell(&self, axis: usize, v: f64) -> usize {
        let last = self.divisions[axis] - 1;
        let raw = ((v - self.ranges[axis][0]) / self.cube_dims[axis]).floor();
        let mut i = if raw < 0.0 {
            0
        } else {
            (raw as usize).min(last)
        };
        // Repair rounding in the division against the exact cube bounds.
        while i > 0 && v < self.cube_min(axis, i) {
            i -= 1;
        }
        while i < last && v >= self.cube_min(axis, i + 1) {
            i += 1;
        }
        i
    }

    /// Encodes `t`; out-of-range components are clamped to the range and
    /// flagged with `true` in the second field.
    pub fn encode(&self, t: [f64; 3]) -> (TranslationCode, bool) {
        let mut clamped = false;
        let mut idx = [0usize; 3];
        let mut delta = [0.0; 3];
        for a in 0..3 {
            let [min, max] = self.ranges[a];
            let v = if t[a] < min {
                clamped = true;
                min
            } else if t[a] > max {
                clamped = true;
                max
            } else {
                t[a]
            };
            idx[a] = self.axis_cell(a, v);
            delta[a] = ((v - self.cube_min(a, idx[a])) / self.cube_dims[a]).clamp(0.0, 1.0);
        }
        (
            TranslationCode {
                bin_index: self.flatten(idx),
                delta,
            },
            clamped,
        )
    }

    pub fn decode(&self, code: &TranslationCode) -> Result<[f64; 3], TranslationError> {
        let origin = self.cube_origin(code.bin_index)?;
        Ok(std::array::from_fn(|a| {
            origin[a] + code.delta[a] * self.cube_dims[a]
        }))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("translation table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

pub fn generate_translation_bins(
    ranges: [[f64; 2]; 3],
    divisions: [usize; 3],
) -> Result<TranslationBinTable, TranslationError> {
    TranslationBinTable::new(ranges, divisions)
}

pub fn encode_translation(t: [f64; 3], table: &TranslationBinTable) -> (TranslationCode, bool) {
    table.encode(t)
}

pub fn decode_translation(
    code: &TranslationCode,
    table: &TranslationBinTable,
) -> Result<[f64; 3], TranslationError> {
    table.decode(code)
}
