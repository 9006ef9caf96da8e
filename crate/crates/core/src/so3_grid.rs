//! Uniform discretization of SO(3), soft bin labels, and the bin + delta
//! rotation codec.
//!
//! The base grids come from the Hopf fibration `S¹ → S³ → S²`: HEALPix cells
//! on the 2-sphere crossed with evenly spaced points on the circle fiber.
//! Level 0 has 12 × 6 = 72 rotations, each further level splits every
//! cell 8-fold (4 sphere sub-cells, 2 fiber sub-intervals).
//!
//! A rotation `r` is coded against bin `R̂` as `delta = R̂ · r` and decoded
//! with `r = R̂ᵀ · delta`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rotation::{
    geodesic_distance, random_rotation, trace_of_product_transpose, RotationMatrix, UnitQuaternion,
};

/// Largest Hopf refinement level available (4608 rotations).
pub const MAX_HOPF_LEVEL: u32 = 2;

/// Haar samples used to estimate the covering radius of a table.
pub const COVERING_SAMPLES: usize = 100_000;

/// Number of rotations in the Hopf grid at `level`.
pub fn hopf_grid_size(level: u32) -> usize {
    72 * 8usize.pow(level)
}

pub fn max_bin_count() -> usize {
    hopf_grid_size(MAX_HOPF_LEVEL)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("invalid bin count {n}: must be in 1..={max}")]
    InvalidBinCount { n: usize, max: usize },
    #[error("bin index {index} out of range for table of {n} bins")]
    BinIndexOutOfRange { index: usize, n: usize },
    #[error("soft label parameters out of range (alpha {alpha}, beta {beta})")]
    InvalidSoftLabelParams { alpha: f64, beta: f64 },
}

/// Center `(theta, phi)` of HEALPix pixel `pix` in the RING scheme.
fn healpix_pix2ang_ring(nside: usize, pix: usize) -> (f64, f64) {
    let npix = 12 * nside * nside;
    let ncap = 2 * nside * (nside - 1);
    let fact2 = 4.0 / npix as f64;
    let fact1 = (2 * nside) as f64 * fact2;
    let (z, phi);
    if pix < ncap {
        let iring = (1 + isqrt(1 + 2 * pix)) >> 1;
        let iphi = pix + 1 - 2 * iring * (iring - 1);
        z = 1.0 - (iring * iring) as f64 * fact2;
        phi = (iphi as f64 - 0.5) * (PI / 2.0) / iring as f64;
    } else if pix < npix - ncap {
        let ip = pix - ncap;
        let tmp = ip / (4 * nside);
        let iring = tmp + nside;
        let iphi = ip - tmp * 4 * nside + 1;
        let fodd = if (iring + nside) & 1 == 1 { 1.0 } else { 0.5 };
        z = (2 * nside) as f64 * fact1 - iring as f64 * fact1;
        phi = (iphi as f64 - fodd) * PI / (2 * nside) as f64;
    } else {
        let ip = npix - pix;
        let iring = (1 + isqrt(2 * ip - 1)) >> 1;
        let iphi = 4 * iring + 1 - (ip - 2 * iring * (iring - 1));
        z = -1.0 + (iring * iring) as f64 * fact2;
        phi = (iphi as f64 - 0.5) * (PI / 2.0) / iring as f64;
    }
    (z.clamp(-1.0, 1.0).acos(), phi)
}

fn isqrt(v: usize) -> usize {
    let mut r = (v as f64).sqrt() as usize;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

/// Quaternion with Hopf coordinates `(theta, phi)` on S² and `psi` on S¹.
fn hopf_to_quat(theta: f64, phi: f64, psi: f64) -> UnitQuaternion {
    let (st, ct) = (theta / 2.0).sin_cos();
    UnitQuaternion {
        w: ct * (psi / 2.0).cos(),
        x: ct * (psi / 2.0).sin(),
        y: st * (phi + psi / 2.0).cos(),
        z: st * (phi + psi / 2.0).sin(),
    }
}

/// All rotations of the Hopf grid at `level`, sphere cell major, fiber minor.
pub fn hopf_grid(level: u32) -> Vec<RotationMatrix> {
    let nside = 1usize << level;
    let npsi = 6usize << level;
    let mut out = Vec::with_capacity(hopf_grid_size(level));
    for pix in 0..12 * nside * nside {
        let (theta, phi) = healpix_pix2ang_ring(nside, pix);
        for k in 0..npsi {
            let psi = (k as f64 + 0.5) * 2.0 * PI / npsi as f64;
            out.push(hopf_to_quat(theta, phi, psi).to_rotation());
        }
    }
    out
}

/// Greedy farthest-point selection of `n` rotations. The identity is always
/// the first pick; each subsequent pick maximizes the distance to the chosen
/// set, ties to the lowest candidate index.
fn farthest_point_subsample(candidates: &[RotationMatrix], n: usize) -> Vec<RotationMatrix> {
    let first = RotationMatrix::identity();
    let mut chosen = vec![first];
    let mut min_dist: Vec<f64> = candidates
        .iter()
        .map(|c| geodesic_distance(c, &first))
        .collect();
    while chosen.len() < n {
        let (best, _) =
            min_dist
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (i, &d)| {
                    if d > acc.1 {
                        (i, d)
                    } else {
                        acc
                    }
                });
        let pick = candidates[best];
        chosen.push(pick);
        for (d, c) in min_dist.iter_mut().zip(candidates) {
            let nd = geodesic_distance(c, &pick);
            if nd < *d {
                *d = nd;
            }
        }
    }
    chosen
}

/// The ordered bin rotations `{R_i}` plus their measured geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationBinTable {
    pub n: usize,
    pub seed: u64,
    /// Minimum pairwise geodesic distance (radians); 0 for a single bin.
    pub spacing: f64,
    /// Monte-Carlo estimate of the max distance from a Haar rotation to its
    /// nearest bin (radians).
    pub covering_radius: f64,
    pub bins: Vec<RotationMatrix>,
}

impl RotationBinTable {
    /// Builds an `n`-bin table. 72 · 8^k gives the exact Hopf grid of level
    /// k, `n = 1` gives the identity, anything else is a farthest-point
    /// subsample of the smallest Hopf grid holding at least `n` rotations.
    pub fn generate(n: usize, seed: u64) -> Result<Self, GridError> {
        Self::generate_with_samples(n, seed, COVERING_SAMPLES)
    }

    pub fn generate_with_samples(n: usize, seed: u64, samples: usize) -> Result<Self, GridError> {
        let bins = bin_rotations(n)?;
        let spacing = min_pairwise_distance(&bins);
        let covering_radius = estimate_covering_radius(&bins, seed, samples);
        Ok(Self {
            n,
            seed,
            spacing,
            covering_radius,
            bins,
        })
    }

    pub fn from_bins(bins: Vec<RotationMatrix>, seed: u64, samples: usize) -> Self {
        let spacing = min_pairwise_distance(&bins);
        let covering_radius = estimate_covering_radius(&bins, seed, samples);
        Self {
            n: bins.len(),
            seed,
            spacing,
            covering_radius,
            bins,
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bin(&self, index: usize) -> Result<&RotationMatrix, GridError> {
        self.bins.get(index).ok_or(GridError::BinIndexOutOfRange {
            index,
            n: self.bins.len(),
        })
    }

    pub fn nearest_bin(&self, r: &RotationMatrix) -> usize {
        nearest_bin(r, self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bin table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn bin_rotations(n: usize) -> Result<Vec<RotationMatrix>, GridError> {
    let max = max_bin_count();
    if n == 0 || n > max {
        return Err(GridError::InvalidBinCount { n, max });
    }
    if n == 1 {
        return Ok(vec![RotationMatrix::identity()]);
    }
    let level = (0..=MAX_HOPF_LEVEL)
        .find(|&l| hopf_grid_size(l) >= n)
        .expect("n <= max");
    let grid = hopf_grid(level);
    if grid.len() == n {
        Ok(grid)
    } else {
        Ok(farthest_point_subsample(&grid, n))
    }
}

pub fn min_pairwise_distance(bins: &[RotationMatrix]) -> f64 {
    let mut best_trace = f64::NEG_INFINITY;
    for i in 0..bins.len() {
        for j in (i + 1)..bins.len() {
            best_trace = best_trace.max(trace_of_product_transpose(&bins[i], &bins[j]));
        }
    }
    if best_trace == f64::NEG_INFINITY {
        0.0
    } else {
        ((best_trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Max over `samples` Haar rotations (drawn from `seed`) of the distance to
/// the nearest bin.
pub fn estimate_covering_radius(bins: &[RotationMatrix], seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let r = random_rotation(&mut rng);
        let k = nearest_index(&r, bins);
        worst = worst.max(geodesic_distance(&r, &bins[k]));
    }
    worst
}

fn nearest_index(r: &RotationMatrix, bins: &[RotationMatrix]) -> usize {
    // Geodesic distance is monotone decreasing in the trace.
    let mut best = 0;
    let mut best_trace = f64::NEG_INFINITY;
    for (i, b) in bins.iter().enumerate() {
        let t = trace_of_product_transpose(r, b);
        if t > best_trace {
            best_trace = t;
            best = i;
        }
    }
    best
}

/// `argmin_i GD(r, R_i)`, ties to the lowest index.
pub fn nearest_bin(r: &RotationMatrix, table: &RotationBinTable) -> usize {
    nearest_index(r, &table.bins)
}

/// Per-bin targets: 1 for the nearest bin, `alpha` for every other bin
/// strictly closer than `beta`, 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelVector {
    pub y: Vec<f64>,
}

impl SoftLabelVector {
    /// Bins with a positive label; the set whose deltas are supervised.
    pub fn active(&self) -> Vec<usize> {
        self.y
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn hot_index(&self) -> Option<usize> {
        self.y.iter().position(|&v| v == 1.0)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

pub const DEFAULT_ALPHA: f64 = 0.1;

pub fn soft_labels(
    r_gt: &RotationMatrix,
    table: &RotationBinTable,
    alpha: f64,
    beta: f64,
) -> Result<SoftLabelVector, GridError> {
    if !(alpha > 0.0 && alpha < 1.0) || !(beta > 0.0) {
        return Err(GridError::InvalidSoftLabelParams { alpha, beta });
    }
    let nearest = nearest_bin(r_gt, table);
    let y = table
        .bins
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if i == nearest {
                1.0
            } else if geodesic_distance(b, r_gt) < beta {
                alpha
            } else {
                0.0
            }
        })
        .collect();
    Ok(SoftLabelVector { y })
}

/// A rotation expressed as a bin index and the delta `R_d = R̂ · r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseCode {
    pub bin_index: usize,
    pub delta: RotationMatrix,
}

/// Delta target of `r` relative to bin rotation `bin`.
pub fn delta_for_bin(bin: &RotationMatrix, r: &RotationMatrix) -> RotationMatrix {
    bin.compose(r)
}

pub fn encode_pose(r: &RotationMatrix, table: &RotationBinTable) -> PoseCode {
    let bin_index = nearest_bin(r, table);
    PoseCode {
        bin_index,
        delta: delta_for_bin(&table.bins[bin_index], r),
    }
}

pub fn decode_pose(code: &PoseCode, table: &RotationBinTable) -> Result<RotationMatrix, GridError> {
    let bin = table.bin(code.bin_index)?;
    Ok(bin.transpose().compose(&code.delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: usize) -> RotationBinTable {
        RotationBinTable::generate_with_samples(n, 1, 2000).unwrap()
    }

    #[test]
    fn healpix_base_pixels_are_equal_area_rings() {
        // Nside 1: three rings of four at z = 2/3, 0, -2/3.
        let zs: Vec<f64> = (0..12)
            .map(|p| healpix_pix2ang_ring(1, p).0.cos())
            .collect();
        for (i, z) in zs.iter().enumerate() {
            let expected = [2.0 / 3.0, 0.0, -2.0 / 3.0][i / 4];
            assert!((z - expected).abs() < 1e-12, "pixel {i}: {z}");
        }
        // Nside 2 has 48 distinct pixel centers.
        let pts: Vec<(f64, f64)> = (0..48).map(|p| healpix_pix2ang_ring(2, p)).collect();
        for i in 0..48 {
            for j in (i + 1)..48 {
                let d = (pts[i].0 - pts[j].0).abs() + (pts[i].1 - pts[j].1).abs();
                assert!(d > 1e-6);
            }
        }
    }

    #[test]
    fn hopf_grid_sizes() {
        assert_eq!(hopf_grid(0).len(), 72);
        assert_eq!(hopf_grid(1).len(), 576);
        assert_eq!(max_bin_count(), 4608);
    }

    #[test]
    fn single_bin_is_identity() {
        let t = table(1);
        assert_eq!(t.bins, vec![RotationMatrix::identity()]);
        assert_eq!(t.spacing, 0.0);
    }

    #[test]
    fn invalid_counts_rejected() {
        assert!(matches!(
            RotationBinTable::generate(0, 0),
            Err(GridError::InvalidBinCount { .. })
        ));
        assert!(matches!(
            RotationBinTable::generate(4609, 0),
            Err(GridError::InvalidBinCount { .. })
        ));
    }

    #[test]
    fn subsampled_tables_start_at_identity_and_are_distinct() {
        for n in [2, 8, 32, 100] {
            let t = table(n);
            assert_eq!(t.bins.len(), n);
            assert_eq!(t.bins[0], RotationMatrix::identity());
            assert!(t.spacing > 0.0);
        }
    }

    #[test]
    fn nearest_bin_returns_members_and_perturbations() {
        let t = table(32);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, b) in t.bins.iter().enumerate() {
            assert_eq!(nearest_bin(b, &t), k);
            let axis = random_rotation(&mut rng).apply(&nalgebra::Vector3::x());
            let p = RotationMatrix::from_axis_angle(&axis, 1e-3).compose(b);
            assert_eq!(nearest_bin(&p, &t), k);
        }
    }

    #[test]
    fn nearest_bin_breaks_ties_low() {
        let b = RotationMatrix::rot_z(0.5);
        let t = RotationBinTable::from_bins(vec![b, b, RotationMatrix::identity()], 0, 10);
        assert_eq!(nearest_bin(&b, &t), 0);
    }

    #[test]
    fn soft_labels_one_hot_when_beta_small() {
        let t = table(32);
        let y = soft_labels(&t.bins[5], &t, 0.1, 0.5 * t.spacing).unwrap();
        assert_eq!(y.hot_index(), Some(5));
        assert_eq!(y.active(), vec![5]);
    }

    #[test]
    fn soft_labels_ring_matches_scan() {
        let t = table(32);
        let k = 9;
        let beta = 1.2 * t.spacing;
        let y = soft_labels(&t.bins[k], &t, 0.1, beta).unwrap();
        assert_eq!(y.y[k], 1.0);
        for (i, b) in t.bins.iter().enumerate() {
            if i != k {
                let d = geodesic_distance(b, &t.bins[k]);
                assert_eq!(y.y[i], if d < beta { 0.1 } else { 0.0 });
            }
        }
    }

    #[test]
    fn soft_labels_reject_bad_params() {
        let t = table(8);
        let r = RotationMatrix::identity();
        assert!(soft_labels(&r, &t, 0.0, 1.0).is_err());
        assert!(soft_labels(&r, &t, 1.0, 1.0).is_err());
        assert!(soft_labels(&r, &t, 0.5, 0.0).is_err());
    }

    #[test]
    fn codec_examples() {
        let t = table(32);
        let k = 4;
        let code = encode_pose(&t.bins[k], &t);
        assert_eq!(code.bin_index, k);
        assert!(code.delta.max_abs_diff(&t.bins[k].compose(&t.bins[k])) < 1e-15);
        assert!(decode_pose(&code, &t).unwrap().max_abs_diff(&t.bins[k]) < 1e-12);

        let id = decode_pose(
            &PoseCode {
                bin_index: k,
                delta: t.bins[k],
            },
            &t,
        )
        .unwrap();
        assert!(id.max_abs_diff(&RotationMatrix::identity()) < 1e-12);

        let one = table(1);
        let r = crate::rotation::random_rotation_seeded(9);
        let code = encode_pose(&r, &one);
        assert_eq!(code.bin_index, 0);
        assert_eq!(code.delta, r);
        let id = decode_pose(
            &PoseCode {
                bin_index: 0,
                delta: RotationMatrix::identity(),
            },
            &one,
        )
        .unwrap();
        assert_eq!(id, RotationMatrix::identity());
    }

    #[test]
    fn decode_rejects_bad_index() {
        let t = table(8);
        let code = PoseCode {
            bin_index: 8,
            delta: RotationMatrix::identity(),
        };
        assert_eq!(
            decode_pose(&code, &t),
            Err(GridError::BinIndexOutOfRange { index: 8, n: 8 })
        );
    }

    #[test]
    fn json_roundtrip() {
        let t = table(8);
        let back = RotationBinTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back.n, 8);
        assert_eq!(back.spacing, t.spacing);
        for (a, b) in back.bins.iter().zip(&t.bins) {
            assert!(a.max_abs_diff(b) == 0.0);
        }
    }
}
