//! Disentangled shape/pose embedding toolkit.
//!
//! - [`rotation`]: SO(3) math, geodesic distance, the 6D representation.
//! - [`so3_grid`]: uniform rotation bins, soft labels, bin + delta codec.
//! - [`translation`]: cube bins with normalized residuals.
//! - [`voxel`]: occupancy grids, binvox, voxelization, silhouettes.
//! - [`retrieval`]: shape database and L2 nearest-neighbor lookup.
//! - [`losses`]: loss functions with analytic gradients.
//! - [`learner`]: a small two-stage trainer on procedural shapes.
//! - [`metrics`]: pose and retrieval evaluation.
//! - [`selftest`]: quick gradient and roundtrip checks.

// `!(a > b)` checks are deliberate: they also reject NaN. Index loops over
// small fixed axes read better than zipped iterators.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod learner;
pub mod losses;
pub mod metrics;
pub mod retrieval;
pub mod rotation;
pub mod selftest;
pub mod so3_grid;
pub mod translation;
pub mod voxel;
