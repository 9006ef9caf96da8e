//! Rotation math on SO(3): geodesic distance, the continuous 6D
//! parameterization, quaternion and Euler conversions, Haar sampling.
//!
//! Rotations are proper orthonormal 3×3 matrices. In JSON a rotation is a
//! row-major array of nine numbers and a quaternion is `[w, x, y, z]`.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Default tolerance for algebraic identities (orthonormality, roundtrips).
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Minimum norm accepted by the Gram–Schmidt steps of the 6D decoder.
pub const SIXD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RotationError {
    #[error("degenerate 6D representation: {0}")]
    DegenerateSixD(&'static str),
    #[error(
        "matrix is not a proper rotation (orthonormality residual {residual:.3e}, det {det:.6})"
    )]
    NotARotation { residual: f64, det: f64 },
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
}

/// A proper rotation matrix (`mᵀm = I`, `det m = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and determinant against `tol`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self, RotationError> {
        let residual = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if residual > tol || (det - 1.0).abs() > tol || !m.iter().all(|v| v.is_finite()) {
            return Err(RotationError::NotARotation { residual, det });
        }
        Ok(Self(m))
    }

    /// Wraps `m` without validation. Callers guarantee it is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self, RotationError> {
        if v.len() != 9 {
            return Err(RotationError::WrongLength {
                expected: 9,
                got: v.len(),
            });
        }
        Self::from_matrix(Matrix3::from_row_slice(v), 1e-6)
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `self · other`.
    pub fn compose(&self, other: &RotationMatrix) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` about the (not necessarily unit) `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let u = axis.normalize();
        let (s, c) = angle.sin_cos();
        let k = Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0);
        Self(Matrix3::identity() + k * s + k * k * (1.0 - c))
    }

    /// Frobenius norm of `mᵀm − I`.
    pub fn orthonormality_residual(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    /// Rotation angle in `[0, π]`, i.e. the geodesic distance to the identity.
    pub fn angle(&self) -> f64 {
        acos_clamped((self.0.trace() - 1.0) / 2.0)
    }

    /// Max absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &RotationMatrix) -> f64 {
        (self.0 - other.0).amax()
    }
}

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl Serialize for RotationMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RotationMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(d)?;
        RotationMatrix::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

fn acos_clamped(c: f64) -> f64 {
    c.clamp(-1.0, 1.0).acos()
}

/// `tr(r1 · r2ᵀ)`, computed as the Frobenius inner product.
#[inline]
pub fn trace_of_product_transpose(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    r1.0.iter().zip(r2.0.iter()).map(|(a, b)| a * b).sum()
}

/// Angle of the relative rotation `r1 · r2ᵀ`, in radians, in `[0, π]`.
///
/// The acos argument is clamped to `[-1, 1]` so trace drift at 0 and π
/// never produces NaN.
#[inline]
pub fn geodesic_distance(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    acos_clamped((trace_of_product_transpose(r1, r2) - 1.0) / 2.0)
}

/// Two 3-vectors whose Gram–Schmidt orthonormalization gives the first two
/// columns of a rotation. The third column is their cross product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixDRep {
    pub a1: [f64; 3],
    pub a2: [f64; 3],
}

impl SixDRep {
    pub fn new(a1: [f64; 3], a2: [f64; 3]) -> Self {
        Self { a1, a2 }
    }

    /// Layout `[a1, a2]`, matching the per-bin regression head.
    pub fn from_slice(v: &[f64]) -> Result<Self, RotationError> {
        if v.len() != 6 {
            return Err(RotationError::WrongLength {
                expected: 6,
                got: v.len(),
            });
        }
        Ok(Self {
            a1: [v[0], v[1], v[2]],
            a2: [v[3], v[4], v[5]],
        })
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (a, b) = (self.a1, self.a2);
        [a[0], a[1], a[2], b[0], b[1], b[2]]
    }

    /// First two columns of `r`; a right inverse of [`SixDRep::to_rotation`].
    pub fn from_rotation(r: &RotationMatrix) -> Self {
        let m = r.matrix();
        Self {
            a1: [m[(0, 0)], m[(1, 0)], m[(2, 0)]],
            a2: [m[(0, 1)], m[(1, 1)], m[(2, 1)]],
        }
    }

    pub fn to_rotation(&self) -> Result<RotationMatrix, RotationError> {
        gram_schmidt(self).map(|f| f.rotation())
    }
}

pub fn sixd_to_rotation(s: &SixDRep) -> Result<RotationMatrix, RotationError> {
    s.to_rotation()
}

pub fn rotation_to_sixd(r: &RotationMatrix) -> SixDRep {
    SixDRep::from_rotation(r)
}

/// Intermediate values of the 6D decoder, kept for backpropagation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GramSchmidtFrame {
    pub a1_norm: f64,
    pub a2: Vector3<f64>,
    pub u_norm: f64,
    pub b1: Vector3<f64>,
    pub b2: Vector3<f64>,
    pub b3: Vector3<f64>,
}

impl GramSchmidtFrame {
    pub fn rotation(&self) -> RotationMatrix {
        RotationMatrix(Matrix3::from_columns(&[self.b1, self.b2, self.b3]))
    }

    /// Pulls `∂L/∂b1`, `∂L/∂b2` (with `b3 = b1 × b2` already folded in) back
    /// to `∂L/∂a1`, `∂L/∂a2`.
    pub fn backprop(&self, g_b1: Vector3<f64>, g_b2: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let b1 = self.b1;
        let b2 = self.b2;
        // b2 = u / |u|
        let g_u = (g_b2 - b2 * g_b2.dot(&b2)) / self.u_norm;
        // u = a2 - (b1·a2) b1
        let g_a2 = g_u - b1 * b1.dot(&g_u);
        let g_b1_total = g_b1 - g_u * b1.dot(&self.a2) - self.a2 * b1.dot(&g_u);
        // b1 = a1 / |a1|
        let g_a1 = (g_b1_total - b1 * g_b1_total.dot(&b1)) / self.a1_norm;
        (g_a1, g_a2)
    }
}

pub(crate) fn gram_schmidt(s: &SixDRep) -> Result<GramSchmidtFrame, RotationError> {
    let a1 = Vector3::from(s.a1);
    let a2 = Vector3::from(s.a2);
    let a1_norm = a1.norm();
    if !(a1_norm > SIXD_EPSILON) {
        return Err(RotationError::DegenerateSixD("a1 has (near) zero norm"));
    }
    let b1 = a1 / a1_norm;
    let u = a2 - b1 * b1.dot(&a2);
    let u_norm = u.norm();
    if !(u_norm > SIXD_EPSILON) {
        return Err(RotationError::DegenerateSixD(
            "a2 is (nearly) parallel to a1",
        ));
    }
    let b2 = u / u_norm;
    let b3 = b1.cross(&b2);
    Ok(GramSchmidtFrame {
        a1_norm,
        a2,
        u_norm,
        b1,
        b2,
        b3,
    })
}

/// Unit quaternion `w + xi + yj + zk`; `q` and `-q` describe the same rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalizes `(w, x, y, z)`.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self, RotationError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(RotationError::ZeroQuaternion);
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, o: &UnitQuaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Rotation angle between two quaternions, `2·acos(|⟨q1, q2⟩|)`.
    pub fn angle_to(&self, o: &UnitQuaternion) -> f64 {
        2.0 * self.dot(o).abs().min(1.0).acos()
    }

    pub fn to_rotation(&self) -> RotationMatrix {
        quat_to_rotation(self)
    }
}

impl Serialize for UnitQuaternion {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for UnitQuaternion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        UnitQuaternion::new_normalize(w, x, y, z).map_err(serde::de::Error::custom)
    }
}

pub fn quat_to_rotation(q: &UnitQuaternion) -> RotationMatrix {
    let UnitQuaternion { w, x, y, z } = *q;
    RotationMatrix(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Shepperd's method; the returned quaternion has `w ≥ 0`.
pub fn rotation_to_quat(r: &RotationMatrix) -> UnitQuaternion {
    let m = r.matrix();
    let tr = m.trace();
    let (w, x, y, z);
    if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[(2, 1)] - m[(1, 2)]) / s;
        y = (m[(0, 2)] - m[(2, 0)]) / s;
        z = (m[(1, 0)] - m[(0, 1)]) / s;
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(2, 1)] - m[(1, 2)]) / s;
        x = 0.25 * s;
        y = (m[(0, 1)] + m[(1, 0)]) / s;
        z = (m[(0, 2)] + m[(2, 0)]) / s;
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(0, 2)] - m[(2, 0)]) / s;
        x = (m[(0, 1)] + m[(1, 0)]) / s;
        y = 0.25 * s;
        z = (m[(1, 2)] + m[(2, 1)]) / s;
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        w = (m[(1, 0)] - m[(0, 1)]) / s;
        x = (m[(0, 2)] + m[(2, 0)]) / s;
        y = (m[(1, 2)] + m[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let sign = if w < 0.0 { -1.0 } else { 1.0 };
    let n = (w * w + x * x + y * y + z * z).sqrt();
    UnitQuaternion {
        w: sign * w / n,
        x: sign * x / n,
        y: sign * y / n,
        z: sign * z / n,
    }
}

/// Viewpoint annotation in radians.
///
/// Converted with `R = Rz(inplane) · Rx(−elevation) · Rz(−azimuth)`.
/// Angles can alias (e.g. elevation past ±π/2), so only the matrix is
/// guaranteed to roundtrip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerPose {
    pub azimuth: f64,
    pub elevation: f64,
    pub inplane: f64,
}

impl EulerPose {
    pub fn to_rotation(&self) -> RotationMatrix {
        euler_to_rotation(self)
    }
}

pub fn euler_to_rotation(e: &EulerPose) -> RotationMatrix {
    RotationMatrix::rot_z(e.inplane)
        .compose(&RotationMatrix::rot_x(-e.elevation))
        .compose(&RotationMatrix::rot_z(-e.azimuth))
}

/// Inverse of [`euler_to_rotation`] up to angle aliasing. Elevation is
/// returned in `[0, π]`; at the gimbal poles the inplane angle is zero.
pub fn rotation_to_euler(r: &RotationMatrix) -> EulerPose {
    // R = Rz(c) Rx(-b) Rz(-a):
    //   R[2][2] = cos b, R[2][0] = sin b sin a, R[2][1] = -sin b cos a,
    //   R[0][2] = -sin b sin c, R[1][2] = sin b cos c
    let m = r.matrix();
    let cb = m[(2, 2)].clamp(-1.0, 1.0);
    let elevation = cb.acos();
    if elevation.sin().abs() > 1e-12 {
        let azimuth = m[(2, 0)].atan2(-m[(2, 1)]);
        let inplane = (-m[(0, 2)]).atan2(m[(1, 2)]);
        EulerPose {
            azimuth,
            elevation,
            inplane,
        }
    } else {
        // Rz(c) Rx(∓) Rz(-a) degenerates to a single z rotation by c ∓ a.
        let phi = m[(1, 0)].atan2(m[(0, 0)]);
        let azimuth = if cb > 0.0 { -phi } else { phi };
        EulerPose {
            azimuth,
            elevation,
            inplane: 0.0,
        }
    }
}

/// Haar-uniform rotation: a normalized 4D Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    random_quaternion(rng).to_rotation()
}

pub fn random_quaternion<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        if let Ok(q) = UnitQuaternion::new_normalize(w, x, y, z) {
            if (w * w + x * x + y * y + z * z) > 1e-12 {
                return q;
            }
        }
    }
}

/// Deterministic Haar-uniform rotation for a seed.
pub fn random_rotation_seeded(seed: u64) -> RotationMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rotation(&mut rng)
}
