//! Rotation-matrix primitives on SO(3).
//!
//! Orientations are kept as plain 3×3 rotation matrices. Angular velocities
//! are world-frame vectors, so `Ṙ = [w]× R` and a step of constant angular
//! velocity is `R' = exp([w]× dt) R`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality / determinant tolerance accepted by [`RotationMatrix::new`].
pub const ROTATION_TOL: f64 = 1e-9;

/// Below this rotation angle the Rodrigues coefficients switch to their
/// Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// `log_map` refuses rotations whose angle is within this margin of π.
pub const NEAR_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum So3Error {
    #[error("matrix is not a rotation: |R Rᵀ - I|_F = {orthogonality:.3e}, det = {det}")]
    NotARotation { orthogonality: f64, det: f64 },
    #[error("rotation angle {angle} rad is too close to π for the logarithmic map")]
    NearPiSingularity { angle: f64 },
}

/// A 3×3 orthonormal matrix with unit determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Validates orthonormality and determinant within [`ROTATION_TOL`].
    pub fn new(m: Mat3) -> Result<Self, So3Error> {
        let orthogonality = (m * m.transpose() - Mat3::identity()).norm();
        let det = m.determinant();
        if !(orthogonality <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL) {
            return Err(So3Error::NotARotation { orthogonality, det });
        }
        Ok(Self(m))
    }

    /// Wraps `m` without checking it. Callers must guarantee it is a rotation.
    pub fn new_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, So3Error> {
        Self::new(Mat3::from_fn(|i, j| rows[i][j]))
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, rhs: &RotationMatrix) -> Self {
        Self(self.0 * rhs.0)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> f64 {
        let (angle, _) = angle_and_vee(&self.0);
        angle
    }

    /// `|R Rᵀ - I|_F`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Mat3::identity()).norm()
    }

    /// Rotation about x, then y, then z, all about fixed world axes:
    /// `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
    pub fn from_euler_xyz(roll: f64, pitch: f64, yaw: f64) -> Self {
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        Self(Mat3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        ))
    }

    /// Inverse of [`RotationMatrix::from_euler_xyz`]; returns `(roll, pitch, yaw)`.
    pub fn to_euler_xyz(&self) -> (f64, f64, f64) {
        let m = &self.0;
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        (roll, pitch, yaw)
    }
}

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<Vec3> for RotationMatrix {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Cross-product matrix: `hat(w) * v == w × v`.
pub fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] applied to the skew part of `m`: `vee(m - mᵀ) / 2`.
fn vee_skew(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Angle of `m` and `vee(m - mᵀ)/2 = sin(θ)·n`. atan2 keeps the small-angle
/// regime accurate where `acos` of the trace would lose half the digits.
fn angle_and_vee(m: &Mat3) -> (f64, Vec3) {
    let v = vee_skew(m);
    let cos = 0.5 * (m.trace() - 1.0);
    (v.norm().atan2(cos), v)
}

/// Rodrigues exponential of the rotation vector `w · dt`.
pub fn exp_map(w: &Vec3, dt: f64) -> RotationMatrix {
    let phi = w * dt;
    let theta = phi.norm();
    let k = hat(&phi);
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let half = 0.5 * theta;
        let s = half.sin() / half;
        (theta.sin() / theta, 0.5 * s * s)
    };
    RotationMatrix(Mat3::identity() + k * a + k * k * b)
}

/// Logarithmic map: the rotation vector `θ·n` with `exp_map(log_map(R), 1) = R`.
///
/// Fails with [`So3Error::NearPiSingularity`] once `θ > π - 1e-6`, where the
/// axis recovered from the skew part is no longer reliable.
pub fn log_map(r: &RotationMatrix) -> Result<Vec3, So3Error> {
    let (theta, v) = angle_and_vee(&r.0);
    if theta > std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(So3Error::NearPiSingularity { angle: theta });
    }
    if theta == 0.0 {
        return Ok(Vec3::zeros());
    }
    // v = sin(θ)·n
    let scale = if theta < 1e-4 {
        1.0 + theta * theta / 6.0
    } else {
        theta / theta.sin()
    };
    Ok(v * scale)
}

/// Closest rotation in Frobenius norm (polar factor `U Vᵀ` of the SVD).
pub fn orthonormalize(m: &Mat3) -> RotationMatrix {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    RotationMatrix(u * d * v_t)
}
