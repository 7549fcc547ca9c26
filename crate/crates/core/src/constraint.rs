//! Udwadia-Kalaba constraint forces.
//!
//! For an identity-mass system `σ̈ = f_unc` subject to `A σ̈ = b`, the
//! constraint force `f_con = A⁺ (b - A f_unc)` is the minimum-norm correction
//! that makes the acceleration consistent with the constraint. The blade
//! specialization forbids velocity along one body axis: `cᵀ ṗ = 0` with
//! `c = R · axis`, differentiated once to `ċᵀ ṗ + cᵀ p̈ = 0`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3x2};
use thiserror::Error;

use crate::so3::{hat, RotationMatrix, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("constraint axis must be a unit vector (norm {0})")]
    AxisNotUnit(f64),
    #[error("constraint matrix is {rows}x{cols} but b has {b_len} entries")]
    ShapeMismatch { rows: usize, cols: usize, b_len: usize },
    #[error("unconstrained acceleration has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("constraint must have at least one row and one column")]
    Empty,
    #[error("constraint contains non-finite entries")]
    NonFinite,
}

/// The body-frame axis along which motion is forbidden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSpec {
    body_axis: Vec3,
}

impl Default for ConstraintSpec {
    /// Lateral blade axis ŷ_b.
    fn default() -> Self {
        Self { body_axis: Vec3::y() }
    }
}

impl ConstraintSpec {
    pub fn new(body_axis: Vec3) -> Result<Self, ConstraintError> {
        let norm = body_axis.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(ConstraintError::AxisNotUnit(norm));
        }
        Ok(Self { body_axis })
    }

    pub fn body_axis(&self) -> Vec3 {
        self.body_axis
    }

    /// World-frame constraint vector `c = R · axis`.
    pub fn world_axis(&self, r: &RotationMatrix) -> Vec3 {
        r.rotate(&self.body_axis)
    }

    /// Two orthonormal body-frame axes spanning the permitted plane.
    /// For the default lateral axis these are x̂_b and ẑ_b.
    pub fn plane_axes(&self) -> (Vec3, Vec3) {
        let a = self.body_axis;
        if a == Vec3::y() || a == -Vec3::y() {
            return (Vec3::x(), Vec3::z());
        }
        let helper = if a.x.abs() <= a.y.abs() && a.x.abs() <= a.z.abs() {
            Vec3::x()
        } else if a.y.abs() <= a.z.abs() {
            Vec3::y()
        } else {
            Vec3::z()
        };
        let u = a.cross(&helper).normalize();
        let v = a.cross(&u);
        (u, v)
    }
}

/// `A σ̈ = b` with `A` m×n.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralConstraint {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl GeneralConstraint {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, ConstraintError> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(ConstraintError::Empty);
        }
        if a.nrows() != b.len() {
            return Err(ConstraintError::ShapeMismatch {
                rows: a.nrows(),
                cols: a.ncols(),
                b_len: b.len(),
            });
        }
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(ConstraintError::NonFinite);
        }
        Ok(Self { a, b })
    }
}

/// Moore-Penrose pseudoinverse through the SVD. Singular values below
/// `σ_max · max(m, n) · ε` are treated as zero.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd requested u");
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");
    let sigma_max = svd.singular_values.max();
    let cutoff = sigma_max * m.max(n) as f64 * f64::EPSILON;
    let mut out = DMatrix::zeros(n, m);
    for (k, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma > cutoff {
            out += v_t.row(k).transpose() * u.column(k).transpose() / sigma;
        }
    }
    out
}

/// `f_con = A⁺ (b - A f_unc)`.
pub fn uk_force(gc: &GeneralConstraint, f_unc: &DVector<f64>) -> Result<DVector<f64>, ConstraintError> {
    if f_unc.len() != gc.a.ncols() {
        return Err(ConstraintError::DimensionMismatch {
            expected: gc.a.ncols(),
            got: f_unc.len(),
        });
    }
    let residual = &gc.b - &gc.a * f_unc;
    Ok(pseudo_inverse(&gc.a) * residual)
}

/// Blade constraint force and the quantities it was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BladeForce {
    pub f_con: Vec3,
    /// World-frame constraint vector `c`.
    pub c: Vec3,
    /// `ċ = [w]× c`.
    pub c_dot: Vec3,
    /// `b = -ċᵀ ṗ`.
    pub b: f64,
}

/// Single-row Udwadia-Kalaba force for `cᵀ ṗ = 0`, using `c⁺ = c / (cᵀc)`.
pub fn blade_constraint_force(
    spec: &ConstraintSpec,
    r: &RotationMatrix,
    w: &Vec3,
    p_dot: &Vec3,
    p_ddot_unc: &Vec3,
) -> BladeForce {
    let c = spec.world_axis(r);
    let c_dot = hat(w) * c;
    let b = -c_dot.dot(p_dot);
    let f_con = c * ((b - c.dot(p_ddot_unc)) / c.norm_squared());
    BladeForce { f_con, c, c_dot, b }
}

/// Orthogonal projection of `p_dot0` onto the permitted plane,
/// `P (PᵀP)⁻¹ Pᵀ ṗ₀` with `P = [R x̂_b, R ẑ_b]`.
pub fn project_initial_velocity(spec: &ConstraintSpec, r_wb: &RotationMatrix, p_dot0: &Vec3) -> Vec3 {
    let (u, v) = spec.plane_axes();
    let p = Matrix3x2::from_columns(&[r_wb.rotate(&u), r_wb.rotate(&v)]);
    let gram: Matrix2<f64> = p.transpose() * p;
    let gram_inv = gram
        .try_inverse()
        .expect("plane axes of a rotation are linearly independent");
    let projected = p * (gram_inv * (p.transpose() * p_dot0));
    // remove the O(ε) residue left along c by the explicit products
    let c = spec.world_axis(r_wb);
    projected - c * c.dot(&projected)
}

/// Signed lateral speed `cᵀ ṗ`.
pub fn violation(spec: &ConstraintSpec, r: &RotationMatrix, p_dot: &Vec3) -> f64 {
    spec.world_axis(r).dot(p_dot)
}
