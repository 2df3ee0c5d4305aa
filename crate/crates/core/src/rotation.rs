//! 6D rotation parameters (the first two columns of a rotation matrix) and
//! their Gram–Schmidt decoding.
//!
//! Two routes are provided. The `f64` functions here validate their inputs and
//! are used at API boundaries, by the renderer and by test oracles.
//! [`gram_schmidt`] is the graph version used inside the training loss: its
//! normalizations are ε-guarded so that arbitrary network outputs still yield
//! finite values and gradients.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Var;

/// Smallest accepted norm for the first column and the orthogonalized second column.
pub const DEGENERACY_EPS: f64 = 1e-8;

/// Two stacked 3-vectors `(a1, a2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn first(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn second(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn to_matrix(&self) -> Result<RotMatrix> {
        to_matrix(self)
    }
}

/// Orthonormal 3×3 matrix with determinant +1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotMatrix(Matrix3<f64>);

impl RotMatrix {
    pub fn identity() -> Self {
        RotMatrix(Matrix3::identity())
    }

    /// Validates orthonormality and orientation within `tol`.
    pub fn new(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !err.is_finite() || err > tol || (det - 1.0).abs() > tol {
            return Err(Error::input(format!(
                "matrix is not a rotation (orthonormality error {err:.3e}, det {det:.6})"
            )));
        }
        Ok(RotMatrix(m))
    }

    /// Rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = Unit::new_normalize(axis);
        RotMatrix(*Rotation3::from_axis_angle(&axis, angle).matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn compose(&self, other: &RotMatrix) -> RotMatrix {
        RotMatrix(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

/// Gram–Schmidt decoding of a 6D rotation.
pub fn to_matrix(r: &Rot6D) -> Result<RotMatrix> {
    if r.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateRotation("non-finite 6D parameters".into()));
    }
    let a1 = r.first();
    let a2 = r.second();
    let n1 = a1.norm();
    if n1 <= DEGENERACY_EPS {
        return Err(Error::DegenerateRotation(format!(
            "first column norm {n1:.3e}"
        )));
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let nu = u.norm();
    if nu <= DEGENERACY_EPS * a2.norm().max(1.0) {
        return Err(Error::DegenerateRotation(
            "second column parallel to the first".into(),
        ));
    }
    let b2 = u / nu;
    let b3 = b1.cross(&b2);
    Ok(RotMatrix(Matrix3::from_columns(&[b1, b2, b3])))
}

/// First two columns of `r`. Rejects matrices that are not orthonormal within 1e-6.
pub fn from_matrix(r: &Matrix3<f64>) -> Result<Rot6D> {
    let m = RotMatrix::new(*r, 1e-6)?;
    Ok(from_rotation(&m))
}

pub fn from_rotation(r: &RotMatrix) -> Rot6D {
    let m = r.matrix();
    Rot6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ])
}

/// Angle of `r1ᵀ r2`, in `[0, π]`.
pub fn geodesic_distance(r1: &RotMatrix, r2: &RotMatrix) -> f64 {
    let rel = r1.matrix().transpose() * r2.matrix();
    // atan2 of the skew and trace parts stays accurate near 0 and π, where acos does not.
    let skew = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    (skew.norm() / 2.0).atan2((rel.trace() - 1.0) / 2.0)
}

fn guarded_normalize<'g>(v: Var<'g>, eps: f64) -> Result<Var<'g>> {
    let inv = v.square().sum_axis(1)?.add_scalar(eps * eps).sqrt().recip();
    v.mul_col(inv)
}

/// Graph version of [`to_matrix`] for a batch `[M, 6]` of 6D rows.
///
/// Returns `[M, 3, 3]` rotation matrices (row-major, columns `b1 b2 b3`).
/// Normalizations use `sqrt(‖v‖² + ε²)`, so degenerate rows give finite
/// (if meaningless) outputs instead of errors.
pub fn gram_schmidt<'g>(six: Var<'g>, eps: f64) -> Result<Var<'g>> {
    let shape = six.shape();
    if shape.len() != 2 || shape[1] != 6 {
        return Err(Error::dim("gram_schmidt", &shape, &[shape[0], 6]));
    }
    let a1 = six.slice(1, 0, 3)?;
    let a2 = six.slice(1, 3, 3)?;
    let b1 = guarded_normalize(a1, eps)?;
    let proj = b1.mul(a2)?.sum_axis(1)?;
    let u = a2.sub(b1.mul_col(proj)?)?;
    let b2 = guarded_normalize(u, eps)?;
    let b3 = cross(b1, b2)?;
    let m = shape[0];
    // Stack as [M, column, row], then swap to row-major [M, row, column].
    let cols = b1.graph().concat(&[b1, b2, b3], 1)?.reshape(&[m, 3, 3])?;
    cols.permute(&[0, 2, 1])
}

/// Row-wise cross product of two `[M, 3]` tensors.
pub fn cross<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let comp = |v: Var<'g>, i: usize| v.slice(1, i, 1);
    let (a0, a1, a2) = (comp(a, 0)?, comp(a, 1)?, comp(a, 2)?);
    let (b0, b1, b2) = (comp(b, 0)?, comp(b, 1)?, comp(b, 2)?);
    let c0 = a1.mul(b2)?.sub(a2.mul(b1)?)?;
    let c1 = a2.mul(b0)?.sub(a0.mul(b2)?)?;
    let c2 = a0.mul(b1)?.sub(a1.mul(b0)?)?;
    a.graph().concat(&[c0, c1, c2], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn canonical_six_is_identity() {
        let m = to_matrix(&Rot6D::IDENTITY).unwrap();
        assert_eq!(m.matrix(), &Matrix3::identity());
    }

    #[test]
    fn scale_is_removed() {
        let m = to_matrix(&Rot6D([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert_abs_diff_eq!(*m.matrix(), Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(to_matrix(&Rot6D([0.0; 6])).is_err());
        assert!(to_matrix(&Rot6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])).is_err());
        assert!(to_matrix(&Rot6D([f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn from_identity_and_quarter_turn() {
        assert_eq!(from_matrix(&Matrix3::identity()).unwrap(), Rot6D::IDENTITY);
        let rz = RotMatrix::from_axis_angle(Vector3::z(), FRAC_PI_2);
        let six = from_matrix(rz.matrix()).unwrap();
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in six.0.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn from_matrix_rejects_non_orthonormal() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(from_matrix(&m).is_err());
    }

    #[test]
    fn geodesic_fixtures() {
        let id = RotMatrix::identity();
        assert_eq!(geodesic_distance(&id, &id), 0.0);
        let half = RotMatrix::from_axis_angle(Vector3::new(1.0, 2.0, -0.5), PI);
        assert_abs_diff_eq!(geodesic_distance(&id, &half), PI, epsilon = 1e-7);
        let quarter = RotMatrix::from_axis_angle(Vector3::x(), FRAC_PI_2);
        assert_abs_diff_eq!(geodesic_distance(&id, &quarter), FRAC_PI_2, epsilon = 1e-9);
    }

    #[test]
    fn graph_route_matches_f64_route() {
        let rows = [
            [0.3, -1.2, 0.5, 0.9, 0.4, -0.7],
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            [-0.2, 0.1, 2.0, 0.5, 0.5, 0.5],
        ];
        let g = Graph::new();
        let x = g.constant(Tensor::new(&[3, 6], rows.concat()).unwrap());
        let out = gram_schmidt(x, 1e-12).unwrap();
        let v = out.value();
        for (i, row) in rows.iter().enumerate() {
            let m = to_matrix(&Rot6D(*row)).unwrap();
            for r in 0..3 {
                for c in 0..3 {
                    assert_abs_diff_eq!(
                        v.data()[i * 9 + r * 3 + c],
                        m.matrix()[(r, c)],
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn guarded_decoding_stays_finite_at_zero() {
        let g = Graph::new();
        let x = g.param(std::sync::Arc::new(Tensor::zeros(&[2, 6])));
        let out = gram_schmidt(x, DEGENERACY_EPS).unwrap();
        assert!(out.value().is_finite());
        let grads = g.backward(out.sum()).unwrap();
        assert!(grads.get(x).unwrap().is_finite());
    }
}
