//! Rotation representations used by the motion features: the continuous
//! 6D form (first two matrix columns), rotation matrices and unit
//! quaternions, plus Slerp and heading (twist about +y) extraction.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Norm below which a 6D column is treated as degenerate.
const DEGENERATE_EPS: f64 = 1e-9;
/// Maximum deviation from unit norm accepted by [`slerp`].
pub const UNIT_TOLERANCE: f64 = 1e-6;
/// Above this |dot| Slerp falls back to normalized lerp.
pub const NLERP_THRESHOLD: f64 = 1.0 - 1e-7;

/// First two columns of a rotation matrix, not necessarily orthonormal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D {
    pub a: [f64; 3],
    pub b: [f64; 3],
}

impl Rotation6D {
    pub const IDENTITY: Rotation6D = Rotation6D {
        a: [1.0, 0.0, 0.0],
        b: [0.0, 1.0, 0.0],
    };

    pub fn from_array(v: [f64; 6]) -> Self {
        Rotation6D {
            a: [v[0], v[1], v[2]],
            b: [v[3], v[4], v[5]],
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; 6] = v
            .try_into()
            .map_err(|_| invalid(format!("6D rotation needs 6 values, got {}", v.len())))?;
        Ok(Self::from_array(arr))
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a[0], self.a[1], self.a[2], self.b[0], self.b[1], self.b[2]]
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Rotation6D {
            a: [m[(0, 0)], m[(1, 0)], m[(2, 0)]],
            b: [m[(0, 1)], m[(1, 1)], m[(2, 1)]],
        }
    }

    /// Gram–Schmidt: normalize `a`, remove its component from `b`,
    /// normalize, and complete with the cross product.
    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        let a = Vector3::from(self.a);
        let b = Vector3::from(self.b);
        if !a.iter().chain(b.iter()).all(|x| x.is_finite()) {
            return Err(Error::Normalization("non-finite 6D rotation".into()));
        }
        let na = a.norm();
        if na < DEGENERATE_EPS {
            return Err(Error::Normalization(format!("first column has norm {na:e}")));
        }
        let a_hat = a / na;
        let b_orth = b - a_hat * b.dot(&a_hat);
        let nb = b_orth.norm();
        if nb < DEGENERATE_EPS {
            return Err(Error::Normalization(format!(
                "columns are parallel (orthogonal residual norm {nb:e})"
            )));
        }
        let b_hat = b_orth / nb;
        let c = a_hat.cross(&b_hat);
        Ok(Matrix3::from_columns(&[a_hat, b_hat, c]))
    }

    pub fn to_quat(&self) -> Result<UnitQuaternion<f64>> {
        Ok(matrix_to_quat(&self.to_matrix()?))
    }

    pub fn from_quat(q: &UnitQuaternion<f64>) -> Self {
        Self::from_matrix(&quat_to_matrix(q))
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|x| x.is_finite())
    }
}

impl Default for Rotation6D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

pub fn rot6d_to_matrix(r: &Rotation6D) -> Result<Matrix3<f64>> {
    r.to_matrix()
}

pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> Rotation6D {
    Rotation6D::from_matrix(m)
}

pub fn quat_to_matrix(q: &UnitQuaternion<f64>) -> Matrix3<f64> {
    q.to_rotation_matrix().into_inner()
}

pub fn matrix_to_quat(m: &Matrix3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m))
}

/// Checks the quaternion is unit within [`UNIT_TOLERANCE`] and returns it
/// renormalized.
pub fn checked_unit(q: &Quaternion<f64>) -> Result<UnitQuaternion<f64>> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(invalid(format!("quaternion norm {n} is not unit")));
    }
    Ok(Unit::new_normalize(*q))
}

/// Spherical linear interpolation on the shorter arc.
pub fn slerp(q0: &Quaternion<f64>, q1: &Quaternion<f64>, t: f64) -> Result<UnitQuaternion<f64>> {
    let q0 = checked_unit(q0)?;
    let q1 = checked_unit(q1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("slerp parameter {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(q0);
    }
    if t == 1.0 {
        return Ok(q1);
    }
    let (p, q) = (q0.into_inner(), q1.into_inner());
    let mut dot = p.dot(&q);
    let q = if dot < 0.0 {
        dot = -dot;
        -q
    } else {
        q
    };
    if dot > NLERP_THRESHOLD {
        return Ok(Unit::new_normalize(p * (1.0 - t) + q * t));
    }
    let theta = dot.clamp(-1.0, 1.0).acos();
    let sin_theta = theta.sin();
    let w0 = ((1.0 - t) * theta).sin() / sin_theta;
    let w1 = (t * theta).sin() / sin_theta;
    Ok(Unit::new_normalize(p * w0 + q * w1))
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Twist angle about +y (swing–twist decomposition), in (-pi, pi].
pub fn heading_angle(q: &UnitQuaternion<f64>) -> f64 {
    let (w, y) = (q.w, q.j);
    if w.abs() < 1e-12 && y.abs() < 1e-12 {
        return 0.0;
    }
    wrap_angle(2.0 * y.atan2(w))
}

pub fn heading_rotation(angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), angle)
}

/// Splits `q` into `(twist, swing)` with `q = twist * swing` and `twist`
/// a rotation about world +y.
pub fn swing_twist(q: &UnitQuaternion<f64>) -> (UnitQuaternion<f64>, UnitQuaternion<f64>) {
    let twist = heading_rotation(heading_angle(q));
    let swing = twist.inverse() * q;
    (twist, swing)
}
