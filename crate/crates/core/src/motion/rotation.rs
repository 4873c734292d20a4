//! Rotation matrices and Euler-angle conversion in BVH channel order.
//!
//! Euler triples are composed intrinsically in the order the channels appear,
//! so channels `Zrotation Xrotation Yrotation` give `R = Rz(a) * Rx(b) * Ry(c)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn letter(self) -> char {
        ['X', 'Y', 'Z'][self.index()]
    }

    fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'X' => Some(Axis::X),
            'Y' => Some(Axis::Y),
            'Z' => Some(Axis::Z),
            _ => None,
        }
    }

    /// Right-handed rotation about this axis by `radians`.
    pub fn rotation(self, radians: f64) -> Matrix3<f64> {
        let (s, c) = radians.sin_cos();
        match self {
            Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        }
    }
}

/// A permutation of the three rotation axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EulerOrder([Axis; 3]);

impl EulerOrder {
    pub const XYZ: EulerOrder = EulerOrder([Axis::X, Axis::Y, Axis::Z]);
    pub const ZXY: EulerOrder = EulerOrder([Axis::Z, Axis::X, Axis::Y]);
    pub const ZYX: EulerOrder = EulerOrder([Axis::Z, Axis::Y, Axis::X]);

    pub fn new(axes: [Axis; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for a in axes {
            if seen[a.index()] {
                return Err(Error::Invalid(format!("euler order {:?} repeats an axis", axes)));
            }
            seen[a.index()] = true;
        }
        Ok(EulerOrder(axes))
    }

    pub fn axes(&self) -> [Axis; 3] {
        self.0
    }

    /// +1 for cyclic orders (XYZ, YZX, ZXY), -1 otherwise.
    fn parity(&self) -> f64 {
        let [i, j, _] = self.0.map(Axis::index);
        if (i + 1) % 3 == j {
            1.0
        } else {
            -1.0
        }
    }
}

impl FromStr for EulerOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters: Vec<char> = s.chars().collect();
        if letters.len() != 3 {
            return Err(Error::Invalid(format!("euler order '{s}' must have 3 axes")));
        }
        let mut axes = [Axis::X; 3];
        for (slot, c) in axes.iter_mut().zip(letters) {
            *slot = Axis::from_letter(c).ok_or_else(|| Error::Invalid(format!("euler order '{s}': bad axis '{c}'")))?;
        }
        EulerOrder::new(axes)
    }
}

impl fmt::Display for EulerOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.0 {
            write!(f, "{}", a.letter())?;
        }
        Ok(())
    }
}

/// A proper rotation matrix (orthonormal, det +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat(Matrix3<f64>);

impl RotMat {
    pub fn identity() -> Self {
        RotMat(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
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

    pub fn mul(&self, other: &RotMat) -> RotMat {
        RotMat(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Frobenius norm of `RᵀR - I`.
    pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
        (m.transpose() * m - Matrix3::identity()).norm()
    }
}

pub fn euler_to_rotmat(degrees: [f64; 3], order: EulerOrder) -> RotMat {
    let m = order
        .axes()
        .iter()
        .zip(degrees)
        .fold(Matrix3::identity(), |acc, (axis, deg)| {
            acc * axis.rotation(deg.to_radians())
        });
    RotMat(m)
}

const ORTHO_TOLERANCE: f64 = 1e-3;
const GIMBAL_EPS: f64 = 1e-9;

/// Inverse of [`euler_to_rotmat`]. The middle angle lies in [-90, 90];
/// at gimbal lock the third angle is set to zero.
pub fn rotmat_to_euler(r: &RotMat, order: EulerOrder) -> Result<[f64; 3]> {
    let m = &r.0;
    let err = RotMat::orthonormality_error(m);
    if !(err <= ORTHO_TOLERANCE) || m.determinant() <= 0.0 {
        return Err(Error::Invalid(format!(
            "matrix is not a rotation (orthonormality error {err:.3e}); orthonormalize first"
        )));
    }
    let [i, j, k] = order.axes().map(Axis::index);
    let s = order.parity();
    let sin_mid = (s * m[(i, k)]).clamp(-1.0, 1.0);
    let mid = sin_mid.asin();
    let (first, last) = if 1.0 - sin_mid.abs() > GIMBAL_EPS {
        ((-s * m[(j, k)]).atan2(m[(k, k)]), (-s * m[(i, j)]).atan2(m[(i, i)]))
    } else {
        // With the last angle zeroed, column j equals R_i(first) * e_j.
        ((s * m[(k, j)]).atan2(m[(j, j)]), 0.0)
    };
    Ok([first.to_degrees(), mid.to_degrees(), last.to_degrees()])
}

const SINGULAR_RATIO: f64 = 1e-8;

/// Nearest rotation in Frobenius norm (orthogonal polar factor) of a
/// row-major 3x3 matrix.
pub fn orthonormalize(values: &[f64; 9]) -> Result<RotMat> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite rotation entries".into()));
    }
    let m = Matrix3::from_row_slice(values);
    let det = m.determinant();
    let svd = m.svd(true, true);
    let sv = svd.singular_values;
    let (max, min) = (sv.max(), sv.min());
    if !(max > 0.0) || min <= SINGULAR_RATIO * max {
        return Err(Error::Numeric(format!(
            "rotation block is singular (singular values {:.3e}..{:.3e})",
            min, max
        )));
    }
    if det <= 0.0 {
        return Err(Error::Numeric(format!(
            "rotation block is a reflection (det {det:.3e})"
        )));
    }
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    Ok(RotMat(u * v_t))
}
