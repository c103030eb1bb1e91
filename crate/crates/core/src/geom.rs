//! SO(3)/SE(3) primitives and the structure operators used by the rigid-body
//! Hamiltonian dynamics.
//!
//! Rotations are kept as full 3x3 matrices: the generalized coordinates and the
//! controller both consume the rows `r_i` of `R` directly.

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Matrix12x6 = SMatrix<f64, 12, 6>;
pub type Vector12 = SVector<f64, 12>;

/// Below this rotation angle exp/log switch to their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;
/// The principal logarithm refuses angles closer than this to pi.
pub const PI_MARGIN: f64 = 1e-6;
/// Tolerance on `|A + A^T|_F` accepted by [`vee`].
pub const SKEW_TOL: f64 = 1e-6;

/// A 3x3 rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub const ORTHO_TOL: f64 = 1e-9;

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Checked constructor: `R R^T = I` and `det R = 1` within [`Self::ORTHO_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let err = orthogonality_error(&m).max((m.determinant() - 1.0).abs());
        if err > Self::ORTHO_TOL {
            return Err(Error::TooFarFromSO3(err));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix without checking it; integrated states drift off SO(3).
    pub fn new_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Rotation by `yaw` radians about the z axis.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Row `i` of `R` as a column vector.
    pub fn row(&self, i: usize) -> Vector3<f64> {
        self.0.row(i).transpose()
    }

    /// Heading of the body x axis in the world xy-plane.
    pub fn yaw(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }
}

impl From<Rotation> for Matrix3<f64> {
    fn from(r: Rotation) -> Self {
        r.0
    }
}

/// Position and orientation packed as `q = [p; r1; r2; r3]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneralizedCoord {
    pub p: Vector3<f64>,
    pub r: Rotation,
}

impl GeneralizedCoord {
    pub fn new(p: Vector3<f64>, r: Rotation) -> Self {
        Self { p, r }
    }

    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(Vector3::new(x, y, 0.0), Rotation::from_yaw(yaw))
    }

    pub fn pack(&self) -> Vector12 {
        let m = self.r.matrix();
        let mut q = Vector12::zeros();
        q.fixed_rows_mut::<3>(0).copy_from(&self.p);
        for i in 0..3 {
            for j in 0..3 {
                q[3 + 3 * i + j] = m[(i, j)];
            }
        }
        q
    }

    pub fn unpack(q: &[f64]) -> Self {
        assert!(q.len() >= 12, "generalized coordinates need 12 entries");
        let p = Vector3::new(q[0], q[1], q[2]);
        let r = Matrix3::from_row_slice(&q[3..12]);
        Self::new(p, Rotation::new_unchecked(r))
    }
}

/// Body-frame generalized velocity `zeta = [v; w]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Twist {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl Twist {
    pub fn new(v: Vector3<f64>, w: Vector3<f64>) -> Self {
        Self { v, w }
    }

    pub fn pack(&self) -> Vector6<f64> {
        Vector6::new(self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z)
    }

    pub fn unpack(z: &[f64]) -> Self {
        Self::new(Vector3::new(z[0], z[1], z[2]), Vector3::new(z[3], z[4], z[5]))
    }
}

/// Cross-product matrix: `hat(x) * y == x.cross(y)`.
#[rustfmt::skip]
pub fn hat(x: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
         0.0, -x.z,  x.y,
         x.z,  0.0, -x.x,
        -x.y,  x.x,  0.0,
    )
}

/// Inverse of [`hat`].
pub fn vee(a: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let asym = (a + a.transpose()).norm();
    if asym >= SKEW_TOL {
        return Err(Error::NotSkew(asym));
    }
    Ok(vee_unchecked(a))
}

/// Reads the skew part of `a` without checking symmetry.
pub fn vee_unchecked(a: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)])
}

/// Rodrigues' formula.
pub fn so3_exp(x: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = x.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(x);
    Matrix3::identity() + k * a + k * k * b
}

/// Principal logarithm; refuses angles within [`PI_MARGIN`] of pi.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let axis2 = vee_unchecked(&(r - r.transpose()));
    let sin_t = 0.5 * axis2.norm();
    let cos_t = 0.5 * (r.trace() - 1.0);
    let theta = sin_t.atan2(cos_t);
    if theta >= std::f64::consts::PI - PI_MARGIN {
        return Err(Error::NearPiAngle(theta));
    }
    let factor = if theta < SMALL_ANGLE { 0.5 * (1.0 + theta * theta / 6.0) } else { 0.5 * theta / theta.sin() };
    Ok(axis2 * factor)
}

/// `q^x`: maps the body twist to the rate of the packed coordinates,
/// `qdot = q^x * zeta`, i.e. `pdot = R v` and `rdot_i = hat(r_i) w`.
pub fn q_cross(q: &GeneralizedCoord) -> Matrix12x6 {
    let mut out = Matrix12x6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(q.r.matrix());
    for i in 0..3 {
        out.fixed_view_mut::<3, 3>(3 + 3 * i, 3).copy_from(&hat(&q.r.row(i)));
    }
    out
}

/// `p^x = [[0, hat(p_v)], [hat(p_v), hat(p_w)]]`.
pub fn p_cross(p: &Vector6<f64>) -> Matrix6<f64> {
    let pv = hat(&p.fixed_rows::<3>(0).into_owned());
    let pw = hat(&p.fixed_rows::<3>(3).into_owned());
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&pv);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&pv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&pw);
    out
}

/// `tr(I - R_a^T R_b)`, in `[0, 4]` for proper rotations.
pub fn chordal_dist(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    3.0 - (ra.transpose() * rb).trace()
}

/// `|R R^T - I|_F`.
pub fn orthogonality_error(r: &Matrix3<f64>) -> f64 {
    (r * r.transpose() - Matrix3::identity()).norm()
}

/// The 90 degree rotation about z.
pub fn quarter_turn() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
}
