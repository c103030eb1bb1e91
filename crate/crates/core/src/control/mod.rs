//! IDA-PBC tracking control on a (learned) Hamiltonian model: error states,
//! the shaped potential for a nonholonomic base and the closed-form law.

mod law;
mod potential;
mod reference;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

pub use law::{
    effective_mass, ida_pbc_control, matching_residuals, pseudo_inverse, ControlMode, ControlOutput, Controller,
    MatchingResiduals, MAX_GAIN_CONDITION, TERMINAL_ENTER, TERMINAL_EXIT,
};
pub use potential::{
    direction_frame_derivative, direction_matrix, error_vector, potential_gradients, shaped_potential,
    target_direction_frame, terminal_error_vector, terminal_potential, DirectionFrame, PotentialGradients,
    PotentialTerms, DIRECTION_EPS,
};
pub use reference::{RefSample, Reference};

use crate::error::{Error, Result};
use crate::geom::Vector12;

/// Position, orientation and momentum errors against the reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorState {
    /// `p − p*`, world frame.
    pub p_e: Vector3<f64>,
    /// `R*ᵀ R`.
    pub r_e: Matrix3<f64>,
    pub r_star: Matrix3<f64>,
    /// `𝔭 − 𝔭*`.
    pub pm_e: Vector6<f64>,
}

impl ErrorState {
    pub fn r(&self) -> Matrix3<f64> {
        self.r_star * self.r_e
    }

    /// `[p_e; rows of R_e]`.
    pub fn q_e(&self) -> Vector12 {
        let mut q = Vector12::zeros();
        q.fixed_rows_mut::<3>(0).copy_from(&self.p_e);
        for i in 0..3 {
            q.fixed_rows_mut::<3>(3 + 3 * i).copy_from(&self.r_e.row(i).transpose());
        }
        q
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerGains {
    pub k_p: f64,
    pub k_r1: f64,
    pub k_r2: f64,
    pub k_d: Matrix6<f64>,
}

impl ControllerGains {
    pub fn new(k_p: f64, k_r1: f64, k_r2: f64, k_d: Matrix6<f64>) -> Result<Self> {
        let g = Self { k_p, k_r1, k_r2, k_d };
        g.validate()?;
        Ok(g)
    }

    /// `(1.2, 7, 3, diag(1.2 I, I))`.
    pub fn paper() -> Self {
        Self {
            k_p: 1.2,
            k_r1: 7.0,
            k_r2: 3.0,
            k_d: Matrix6::from_diagonal(&Vector6::new(1.2, 1.2, 1.2, 1.0, 1.0, 1.0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("k_p", self.k_p), ("k_r1", self.k_r1), ("k_r2", self.k_r2)] {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::InvalidGains(format!("{name} must be positive, got {k}")));
            }
        }
        if (self.k_d - self.k_d.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidGains("K_d must be symmetric".into()));
        }
        let min = SymmetricEigen::new(self.k_d).eigenvalues.min();
        if !(min >= -1e-12) {
            return Err(Error::InvalidGains(format!("K_d must be positive semidefinite, min eigenvalue {min}")));
        }
        Ok(())
    }
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self::paper()
    }
}

/// Serializable gains; `k_d` holds 6 diagonal or 36 row-major entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsConfig {
    pub k_p: f64,
    pub k_r1: f64,
    pub k_r2: f64,
    pub k_d: Vec<f64>,
}

impl Default for GainsConfig {
    fn default() -> Self {
        Self { k_p: 1.2, k_r1: 7.0, k_r2: 3.0, k_d: vec![1.2, 1.2, 1.2, 1.0, 1.0, 1.0] }
    }
}

impl TryFrom<&GainsConfig> for ControllerGains {
    type Error = Error;

    fn try_from(c: &GainsConfig) -> Result<Self> {
        let k_d = match c.k_d.len() {
            6 => Matrix6::from_diagonal(&Vector6::from_column_slice(&c.k_d)),
            36 => Matrix6::from_row_slice(&c.k_d),
            n => return Err(Error::InvalidGains(format!("k_d needs 6 or 36 entries, got {n}"))),
        };
        ControllerGains::new(c.k_p, c.k_r1, c.k_r2, k_d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_validation() {
        assert!(ControllerGains::paper().validate().is_ok());
        let bad = ControllerGains { k_p: 0.0, ..ControllerGains::paper() };
        assert!(matches!(bad.validate(), Err(Error::InvalidGains(_))));
        let mut kd = Matrix6::identity();
        kd[(0, 0)] = -1.0;
        assert!(ControllerGains::new(1.0, 1.0, 1.0, kd).is_err());
        kd[(0, 0)] = 1.0;
        kd[(0, 1)] = 0.5;
        assert!(ControllerGains::new(1.0, 1.0, 1.0, kd).is_err());
        let cfg = GainsConfig::default();
        assert_eq!(ControllerGains::try_from(&cfg).unwrap(), ControllerGains::paper());
        assert!(ControllerGains::try_from(&GainsConfig { k_d: vec![1.0; 5], ..cfg }).is_err());
    }
}
