//! Ground-truth planar differential-drive dynamics with an exact no-slip
//! constraint.

use nalgebra::{Matrix6, Vector2, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{GeneralizedCoord, Twist};
use crate::model::{HamiltonianModel, Matrix6x2, ModelConfig, Nominal, RigidState, RobotParams};
use crate::ode::rk4_step_with;

/// Lateral dissipation used when the constrained truth is written as an
/// unconstrained Hamiltonian model.
pub const LATERAL_DAMPING: f64 = 1e3;
/// Largest internal integration step of [`step_truth`], seconds.
pub const TRUTH_MAX_STEP: f64 = 0.005;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// `u = [τ_L, τ_R]`, wheel torques.
    #[default]
    Torque,
    /// `u = [Δω_L, Δω_R]`, wheel velocity errors of a first-order wheel loop.
    WheelVelocityError,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthParams {
    pub robot: RobotParams,
    /// Viscous friction along body x, N·s/m.
    pub d_v: f64,
    /// Viscous friction about body z, N·m·s.
    pub d_omega: f64,
    #[serde(default)]
    pub input: InputMode,
}

impl GroundTruthParams {
    /// A torque-driven robot whose input map equals the unit nominal `g0`
    /// (`r = 1`, `w = 2`), with the given mass.
    pub fn unit(mass: f64) -> Self {
        let robot = RobotParams {
            mass,
            inertia: 1.0,
            wheel_radius: 1.0,
            track_width: 2.0,
            wheel_inertia: 1.0,
            time_constant: 1.0,
        };
        Self { robot, d_v: 1.0, d_omega: 0.5, input: InputMode::Torque }
    }

    pub fn jackal() -> Self {
        Self { robot: RobotParams::jackal(), d_v: 1.0, d_omega: 0.5, input: InputMode::WheelVelocityError }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.robot;
        let values = [r.mass, r.inertia, r.wheel_radius, r.track_width, r.wheel_inertia, r.time_constant];
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("robot parameters must be positive".into()));
        }
        if !(self.d_v >= 0.0 && self.d_omega >= 0.0) {
            return Err(Error::Config("friction coefficients must be non-negative".into()));
        }
        Ok(())
    }

    /// Wheel torque per unit input.
    pub fn input_scale(&self) -> f64 {
        match self.input {
            InputMode::Torque => 1.0,
            InputMode::WheelVelocityError => self.robot.wheel_inertia / self.robot.time_constant,
        }
    }

    /// Body-x force and yaw torque produced by `u`.
    pub fn wrench(&self, u: &Vector2<f64>) -> (f64, f64) {
        let tau = u * self.input_scale();
        let r = self.robot.wheel_radius;
        ((tau[0] + tau[1]) / r, self.robot.track_width / (2.0 * r) * (tau[1] - tau[0]))
    }

    /// The 6x2 input map of the wrench.
    pub fn gain(&self) -> Matrix6x2 {
        let k = self.input_scale() / self.robot.wheel_radius;
        let h = self.robot.track_width / 2.0;
        let mut g = Matrix6x2::zeros();
        g[(0, 0)] = k;
        g[(0, 1)] = k;
        g[(5, 0)] = -k * h;
        g[(5, 1)] = k * h;
        g
    }

    pub fn mass_matrix(&self) -> Matrix6<f64> {
        let m = self.robot.mass;
        let i = self.robot.inertia;
        Matrix6::from_diagonal(&nalgebra::Vector6::new(m, m, m, i, i, i))
    }

    /// The truth written as a Hamiltonian model with `lateral` dissipation
    /// standing in for the no-slip constraint.
    pub fn equivalent_model(&self, lateral: f64, cfg: ModelConfig) -> HamiltonianModel {
        let m = self.robot.mass.sqrt();
        let i = self.robot.inertia.sqrt();
        let mass_factor = Matrix6::from_diagonal(&nalgebra::Vector6::new(m, m, m, i, i, i));
        let d = nalgebra::Vector6::new(self.d_v, lateral, lateral, self.d_omega, self.d_omega, self.d_omega);
        let damping_factor = Matrix6::from_diagonal(&d.map(f64::sqrt));
        let nominal = Nominal { mass_factor, damping_factor, gain: self.gain(), potential: 0.0 };
        let mut model = HamiltonianModel::new(nominal, cfg);
        model.zero_residuals();
        model
    }
}

/// Planar truth state: pose `(x, y, yaw)` and body rates `(v_x, ω_z)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub v: f64,
    pub omega: f64,
}

impl TruthState {
    pub fn at_rest(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw, v: 0.0, omega: 0.0 }
    }

    pub fn pose(&self) -> GeneralizedCoord {
        GeneralizedCoord::planar(self.x, self.y, self.yaw)
    }

    /// Body twist; lateral velocity is identically zero.
    pub fn twist(&self) -> Twist {
        Twist::new(Vector3::new(self.v, 0.0, 0.0), Vector3::new(0.0, 0.0, self.omega))
    }

    pub fn to_rigid(&self, model: &HamiltonianModel) -> RigidState {
        RigidState::from_twist(model, self.pose(), &self.twist())
    }

    /// Kinetic energy under the truth inertia.
    pub fn kinetic_energy(&self, params: &GroundTruthParams) -> f64 {
        0.5 * params.robot.mass * self.v * self.v + 0.5 * params.robot.inertia * self.omega * self.omega
    }

    fn to_vec(self) -> Vector5<f64> {
        Vector5::new(self.x, self.y, self.yaw, self.v, self.omega)
    }

    fn from_vec(s: &Vector5<f64>) -> Self {
        Self { x: s[0], y: s[1], yaw: s[2], v: s[3], omega: s[4] }
    }
}

fn truth_field(params: &GroundTruthParams, s: &Vector5<f64>, u: &Vector2<f64>) -> Vector5<f64> {
    let (force, torque) = params.wrench(u);
    let (yaw, v, w) = (s[2], s[3], s[4]);
    Vector5::new(
        v * yaw.cos(),
        v * yaw.sin(),
        w,
        (force - params.d_v * v) / params.robot.mass,
        (torque - params.d_omega * w) / params.robot.inertia,
    )
}

/// Advances the truth by `dt` under constant `u`, with internal RK4 steps no
/// longer than [`TRUTH_MAX_STEP`].
pub fn step_truth(params: &GroundTruthParams, s: &TruthState, u: &Vector2<f64>, dt: f64) -> Result<TruthState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidTimes(format!("step {dt} is not positive")));
    }
    let n = (dt / TRUTH_MAX_STEP).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut x = s.to_vec();
    for _ in 0..n {
        x = rk4_step_with(|x| Ok(truth_field(params, x, u)), &x, h)?;
    }
    Ok(TruthState::from_vec(&x))
}
