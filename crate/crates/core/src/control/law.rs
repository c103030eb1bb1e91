//! The energy-shaping plus damping-injection control law.

use nalgebra::{DVector, Matrix2x6, Matrix3, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6, SVD};

use super::potential::{error_vector, shaped_potential, terminal_error_vector, terminal_potential};
use super::{ControllerGains, ErrorState, RefSample};
use crate::error::{Error, Result};
use crate::geom::{hat, p_cross, q_cross, Vector12};
use crate::model::{HamiltonianModel, Matrix6x2, RigidState, MASS_FLOOR};

/// Planar position error below which the terminal potential takes over.
pub const TERMINAL_ENTER: f64 = 1e-3;
/// Planar position error above which the shaped potential resumes.
pub const TERMINAL_EXIT: f64 = 2e-3;
pub const MAX_GAIN_CONDITION: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ControlMode {
    #[default]
    Shaped,
    Terminal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOutput {
    pub u: Vector2<f64>,
    pub u_es: Vector2<f64>,
    pub u_di: Vector2<f64>,
    pub mode: ControlMode,
    /// Desired Hamiltonian `½ 𝔭_eᵀ M⁻¹ 𝔭_e + V_d`.
    pub h_d: f64,
    pub v_d: f64,
}

/// `M + εI` and its inverse, the pair used by the model's dynamics.
pub fn effective_mass(model: &HamiltonianModel, s: &RigidState) -> Result<(Matrix6<f64>, Matrix6<f64>)> {
    let minv = model.mass_inv(&s.q)?;
    Ok((model.mass(&s.q) + Matrix6::identity() * MASS_FLOOR, minv))
}

/// `(gᵀg)⁻¹gᵀ`, refused when `g` is too close to rank deficient.
pub fn pseudo_inverse(g: &Matrix6x2) -> Result<Matrix2x6<f64>> {
    let sv = SVD::new(*g, false, false).singular_values;
    let cond = sv.max() / sv.min();
    if !(cond < MAX_GAIN_CONDITION) {
        return Err(Error::RankDeficientGain(cond));
    }
    let gtg = g.transpose() * g;
    let inv = gtg.try_inverse().ok_or(Error::RankDeficientGain(f64::INFINITY))?;
    Ok(inv * g.transpose())
}

/// Reference twist `ζ*_b = [RᵀR* v*; RᵀR* ω*]` expressed in the body frame.
fn reference_twist(r: &Matrix3<f64>, rf: &RefSample) -> (Vector3<f64>, Vector3<f64>) {
    let rel = r.transpose() * rf.r;
    (rel * rf.v, rel * rf.w)
}

fn stack(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

struct Terms {
    e: ErrorState,
    minv: Matrix6<f64>,
    g: Matrix6x2,
    g_pinv: Matrix2x6<f64>,
    /// `q×ᵀ ∂H/∂q − (p× − D) ζ − e + 𝔭̇*`.
    bracket: Vector6<f64>,
    v_d: f64,
}

fn terms(
    model: &HamiltonianModel,
    s: &RigidState,
    rf: &RefSample,
    gains: &ControllerGains,
    mode: ControlMode,
) -> Result<Terms> {
    let (m, minv) = effective_mass(model, s)?;
    let r = *s.q.r.matrix();
    let (vb, wb) = reference_twist(&r, rf);
    let zeta_ref = stack(&vb, &wb);
    let pm_ref = m * zeta_ref;
    let e = ErrorState { p_e: s.q.p - rf.p, r_e: rf.r.transpose() * r, r_star: rf.r, pm_e: s.pm - pm_ref };
    let zeta = minv * s.pm;
    let w = zeta.fixed_rows::<3>(3).into_owned();
    let qx = q_cross(&s.q);
    let (v_d, err) = match mode {
        ControlMode::Shaped => (shaped_potential(&e, gains)?.vd, error_vector(&e, gains)?),
        ControlMode::Terminal => (terminal_potential(&e, gains), terminal_error_vector(&e, gains)),
    };
    let rel = r.transpose() * rf.r;
    let vb_dot = -hat(&w) * vb + rel * (hat(&rf.w) * rf.v + rf.v_dot);
    let wb_dot = -hat(&w) * wb + rel * rf.w_dot;
    let qdot: Vector12 = qx * zeta;
    let pm_ref_dot = model.mass_derivative_times(&s.q, &qdot, &zeta_ref) + m * stack(&vb_dot, &wb_dot);
    let dhdq = model.dh_dq(s)?;
    let d = model.damping(&s.q);
    let bracket = qx.transpose() * dhdq - (p_cross(&s.pm) - d) * zeta - err + pm_ref_dot;
    let g = model.gain(&s.q);
    let g_pinv = pseudo_inverse(&g)?;
    Ok(Terms { e, minv, g, g_pinv, bracket, v_d })
}

/// `u = g†[q×ᵀ∂H/∂q − (p× − D)M⁻¹𝔭 − e + 𝔭̇*] − g† K_d M⁻¹(𝔭 − 𝔭*)`.
///
/// In [`ControlMode::Shaped`] the planar position error must exceed
/// [`DIRECTION_EPS`](super::DIRECTION_EPS).
pub fn ida_pbc_control(
    model: &HamiltonianModel,
    s: &RigidState,
    rf: &RefSample,
    gains: &ControllerGains,
    mode: ControlMode,
) -> Result<ControlOutput> {
    let t = terms(model, s, rf, gains, mode)?;
    let u_es = t.g_pinv * t.bracket;
    let u_di = -(t.g_pinv * gains.k_d * t.minv * t.e.pm_e);
    let h_d = 0.5 * t.e.pm_e.dot(&(t.minv * t.e.pm_e)) + t.v_d;
    Ok(ControlOutput { u: u_es + u_di, u_es, u_di, mode, h_d, v_d: t.v_d })
}

/// Stateful wrapper that switches between the shaped and terminal
/// potentials with hysteresis on the planar position error.
#[derive(Clone, Debug)]
pub struct Controller {
    pub gains: ControllerGains,
    mode: ControlMode,
}

impl Controller {
    pub fn new(gains: ControllerGains) -> Result<Self> {
        gains.validate()?;
        Ok(Self { gains, mode: ControlMode::Shaped })
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn update_mode(&mut self, s: &RigidState, rf: &RefSample) -> ControlMode {
        let dist = (s.q.p.x - rf.p.x).hypot(s.q.p.y - rf.p.y);
        self.mode = match self.mode {
            ControlMode::Shaped if dist <= TERMINAL_ENTER => ControlMode::Terminal,
            ControlMode::Terminal if dist > TERMINAL_EXIT => ControlMode::Shaped,
            m => m,
        };
        self.mode
    }

    pub fn control(&mut self, model: &HamiltonianModel, s: &RigidState, rf: &RefSample) -> Result<ControlOutput> {
        let mode = self.update_mode(s, rf);
        ida_pbc_control(model, s, rf, &self.gains, mode)
    }
}

/// Residuals of the kinematic and projected momentum matching equations.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchingResiduals {
    /// `J₁ M⁻¹ 𝔭_e − 𝔮̇_e`.
    pub r_kin: Vector12,
    /// `g⊥ w`, one entry per unactuated direction.
    pub r_ann: DVector<f64>,
}

pub fn matching_residuals(
    model: &HamiltonianModel,
    s: &RigidState,
    rf: &RefSample,
    gains: &ControllerGains,
    mode: ControlMode,
) -> Result<MatchingResiduals> {
    let t = terms(model, s, rf, gains, mode)?;
    let r = *s.q.r.matrix();
    let zeta = t.minv * s.pm;
    let dh_dpe = t.minv * t.e.pm_e;
    let mut j1 = nalgebra::SMatrix::<f64, 12, 6>::zeros();
    j1.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    for i in 0..3 {
        j1.fixed_view_mut::<3, 3>(3 + 3 * i, 3).copy_from(&hat(&t.e.r_e.row(i).transpose()));
    }
    let v = zeta.fixed_rows::<3>(0).into_owned();
    let w = zeta.fixed_rows::<3>(3).into_owned();
    let p_e_dot = r * v - rf.r * rf.v;
    let r_e_dot = -hat(&rf.w) * t.e.r_e + t.e.r_e * hat(&w);
    let mut qe_dot = Vector12::zeros();
    qe_dot.fixed_rows_mut::<3>(0).copy_from(&p_e_dot);
    for i in 0..3 {
        qe_dot.fixed_rows_mut::<3>(3 + 3 * i).copy_from(&r_e_dot.row(i).transpose());
    }
    let r_kin = j1 * dh_dpe - qe_dot;
    let w_full = t.bracket - gains.k_d * dh_dpe;
    let proj = Matrix6::identity() - t.g * t.g_pinv;
    let eig = SymmetricEigen::new((proj + proj.transpose()) * 0.5);
    let rows: Vec<f64> =
        (0..6).filter(|&i| eig.eigenvalues[i] > 0.5).map(|i| eig.eigenvectors.column(i).dot(&w_full)).collect();
    Ok(MatchingResiduals { r_kin, r_ann: DVector::from_vec(rows) })
}
