//! Fixed-step RK4 integration of the Hamiltonian model, numeric and recorded.

use nalgebra::{Matrix3, SVector, Vector2, SVD};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{orthogonality_error, GeneralizedCoord, Rotation};
use crate::model::{BoundModel, HamiltonianModel, RigidState};

pub const DEFAULT_SUBSTEPS: usize = 5;
/// Largest `|RRᵀ − I|_F` that [`reproject_rotation`] accepts.
pub const REPROJECT_LIMIT: f64 = 0.1;

/// States sampled at `times`, with `controls[n]` held on `[t_n, t_{n+1})`.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub times: Vec<f64>,
    pub states: Vec<RigidState>,
    pub controls: Vec<Vector2<f64>>,
}

/// One classical RK4 step of `ẋ = f(x)`.
pub fn rk4_step_with<const N: usize>(
    mut f: impl FnMut(&SVector<f64, N>) -> Result<SVector<f64, N>>,
    x: &SVector<f64, N>,
    dt: f64,
) -> Result<SVector<f64, N>> {
    let k1 = f(x)?;
    let k2 = f(&(x + k1 * (dt / 2.0)))?;
    let k3 = f(&(x + k2 * (dt / 2.0)))?;
    let k4 = f(&(x + k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// One RK4 step of the model under constant input `u`.
pub fn rk4_step(model: &HamiltonianModel, s: &RigidState, u: &Vector2<f64>, dt: f64) -> Result<RigidState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidTimes(format!("step {dt} is not positive")));
    }
    let x = rk4_step_with(|x| model.vector_field(&RigidState::unpack(x.as_slice()), u), &s.pack(), dt)?;
    Ok(RigidState::unpack(x.as_slice()))
}

/// Checks that `times` is a uniform, increasing grid matching `controls`.
pub fn uniform_step(times: &[f64], controls: usize) -> Result<f64> {
    if times.len() != controls + 1 {
        return Err(Error::InvalidTimes(format!("{} times for {controls} controls", times.len())));
    }
    if times.len() < 2 {
        return Ok(0.0);
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::InvalidTimes("times are not increasing".into()));
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::InvalidTimes("times are not uniformly spaced".into()));
        }
    }
    Ok(dt)
}

/// Integrates the model through `controls`, `substeps` RK4 steps per interval.
pub fn rollout(
    model: &HamiltonianModel,
    s0: &RigidState,
    controls: &[Vector2<f64>],
    times: &[f64],
    substeps: usize,
) -> Result<Rollout> {
    let dt = uniform_step(times, controls.len())?;
    let k = substeps.max(1);
    let mut states = Vec::with_capacity(times.len());
    states.push(*s0);
    let mut s = *s0;
    for u in controls {
        for _ in 0..k {
            s = rk4_step(model, &s, u, dt / k as f64)?;
        }
        states.push(s);
    }
    Ok(Rollout { times: times.to_vec(), states, controls: controls.to_vec() })
}

/// One RK4 step recorded on the tape; `x` is a `[1, n]` row.
pub fn rk4_step_graph<'t>(field: &impl Fn(Var<'t>) -> Result<Var<'t>>, x: Var<'t>, dt: f64) -> Result<Var<'t>> {
    let k1 = field(x)?;
    let k2 = field(x + k1.scale(dt / 2.0))?;
    let k3 = field(x + k2.scale(dt / 2.0))?;
    let k4 = field(x + k3.scale(dt))?;
    Ok(x + (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(dt / 6.0))
}

/// The model field on packed `[1, 18]` rows `[q p]`.
pub fn packed_field<'t>(model: &BoundModel<'_, 't>, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
    let (qd, pd) = model.field(x.cols(0, 12), x.cols(12, 6), u)?;
    Ok(Var::concat(&[qd, pd], 1))
}

/// Differentiable rollout; returns the packed state at every sample time.
pub fn rollout_graph<'t>(
    model: &BoundModel<'_, 't>,
    tape: &'t Tape,
    x0: Var<'t>,
    controls: &[Vector2<f64>],
    dt: f64,
    substeps: usize,
) -> Result<Vec<Var<'t>>> {
    let k = substeps.max(1);
    let h = dt / k as f64;
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(x0);
    let mut x = x0;
    for u in controls {
        let uv = tape.leaf(Tensor::row(u.as_slice()));
        let field = |x: Var<'t>| packed_field(model, x, uv);
        for _ in 0..k {
            x = rk4_step_graph(&field, x, h)?;
        }
        out.push(x);
    }
    Ok(out)
}

/// Nearest rotation (polar factor) to a drifted matrix.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let err = orthogonality_error(m);
    if !(err < REPROJECT_LIMIT) {
        return Err(Error::TooFarFromSO3(err));
    }
    let svd = SVD::new(*m, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        let mut col = u.column_mut(2);
        col *= -1.0;
        r = u * v_t;
    }
    Ok(r)
}

/// Replaces the rotation block of `s` by its polar factor. Never used inside
/// recorded graphs.
pub fn reproject_rotation(s: &RigidState) -> Result<RigidState> {
    let r = nearest_rotation(s.q.r.matrix())?;
    Ok(RigidState::new(GeneralizedCoord::new(s.q.p, Rotation::new_unchecked(r)), s.pm))
}
