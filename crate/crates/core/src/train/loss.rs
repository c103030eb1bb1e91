//! Observation-space and state-space window losses.

use serde::{Deserialize, Serialize};

use super::dataset::Window;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{q_var, BoundModel, HamiltonianModel};
use crate::ode::rollout_graph;
use crate::percept::chain_transform_var;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Cycle consistency of corresponding scan points.
    #[default]
    Observation,
    /// Distance to true states (simulated data only).
    State,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub mode: LossMode,
    pub lambda_g: f64,
    pub substeps: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { mode: LossMode::Observation, lambda_g: 1e-3, substeps: crate::ode::DEFAULT_SUBSTEPS }
    }
}

/// Data and regularization parts of one window's loss, as recorded values.
pub struct WindowLoss<'t> {
    pub data: Var<'t>,
    pub reg: Var<'t>,
}

impl<'t> WindowLoss<'t> {
    pub fn total(&self) -> Var<'t> {
        self.data + self.reg
    }
}

fn l1<'t>(x: Var<'t>) -> Var<'t> {
    (x.relu() + x.scale(-1.0).relu()).sum()
}

/// Records the loss of `w` on `tape`.
pub fn window_loss<'t>(
    bound: &BoundModel<'_, 't>,
    tape: &'t Tape,
    w: &Window,
    cfg: &LossConfig,
) -> Result<WindowLoss<'t>> {
    let q0 = q_var(tape, &w.x0.q);
    let zeta0 = tape.row(w.x0.zeta.pack().as_slice());
    let p0 = zeta0.matmul(bound.mass(q0));
    let x0 = Var::concat(&[q0, p0], 1);
    let states = rollout_graph(bound, tape, x0, &w.controls, w.dt, cfg.substeps)?;
    let mut data = tape.scalar(0.0);
    match cfg.mode {
        LossMode::Observation => {
            if w.pairs.len() != w.steps() {
                return Err(Error::CountMismatch { expected: w.steps(), found: w.pairs.len() });
            }
            for (n, pair) in w.pairs.iter().enumerate() {
                let ya = tape.leaf(pair.a.to_tensor());
                let yb = tape.leaf(pair.b.to_tensor());
                let pred = chain_transform_var(ya, states[n].cols(0, 12), states[n + 1].cols(0, 12));
                data = data + (yb - pred).square_norm();
            }
        }
        LossMode::State => {
            let truth = w.truth.as_ref().ok_or(Error::MissingStates(w.record))?;
            for (x, t) in states.iter().zip(truth).skip(1) {
                let q = x.cols(0, 12);
                let zeta = x.cols(12, 6).matmul(bound.mass_inv(q)?);
                let p_true = tape.row(t.q.p.as_slice());
                let r_true = tape.leaf(Tensor::from_matrix(t.q.r.matrix()));
                let z_true = tape.row(t.zeta.pack().as_slice());
                let pos = (q.cols(0, 3) - p_true).square_norm();
                let rot = (q.cols(3, 9).reshape([3, 3]) * r_true).sum().scale(-1.0).offset(3.0);
                let vel = (zeta - z_true).square_norm();
                data = data + pos + rot + vel;
            }
        }
    }
    let reg = match bound.gain_residual(q0) {
        Some(g) if cfg.lambda_g != 0.0 => l1(g).scale(cfg.lambda_g),
        _ => tape.scalar(0.0),
    };
    Ok(WindowLoss { data, reg })
}

/// Loss value and parameter gradients of one window.
#[derive(Clone, Debug)]
pub struct WindowEval {
    pub data: f64,
    pub reg: f64,
    pub grads: Option<Vec<Tensor>>,
}

impl WindowEval {
    pub fn total(&self) -> f64 {
        self.data + self.reg
    }
}

pub fn evaluate_window(model: &HamiltonianModel, w: &Window, cfg: &LossConfig, with_grad: bool) -> Result<WindowEval> {
    let tape = Tape::new();
    let params = model.params().bind(&tape);
    let bound = BoundModel::with_params(model, &tape, params.clone());
    let loss = window_loss(&bound, &tape, w, cfg)?;
    let total = loss.total();
    let grads = if with_grad { Some(tape.gradients(total, &params)?) } else { None };
    Ok(WindowEval { data: loss.data.item(), reg: loss.reg.item(), grads })
}

#[cfg(feature = "parallel")]
fn map_windows<T: Send>(ws: &[Window], f: impl Fn(&Window) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    ws.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_windows<T: Send>(ws: &[Window], f: impl Fn(&Window) -> T + Sync + Send) -> Vec<T> {
    ws.iter().map(f).collect()
}

/// Summed loss over windows, with gradients summed in window order.
pub fn evaluate_windows(
    model: &HamiltonianModel,
    ws: &[Window],
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<WindowEval> {
    let evals = map_windows(ws, |w| evaluate_window(model, w, cfg, with_grad));
    let mut acc = WindowEval { data: 0.0, reg: 0.0, grads: None };
    for e in evals {
        let e = e?;
        acc.data += e.data;
        acc.reg += e.reg;
        if let Some(g) = e.grads {
            match &mut acc.grads {
                None => acc.grads = Some(g),
                Some(sum) => {
                    for (s, gi) in sum.iter_mut().zip(&g) {
                        s.add_assign(gi)?;
                    }
                }
            }
        }
    }
    Ok(acc)
}

/// Observation loss plus regularization summed over windows.
pub fn total_observation_loss(model: &HamiltonianModel, ws: &[Window], lambda_g: f64, substeps: usize) -> Result<f64> {
    let cfg = LossConfig { mode: LossMode::Observation, lambda_g, substeps };
    Ok(evaluate_windows(model, ws, &cfg, false)?.total())
}

/// State loss plus regularization summed over windows.
pub fn total_state_loss(model: &HamiltonianModel, ws: &[Window], lambda_g: f64, substeps: usize) -> Result<f64> {
    let cfg = LossConfig { mode: LossMode::State, lambda_g, substeps };
    Ok(evaluate_windows(model, ws, &cfg, false)?.total())
}
