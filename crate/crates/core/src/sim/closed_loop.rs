//! Closed-loop runs of the controller against the ground-truth plant.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{step_truth, GroundTruthParams, TruthState};
use crate::control::{ControlMode, Controller, ControllerGains, Reference};
use crate::error::{Error, Result};
use crate::geom::chordal_dist;
use crate::model::HamiltonianModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLoopConfig {
    pub duration: f64,
    /// Controller period; inputs are held between updates.
    pub dt: f64,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self { duration: 30.0, dt: 0.02 }
    }
}

/// One logged controller update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub p: Vector3<f64>,
    pub r: Matrix3<f64>,
    pub zeta: Vector6<f64>,
    pub u: Vector2<f64>,
    pub h_d: f64,
    pub pos_err: f64,
    /// `tr(I − R*ᵀR)`.
    pub chordal: f64,
    pub terminal: bool,
    pub p_ref: Vector3<f64>,
    pub yaw_ref: f64,
}

impl LogRow {
    pub fn yaw(&self) -> f64 {
        self.r[(1, 0)].atan2(self.r[(0, 0)])
    }

    /// Yaw error to `reference_yaw` in `[−π, π]`.
    pub fn heading_err(&self, reference_yaw: f64) -> f64 {
        let d = self.yaw() - reference_yaw;
        d.sin().atan2(d.cos())
    }
}

/// Drives the truth plant from `start` with the controller evaluated on
/// `model` at `1/cfg.dt` Hz.
pub fn run_closed_loop(
    model: &HamiltonianModel,
    plant: &GroundTruthParams,
    start: TruthState,
    reference: &Reference,
    gains: &ControllerGains,
    cfg: &ClosedLoopConfig,
) -> Result<Vec<LogRow>> {
    if !(cfg.dt > 0.0 && cfg.duration >= 0.0) {
        return Err(Error::Config("closed loop needs dt > 0 and duration >= 0".into()));
    }
    plant.validate()?;
    reference.validate()?;
    let mut controller = Controller::new(*gains)?;
    let steps = (cfg.duration / cfg.dt).round() as usize;
    let mut s = start;
    let mut log = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let t = n as f64 * cfg.dt;
        let rf = reference.sample(t);
        let rigid = s.to_rigid(model);
        let out = controller.control(model, &rigid, &rf)?;
        let r = *rigid.q.r.matrix();
        log.push(LogRow {
            t,
            p: rigid.q.p,
            r,
            zeta: s.twist().pack(),
            u: out.u,
            h_d: out.h_d,
            pos_err: (rigid.q.p - rf.p).norm(),
            chordal: chordal_dist(&rf.r, &r),
            terminal: out.mode == ControlMode::Terminal,
            p_ref: rf.p,
            yaw_ref: rf.yaw(),
        });
        if n < steps {
            s = step_truth(plant, &s, &out.u, cfg.dt)?;
        }
    }
    Ok(log)
}

/// RMS of the logged position errors.
pub fn rms_position_error(log: &[LogRow]) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    (log.iter().map(|r| r.pos_err * r.pos_err).sum::<f64>() / log.len() as f64).sqrt()
}

pub const LOG_HEADER: [&str; 29] = [
    "t",
    "px",
    "py",
    "pz",
    "r11",
    "r12",
    "r13",
    "r21",
    "r22",
    "r23",
    "r31",
    "r32",
    "r33",
    "vx",
    "vy",
    "vz",
    "wx",
    "wy",
    "wz",
    "u_left",
    "u_right",
    "h_d",
    "pos_err",
    "chordal_err",
    "terminal",
    "yaw",
    "x_ref",
    "y_ref",
    "yaw_ref",
];

pub fn write_log_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
    let csv_err = |e: csv::Error| Error::Parse { path: path.into(), message: e.to_string() };
    w.write_record(LOG_HEADER).map_err(csv_err)?;
    for row in log {
        let mut rec = vec![row.t];
        rec.extend(row.p.iter());
        for i in 0..3 {
            rec.extend(row.r.row(i).iter());
        }
        rec.extend(row.zeta.iter());
        rec.extend(row.u.iter());
        rec.extend([row.h_d, row.pos_err, row.chordal, f64::from(u8::from(row.terminal))]);
        rec.extend([row.yaw(), row.p_ref.x, row.p_ref.y, row.yaw_ref]);
        w.write_record(rec.iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn stabilizes_from_a_corner() {
        let plant = GroundTruthParams::unit(1.25);
        let model =
            plant.equivalent_model(super::super::LATERAL_DAMPING, ModelConfig { hidden: 4, ..Default::default() });
        let log = run_closed_loop(
            &model,
            &plant,
            TruthState::at_rest(2.0, 2.0, 0.0),
            &Reference::Fixed { x: 0.0, y: 0.0, yaw: 0.0 },
            &ControllerGains::paper(),
            &ClosedLoopConfig::default(),
        )
        .unwrap();
        let last = log.last().unwrap();
        assert!(last.pos_err < 0.05 && last.chordal < 0.01, "{} {}", last.pos_err, last.chordal);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_log_csv(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), log.len() + 1);
        assert!(text.starts_with("t,px,py,pz,r11"));
    }
}
