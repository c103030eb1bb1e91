//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a flat `Float64Array`; the layouts are documented on
//! each function. The same functions are callable natively.

use hamlearn::control::{shaped_potential, ControllerGains, ErrorState, Reference};
use hamlearn::geom::{GeneralizedCoord, Rotation};
use hamlearn::model::ModelConfig;
use hamlearn::percept::{lidar_scan as scan, LidarConfig};
use hamlearn::sim::{run_closed_loop, ClosedLoopConfig, EnvMap, GroundTruthParams, TruthState, LATERAL_DAMPING};
use nalgebra::{Vector3, Vector6};
use wasm_bindgen::prelude::*;

/// Values per row of [`stabilize`].
pub const STABILIZE_STRIDE: usize = 7;

fn js_err(e: hamlearn::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Closed-loop stabilization of the simulated robot from `(x, y, yaw°)` to
/// the origin at heading 0, with the controller on the plant's own model.
///
/// Rows of `[t, x, y, yaw, pos_err, u_left, u_right]` at 50 Hz.
pub fn stabilize_native(x: f64, y: f64, yaw_deg: f64, duration: f64) -> hamlearn::Result<Vec<f64>> {
    let plant = GroundTruthParams::unit(1.25);
    let model = plant.equivalent_model(LATERAL_DAMPING, ModelConfig { hidden: 1, ..Default::default() });
    let cfg = ClosedLoopConfig { duration: duration.clamp(0.0, 120.0), dt: 0.02 };
    let log = run_closed_loop(
        &model,
        &plant,
        TruthState::at_rest(x, y, yaw_deg.to_radians()),
        &Reference::Fixed { x: 0.0, y: 0.0, yaw: 0.0 },
        &ControllerGains::paper(),
        &cfg,
    )?;
    Ok(log.iter().flat_map(|r| [r.t, r.p.x, r.p.y, r.yaw(), r.pos_err, r.u.x, r.u.y]).collect())
}

#[wasm_bindgen]
pub fn stabilize(x: f64, y: f64, yaw_deg: f64, duration: f64) -> Result<Vec<f64>, JsError> {
    stabilize_native(x, y, yaw_deg, duration).map_err(js_err)
}

/// World-frame `[x, y]` pairs of one noisy scan of the default room taken at
/// `(x, y, yaw°)`.
#[wasm_bindgen]
pub fn lidar_scan(x: f64, y: f64, yaw_deg: f64, beams: usize, seed: u64) -> Vec<f64> {
    let pose = GeneralizedCoord::planar(x, y, yaw_deg.to_radians());
    let cfg = LidarConfig { beams: beams.clamp(1, 4096), ..Default::default() };
    let cloud = scan(&EnvMap::default_room(), &pose, &cfg, 0.0, seed);
    let r = pose.r.matrix();
    cloud
        .points
        .iter()
        .flat_map(|p| {
            let w = r * p + pose.p;
            [w.x, w.y]
        })
        .collect()
}

/// Default room as `[x0, y0, x1, y1]` segments, box edges included.
#[wasm_bindgen]
pub fn room_segments() -> Vec<f64> {
    let env = EnvMap::default_room();
    let mut out: Vec<f64> = env.walls.iter().flat_map(|s| [s.from[0], s.from[1], s.to[0], s.to[1]]).collect();
    for b in &env.boxes {
        let (x0, y0, x1, y1) = (b.min[0], b.min[1], b.max[0], b.max[1]);
        out.extend([x0, y0, x1, y0, x1, y0, x1, y1, x1, y1, x0, y1, x0, y1, x0, y0]);
    }
    out
}

/// Shaped potential `V_d` on an `n × n` grid over `[−extent, extent]²` for a
/// robot at heading `yaw°`, target at the origin with heading
/// `target_yaw°`. Row-major from `(−extent, −extent)`; `NaN` at the
/// singular target point.
#[wasm_bindgen]
pub fn potential_field(yaw_deg: f64, target_yaw_deg: f64, n: usize, extent: f64) -> Vec<f64> {
    let n = n.clamp(2, 512);
    let gains = ControllerGains::paper();
    let r_star = *Rotation::from_yaw(target_yaw_deg.to_radians()).matrix();
    let r = *Rotation::from_yaw(yaw_deg.to_radians()).matrix();
    let step = 2.0 * extent / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let p_e = Vector3::new(-extent + j as f64 * step, -extent + i as f64 * step, 0.0);
            let e = ErrorState { p_e, r_e: r_star.transpose() * r, r_star, pm_e: Vector6::zeros() };
            out.push(shaped_potential(&e, &gains).map(|t| t.vd).unwrap_or(f64::NAN));
        }
    }
    out
}
