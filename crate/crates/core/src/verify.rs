//! Batch property checks with measured errors against fixed tolerances.

use nalgebra::{Matrix3, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{
    direction_frame_derivative, direction_matrix, error_vector, matching_residuals, potential_gradients,
    shaped_potential, target_direction_frame, ControlMode, ControllerGains, ErrorState, Reference,
};
use crate::error::Result;
use crate::geom::{hat, orthogonality_error, q_cross, so3_exp, GeneralizedCoord, Rotation, Twist};
use crate::model::{HamiltonianModel, ModelConfig, RigidState};
use crate::ode::{rk4_step, rollout};
use crate::percept::LidarConfig;
use crate::sim::{collect_dataset, CollectConfig, EnvMap, GroundTruthParams};
use crate::train::{build_windows, evaluate_window, LossConfig, PairConfig};

/// Signature of the body-frame error vector, swappable for mutation tests.
pub type ErrorVectorFn = fn(&ErrorState, &ControllerGains) -> Result<Vector6<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub matching_states: usize,
    pub derivative_states: usize,
    pub gradient_params: usize,
    pub energy_duration: f64,
    pub energy_dt: f64,
    pub so3_steps: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            matching_states: 1000,
            derivative_states: 500,
            gradient_params: 200,
            energy_duration: 5.0,
            energy_dt: 1e-3,
            so3_steps: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.measured < self.tolerance
    }
}

pub fn format_report(results: &[CheckResult]) -> String {
    let mut s = format!("{:<22} {:>12} {:>10} {:>8}  result\n", "check", "measured", "tolerance", "samples");
    for r in results {
        s += &format!(
            "{:<22} {:>12.3e} {:>10.0e} {:>8}  {}\n",
            r.name,
            r.measured,
            r.tolerance,
            r.samples,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    s
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn truth_model(lateral: f64) -> HamiltonianModel {
    GroundTruthParams::unit(1.25).equivalent_model(lateral, ModelConfig { hidden: 8, ..Default::default() })
}

fn random_twist_state(model: &HamiltonianModel, rng: &mut ChaCha8Rng) -> RigidState {
    let q =
        GeneralizedCoord::planar(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.1..3.1));
    let z = Twist::new(
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.1..0.1), 0.0),
        Vector3::new(0.0, 0.0, rng.random_range(-1.0..1.0)),
    );
    RigidState::from_twist(model, q, &z)
}

/// `𝔮^× ζ` against `ṗ = R v`, `Ṙ = R ω̂` at random full 3D poses.
pub fn check_kinematics(cfg: &VerifyConfig) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.matching_states {
        let axis = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let q = GeneralizedCoord::new(
            Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
            Rotation::new_unchecked(so3_exp(&axis)),
        );
        let z = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let qd = q_cross(&q) * z;
        let r = q.r.matrix();
        let (v, w) = (z.fixed_rows::<3>(0).into_owned(), z.fixed_rows::<3>(3).into_owned());
        let pd = r * v;
        let rd = r * hat(&w);
        let mut err = (qd.fixed_rows::<3>(0) - pd).amax();
        for i in 0..3 {
            err = err.max((qd.fixed_rows::<3>(3 + 3 * i) - rd.row(i).transpose()).amax());
        }
        worst = worst.max(err);
    }
    CheckResult { name: "kinematics", measured: worst, tolerance: 1e-12, samples: cfg.matching_states }
}

/// Largest `‖r_kin‖∞` of the matching condition over random states and
/// references.
pub fn check_matching(cfg: &VerifyConfig) -> Result<CheckResult> {
    let model = truth_model(1e3);
    let gains = ControllerGains::paper();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let refs = [Reference::circle(), Reference::lemniscate(), Reference::Fixed { x: 0.0, y: 0.0, yaw: 0.0 }];
    let mut worst: f64 = 0.0;
    for k in 0..cfg.matching_states {
        let s = random_twist_state(&model, &mut rng);
        let rf = refs[k % refs.len()].sample(rng.random_range(0.0..60.0));
        let mode = if (s.q.p - rf.p).xy().norm() > 0.01 { ControlMode::Shaped } else { ControlMode::Terminal };
        let res = matching_residuals(&model, &s, &rf, &gains, mode)?;
        worst = worst.max(res.r_kin.amax());
    }
    Ok(CheckResult { name: "matching_residual", measured: worst, tolerance: 1e-10, samples: cfg.matching_states })
}

fn random_error_state(rng: &mut ChaCha8Rng) -> ErrorState {
    loop {
        let p_e = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0);
        if p_e.norm() < 0.1 {
            continue;
        }
        let r = *Rotation::from_yaw(rng.random_range(-3.1..3.1)).matrix();
        let r_star = *Rotation::from_yaw(rng.random_range(-3.1..3.1)).matrix();
        return ErrorState { p_e, r_e: r_star.transpose() * r, r_star, pm_e: Vector6::zeros() };
    }
}

/// The alignment rotations are piecewise constant in `p_e`; a central
/// difference is only meaningful where they do not switch inside the stencil.
fn fd_stable(e: &ErrorState, h: f64) -> Result<bool> {
    let f = target_direction_frame(&e.p_e, &e.r_star)?;
    for i in 0..2 {
        for s in [h, -h] {
            let mut p = e.p_e;
            p[i] += s;
            let g = target_direction_frame(&p, &e.r_star)?;
            if (g.r_d1 - f.r_d1).norm() > 1e-9 || (g.r_d2 - f.r_d2).norm() > 1e-9 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Analytic derivatives of the shaped potential against central differences:
/// `∂R(p_e)/∂p_ei`, `∂V_Rk/∂p_e`, `∂V_R1,3/∂R_e` and the error vector `e`.
pub fn check_potential_derivatives(cfg: &VerifyConfig, error_fn: ErrorVectorFn) -> Result<CheckResult> {
    let gains = ControllerGains::paper();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < cfg.derivative_states {
        let e = random_error_state(&mut rng);
        if !fd_stable(&e, h)? {
            continue;
        }
        checked += 1;
        for i in 0..3 {
            let (mut a, mut b) = (e.p_e, e.p_e);
            a[i] -= h;
            b[i] += h;
            let fd = (direction_matrix(&b)? - direction_matrix(&a)?) / (2.0 * h);
            let an = direction_frame_derivative(&e.p_e, i)?;
            worst = worst.max((fd - an).norm() / an.norm().max(1.0));
        }
        let an = potential_gradients(&e, &gains)?;
        for i in 0..3 {
            let (mut a, mut b) = (e, e);
            a.p_e[i] -= h;
            b.p_e[i] += h;
            let (ta, tb) = (shaped_potential(&a, &gains)?, shaped_potential(&b, &gains)?);
            let fd = [(tb.vr1 - ta.vr1) / (2.0 * h), (tb.vr2 - ta.vr2) / (2.0 * h), (tb.vr3 - ta.vr3) / (2.0 * h)];
            let ex = [an.dvr1_dp[i], an.dvr2_dp[i], an.dvr3_dp[i]];
            for k in 0..3 {
                worst = worst.max(rel_err(fd[k], ex[k], 1.0));
            }
        }
        for r in 0..3 {
            for c in 0..3 {
                let (mut a, mut b) = (e, e);
                a.r_e[(r, c)] -= h;
                b.r_e[(r, c)] += h;
                let (ta, tb) = (shaped_potential(&a, &gains)?, shaped_potential(&b, &gains)?);
                worst = worst.max(rel_err((tb.vr1 - ta.vr1) / (2.0 * h), an.dvr1_dre[(r, c)], 1.0));
                worst = worst.max(rel_err((tb.vr3 - ta.vr3) / (2.0 * h), an.dvr3_dre[(r, c)], 1.0));
            }
        }
        let ev = error_fn(&e, &gains)?;
        let fd_e = error_vector_fd(&e, &gains, h)?;
        for k in 0..6 {
            worst = worst.max(rel_err(ev[k], fd_e[k], 1.0));
        }
    }
    Ok(CheckResult { name: "potential_derivatives", measured: worst, tolerance: 1e-5, samples: checked })
}

/// `e_v = Rᵀ ∂V/∂p` and `e_ω` from `V(R exp(δ̂))` by central differences.
fn error_vector_fd(e: &ErrorState, gains: &ControllerGains, h: f64) -> Result<Vector6<f64>> {
    let r = e.r();
    let mut world = Vector3::zeros();
    for i in 0..3 {
        let (mut a, mut b) = (*e, *e);
        a.p_e[i] -= h;
        b.p_e[i] += h;
        world[i] = (shaped_potential(&b, gains)?.vd - shaped_potential(&a, gains)?.vd) / (2.0 * h);
    }
    let ev = r.transpose() * world;
    let mut ew = Vector3::zeros();
    for i in 0..3 {
        let mut d = Vector3::zeros();
        d[i] = h;
        let perturbed = |d: Vector3<f64>| -> Result<f64> {
            let mut x = *e;
            x.r_e = e.r_star.transpose() * r * so3_exp(&d);
            Ok(shaped_potential(&x, gains)?.vd)
        };
        ew[i] = (perturbed(d)? - perturbed(-d)?) / (2.0 * h);
    }
    Ok(Vector6::new(ev.x, ev.y, ev.z, ew.x, ew.y, ew.z))
}

/// Autodiff parameter gradients of one window loss against central
/// differences at `h = 1e-5`, over randomly drawn parameter entries.
pub fn check_loss_gradients(cfg: &VerifyConfig) -> Result<CheckResult> {
    let plant = GroundTruthParams::unit(1.25);
    let collect = CollectConfig {
        trajectories: 1,
        steps: 10,
        seed: cfg.seed,
        lidar: LidarConfig { beams: 90, noise_sigma: 0.0, ..Default::default() },
        ..Default::default()
    };
    let records = collect_dataset(&plant, &EnvMap::default_room(), &collect)?;
    let windows = build_windows(&records, 10, &PairConfig::default())?;
    let mut model =
        GroundTruthParams::unit(1.0).equivalent_model(50.0, ModelConfig { hidden: 8, ..Default::default() });
    model.randomize(0.05, cfg.seed.wrapping_add(3));
    let loss_cfg = LossConfig::default();
    let w = &windows[0];
    let grads = evaluate_window(&model, w, &loss_cfg, true)?.grads.expect("gradients requested");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(4));
    let n = model.params().len();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.gradient_params {
        let t = rng.random_range(0..n);
        let j = rng.random_range(0..model.params().value(t).data().len());
        let x0 = model.params().value(t).data()[j];
        let mut at = |x: f64| -> Result<f64> {
            model.params_mut().value_mut(t).data_mut()[j] = x;
            Ok(evaluate_window(&model, w, &loss_cfg, false)?.total())
        };
        let fd = (at(x0 + h)? - at(x0 - h)?) / (2.0 * h);
        at(x0)?;
        worst = worst.max(rel_err(grads[t].data()[j], fd, 1e-3));
    }
    Ok(CheckResult { name: "loss_gradients", measured: worst, tolerance: 1e-4, samples: cfg.gradient_params })
}

/// Relative energy drift of the undamped, unforced truth-equivalent model.
pub fn check_energy(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut plant = GroundTruthParams::unit(1.25);
    plant.d_v = 0.0;
    plant.d_omega = 0.0;
    let model = plant.equivalent_model(0.0, ModelConfig { hidden: 8, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(5));
    let pm = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let mut s = RigidState::new(GeneralizedCoord::planar(0.3, -0.2, 0.4), pm);
    let h0 = model.hamiltonian(&s)?;
    let steps = (cfg.energy_duration / cfg.energy_dt).round() as usize;
    for _ in 0..steps {
        s = rk4_step(&model, &s, &Vector2::zeros(), cfg.energy_dt)?;
    }
    let drift = (model.hamiltonian(&s)? - h0).abs() / h0.abs().max(1.0);
    Ok(CheckResult { name: "energy_conservation", measured: drift, tolerance: 1e-8, samples: steps })
}

/// Orthogonality and determinant drift of `R` over a rollout of `model`.
pub fn check_so3_rollout(model: &HamiltonianModel, cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(6));
    let dt = 0.05;
    let controls: Vec<Vector2<f64>> =
        (0..cfg.so3_steps).map(|_| Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let times: Vec<f64> = (0..=cfg.so3_steps).map(|k| k as f64 * dt).collect();
    let s0 = RigidState::from_twist(model, GeneralizedCoord::planar(0.0, 0.0, 0.3), &Twist::default());
    let roll = rollout(model, &s0, &controls, &times, 5)?;
    let mut worst: f64 = 0.0;
    for s in &roll.states {
        let r: &Matrix3<f64> = s.q.r.matrix();
        worst = worst.max(orthogonality_error(r)).max((r.determinant() - 1.0).abs());
    }
    Ok(CheckResult { name: "so3_constraint", measured: worst, tolerance: 1e-6, samples: roll.states.len() })
}

/// Runs every check; `model` is the subject of the rollout check.
pub fn run_suite(model: &HamiltonianModel, cfg: &VerifyConfig, error_fn: ErrorVectorFn) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_kinematics(cfg),
        check_matching(cfg)?,
        check_potential_derivatives(cfg, error_fn)?,
        check_loss_gradients(cfg)?,
        check_energy(cfg)?,
        check_so3_rollout(model, cfg)?,
    ])
}

/// Default suite with the library error vector.
pub fn run_default_suite(model: &HamiltonianModel, cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    run_suite(model, cfg, error_vector)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig {
            matching_states: 100,
            derivative_states: 50,
            gradient_params: 20,
            energy_duration: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn fast_suite_passes() {
        let model = truth_model(50.0);
        let results = run_default_suite(&model, &small()).unwrap();
        assert!(results.iter().all(CheckResult::passed), "{}", format_report(&results));
    }

    #[test]
    fn flipped_rotation_error_is_caught() {
        fn flipped(e: &ErrorState, g: &ControllerGains) -> Result<Vector6<f64>> {
            let mut v = error_vector(e, g)?;
            v.fixed_rows_mut::<3>(3).neg_mut();
            Ok(v)
        }
        let r = check_potential_derivatives(&small(), flipped).unwrap();
        assert!(!r.passed(), "{}", r.measured);
    }
}
