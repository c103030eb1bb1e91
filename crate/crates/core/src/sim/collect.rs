//! Dataset collection with seeded low-pass random wheel excitation.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{step_truth, EnvMap, GroundTruthParams, TruthState};
use crate::error::{Error, Result};
use crate::geom::Twist;
use crate::model::{HamiltonianModel, RigidState};
use crate::ode::rk4_step;
use crate::percept::{lidar_scan, LidarConfig};
use crate::train::{InitialState, TrajectoryRecord};

/// Independent first-order low-pass Gaussian noise on each wheel input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Excitation {
    /// Standard deviation of each wheel input.
    pub amplitude: f64,
    pub cutoff_hz: f64,
    /// Constant offset added to both wheels.
    pub bias: f64,
}

impl Default for Excitation {
    fn default() -> Self {
        Self { amplitude: 0.5, cutoff_hz: 1.0, bias: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionPolicy {
    /// Keep the trajectory up to the collision and flag it.
    #[default]
    Truncate,
    /// Abort collection.
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub trajectories: usize,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub lidar: LidarConfig,
    pub excitation: Excitation,
    pub robot_radius: f64,
    /// Minimum obstacle clearance of start positions.
    pub start_clearance: f64,
    /// Start speeds are drawn from `[0, initial_speed]`.
    pub initial_speed: f64,
    /// Fresh attempts per trajectory before a collision is reported.
    pub retries: usize,
    pub on_collision: CollisionPolicy,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            trajectories: 32,
            steps: 250,
            dt: 0.05,
            seed: 0,
            lidar: LidarConfig::default(),
            excitation: Excitation::default(),
            robot_radius: 0.25,
            start_clearance: 1.5,
            initial_speed: 0.3,
            retries: 20,
            on_collision: CollisionPolicy::Truncate,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 {
            return Err(Error::Config("trajectories must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.lidar.beams == 0 || !(self.lidar.max_range > 0.0) || !(self.lidar.noise_sigma >= 0.0) {
            return Err(Error::Config("lidar needs beams >= 1, positive range and sigma >= 0".into()));
        }
        if !(self.excitation.amplitude >= 0.0 && self.excitation.cutoff_hz > 0.0) {
            return Err(Error::Config("excitation needs amplitude >= 0 and a positive cutoff".into()));
        }
        Ok(())
    }
}

fn start_state(env: &EnvMap, cfg: &CollectConfig, rng: &mut ChaCha8Rng) -> TruthState {
    let b = env.bounds;
    for _ in 0..10_000 {
        let p = Vector2::new(rng.random_range(b.min[0]..b.max[0]), rng.random_range(b.min[1]..b.max[1]));
        if env.clearance(&p) >= cfg.start_clearance && !env.collides(&p, cfg.robot_radius) {
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let v = rng.random_range(0.0..=cfg.initial_speed.max(0.0));
            return TruthState { x: p.x, y: p.y, yaw, v, omega: 0.0 };
        }
    }
    let c = Vector2::new(b.min[0] + b.max[0], b.min[1] + b.max[1]) / 2.0;
    TruthState::at_rest(c.x, c.y, 0.0)
}

/// A plant driven by the collector.
trait Plant {
    fn reset(&mut self, s: &TruthState);
    fn step(&mut self, u: &Vector2<f64>, dt: f64) -> Result<TruthState>;
}

struct TruthPlant<'a> {
    params: &'a GroundTruthParams,
    s: TruthState,
}

impl Plant for TruthPlant<'_> {
    fn reset(&mut self, s: &TruthState) {
        self.s = *s;
    }

    fn step(&mut self, u: &Vector2<f64>, dt: f64) -> Result<TruthState> {
        self.s = step_truth(self.params, &self.s, u, dt)?;
        Ok(self.s)
    }
}

struct ModelPlant<'a> {
    model: &'a HamiltonianModel,
    s: RigidState,
    substeps: usize,
}

impl Plant for ModelPlant<'_> {
    fn reset(&mut self, s: &TruthState) {
        self.s = s.to_rigid(self.model);
    }

    fn step(&mut self, u: &Vector2<f64>, dt: f64) -> Result<TruthState> {
        let k = self.substeps.max(1);
        for _ in 0..k {
            self.s = rk4_step(self.model, &self.s, u, dt / k as f64)?;
        }
        let z = self.s.velocity(self.model)?;
        Ok(TruthState { x: self.s.q.p.x, y: self.s.q.p.y, yaw: self.s.q.r.yaw(), v: z.v.x, omega: z.w.z })
    }
}

struct Attempt {
    states: Vec<TruthState>,
    controls: Vec<Vector2<f64>>,
    collided_at: Option<usize>,
}

fn simulate(plant: &mut dyn Plant, env: &EnvMap, cfg: &CollectConfig, rng: &mut ChaCha8Rng) -> Result<Attempt> {
    let s0 = start_state(env, cfg, rng);
    plant.reset(&s0);
    let ex = &cfg.excitation;
    let a = 1.0 - (-std::f64::consts::TAU * ex.cutoff_hz * cfg.dt).exp();
    let stationary = (a / (2.0 - a)).sqrt();
    let mut filt = Vector2::from_fn(|_, _| stationary * rng.sample::<f64, _>(StandardNormal));
    let mut states = vec![s0];
    let mut controls = Vec::with_capacity(cfg.steps);
    for n in 0..cfg.steps {
        let white = Vector2::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        filt += (white - filt) * a;
        let u = filt * (ex.amplitude / stationary) + Vector2::repeat(ex.bias);
        let s = plant.step(&u, cfg.dt)?;
        if env.collides(&Vector2::new(s.x, s.y), cfg.robot_radius) {
            return Ok(Attempt { states, controls, collided_at: Some(n + 1) });
        }
        controls.push(u);
        states.push(s);
    }
    Ok(Attempt { states, controls, collided_at: None })
}

/// Simulates `cfg.trajectories` records of `cfg.steps` steps with a scan at
/// every sample. Each trajectory is retried from a new start on collision.
pub fn collect_dataset(params: &GroundTruthParams, env: &EnvMap, cfg: &CollectConfig) -> Result<Vec<TrajectoryRecord>> {
    params.validate()?;
    collect_with(&mut TruthPlant { params, s: TruthState::default() }, env, cfg)
}

/// Like [`collect_dataset`] but with `model` as the plant, integrated with
/// `substeps` RK4 steps per sample. Stored truth drops lateral velocity.
pub fn collect_from_model(
    model: &HamiltonianModel,
    env: &EnvMap,
    cfg: &CollectConfig,
    substeps: usize,
) -> Result<Vec<TrajectoryRecord>> {
    let s = TruthState::default().to_rigid(model);
    collect_with(&mut ModelPlant { model, s, substeps }, env, cfg)
}

fn collect_with(plant: &mut dyn Plant, env: &EnvMap, cfg: &CollectConfig) -> Result<Vec<TrajectoryRecord>> {
    env.validate()?;
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.trajectories);
    for id in 0..cfg.trajectories {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(id as u64 + 1);
        let mut attempt = simulate(plant, env, cfg, &mut rng)?;
        for _ in 0..cfg.retries {
            if attempt.collided_at.is_none() {
                break;
            }
            attempt = simulate(plant, env, cfg, &mut rng)?;
        }
        if let Some(step) = attempt.collided_at {
            if cfg.on_collision == CollisionPolicy::Fail {
                return Err(Error::CollisionDuringCollection { trajectory: id, step });
            }
        }
        let times: Vec<f64> = (0..attempt.states.len()).map(|n| n as f64 * cfg.dt).collect();
        let scans = attempt
            .states
            .iter()
            .zip(&times)
            .map(|(s, &t)| lidar_scan(env, &s.pose(), &cfg.lidar, t, rng.random()))
            .collect();
        let s0 = attempt.states[0];
        records.push(TrajectoryRecord {
            id,
            times,
            controls: attempt.controls,
            scans,
            x0: InitialState {
                q: s0.pose(),
                zeta: Twist::new(Vector3::new(s0.v, 0.0, 0.0), Vector3::new(0.0, 0.0, s0.omega)),
            },
            truth: Some(attempt.states),
            collided_at: attempt.collided_at,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(d: usize, n: usize) -> CollectConfig {
        CollectConfig {
            trajectories: d,
            steps: n,
            lidar: LidarConfig { beams: 90, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn fencepost_and_determinism() {
        let p = GroundTruthParams::unit(1.25);
        let env = EnvMap::default_room();
        let a = collect_dataset(&p, &env, &small(1, 10)).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].scans.len(), 11);
        assert_eq!(a[0].controls.len(), 10);
        a[0].validate().unwrap();
        let b = collect_dataset(&p, &env, &small(1, 10)).unwrap();
        assert_eq!(a, b);
        let other = collect_dataset(&p, &env, &CollectConfig { seed: 1, ..small(1, 10) }).unwrap();
        assert_ne!(a[0].controls, other[0].controls);
    }

    #[test]
    fn zero_trajectories_is_a_config_error() {
        let r = collect_dataset(&GroundTruthParams::unit(1.0), &EnvMap::default_room(), &small(0, 10));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn paper_scale_collection() {
        let p = GroundTruthParams::unit(1.25);
        let cfg = CollectConfig { lidar: LidarConfig { beams: 60, ..Default::default() }, ..Default::default() };
        let data = collect_dataset(&p, &EnvMap::default_room(), &cfg).unwrap();
        assert_eq!(data.len(), 32);
        for rec in &data {
            assert_eq!(rec.collided_at, None);
            assert!((rec.times.last().unwrap() - 12.5).abs() < 1e-9);
        }
    }

    #[test]
    fn both_wheels_are_excited_independently() {
        let p = GroundTruthParams::unit(1.25);
        let data = collect_dataset(&p, &EnvMap::default_room(), &small(4, 200)).unwrap();
        let diffs: Vec<f64> = data.iter().flat_map(|r| r.controls.iter().map(|u| u.y - u.x)).collect();
        let sums: Vec<f64> = data.iter().flat_map(|r| r.controls.iter().map(|u| u.y + u.x)).collect();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        assert!(var(&diffs) > 0.05 && var(&sums) > 0.05);
    }
}
