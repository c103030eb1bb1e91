use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Frame, PointCloud};
use crate::geom::GeneralizedCoord;
use crate::sim::EnvMap;

/// Planar scanner settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub beams: usize,
    pub max_range: f64,
    pub height: f64,
    pub noise_sigma: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self { beams: 360, max_range: 30.0, height: 0.3, noise_sigma: 0.01 }
    }
}

/// Casts `cfg.beams` rays at uniformly spaced body azimuths and returns the
/// hits in the body frame at `z = cfg.height`. Misses are dropped.
pub fn lidar_scan(world: &EnvMap, pose: &GeneralizedCoord, cfg: &LidarConfig, time: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("sigma is finite");
    let origin = Vector2::new(pose.p.x, pose.p.y);
    let r = pose.r.matrix();
    let mut points = Vec::with_capacity(cfg.beams);
    for k in 0..cfg.beams.max(1) {
        let az = std::f64::consts::TAU * k as f64 / cfg.beams.max(1) as f64;
        let body = Vector3::new(az.cos(), az.sin(), 0.0);
        let w = r * body;
        let dir = Vector2::new(w.x, w.y);
        let n = dir.norm();
        if n < 1e-9 {
            continue;
        }
        let Some(range) = world.raycast(&origin, &(dir / n), cfg.max_range) else {
            continue;
        };
        // Planar range along the tilted beam.
        let rho = range / n + if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        points.push(Vector3::new(rho * body.x, rho * body.y, cfg.height));
    }
    PointCloud::new(points, Frame::Body, time)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_beams_in_square_room() {
        let env = EnvMap::square_room(10.0);
        let cfg = LidarConfig { beams: 4, noise_sigma: 0.0, ..Default::default() };
        let c = lidar_scan(&env, &GeneralizedCoord::planar(0.0, 0.0, 0.0), &cfg, 0.0, 1);
        let want = [[5.0, 0.0], [0.0, 5.0], [-5.0, 0.0], [0.0, -5.0]];
        assert_eq!(c.len(), 4);
        for (p, w) in c.points.iter().zip(want) {
            assert!((p.x - w[0]).abs() < 1e-12 && (p.y - w[1]).abs() < 1e-12 && p.z == 0.3);
        }
        let short = LidarConfig { max_range: 1.0, ..cfg };
        assert!(lidar_scan(&env, &GeneralizedCoord::planar(0.0, 0.0, 0.0), &short, 0.0, 1).is_empty());
    }

    #[test]
    fn body_frame_follows_heading() {
        let env = EnvMap::square_room(10.0);
        let cfg = LidarConfig { beams: 4, noise_sigma: 0.0, ..Default::default() };
        let c = lidar_scan(&env, &GeneralizedCoord::planar(1.0, 0.0, std::f64::consts::FRAC_PI_2), &cfg, 0.0, 1);
        // Body +x looks along world +y (5 m), body +y along world -x (6 m).
        assert!((c.points[0].x - 5.0).abs() < 1e-12);
        assert!((c.points[1].y - 6.0).abs() < 1e-12);
    }

    #[test]
    fn range_noise_has_expected_mean_absolute_error() {
        let env = EnvMap::square_room(10.0);
        let cfg = LidarConfig::default();
        let clean = lidar_scan(
            &env,
            &GeneralizedCoord::planar(0.3, -0.2, 0.1),
            &LidarConfig { noise_sigma: 0.0, ..cfg },
            0.0,
            0,
        );
        let mut total = 0.0;
        let mut count = 0;
        for seed in 0..28 {
            let noisy = lidar_scan(&env, &GeneralizedCoord::planar(0.3, -0.2, 0.1), &cfg, 0.0, seed);
            for (a, b) in noisy.points.iter().zip(&clean.points) {
                total += (a.xy().norm() - b.xy().norm()).abs();
                count += 1;
            }
        }
        let mae = total / count as f64;
        let want = 0.01 * (2.0 / std::f64::consts::PI).sqrt();
        assert!(count >= 10_000);
        assert!((mae - want).abs() < 0.0003, "mae {mae}");
    }
}
