//! Reference trajectories with analytic body-frame velocities and their rates.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::Rotation;

/// Desired pose, body-frame twist and body-frame twist rate at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefSample {
    pub p: Vector3<f64>,
    pub r: Matrix3<f64>,
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
    pub v_dot: Vector3<f64>,
    pub w_dot: Vector3<f64>,
}

impl RefSample {
    /// World-frame velocity `R* v*`.
    pub fn p_dot(&self) -> Vector3<f64> {
        self.r * self.v
    }

    pub fn yaw(&self) -> f64 {
        self.r[(1, 0)].atan2(self.r[(0, 0)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Reference {
    /// A constant planar pose.
    Fixed { x: f64, y: f64, yaw: f64 },
    /// Counter-clockwise circle starting at `center + [radius, 0]`.
    Circle { center: [f64; 2], radius: f64, speed: f64 },
    /// Figure eight `x = a sin(ct)`, `y = a/2 sin(2ct)` about `center`.
    Lemniscate { center: [f64; 2], size: f64, rate: f64 },
}

impl Reference {
    pub fn circle() -> Self {
        Reference::Circle { center: [0.0, 0.0], radius: 2.0, speed: 0.5 }
    }

    pub fn lemniscate() -> Self {
        Reference::Lemniscate { center: [0.0, 0.0], size: 2.0, rate: 0.15 }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = match *self {
            Reference::Fixed { x, y, yaw } => x.is_finite() && y.is_finite() && yaw.is_finite(),
            Reference::Circle { radius, speed, .. } => radius > 0.0 && speed.is_finite(),
            Reference::Lemniscate { size, rate, .. } => size > 0.0 && rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("invalid reference {self:?}")))
        }
    }

    pub fn sample(&self, t: f64) -> RefSample {
        match *self {
            Reference::Fixed { x, y, yaw } => planar(Vector3::new(x, y, 0.0), yaw, 0.0, 0.0, 0.0, 0.0),
            Reference::Circle { center, radius, speed } => {
                let rate = speed / radius;
                let phi = rate * t;
                let p = Vector3::new(center[0] + radius * phi.cos(), center[1] + radius * phi.sin(), 0.0);
                planar(p, phi + std::f64::consts::FRAC_PI_2, speed, rate, 0.0, 0.0)
            }
            Reference::Lemniscate { center, size: a, rate: c } => {
                let (s1, c1) = (c * t).sin_cos();
                let (s2, c2) = (2.0 * c * t).sin_cos();
                let p = Vector3::new(center[0] + a * s1, center[1] + 0.5 * a * s2, 0.0);
                let (xd, yd) = (a * c * c1, a * c * c2);
                let (xdd, ydd) = (-a * c * c * s1, -2.0 * a * c * c * s2);
                let (xddd, yddd) = (-a * c.powi(3) * c1, -4.0 * a * c.powi(3) * c2);
                let s2n = xd * xd + yd * yd;
                let speed = s2n.sqrt();
                let cross = xd * ydd - yd * xdd;
                let omega = cross / s2n;
                let speed_dot = (xd * xdd + yd * ydd) / speed;
                let omega_dot = (xd * yddd - yd * xddd) / s2n - 2.0 * cross * (xd * xdd + yd * ydd) / (s2n * s2n);
                planar(p, yd.atan2(xd), speed, omega, speed_dot, omega_dot)
            }
        }
    }
}

fn planar(p: Vector3<f64>, yaw: f64, speed: f64, omega: f64, speed_dot: f64, omega_dot: f64) -> RefSample {
    RefSample {
        p,
        r: *Rotation::from_yaw(yaw).matrix(),
        v: Vector3::new(speed, 0.0, 0.0),
        w: Vector3::new(0.0, 0.0, omega),
        v_dot: Vector3::new(speed_dot, 0.0, 0.0),
        w_dot: Vector3::new(0.0, 0.0, omega_dot),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::vee_unchecked;

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for r in [Reference::circle(), Reference::lemniscate(), Reference::Fixed { x: 1.0, y: -2.0, yaw: 0.3 }] {
            for k in 0..40 {
                let t = 0.37 * k as f64;
                let (a, b, s) = (r.sample(t - h), r.sample(t + h), r.sample(t));
                let p_dot = (b.p - a.p) / (2.0 * h);
                assert!((p_dot - s.p_dot()).norm() < 1e-6, "{r:?} {t}");
                let w_hat = s.r.transpose() * (b.r - a.r) / (2.0 * h);
                assert!((vee_unchecked(&w_hat) - s.w).norm() < 1e-6);
                assert!(((b.v - a.v) / (2.0 * h) - s.v_dot).norm() < 1e-6);
                assert!(((b.w - a.w) / (2.0 * h) - s.w_dot).norm() < 1e-6);
                assert!((s.r.transpose() * s.r - Matrix3::identity()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn circle_geometry() {
        let r = Reference::circle();
        let s = r.sample(0.0);
        assert!((s.p - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((s.p_dot() - Vector3::new(0.0, 0.5, 0.0)).norm() < 1e-12);
        assert!((s.w.z - 0.25).abs() < 1e-12);
    }
}
