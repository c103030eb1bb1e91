//! Point clouds, simulated LiDAR, scan correspondences and the pose-chained
//! cycle-consistency transform.

mod io;
mod lidar;
mod registration;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::GeneralizedCoord;

pub use io::{read_scans_csv, write_scans_csv};
pub use lidar::{lidar_scan, LidarConfig};
pub use registration::{exact_pair, icp, kabsch, make_scan_pair, IcpResult, PairMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Body,
    World,
}

impl Frame {
    pub fn as_str(&self) -> &'static str {
        match self {
            Frame::Body => "body",
            Frame::World => "world",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame: Frame,
    pub time: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: Frame, time: f64) -> Self {
        Self { points, frame, time }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|x| x.is_finite()))
    }

    /// Points as an `[M, 3]` tensor, one point per row.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn([self.len(), 3], |i, j| self.points[i][j])
    }

    /// The cloud expressed in the world frame given the sensor pose.
    pub fn to_world(&self, pose: &GeneralizedCoord) -> PointCloud {
        let r = pose.r.matrix();
        let points = self.points.iter().map(|y| r * y + pose.p).collect();
        PointCloud::new(points, Frame::World, self.time)
    }
}

/// Rigid map between two body frames, `y_b = r y_a + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelPose {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl RelPose {
    pub fn identity() -> Self {
        Self { r: Matrix3::identity(), t: Vector3::zeros() }
    }

    /// The map taking body-frame points at `from` into the body frame at `to`.
    pub fn between(from: &GeneralizedCoord, to: &GeneralizedCoord) -> Self {
        let rt = to.r.matrix().transpose();
        Self { r: rt * from.r.matrix(), t: rt * (from.p - to.p) }
    }

    pub fn apply(&self, y: &Vector3<f64>) -> Vector3<f64> {
        self.r * y + self.t
    }

    pub fn inverse(&self) -> Self {
        let rt = self.r.transpose();
        Self { r: rt, t: -(rt * self.t) }
    }
}

/// Two clouds of equal size where `a.points[m]` corresponds to `b.points[m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanPair {
    pub a: PointCloud,
    pub b: PointCloud,
    /// Source indices `(index in scan a, index in scan b)` of each pair.
    pub indices: Vec<(usize, usize)>,
}

impl ScanPair {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Moves body-frame points observed at `pose_n` into the body frame at `pose_next`.
pub fn chain_transform(cloud: &PointCloud, pose_n: &GeneralizedCoord, pose_next: &GeneralizedCoord) -> PointCloud {
    let rel = RelPose::between(pose_n, pose_next);
    let points = cloud.points.iter().map(|y| rel.apply(y)).collect();
    PointCloud::new(points, Frame::Body, cloud.time)
}

/// [`chain_transform`] on recorded values: `y` is `[M, 3]`, the poses are
/// packed `[1, 12]` generalized coordinates.
pub fn chain_transform_var<'t>(y: Var<'t>, q_n: Var<'t>, q_next: Var<'t>) -> Var<'t> {
    let m = y.shape()[0];
    let r_n = q_n.cols(3, 9).reshape([3, 3]);
    let r_next = q_next.cols(3, 9).reshape([3, 3]);
    let shift = (q_n.cols(0, 3) - q_next.cols(0, 3)).broadcast_to([m, 3]);
    (y.matmul(r_n.t()) + shift).matmul(r_next)
}

/// Sum of squared distances between corresponding points.
pub fn observation_loss(pair: &ScanPair, predicted: &PointCloud) -> Result<f64> {
    if predicted.len() != pair.b.len() {
        return Err(Error::CountMismatch { expected: pair.b.len(), found: predicted.len() });
    }
    Ok(pair.b.points.iter().zip(&predicted.points).map(|(y, yt)| (y - yt).norm_squared()).sum())
}

/// [`observation_loss`] on recorded values.
pub fn observation_loss_var<'t>(actual: Var<'t>, predicted: Var<'t>) -> Result<Var<'t>> {
    if actual.shape() != predicted.shape() {
        return Err(Error::CountMismatch { expected: actual.shape()[0], found: predicted.shape()[0] });
    }
    Ok((actual - predicted).square_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::geom::{so3_exp, Rotation};
    use proptest::prelude::*;

    fn pose(x: f64, y: f64, z: f64, w: [f64; 3]) -> GeneralizedCoord {
        GeneralizedCoord::new(Vector3::new(x, y, z), Rotation::new_unchecked(so3_exp(&Vector3::from(w))))
    }

    fn cloud() -> PointCloud {
        let pts = (0..7).map(|i| Vector3::new(i as f64 * 0.7 - 2.0, (i as f64).sin() * 3.0, 0.3)).collect();
        PointCloud::new(pts, Frame::Body, 0.0)
    }

    #[test]
    fn chain_examples() {
        let c = cloud();
        let a = pose(1.0, -2.0, 0.0, [0.0, 0.0, 0.8]);
        assert_eq!(
            chain_transform(&c, &a, &a).points.iter().zip(&c.points).map(|(x, y)| (x - y).norm()).sum::<f64>(),
            0.0
        );
        let d = Vector3::new(0.4, -0.3, 0.1);
        let b = GeneralizedCoord::new(a.p + d, a.r);
        let moved = chain_transform(&c, &a, &b);
        let shift = -(a.r.matrix().transpose() * d);
        for (x, y) in moved.points.iter().zip(&c.points) {
            assert!((x - y - shift).norm() < 1e-14);
        }
    }

    #[test]
    fn loss_examples() {
        let c = cloud();
        let pair = ScanPair { a: c.clone(), b: c.clone(), indices: (0..c.len()).map(|i| (i, i)).collect() };
        assert_eq!(observation_loss(&pair, &c).unwrap(), 0.0);
        let mut off = c.clone();
        off.points[2].x += 0.1;
        assert!((observation_loss(&pair, &off).unwrap() - 0.01).abs() < 1e-15);
        off.points.pop();
        assert!(matches!(observation_loss(&pair, &off), Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn recorded_chain_matches_numeric_and_is_stationary_at_truth() {
        let c = cloud();
        let a = pose(1.0, -2.0, 0.1, [0.1, -0.2, 0.8]);
        let b = pose(1.3, -1.8, 0.0, [0.0, 0.1, 1.1]);
        let want = chain_transform(&c, &a, &b);
        let tape = Tape::new();
        let y = tape.leaf(c.to_tensor());
        let qa = tape.row(a.pack().as_slice());
        let qb = tape.row(b.pack().as_slice());
        let got = chain_transform_var(y, qa, qb);
        let diff = got.value().sub(&want.to_tensor()).unwrap().max_abs();
        assert!(diff < 1e-14);
        let loss = observation_loss_var(tape.leaf(want.to_tensor()), got).unwrap();
        let g = tape.gradients(loss, &[qb]).unwrap();
        assert!(g[0].data()[..3].iter().all(|x| x.abs() < 1e-8));
    }

    proptest! {
        #[test]
        fn chain_then_inverse_chain_is_identity(
            x in -5.0..5.0f64, y in -5.0..5.0f64, w in prop::array::uniform3(-1.5..1.5f64),
            x2 in -5.0..5.0f64, y2 in -5.0..5.0f64, w2 in prop::array::uniform3(-1.5..1.5f64),
        ) {
            let a = pose(x, y, 0.2, w);
            let b = pose(x2, y2, -0.1, w2);
            let c = cloud();
            let back = chain_transform(&chain_transform(&c, &a, &b), &b, &a);
            for (p, q) in back.points.iter().zip(&c.points) {
                prop_assert!((p - q).norm() < 1e-12);
            }
        }

        #[test]
        fn loss_is_gauge_invariant(
            w in prop::array::uniform3(-1.5..1.5f64), t in prop::array::uniform3(-3.0..3.0f64),
            yaw in -3.0..3.0f64,
        ) {
            let a = pose(0.5, 1.0, 0.0, [0.0, 0.0, yaw]);
            let b = pose(0.9, 0.7, 0.0, [0.0, 0.0, yaw + 0.3]);
            let c = cloud();
            let target = chain_transform(&c, &a, &pose(0.95, 0.6, 0.0, [0.0, 0.0, yaw + 0.2]));
            let pair = ScanPair { a: c.clone(), b: target, indices: (0..c.len()).map(|i| (i, i)).collect() };
            let base = observation_loss(&pair, &chain_transform(&c, &a, &b)).unwrap();
            let g = so3_exp(&Vector3::from(w));
            let t = Vector3::from(t);
            let move_pose = |q: &GeneralizedCoord| GeneralizedCoord::new(g * q.p + t, Rotation::new_unchecked(g * q.r.matrix()));
            let moved = observation_loss(&pair, &chain_transform(&c, &move_pose(&a), &move_pose(&b))).unwrap();
            prop_assert!((base - moved).abs() < 1e-10);
        }
    }
}
