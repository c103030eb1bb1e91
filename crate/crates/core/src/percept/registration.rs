//! Correspondence construction: exact re-observation, nearest-neighbour
//! matching under a known relative pose, and point-to-point ICP.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3, SVD};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Frame, PointCloud, RelPose, ScanPair};
use crate::error::{Error, Result};

/// How correspondences between consecutive scans are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Re-observe scan `a` points from the second pose (simulator oracle).
    #[default]
    Exact,
    /// Nearest neighbours after applying the known relative pose.
    Hint,
    /// Nearest neighbours after an ICP estimate of the relative pose.
    Estimate,
}

/// Least-squares rigid map with `r x_i + t ≈ y_i`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> RelPose {
    let n = src.len().max(1) as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (x, y) in src.iter().zip(dst) {
        h += (x - cs) * (y - cd).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    fix[(2, 2)] = (v * u.transpose()).determinant().signum();
    let r = v * fix * u.transpose();
    RelPose { r, t: cd - r * cs }
}

/// Uniform planar grid for nearest-neighbour queries within a fixed radius.
struct Grid<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Vector3<f64>], radius: f64) -> Self {
        let cell = radius.max(1e-6);
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (j, p) in points.iter().enumerate() {
            cells.entry(Self::key(cell, p)).or_default().push(j);
        }
        Self { points, cell, cells }
    }

    fn key(cell: f64, p: &Vector3<f64>) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Closest point to `q` no farther than the grid radius.
    fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        let (cx, cy) = Self::key(self.cell, q);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for &j in self.cells.get(&(cx + dx, cy + dy)).into_iter().flatten() {
                    let d = (self.points[j] - q).norm_squared();
                    if best.is_none_or(|b| d < b.1) {
                        best = Some((j, d));
                    }
                }
            }
        }
        best.map(|(j, d)| (j, d.sqrt())).filter(|b| b.1 <= self.cell)
    }
}

/// One-to-one nearest-neighbour matches of `rel(a)` into `b` within `thresh`,
/// accepted greedily from the closest.
fn match_points(a: &PointCloud, b: &PointCloud, rel: &RelPose, thresh: f64) -> Vec<(usize, usize)> {
    let grid = Grid::new(&b.points, thresh);
    let mut cands: Vec<(f64, usize, usize)> =
        a.points.iter().enumerate().filter_map(|(i, y)| grid.nearest(&rel.apply(y)).map(|(j, d)| (d, i, j))).collect();
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut used = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in cands {
        if !used[j] {
            used[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    pub rel: RelPose,
    pub iterations: usize,
    pub rms: f64,
}

/// Fills gaps shorter than `max_gap` between consecutive returns with points
/// at most `spacing` apart.
fn densify(points: &[Vector3<f64>], spacing: f64, max_gap: f64) -> Vec<Vector3<f64>> {
    let n = points.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (p, q) = (points[i], points[(i + 1) % n]);
        out.push(p);
        let gap = (q - p).norm();
        if gap < max_gap {
            let k = (gap / spacing).ceil() as usize;
            out.extend((1..k).map(|s| p + (q - p) * (s as f64 / k as f64)));
        }
    }
    out
}

/// Point-to-point ICP from `init`, rejecting pairs farther than `max_dist`.
/// The target scan is densified along consecutive returns so that the
/// estimate is not pulled towards the beam pattern of `a`.
pub fn icp(a: &PointCloud, b: &PointCloud, init: RelPose, max_dist: f64, max_iter: usize) -> Result<IcpResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::TooFewInliers { found: 0, needed: 3 });
    }
    let target = densify(&b.points, 0.01, 0.25);
    let grid = Grid::new(&target, max_dist);
    let mut rel = init;
    let mut rms = f64::INFINITY;
    for it in 1..=max_iter {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut sq = 0.0;
        for y in &a.points {
            let x = rel.apply(y);
            if let Some((j, d)) = grid.nearest(&x) {
                src.push(*y);
                dst.push(target[j]);
                sq += d * d;
            }
        }
        if src.len() < 3 {
            return Err(Error::TooFewInliers { found: src.len(), needed: 3 });
        }
        let next = kabsch(&src, &dst);
        let step = (next.r - rel.r).norm() + (next.t - rel.t).norm();
        rel = next;
        rms = (sq / src.len() as f64).sqrt();
        if step < 1e-10 {
            return Ok(IcpResult { rel, iterations: it, rms });
        }
    }
    Ok(IcpResult { rel, iterations: max_iter, rms })
}

fn select(a: &PointCloud, b: &PointCloud, matches: Vec<(usize, usize)>, m: usize, seed: u64) -> Result<ScanPair> {
    if matches.len() < m {
        return Err(Error::TooFewInliers { found: matches.len(), needed: m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, matches.len(), m).into_vec();
    picked.sort_unstable();
    let indices: Vec<(usize, usize)> = picked.iter().map(|&k| matches[k]).collect();
    let pa = indices.iter().map(|&(i, _)| a.points[i]).collect();
    let pb = indices.iter().map(|&(_, j)| b.points[j]).collect();
    Ok(ScanPair { a: PointCloud::new(pa, Frame::Body, a.time), b: PointCloud::new(pb, Frame::Body, b.time), indices })
}

/// `m` random one-to-one correspondences between two scans. With a hint the
/// relative pose is taken as known; otherwise it is estimated by ICP from
/// the identity, first with a wide rejection gate and then refined with
/// `inlier_thresh`.
pub fn make_scan_pair(
    a: &PointCloud,
    b: &PointCloud,
    hint: Option<&RelPose>,
    m: usize,
    inlier_thresh: f64,
    seed: u64,
) -> Result<ScanPair> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::TooFewInliers { found: 0, needed: m });
    }
    let rel = match hint {
        Some(h) => *h,
        None => {
            let coarse = icp(a, b, RelPose::identity(), (10.0 * inlier_thresh).max(0.5), 50)?.rel;
            icp(a, b, coarse, inlier_thresh, 50)?.rel
        }
    };
    select(a, b, match_points(a, b, &rel, inlier_thresh), m, seed)
}

/// Oracle pairs: `m` random points of `a` re-observed through the true
/// relative pose, with optional Gaussian noise on the re-observation.
pub fn exact_pair(
    a: &PointCloud,
    rel: &RelPose,
    time_b: f64,
    m: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<ScanPair> {
    let b = PointCloud::new(a.points.iter().map(|y| rel.apply(y)).collect(), Frame::Body, time_b);
    let mut pair = select(a, &b, (0..a.len()).map(|i| (i, i)).collect(), m, seed)?;
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let noise = Normal::new(0.0, noise_sigma).expect("sigma is finite");
        for p in &mut pair.b.points {
            *p += Vector3::from_fn(|_, _| noise.sample(&mut rng));
        }
    }
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{so3_exp, GeneralizedCoord};
    use crate::percept::{chain_transform, lidar_scan, LidarConfig};
    use crate::sim::EnvMap;

    fn scan(x: f64, y: f64, yaw: f64, sigma: f64, seed: u64) -> (GeneralizedCoord, PointCloud) {
        let q = GeneralizedCoord::planar(x, y, yaw);
        let cfg = LidarConfig { noise_sigma: sigma, ..Default::default() };
        (q, lidar_scan(&EnvMap::default_room(), &q, &cfg, 0.0, seed))
    }

    #[test]
    fn identical_clouds_self_match() {
        let (_, c) = scan(0.2, 0.1, 0.3, 0.0, 0);
        let pair = make_scan_pair(&c, &c, Some(&RelPose::identity()), 40, 0.1, 3).unwrap();
        assert_eq!(pair.len(), 40);
        for (i, j) in &pair.indices {
            assert_eq!(i, j);
        }
    }

    #[test]
    fn exact_transform_has_zero_residual() {
        let (_, c) = scan(0.2, 0.1, 0.3, 0.0, 0);
        let rel = RelPose { r: so3_exp(&Vector3::new(0.0, 0.0, 0.2)), t: Vector3::new(0.3, -0.1, 0.0) };
        let moved = PointCloud::new(c.points.iter().map(|y| rel.apply(y)).collect(), Frame::Body, 0.05);
        let pair = make_scan_pair(&c, &moved, Some(&rel), 40, 0.1, 1).unwrap();
        for (ya, yb) in pair.a.points.iter().zip(&pair.b.points) {
            assert!((rel.apply(ya) - yb).norm() < 1e-12);
        }
        let exact = exact_pair(&c, &rel, 0.05, 40, 0.0, 1).unwrap();
        assert_eq!(exact.b.points, pair.b.points);
    }

    #[test]
    fn too_few_inliers() {
        let (_, c) = scan(0.2, 0.1, 0.3, 0.0, 0);
        let far = RelPose { r: Matrix3::identity(), t: Vector3::new(3.0, 3.0, 0.0) };
        assert!(matches!(make_scan_pair(&c, &c, Some(&far), 40, 0.01, 1), Err(Error::TooFewInliers { .. })));
        assert!(matches!(
            exact_pair(&c, &RelPose::identity(), 0.0, c.len() + 1, 0.0, 0),
            Err(Error::TooFewInliers { .. })
        ));
    }

    #[test]
    fn kabsch_recovers_transform() {
        let pts: Vec<Vector3<f64>> =
            (0..20).map(|i| Vector3::new((i as f64).sin(), (i as f64 * 1.3).cos(), i as f64 * 0.1)).collect();
        let rel = RelPose { r: so3_exp(&Vector3::new(0.3, -0.2, 0.9)), t: Vector3::new(1.0, 2.0, -0.5) };
        let moved: Vec<_> = pts.iter().map(|p| rel.apply(p)).collect();
        let est = kabsch(&pts, &moved);
        assert!((est.r - rel.r).norm() < 1e-12 && (est.t - rel.t).norm() < 1e-12);
    }

    #[test]
    fn icp_and_estimate_mode_on_consecutive_scans() {
        let (qa, a) = scan(-0.5, 0.8, 0.4, 0.01, 10);
        let (qb, b) = scan(-0.5 + 0.025 * 0.4f64.cos(), 0.8 + 0.025 * 0.4f64.sin(), 0.42, 0.01, 11);
        let truth = RelPose::between(&qa, &qb);
        let est = icp(&a, &b, RelPose::identity(), 0.5, 50).unwrap();
        assert!((est.rel.t - truth.t).norm() < 0.02, "{:?}", est.rel.t - truth.t);
        let pair = make_scan_pair(&a, &b, None, 40, 0.1, 5).unwrap();
        let aligned = chain_transform(&pair.a, &qa, &qb);
        let good = aligned.points.iter().zip(&pair.b.points).filter(|(x, y)| (*x - *y).norm() < 0.05).count();
        assert!(good as f64 >= 0.9 * pair.len() as f64, "{good}");
    }

    #[test]
    fn icp_resolves_small_rotations_between_fixed_beam_patterns() {
        let (qa, a) = scan(0.3, -0.4, 0.1, 0.0, 0);
        let (qb, b) = scan(0.31, -0.4, 0.113, 0.0, 0);
        let truth = RelPose::between(&qa, &qb);
        let est = icp(&a, &b, RelPose::identity(), 0.5, 50).unwrap();
        let yaw = |r: &Matrix3<f64>| r[(1, 0)].atan2(r[(0, 0)]);
        assert!((yaw(&est.rel.r) - yaw(&truth.r)).abs() < 3e-3, "{} vs {}", yaw(&est.rel.r), yaw(&truth.r));
    }

    #[test]
    fn grid_matches_brute_force() {
        let (_, c) = scan(0.2, 0.1, 0.3, 0.01, 4);
        let grid = Grid::new(&c.points, 0.3);
        for k in 0..50 {
            let q = Vector3::new(-4.5 + 0.19 * k as f64, 4.0 - 0.17 * k as f64, 0.3);
            let brute = c
                .points
                .iter()
                .enumerate()
                .map(|(j, p)| (j, (p - q).norm()))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            assert_eq!(grid.nearest(&q), Some(brute).filter(|b| b.1 <= 0.3));
        }
    }
}
