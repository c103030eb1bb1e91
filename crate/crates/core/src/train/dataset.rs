//! Trajectory records, their on-disk form, and training windows.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{GeneralizedCoord, Twist};
use crate::percept::{
    exact_pair, make_scan_pair, read_scans_csv, write_scans_csv, PairMode, PointCloud, RelPose, ScanPair,
};
use crate::sim::TruthState;

pub const DATASET_FILE: &str = "dataset.jsonl";

/// Pose and body twist at the start of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialState {
    pub q: GeneralizedCoord,
    pub zeta: Twist,
}

/// One recorded trajectory: times, held controls, a scan per sample, the
/// initial state and, for simulated data, the true planar states.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub id: usize,
    pub times: Vec<f64>,
    pub controls: Vec<Vector2<f64>>,
    pub scans: Vec<PointCloud>,
    pub x0: InitialState,
    pub truth: Option<Vec<TruthState>>,
    /// Step at which the trajectory was cut short by a collision.
    pub collided_at: Option<usize>,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.controls.len();
        if self.times.len() != n + 1 || self.scans.len() != n + 1 {
            return Err(Error::Config(format!(
                "record {}: {} times, {} scans for {n} controls",
                self.id,
                self.times.len(),
                self.scans.len()
            )));
        }
        if self.scans.iter().zip(&self.times).any(|(s, t)| s.time != *t) {
            return Err(Error::Config(format!("record {}: scan timestamps differ from times", self.id)));
        }
        if let Some(truth) = &self.truth {
            if truth.len() != n + 1 {
                return Err(Error::Config(format!("record {}: {} truth states", self.id, truth.len())));
            }
        }
        crate::ode::uniform_step(&self.times, n)?;
        Ok(())
    }

    fn truth_or_err(&self) -> Result<&[TruthState]> {
        self.truth.as_deref().ok_or(Error::MissingStates(self.id))
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: usize,
    times: Vec<f64>,
    controls: Vec<[f64; 2]>,
    x0_pose: Vec<f64>,
    x0_twist: [f64; 6],
    scan_file: String,
    truth_file: Option<String>,
    collided_at: Option<usize>,
}

fn parse_err(path: &Path, message: impl ToString) -> Error {
    Error::Parse { path: path.to_path_buf(), message: message.to_string() }
}

/// Writes `dataset.jsonl` plus one scan CSV and one truth CSV per record.
pub fn write_dataset(dir: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = fs::File::create(dir.join(DATASET_FILE))?;
    for rec in records {
        let scan_file = format!("traj_{:03}_scans.csv", rec.id);
        write_scans_csv(&dir.join(&scan_file), &rec.scans)?;
        let truth_file = match &rec.truth {
            Some(truth) => {
                let name = format!("traj_{:03}_truth.csv", rec.id);
                let path = dir.join(&name);
                let mut w = csv::Writer::from_path(&path).map_err(|e| parse_err(&path, e))?;
                for (t, s) in rec.times.iter().zip(truth) {
                    w.serialize((t, s.x, s.y, s.yaw, s.v, s.omega)).map_err(|e| parse_err(&path, e))?;
                }
                w.flush()?;
                Some(name)
            }
            None => None,
        };
        let line = RecordLine {
            id: rec.id,
            times: rec.times.clone(),
            controls: rec.controls.iter().map(|u| [u.x, u.y]).collect(),
            x0_pose: rec.x0.q.pack().as_slice().to_vec(),
            x0_twist: rec.x0.zeta.pack().into(),
            scan_file,
            truth_file,
            collided_at: rec.collided_at,
        };
        writeln!(index, "{}", serde_json::to_string(&line).expect("record serializes"))?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Vec<TrajectoryRecord>> {
    let index_path = dir.join(DATASET_FILE);
    let file = fs::File::open(&index_path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine =
            serde_json::from_str(&line).map_err(|e| parse_err(&index_path, format!("line {}: {e}", lineno + 1)))?;
        if rec.x0_pose.len() != 12 {
            return Err(parse_err(&index_path, format!("line {}: pose must have 12 entries", lineno + 1)));
        }
        let scans = read_scans_csv(&dir.join(&rec.scan_file), &rec.times)?;
        let truth = match &rec.truth_file {
            Some(name) => {
                let path = dir.join(name);
                let mut r =
                    csv::ReaderBuilder::new().has_headers(false).from_path(&path).map_err(|e| parse_err(&path, e))?;
                let mut states = Vec::new();
                for row in r.deserialize() {
                    let (_, x, y, yaw, v, omega): (f64, f64, f64, f64, f64, f64) =
                        row.map_err(|e| parse_err(&path, e))?;
                    states.push(TruthState { x, y, yaw, v, omega });
                }
                Some(states)
            }
            None => None,
        };
        let record = TrajectoryRecord {
            id: rec.id,
            controls: rec.controls.iter().map(|u| Vector2::new(u[0], u[1])).collect(),
            scans,
            x0: InitialState { q: GeneralizedCoord::unpack(&rec.x0_pose), zeta: Twist::unpack(&rec.x0_twist) },
            truth,
            collided_at: rec.collided_at,
            times: rec.times,
        };
        record.validate().map_err(|e| parse_err(&index_path, format!("line {}: {e}", lineno + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// How scan pairs are built for training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub mode: PairMode,
    /// Correspondences per pair.
    pub points: usize,
    pub inlier_thresh: f64,
    /// Gaussian noise added to the re-observed points of exact pairs.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { mode: PairMode::Exact, points: 40, inlier_thresh: 0.1, noise_sigma: 0.0, seed: 0 }
    }
}

/// A training unit: a short stretch of one record with its own initial state.
#[derive(Clone, Debug)]
pub struct Window {
    pub record: usize,
    pub start: usize,
    pub dt: f64,
    pub controls: Vec<Vector2<f64>>,
    pub x0: InitialState,
    /// `pairs[n]` links scan `n` to scan `n + 1` of the window.
    pub pairs: Vec<ScanPair>,
    /// True pose and twist at every sample, when known.
    pub truth: Option<Vec<InitialState>>,
}

impl Window {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }
}

fn truth_sample(s: &TruthState) -> InitialState {
    InitialState { q: s.pose(), zeta: s.twist() }
}

/// Splits records into windows of at most `len` steps and builds their scan
/// pairs. Window initial states come from the recorded truth; without truth
/// only the first window of each record is usable.
pub fn build_windows(records: &[TrajectoryRecord], len: usize, pairs: &PairConfig) -> Result<Vec<Window>> {
    let len = len.max(1);
    let mut out = Vec::new();
    for rec in records {
        rec.validate()?;
        let dt = if rec.steps() > 0 { rec.times[1] - rec.times[0] } else { 0.0 };
        let truth = rec.truth.as_deref();
        let mut start = 0;
        loop {
            let end = (start + len).min(rec.steps());
            if start > 0 && (start >= rec.steps() || truth.is_none()) {
                break;
            }
            let x0 = match truth {
                Some(t) => truth_sample(&t[start]),
                None => rec.x0,
            };
            let mut window_pairs = Vec::with_capacity(end - start);
            for n in start..end {
                let seed = pairs.seed ^ ((rec.id as u64) << 32) ^ n as u64;
                let a = &rec.scans[n];
                let b = &rec.scans[n + 1];
                let pair = match pairs.mode {
                    PairMode::Exact => {
                        let t = rec.truth_or_err()?;
                        let rel = RelPose::between(&t[n].pose(), &t[n + 1].pose());
                        exact_pair(a, &rel, b.time, pairs.points, pairs.noise_sigma, seed)?
                    }
                    PairMode::Hint => {
                        let t = rec.truth_or_err()?;
                        let rel = RelPose::between(&t[n].pose(), &t[n + 1].pose());
                        make_scan_pair(a, b, Some(&rel), pairs.points, pairs.inlier_thresh, seed)?
                    }
                    PairMode::Estimate => make_scan_pair(a, b, None, pairs.points, pairs.inlier_thresh, seed)?,
                };
                window_pairs.push(pair);
            }
            out.push(Window {
                record: rec.id,
                start,
                dt,
                controls: rec.controls[start..end].to_vec(),
                x0,
                pairs: window_pairs,
                truth: truth.map(|t| t[start..=end].iter().map(truth_sample).collect()),
            });
            if end >= rec.steps() {
                break;
            }
            start = end;
        }
    }
    Ok(out)
}

/// Deterministic split by record: the last `round(fraction · D)` records are
/// held out, keeping at least one for training.
pub fn split_records(
    records: &[TrajectoryRecord],
    test_fraction: f64,
) -> (Vec<TrajectoryRecord>, Vec<TrajectoryRecord>) {
    let d = records.len();
    let test = ((test_fraction * d as f64).round() as usize).min(d.saturating_sub(1));
    let (train, held) = records.split_at(d - test);
    (train.to_vec(), held.to_vec())
}
