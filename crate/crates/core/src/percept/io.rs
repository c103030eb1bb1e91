//! Scan dumps as CSV rows `t,m,x,y,z,frame`.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Frame, PointCloud};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Row {
    t: f64,
    m: usize,
    x: f64,
    y: f64,
    z: f64,
    frame: Frame,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse { path: path.to_path_buf(), message: e.to_string() }
}

/// Writes scans in order; scan `n` is identified by its timestamp.
pub fn write_scans_csv(path: &Path, scans: &[PointCloud]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for scan in scans {
        for (m, p) in scan.points.iter().enumerate() {
            w.serialize(Row { t: scan.time, m, x: p.x, y: p.y, z: p.z, frame: scan.frame })
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads scans back, grouped by `times`. Scans with no rows come back empty.
pub fn read_scans_csv(path: &Path, times: &[f64]) -> Result<Vec<PointCloud>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut scans: Vec<PointCloud> = times.iter().map(|&t| PointCloud::new(Vec::new(), Frame::Body, t)).collect();
    let mut cursor = 0;
    for row in r.deserialize() {
        let row: Row = row.map_err(|e| csv_err(path, e))?;
        while cursor < times.len() && times[cursor] != row.t {
            cursor += 1;
        }
        let Some(scan) = scans.get_mut(cursor) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("scan time {} not in record", row.t),
            });
        };
        if row.m != scan.points.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("point index {} out of order", row.m),
            });
        }
        scan.frame = row.frame;
        scan.points.push(Vector3::new(row.x, row.y, row.z));
    }
    Ok(scans)
}
