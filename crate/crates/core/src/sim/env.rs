//! Planar environment maps made of wall segments and axis-aligned boxes.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A wall segment between two points in the plane, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from: [f64; 2],
    pub to: [f64; 2],
}

/// An axis-aligned box obstacle, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }

    fn edges(&self) -> [Segment; 4] {
        let [x0, y0] = self.min;
        let [x1, y1] = self.max;
        [
            Segment { from: [x0, y0], to: [x1, y0] },
            Segment { from: [x1, y0], to: [x1, y1] },
            Segment { from: [x1, y1], to: [x0, y1] },
            Segment { from: [x0, y1], to: [x0, y0] },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvMap {
    pub bounds: Aabb,
    #[serde(default)]
    pub walls: Vec<Segment>,
    #[serde(default)]
    pub boxes: Vec<Aabb>,
}

impl EnvMap {
    /// An empty square room of the given side centred on the origin.
    pub fn square_room(side: f64) -> Self {
        let h = side / 2.0;
        let bounds = Aabb { min: [-h, -h], max: [h, h] };
        Self { bounds, walls: bounds.edges().to_vec(), boxes: Vec::new() }
    }

    /// A 10 m room with three interior boxes.
    pub fn default_room() -> Self {
        let mut env = Self::square_room(10.0);
        env.boxes = vec![
            Aabb { min: [1.5, 2.0], max: [2.5, 3.2] },
            Aabb { min: [-3.6, -1.0], max: [-2.8, 0.4] },
            Aabb { min: [0.5, -3.8], max: [2.3, -3.0] },
        ];
        env
    }

    pub fn validate(&self) -> Result<()> {
        if self.walls.is_empty() && self.boxes.is_empty() {
            return Err(Error::Config("environment has no walls or boxes".into()));
        }
        let finite = |p: &[f64; 2]| p.iter().all(|x| x.is_finite());
        let ok = finite(&self.bounds.min)
            && finite(&self.bounds.max)
            && self.walls.iter().all(|s| finite(&s.from) && finite(&s.to))
            && self.boxes.iter().all(|b| finite(&b.min) && finite(&b.max));
        if !ok {
            return Err(Error::Config("environment has non-finite coordinates".into()));
        }
        let ordered = |b: &Aabb| b.min[0] < b.max[0] && b.min[1] < b.max[1];
        if !ordered(&self.bounds) || !self.boxes.iter().all(ordered) {
            return Err(Error::Config("box corners are not ordered min < max".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let env: Self =
            toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        env.validate()?;
        Ok(env)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("environment serializes")
    }

    fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.walls.iter().copied().chain(self.boxes.iter().flat_map(|b| b.edges()))
    }

    /// Distance along the unit direction `dir` to the first surface, if any
    /// within `max_range`.
    pub fn raycast(&self, origin: &Vector2<f64>, dir: &Vector2<f64>, max_range: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for s in self.segments() {
            let a = Vector2::from(s.from);
            let e = Vector2::from(s.to) - a;
            let denom = dir.x * e.y - dir.y * e.x;
            if denom.abs() < 1e-15 {
                continue;
            }
            let w = a - origin;
            let t = (w.x * e.y - w.y * e.x) / denom;
            let u = (w.x * dir.y - w.y * dir.x) / denom;
            if t > 1e-12 && (-1e-12..=1.0 + 1e-12).contains(&u) && t <= max_range && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
        best
    }

    /// Smallest distance from `p` to any wall or box edge; zero inside a box.
    pub fn clearance(&self, p: &Vector2<f64>) -> f64 {
        if self.boxes.iter().any(|b| b.contains(p)) {
            return 0.0;
        }
        self.segments()
            .map(|s| {
                let a = Vector2::from(s.from);
                let e = Vector2::from(s.to) - a;
                let t = ((p - a).dot(&e) / e.norm_squared().max(1e-300)).clamp(0.0, 1.0);
                (a + e * t - p).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// True when a disc of `radius` at `p` touches an obstacle or leaves the bounds.
    pub fn collides(&self, p: &Vector2<f64>, radius: f64) -> bool {
        !self.bounds.contains(p) || self.clearance(p) < radius
    }
}
