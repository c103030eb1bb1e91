//! Layered TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{ControllerGains, GainsConfig, Reference};
use crate::error::{Error, Result};
use crate::model::{HamiltonianModel, ModelConfig, Nominal, RobotParams};
use crate::sim::{ClosedLoopConfig, CollectConfig, EnvMap, GroundTruthParams, TruthState, LATERAL_DAMPING};
use crate::train::{load_checkpoint, TrainConfig};
use crate::verify::VerifyConfig;

const MAX_EXTENDS_DEPTH: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Unit,
    Jackal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub preset: Preset,
    /// Overrides the preset mass.
    pub mass: Option<f64>,
    pub d_v: Option<f64>,
    pub d_omega: Option<f64>,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self { preset: Preset::Unit, mass: Some(1.25), d_v: None, d_omega: None }
    }
}

impl PlantConfig {
    pub fn params(&self) -> GroundTruthParams {
        let mut p = match self.preset {
            Preset::Unit => GroundTruthParams::unit(1.0),
            Preset::Jackal => GroundTruthParams::jackal(),
        };
        if let Some(m) = self.mass {
            p.robot.mass = m;
        }
        if let Some(d) = self.d_v {
            p.d_v = d;
        }
        if let Some(d) = self.d_omega {
            p.d_omega = d;
        }
        p
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// TOML map file; the built-in room when absent.
    pub path: Option<PathBuf>,
}

/// Which dynamics model `track` and `verify` use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSource {
    #[default]
    Nominal,
    /// The plant written as a Hamiltonian model.
    Truth,
    /// Parameters from `paths.checkpoint`.
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub source: ModelSource,
    pub nominal: Preset,
    /// Nominal isotropic damping for the Jackal preset.
    pub nominal_damping: f64,
    pub arch: ModelConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            source: ModelSource::Nominal,
            nominal: Preset::Unit,
            nominal_damping: 1e-3,
            arch: ModelConfig::default(),
        }
    }
}

impl ModelSection {
    pub fn nominal(&self) -> Nominal {
        match self.nominal {
            Preset::Unit => Nominal::unit(),
            Preset::Jackal => Nominal::differential_drive(&RobotParams::jackal(), self.nominal_damping),
        }
    }

    /// Untrained model on the nominal prior.
    pub fn build(&self) -> HamiltonianModel {
        HamiltonianModel::new(self.nominal(), self.arch.clone())
    }

    /// The nominal prior with zero learned residuals.
    pub fn build_nominal(&self) -> HamiltonianModel {
        let mut m = self.build();
        m.zero_residuals();
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub gains: GainsConfig,
    pub reference: Reference,
    pub closed_loop: ClosedLoopConfig,
    /// Start poses `[x, y, yaw_degrees]`; empty starts on the reference at rest.
    pub starts: Vec<[f64; 3]>,
    /// Also run the nominal model and report both.
    pub compare_nominal: bool,
    /// Fail the run when the RMS position error exceeds this.
    pub rms_bound: Option<f64>,
    /// Convergence thresholds on the final position and chordal errors.
    pub converged_pos: f64,
    pub converged_chordal: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            gains: GainsConfig::default(),
            reference: Reference::Fixed { x: 0.0, y: 0.0, yaw: 0.0 },
            closed_loop: ClosedLoopConfig::default(),
            starts: vec![[2.0, 2.0, 0.0], [-2.0, 2.0, 90.0], [-2.0, -2.0, 180.0], [2.0, -2.0, -90.0]],
            compare_nominal: false,
            rms_bound: None,
            converged_pos: 0.05,
            converged_chordal: 0.01,
        }
    }
}

impl ControlSection {
    pub fn gains(&self) -> Result<ControllerGains> {
        ControllerGains::try_from(&self.gains)
    }

    pub fn start_states(&self) -> Vec<TruthState> {
        if self.starts.is_empty() {
            let r = self.reference.sample(0.0);
            return vec![TruthState::at_rest(r.p.x, r.p.y, r.yaw())];
        }
        self.starts.iter().map(|s| TruthState::at_rest(s[0], s[1], s[2].to_radians())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    /// Checkpoint used by `track`; the nominal model when absent.
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { dataset: "dataset".into(), checkpoint: None, out: "out".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Parent file whose values this file overrides.
    pub extends: Option<PathBuf>,
    pub seed: u64,
    pub plant: PlantConfig,
    pub env: EnvConfig,
    pub collect: CollectConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub control: ControlSection,
    pub verify: VerifyConfig,
    pub paths: PathsConfig,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn load_table(path: &Path, depth: usize) -> Result<toml::Table> {
    if depth > MAX_EXTENDS_DEPTH {
        return Err(Error::Config(format!("{}: extends chain deeper than {MAX_EXTENDS_DEPTH}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    resolve_paths(&mut table, dir);
    match table.remove("extends") {
        None => Ok(table),
        Some(toml::Value::String(parent)) => {
            let mut base = load_table(&dir.join(parent), depth + 1)?;
            merge(&mut base, table);
            Ok(base)
        }
        Some(_) => Err(Error::Config(format!("{}: extends must be a path string", path.display()))),
    }
}

/// Makes relative path values absolute against the directory of the file
/// that set them.
fn resolve_paths(table: &mut toml::Table, dir: &Path) {
    let fix = |v: &mut toml::Value| {
        if let toml::Value::String(s) = v {
            if Path::new(s.as_str()).is_relative() {
                *s = dir.join(&*s).to_string_lossy().into_owned();
            }
        }
    };
    if let Some(toml::Value::Table(env)) = table.get_mut("env") {
        if let Some(p) = env.get_mut("path") {
            fix(p);
        }
    }
    if let Some(toml::Value::Table(paths)) = table.get_mut("paths") {
        for (_, v) in paths.iter_mut() {
            fix(v);
        }
    }
}

impl ExperimentConfig {
    /// Reads `path`, applying its `extends` chain, and validates the result.
    pub fn load(path: &Path) -> Result<Self> {
        let table = load_table(path, 0)?;
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse { path: path.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse { path: "<inline>".into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.params().validate()?;
        self.collect.validate()?;
        self.train.validate()?;
        self.control.gains()?;
        self.control.reference.validate()?;
        if self.model.source == ModelSource::Checkpoint && self.paths.checkpoint.is_none() {
            return Err(Error::Config("model.source = \"checkpoint\" needs paths.checkpoint".into()));
        }
        if self.model.arch.hidden == 0 {
            return Err(Error::Config("model.arch.hidden must be at least 1".into()));
        }
        let cl = &self.control.closed_loop;
        if !(cl.dt > 0.0 && cl.duration >= 0.0) {
            return Err(Error::Config("control.closed_loop needs dt > 0 and duration >= 0".into()));
        }
        Ok(())
    }

    /// Applies a command-line seed to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.collect.seed = seed;
        self.train.pairs.seed = seed;
        self.model.arch.init_seed = seed;
        self.verify.seed = seed;
        self
    }

    /// The model selected by `model.source`.
    pub fn load_model(&self) -> Result<HamiltonianModel> {
        match self.model.source {
            ModelSource::Nominal => Ok(self.model.build_nominal()),
            ModelSource::Truth => Ok(self.plant.params().equivalent_model(LATERAL_DAMPING, self.model.arch.clone())),
            ModelSource::Checkpoint => {
                let path = self
                    .paths
                    .checkpoint
                    .as_ref()
                    .ok_or_else(|| Error::Config("paths.checkpoint is not set".into()))?;
                let mut m = self.model.build();
                load_checkpoint(path, &mut m)?;
                Ok(m)
            }
        }
    }

    pub fn env_map(&self) -> Result<EnvMap> {
        match &self.env.path {
            Some(p) => EnvMap::load(p),
            None => Ok(EnvMap::default_room()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml_str("sede = 3"), Err(Error::Parse { .. })));
        assert!(ExperimentConfig::from_toml_str("[train]\nlearning_rate = 1.0").is_err());
    }

    #[test]
    fn extends_layers_values() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.toml"), "seed = 4\n[train]\niterations = 7\nlr = 0.5\n").unwrap();
        std::fs::write(dir.path().join("child.toml"), "extends = \"base.toml\"\n[train]\nlr = 0.25\n").unwrap();
        let cfg = ExperimentConfig::load(&dir.path().join("child.toml")).unwrap();
        assert_eq!((cfg.seed, cfg.train.iterations, cfg.train.lr), (4, 7, 0.25));
        assert_eq!(cfg.paths.dataset, PathBuf::from("dataset"));
        std::fs::write(dir.path().join("loop.toml"), "extends = \"loop.toml\"\n").unwrap();
        assert!(matches!(ExperimentConfig::load(&dir.path().join("loop.toml")), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(matches!(ExperimentConfig::from_toml_str("[collect]\ntrajectories = 0"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("[control.gains]\nk_p = -1.0"), Err(Error::InvalidGains(_))));
        let r = ExperimentConfig::from_toml_str(
            "[control.reference]\nkind = \"circle\"\ncenter = [0.0, 0.0]\nradius = 2.0\nspeed = 0.5",
        );
        assert!(r.is_ok());
    }
}
