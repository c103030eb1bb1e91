use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar([usize; 2]),
    #[error("output does not depend on any of the requested inputs")]
    DetachedGraph,

    #[error("matrix is not skew-symmetric (|A + A^T|_F = {0:.3e})")]
    NotSkew(f64),
    #[error("rotation angle {0:.9} is too close to pi for the principal logarithm")]
    NearPiAngle(f64),
    #[error("matrix is too far from SO(3) to reproject (|RR^T - I|_F = {0:.3e})")]
    TooFarFromSO3(f64),

    #[error("invalid time grid: {0}")]
    InvalidTimes(String),

    #[error("generalized mass matrix is singular or indefinite (min eigenvalue {0:.3e})")]
    SingularMass(f64),

    #[error("only {found} correspondences within threshold, {needed} requested")]
    TooFewInliers { found: usize, needed: usize },
    #[error("point count mismatch: expected {expected}, got {found}")]
    CountMismatch { expected: usize, found: usize },

    #[error("record {0} carries no ground-truth states")]
    MissingStates(usize),
    #[error("loss became non-finite at iteration {iteration}")]
    DivergedLoss { iteration: usize },
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("target direction is undefined for planar position error norm {0:.3e}")]
    DegenerateDirection(f64),
    #[error("input gain is rank deficient (condition number {0:.3e})")]
    RankDeficientGain(f64),
    #[error("invalid controller gains: {0}")]
    InvalidGains(String),

    #[error("collision during collection of trajectory {trajectory} at step {step}")]
    CollisionDuringCollection { trajectory: usize, step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
