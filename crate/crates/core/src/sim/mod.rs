//! Ground-truth differential-drive simulation, data collection and
//! closed-loop runs.

mod closed_loop;
mod collect;
mod env;
mod truth;

pub use closed_loop::{rms_position_error, run_closed_loop, write_log_csv, ClosedLoopConfig, LogRow, LOG_HEADER};
pub use collect::{collect_dataset, collect_from_model, CollectConfig, CollisionPolicy, Excitation};
pub use env::{Aabb, EnvMap, Segment};
pub use truth::{step_truth, GroundTruthParams, InputMode, TruthState, LATERAL_DAMPING, TRUTH_MAX_STEP};
