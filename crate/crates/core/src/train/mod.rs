//! Dataset assembly, window losses and the optimization loop.

mod artifacts;
mod dataset;
mod fit;
mod loss;

pub use artifacts::{load_checkpoint, save_checkpoint, write_loss_csv, write_terms_csv, TermSample, TERMS_HEADER};
pub use dataset::{
    build_windows, read_dataset, split_records, write_dataset, InitialState, PairConfig, TrajectoryRecord, Window,
    DATASET_FILE,
};
pub use fit::{fit, FitReport, IterationRecord, TrainConfig};
pub use loss::{
    evaluate_window, evaluate_windows, total_observation_loss, total_state_loss, window_loss, LossConfig, LossMode,
    WindowEval, WindowLoss,
};
