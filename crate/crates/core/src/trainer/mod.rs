//! Optimization loop, evaluation with test-time averaging and the
//! robustness sweep.

mod adam;
mod eval;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use eval::{
    argmax, clip_probabilities, evaluate, evaluate_with, robustness_eval, EvalOptions, Evaluation, RobustnessReport,
    RobustnessRow,
};
pub use train::{train, EpochMetrics, TrainConfig, TrainData, TrainReport, METRICS_HEADER};
