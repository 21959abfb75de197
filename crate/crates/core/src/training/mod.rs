//! The joint training objective, the epoch loop and evaluation.

mod config;
mod evaluate;
mod losses;
mod objective;
mod trainer;

pub use config::TrainConfig;
pub use evaluate::{evaluate, EvalOptions, Evaluation, MonotonicCount};
pub use losses::{answer_sign, bce_loss, cm_loss, theta_reg_loss, LossBreakdown, PRED_CLAMP};
pub use objective::{batch_objective, theta_term, window_loss, ObjectiveValue};
pub use trainer::{train, EpochReport, TrainOutcome};
