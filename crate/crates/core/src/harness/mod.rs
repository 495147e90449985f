//! Training, evaluation, heatmap export and gradient checks.

mod config;
mod eval;
mod gradcheck;
mod heatmap;
mod train;

pub use config::RunConfig;
pub use eval::{
    evaluate, first_scene, run_episodes, write_eval_csv, Agent, EvalReport, EvalSpec, Layouts,
    PolicyAgent, ScriptedOracle,
};
pub use gradcheck::{gradcheck, gradcheck_model, gradcheck_with, synthetic_batch, GRADCHECK_BATCH};
pub use heatmap::{heatmap, Heatmap, Normalization, VisitAccumulator};
pub use train::{
    checkpoint_path, train, train_with_progress, MetricsRow, TrainOutcome, METRICS_HEADER,
    METRICS_WINDOW,
};

/// Default evaluation stream seed; disjoint from training streams by name.
pub const DEFAULT_EVAL_SEED: u64 = 1_000_003;
