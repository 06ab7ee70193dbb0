//! Batch entry points: simulation, training, evaluation, fusion, the
//! classical baseline.

mod commands;
mod config;
mod train;

pub use commands::{
    cmd_baseline, cmd_eval, cmd_fuse, cmd_simulate, cmd_train, dump_bands, load_samples, manifest_operators, EvalTable,
    TrainSummary,
};
pub use config::RunConfig;
pub use train::{batch_indices, score_scenes, Sample, SceneScore, TrainState};
