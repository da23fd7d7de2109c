//! Pipeline commands behind the `orthoseis` executable.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_baseline, cmd_evaluate, cmd_generate, cmd_infer, cmd_train, load_manifest, load_model, load_split, locate_data,
    predict_section, CheckpointMeta, EpochRow, EvalEntry, EvalRequest, Manifest, ModelSpec, RunDir, TrainOutcome,
};
pub use config::{config_keys_help, derive_seed, IoConfig, RunConfig, Seeds};
pub use error::{CliError, Result};
