//! Experiment plumbing: run configs, checkpoints, closed-loop evaluation and
//! the train / eval / ablate / mask-dump commands behind the CLI.

mod agent;
mod checkpoint;
mod commands;
mod config;
mod eval;

use std::path::PathBuf;

use thiserror::Error;

pub use agent::PolicyAgent;
pub use checkpoint::{
    checkpoint_of, decode_checkpoint, encode_checkpoint, policy_from_checkpoint, Checkpoint, CheckpointError,
};
pub use commands::{
    ablation_cells, ablation_csv, ablation_means, ablation_seed_config, cmd_ablate, cmd_eval, cmd_mask_dump,
    cmd_train, load_policy, mask_dump_path, metrics_csv, train_log_csv, train_policy, write_output, AblationCell,
    AblationRow, MaskDumpLayout, MaskFormat, TrainOutcome, ABLATION_CSV, CHECKPOINT, EVAL_CSV, TRAIN_LOG,
};
pub use config::{
    parse_config, AblateSection, ConfigError, EncoderSection, EnvSection, EvalSection, LossSection, PolicySection,
    RunConfig, RunSection, TrainSection,
};
pub use eval::{episode_set_hash, eval_episodes, evaluate, run_eval, Driver, EvalEpisode};

use crate::env::EnvError;
use crate::policy::PolicyError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("evaluation needs --checkpoint unless --expert is given")]
    MissingCheckpoint,
}

impl HarnessError {
    /// Process exit status: 2 for bad configuration, 3 for a numeric abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::MissingCheckpoint => 2,
            HarnessError::Checkpoint(CheckpointError::HashMismatch { .. }) => 2,
            HarnessError::Train(
                TrainError::NonFinite { .. } | TrainError::NonFiniteGradient(_) | TrainError::Numerics(_),
            ) => 3,
            HarnessError::Policy(PolicyError::Numerics(_)) => 3,
            _ => 1,
        }
    }
}
