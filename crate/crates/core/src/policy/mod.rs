//! The streaming transformer policy.
//!
//! Each turn the backbone sees `[instruction, memory, window turns, current
//! turn]`, where a turn is its context tokens (the projected fused features
//! of one observation) followed by four action tokens. Actions are decoded
//! autoregressively; stream query tokens, when requested, are appended after
//! the current turn's actions and read out as conditioning for two small
//! decoders that predict the next observation's teacher features.
//!
//! Position ids count navigation tokens only; query tokens reuse the ids
//! that follow their turn's action tokens. Together with the strict mask
//! this makes action logits independent of whether queries are present.

mod config;
mod model;
mod stream;

use thiserror::Error;

pub use config::{PolicyConfig, QueryPool, DECODER_LAYERS, N_ACTIONS};
pub use model::{memory_indices, positional_encoding, DecoderIds, QueryParams, TurnFeatures};
pub use stream::{sample_actions, StepOutput, StreamPolicy, StreamState};

pub(crate) use model::{
    action_logits, backbone, decode_pair, encode_turn, mask_rows, plan_turn, TurnShape,
};

use crate::encoders::EncoderError;
use crate::layout::LayoutError;
use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error("instruction must contain at least one token")]
    EmptyInstruction,
    #[error("instruction token {token} outside vocabulary of {vocab}")]
    UnknownToken { token: u32, vocab: usize },
    #[error("cache holds {cached} tokens but the layout expects {expected}")]
    CacheDesync { cached: usize, expected: usize },
    #[error("predictive branch is disabled")]
    BranchDisabled,
    #[error("trainable 2D input needs raw patches")]
    MissingPatches,
    #[error("parameter {0} missing or misshapen")]
    Parameter(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
