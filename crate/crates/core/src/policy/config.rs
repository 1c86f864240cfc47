use crate::encoders::EncoderConfig;
use crate::layout::{MaskVariant, QuerySelfAttention};

use super::PolicyError;

/// How a turn's query-token states condition the latent decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QueryPool {
    /// Every query token is a separate key for the decoder.
    #[default]
    Tokens,
    /// Query states are mean-pooled into a single conditioning vector.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ff_hidden: usize,
    /// Sliding window `N`: the current turn plus up to `N − 1` cached turns.
    pub window: usize,
    pub memory_keyframes: usize,
    pub queries_per_modality: usize,
    pub masked_tokens: usize,
    pub fusion_dk: usize,
    pub fusion_dv: usize,
    pub vocab: usize,
    /// Build query embeddings, masked tokens and latent decoders.
    pub predictive: bool,
    pub query_pool: QueryPool,
    pub variant: MaskVariant,
    pub query_self_attention: QuerySelfAttention,
    /// Give the policy its own trainable copy of the 2D encoder for its
    /// input path; targets still come from the frozen teacher.
    pub trainable_2d_input: bool,
    pub encoder: EncoderConfig,
    pub seed: u64,
}

pub const N_ACTIONS: usize = 4;
pub const DECODER_LAYERS: usize = 2;

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            layers: 4,
            heads: 4,
            d_model: 64,
            ff_hidden: 128,
            window: 8,
            memory_keyframes: 8,
            queries_per_modality: 3,
            masked_tokens: 16,
            fusion_dk: 32,
            fusion_dv: 32,
            vocab: crate::env::VOCAB_SIZE,
            predictive: true,
            query_pool: QueryPool::Tokens,
            variant: MaskVariant::Strict,
            query_self_attention: QuerySelfAttention::Causal,
            trainable_2d_input: false,
            encoder: EncoderConfig::default(),
            seed: 1,
        }
    }
}

impl PolicyConfig {
    pub fn ctxt_tokens(&self) -> usize {
        self.encoder.num_patches()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |msg: &str| Err(PolicyError::Config(msg.to_string()));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.ff_hidden == 0 {
            return bad("layers, heads, d_model and ff_hidden must be positive");
        }
        if self.d_model % self.heads != 0 {
            return bad("d_model must be divisible by heads");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.fusion_dk == 0 || self.fusion_dv == 0 || self.vocab == 0 {
            return bad("fusion dims and vocab must be positive");
        }
        if self.predictive && (self.queries_per_modality == 0 || self.masked_tokens == 0) {
            return bad("predictive branch needs query and masked tokens");
        }
        if self.predictive && self.masked_tokens != self.encoder.num_patches() {
            return bad("masked_tokens must equal the teacher token count");
        }
        self.encoder
            .validate()
            .map_err(|e| PolicyError::Config(e.to_string()))
    }
}
