use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoders::EncoderConfig;
use crate::env::GeneratorConfig;
use crate::layout::{MaskVariant, QuerySelfAttention};
use crate::policy::{PolicyConfig, QueryPool};
use crate::rng::derive_seed;
use crate::training::{LossWeights, TrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// A complete experiment description, read from sectioned `key = value`
/// text. Omitted keys take their defaults; unknown keys are errors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub policy: PolicySection,
    pub encoder: EncoderSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub env: EnvSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Master seed; data, evaluation and initialisation seeds derive from it.
    pub seed: u64,
    pub out: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            out: "out".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ff_hidden: usize,
    pub window: usize,
    pub memory_keyframes: usize,
    pub queries_per_modality: usize,
    pub masked_tokens: usize,
    pub fusion_dk: usize,
    pub fusion_dv: usize,
    pub predictive: bool,
    /// `tokens` or `mean`.
    pub query_pool: String,
    /// `strict`, `leaky` or `noiso`.
    pub variant: String,
    /// `causal` or `isolated`.
    pub query_self_attention: String,
    pub trainable_2d_input: bool,
}

impl Default for PolicySection {
    fn default() -> Self {
        let d = PolicyConfig::default();
        PolicySection {
            layers: d.layers,
            heads: d.heads,
            d_model: d.d_model,
            ff_hidden: d.ff_hidden,
            window: d.window,
            memory_keyframes: d.memory_keyframes,
            queries_per_modality: d.queries_per_modality,
            masked_tokens: d.masked_tokens,
            fusion_dk: d.fusion_dk,
            fusion_dv: d.fusion_dv,
            predictive: d.predictive,
            query_pool: "tokens".into(),
            variant: "strict".into(),
            query_self_attention: "causal".into(),
            trainable_2d_input: d.trainable_2d_input,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub image: usize,
    pub channels: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub d2: usize,
    pub d3: usize,
    pub d_state: usize,
    pub d_pose: usize,
    /// Seed of the frozen teacher weights.
    pub seed: u64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        EncoderSection {
            image: e.image,
            channels: e.channels,
            patch_h: e.patch_h,
            patch_w: e.patch_w,
            d2: e.d2,
            d3: e.d3,
            d_state: e.d_state,
            d_pose: e.d_pose,
            seed: e.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        LossSection {
            gamma: w.gamma,
            alpha: w.alpha,
            beta: w.beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub episodes: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            episodes: 200,
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub width: usize,
    pub height: usize,
    pub wall_density: f64,
    pub landmarks: usize,
    pub attempts: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        EnvSection {
            width: g.width,
            height: g.height,
            wall_density: g.wall_density,
            landmarks: g.landmarks,
            attempts: g.attempts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { episodes: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub seeds: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection { seeds: 5 }
    }
}

/// The architecture-defining part of a config; checkpoints are keyed by
/// its hash.
#[derive(Serialize)]
struct ModelSpec<'a> {
    policy: &'a PolicySection,
    encoder: &'a EncoderSection,
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy_config()?;
        self.loss_weights()?;
        let g = self.generator();
        if g.width < 3 || g.height < 3 || !(0.0..1.0).contains(&g.wall_density) {
            return Err(invalid("env needs width, height >= 3 and wall_density in [0, 1)"));
        }
        if self.train.batch_size == 0 || !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return Err(invalid("train.batch_size and train.lr must be positive"));
        }
        if self.eval.episodes == 0 {
            return Err(invalid("eval.episodes must be positive"));
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            image: e.image,
            channels: e.channels,
            patch_h: e.patch_h,
            patch_w: e.patch_w,
            d2: e.d2,
            d3: e.d3,
            d_state: e.d_state,
            d_pose: e.d_pose,
            seed: e.seed,
        }
    }

    pub fn policy_config(&self) -> Result<PolicyConfig, ConfigError> {
        let p = &self.policy;
        let query_pool = match p.query_pool.as_str() {
            "tokens" => QueryPool::Tokens,
            "mean" => QueryPool::Mean,
            other => return Err(invalid(format!("unknown query_pool {other:?}"))),
        };
        let variant =
            MaskVariant::parse(&p.variant).ok_or_else(|| invalid(format!("unknown variant {:?}", p.variant)))?;
        let query_self_attention = match p.query_self_attention.as_str() {
            "causal" => QuerySelfAttention::Causal,
            "isolated" => QuerySelfAttention::Isolated,
            other => return Err(invalid(format!("unknown query_self_attention {other:?}"))),
        };
        let cfg = PolicyConfig {
            layers: p.layers,
            heads: p.heads,
            d_model: p.d_model,
            ff_hidden: p.ff_hidden,
            window: p.window,
            memory_keyframes: p.memory_keyframes,
            queries_per_modality: p.queries_per_modality,
            masked_tokens: p.masked_tokens,
            fusion_dk: p.fusion_dk,
            fusion_dv: p.fusion_dv,
            vocab: crate::env::VOCAB_SIZE,
            predictive: p.predictive,
            query_pool,
            variant,
            query_self_attention,
            trainable_2d_input: p.trainable_2d_input,
            encoder: self.encoder_config(),
            seed: derive_seed(self.run.seed, "policy-init", 0),
        };
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn loss_weights(&self) -> Result<LossWeights, ConfigError> {
        let w = LossWeights {
            gamma: self.loss.gamma,
            alpha: self.loss.alpha,
            beta: self.loss.beta,
        };
        w.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(w)
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig {
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            weights: self.loss_weights()?,
        })
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            width: self.env.width,
            height: self.env.height,
            wall_density: self.env.wall_density,
            landmarks: self.env.landmarks,
            attempts: self.env.attempts,
        }
    }

    pub fn train_data_seed(&self) -> u64 {
        derive_seed(self.run.seed, "train-data", 0)
    }

    pub fn eval_seed(&self) -> u64 {
        derive_seed(self.run.seed, "eval-data", 0)
    }

    /// Hex SHA-256 of the architecture sections.
    pub fn model_hash(&self) -> String {
        let spec = ModelSpec {
            policy: &self.policy,
            encoder: &self.encoder,
        };
        let text = toml::to_string(&spec).expect("model spec serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
