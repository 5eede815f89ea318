//! Model, loss and training configuration.
//!
//! The JSON config file has three optional sections, `model`, `loss` and
//! `train`. Missing fields take their defaults; unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FEATURE_WIDTH;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Match candidates against the final dialogue state only.
    Last,
    /// Match candidates against every utterance state, concatenated.
    #[default]
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Max,
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Bce,
    Ranking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_emb: usize,
    /// 0 or 2 knowledge features per token.
    pub d_feat: usize,
    pub heads: usize,
    pub d_p: usize,
    /// Hidden width of the position-wise feed-forward network.
    pub d_h: usize,
    pub n_blocks: usize,
    pub variant: Variant,
    pub pooling: Pooling,
    pub scaled_similarity: bool,
    pub normalize_pool_weights: bool,
    /// Upper bound on `heads * d_p`.
    pub max_head_width: usize,
    pub seed: u64,
    pub lr: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_emb: 62,
            d_feat: FEATURE_WIDTH,
            heads: 4,
            d_p: 16,
            d_h: 512,
            n_blocks: 2,
            variant: Variant::All,
            pooling: Pooling::Max,
            scaled_similarity: false,
            normalize_pool_weights: false,
            max_head_width: 1024,
            seed: 0,
            lr: 1e-4,
        }
    }
}

impl ModelConfig {
    /// Width of an augmented token vector.
    pub fn d_f(&self) -> usize {
        self.d_emb + self.d_feat
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_feat != 0 && self.d_feat != FEATURE_WIDTH {
            return Err(Error::config(format!("d_feat must be 0 or {FEATURE_WIDTH}")));
        }
        if self.d_f() < 2 || !self.d_f().is_multiple_of(2) {
            return Err(Error::config(format!(
                "d_emb + d_feat must be even and at least 2, got {}",
                self.d_f()
            )));
        }
        if self.heads == 0 || self.d_p == 0 || self.d_h == 0 {
            return Err(Error::config("heads, d_p and d_h must be positive"));
        }
        if self.heads * self.d_p > self.max_head_width {
            return Err(Error::config(format!(
                "heads * d_p = {} exceeds max_head_width {}",
                self.heads * self.d_p,
                self.max_head_width
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Ranking-loss margin.
    pub margin: f64,
    /// Candidates per training instance, positives included.
    pub candidates_per_sample: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Bce,
            margin: 1.0,
            candidates_per_sample: 10,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::config("margin must be finite and non-negative"));
        }
        if self.candidates_per_sample < 2 {
            return Err(Error::config("candidates_per_sample must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Hard cap on optimizer steps (one step per dialogue).
    pub max_steps: usize,
    /// Evaluate on the held-out split every this many steps; 0 disables.
    pub eval_every: usize,
    /// Stop after this many evaluations without a better held-out MRR.
    pub patience: usize,
    /// Fraction of the corpus held out when no separate split is given.
    pub valid_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Optional `token v1 v2 …` file used to initialize embeddings.
    pub embeddings: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            max_steps: 2000,
            eval_every: 100,
            patience: 5,
            valid_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            embeddings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Config::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if !(0.0..1.0).contains(&self.train.valid_fraction) {
            return Err(Error::config("valid_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}
