//! Model/run configuration. The JSON schema of [`ModelConfig`] is exactly its
//! field set; unknown keys are rejected so stale configs fail fast.

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What replaces a corrupted token: zeros (masking) or a random feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionMode {
    #[default]
    Zeros,
    Random,
}

/// Granularity of simulated missingness: independent tokens, or whole
/// modalities per utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    #[default]
    Token,
    Modality,
}

/// All hyperparameters and ablation toggles of one model/run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Shared sequence length L every modality is resampled to.
    pub seq_len: usize,
    /// Shared embedding dimension D.
    pub dim: usize,
    /// SSM state size N per channel.
    pub state_dim: usize,
    /// Mamba inner width D_inner (2·D by convention).
    pub inner_dim: usize,
    /// Number of stacked fusion blocks Z.
    pub fusion_blocks: usize,
    /// Causal conv width inside each Mamba block.
    pub mamba_conv_width: usize,
    /// Input projection conv width (odd; 1 = per-token linear).
    pub proj_conv_width: usize,
    /// Token mix-up threshold p*: a token keeps its own modality with
    /// probability p*, otherwise takes the text token.
    pub mix_threshold: f64,
    /// InfoNCE temperature.
    pub temperature: f64,
    /// Weight of the alignment loss in the total objective.
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Corruption rate r applied at train and eval time.
    pub missing_rate: f64,
    pub seed: u64,
    /// Ablation: drop the local-conv stages everywhere.
    pub disable_cnn: bool,
    /// Ablation: drop the Bi-Mamba stages everywhere.
    pub disable_mamba: bool,
    /// Ablation: no mixing, no proxies, no alignment loss.
    pub disable_cmea: bool,
    pub substitution: SubstitutionMode,
    pub corruption: CorruptionMode,
    /// Raw per-modality feature dimensions of the dataset.
    pub text_dim: usize,
    pub vision_dim: usize,
    pub audio_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 16,
            dim: 32,
            state_dim: 8,
            inner_dim: 64,
            fusion_blocks: 2,
            mamba_conv_width: 4,
            proj_conv_width: 1,
            mix_threshold: 0.5,
            temperature: 0.1,
            alpha: 0.1,
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 30,
            missing_rate: 0.0,
            seed: 42,
            disable_cnn: false,
            disable_mamba: false,
            disable_cmea: false,
            substitution: SubstitutionMode::Zeros,
            corruption: CorruptionMode::Token,
            text_dim: 12,
            vision_dim: 8,
            audio_dim: 6,
        }
    }
}

impl ModelConfig {
    /// Validates every invariant; returns the offending field by name.
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::Config(format!("field '{name}' must be positive")));
            }
            Ok(())
        }
        positive("seq_len", self.seq_len)?;
        positive("dim", self.dim)?;
        positive("state_dim", self.state_dim)?;
        positive("inner_dim", self.inner_dim)?;
        positive("fusion_blocks", self.fusion_blocks)?;
        positive("mamba_conv_width", self.mamba_conv_width)?;
        positive("proj_conv_width", self.proj_conv_width)?;
        positive("batch_size", self.batch_size)?;
        positive("text_dim", self.text_dim)?;
        positive("vision_dim", self.vision_dim)?;
        positive("audio_dim", self.audio_dim)?;
        if self.proj_conv_width % 2 == 0 {
            return Err(Error::Config(String::from(
                "field 'proj_conv_width' must be odd (same-length convolution)",
            )));
        }
        if !(0.0..=1.0).contains(&self.mix_threshold) {
            return Err(Error::Config(String::from("field 'mix_threshold' must be in [0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return Err(Error::Config(String::from("field 'missing_rate' must be in [0, 1]")));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(String::from("field 'temperature' must be > 0")));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(String::from("field 'learning_rate' must be > 0")));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config(String::from("field 'alpha' must be >= 0")));
        }
        Ok(())
    }

    /// Alignment weight actually applied: forced to zero when CMEA is ablated.
    pub fn effective_alpha(&self) -> f64 {
        if self.disable_cmea {
            0.0
        } else {
            self.alpha
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_fields_are_named() {
        let mut c = ModelConfig::default();
        c.temperature = 0.0;
        let err = c.validate().unwrap_err();
        assert!(format!("{err}").contains("temperature"));

        let mut c = ModelConfig::default();
        c.proj_conv_width = 2;
        let err = c.validate().unwrap_err();
        assert!(format!("{err}").contains("proj_conv_width"));
    }

    #[test]
    fn unknown_json_keys_rejected() {
        let json = r#"{"seq_len": 8, "not_a_field": 1}"#;
        assert!(serde_json::from_str::<ModelConfig>(json).is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let json = r#"{"dim": 16, "disable_cmea": true}"#;
        let c: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.dim, 16);
        assert!(c.disable_cmea);
        assert_eq!(c.seq_len, ModelConfig::default().seq_len);
        assert_eq!(c.effective_alpha(), 0.0);
    }
}
