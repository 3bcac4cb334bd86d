use alloc::format;

use crate::error::{Error, Result};

/// Every tunable of the pipeline. Counts are unsigned; probabilities are
/// checked by [`PipelineConfig::validate`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PipelineConfig {
    /// Shared width of image features, prompt embeddings and decoder states.
    pub d_model: usize,
    /// Number of image feature vectors produced by the encoder.
    pub m: usize,
    /// Width of the frozen encoder's raw features, before the learned projection.
    pub feature_dim: usize,
    /// Attributes kept per object.
    pub k: usize,
    /// Maximum number of objects in a prompt.
    pub o_max: usize,
    pub detect_threshold: f64,
    pub dedupe: bool,
    pub crop_pad: f64,
    pub attr_min_prob: f64,
    pub attr_hidden: usize,
    pub dropout_p: f64,
    /// Longest caption the decoder accepts, counting BOS and EOS.
    pub max_caption_len: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub min_freq: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            m: 16,
            feature_dim: 128,
            k: 2,
            o_max: 10,
            detect_threshold: 0.9,
            dedupe: true,
            crop_pad: 0.0,
            attr_min_prob: 0.0,
            attr_hidden: 128,
            dropout_p: 0.1,
            max_caption_len: 32,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 512,
            learning_rate: 1e-3,
            batch_size: 16,
            grad_clip: 1.0,
            min_freq: 5,
            seed: 0,
        }
    }
}

fn check_probability(name: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidConfig(format!(
            "{name} must lie in [0, 1], got {value}"
        )));
    }
    Ok(())
}

fn check_positive(name: &str, value: usize) -> Result<()> {
    if value == 0 {
        return Err(Error::InvalidConfig(format!("{name} must be > 0")));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("d_model", self.d_model)?;
        check_positive("feature_dim", self.feature_dim)?;
        check_positive("attr_hidden", self.attr_hidden)?;
        check_positive("n_heads", self.n_heads)?;
        check_positive("ffn_dim", self.ffn_dim)?;
        check_positive("batch_size", self.batch_size)?;
        check_positive("min_freq", self.min_freq)?;
        check_probability("detect_threshold", self.detect_threshold)?;
        check_probability("attr_min_prob", self.attr_min_prob)?;
        check_probability("dropout_p", self.dropout_p)?;
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.max_caption_len < 2 {
            return Err(Error::InvalidConfig(
                "max_caption_len must leave room for BOS and EOS".into(),
            ));
        }
        if !(self.crop_pad >= 0.0 && self.crop_pad.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "crop_pad must be a finite non-negative number, got {}",
                self.crop_pad
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "grad_clip must be >= 0 (0 disables), got {}",
                self.grad_clip
            )));
        }
        Ok(())
    }
}
