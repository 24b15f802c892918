//! Model configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which parts of the network train and what the decoder emits.
///
/// Base: semantic decoding only. Bi: syntactic biaffine only. Cb/Ca: one
/// decoder sequence with the syntactic linearization before/after the
/// semantic one. En: semantic decoding plus an auxiliary biaffine loss on
/// the encoder states. In: En plus the predicted parse fused back into the
/// representations the decoder attends to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Base,
    Bi,
    Cb,
    Ca,
    En,
    In,
}

impl Mode {
    /// The decoder runs and its target sequence carries semantic nodes.
    pub fn has_semantics(self) -> bool {
        self != Mode::Bi
    }

    /// The syntactic biaffine parser contributes loss / predictions.
    pub fn has_biaffine(self) -> bool {
        matches!(self, Mode::Bi | Mode::En | Mode::In)
    }

    /// The decoder target is a two-segment sequence split by SEP.
    pub fn is_concat(self) -> bool {
        matches!(self, Mode::Cb | Mode::Ca)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Base => "base",
            Mode::Bi => "bi",
            Mode::Cb => "cb",
            Mode::Ca => "ca",
            Mode::En => "en",
            Mode::In => "in",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Mode::Base),
            "bi" => Ok(Mode::Bi),
            "cb" => Ok(Mode::Cb),
            "ca" => Ok(Mode::Ca),
            "en" => Ok(Mode::En),
            "in" => Ok(Mode::In),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Per-component loss weights; the total loss is their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub node: f64,
    pub edge: f64,
    pub label: f64,
    pub syntax: f64,
    pub attr_value: f64,
    pub attr_mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            node: 1.0,
            edge: 1.0,
            label: 1.0,
            syntax: 1.0,
            attr_value: 1.0,
            attr_mask: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    /// Model width; every residual stream is this wide.
    pub d_s: usize,
    /// Biaffine head-MLP width.
    pub d_h: usize,
    /// Biaffine type-MLP width.
    pub d_t: usize,
    pub dropout: f64,
    /// Attention init variance divisor.
    pub k: f64,
    pub warmup: u64,
    pub mode: Mode,
    pub frozen_encoder_layers: usize,
    /// Decoder step cap for a T-token sentence: 2T + this.
    pub max_decode_extra: usize,
    pub weights: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            heads: 2,
            d_s: 32,
            d_h: 16,
            d_t: 16,
            dropout: 0.2,
            k: 32.0,
            warmup: 1000,
            mode: Mode::En,
            frozen_encoder_layers: 0,
            max_decode_extra: 12,
            weights: LossWeights::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 {
            return Err(Error::Config("layers and heads must be positive".into()));
        }
        if self.d_s == 0 || self.d_s % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_s = {} must be a positive multiple of heads = {}",
                self.d_s, self.heads
            )));
        }
        if self.d_h == 0 || self.d_t == 0 {
            return Err(Error::Config("d_h and d_t must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.k <= 0.0 {
            return Err(Error::Config(format!("init scale k = {} not positive", self.k)));
        }
        if self.frozen_encoder_layers > self.layers {
            return Err(Error::Config(format!(
                "cannot freeze {} of {} encoder layers",
                self.frozen_encoder_layers, self.layers
            )));
        }
        let w = &self.weights;
        for (name, v) in [
            ("node", w.node),
            ("edge", w.edge),
            ("label", w.label),
            ("syntax", w.syntax),
            ("attr_value", w.attr_value),
            ("attr_mask", w.attr_mask),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!("loss weight {name} = {v} is negative")));
            }
        }
        Ok(())
    }

    pub fn max_decode_len(&self, sentence_len: usize) -> usize {
        2 * sentence_len + self.max_decode_extra
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn width_must_divide_by_heads() {
        let cfg = ModelConfig {
            d_s: 30,
            heads: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn freezing_beyond_depth_rejected() {
        let cfg = ModelConfig {
            layers: 2,
            frozen_encoder_layers: 3,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn negative_weight_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.weights.syntax = -0.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mode_round_trips_through_strings() {
        for m in [Mode::Base, Mode::Bi, Mode::Cb, Mode::Ca, Mode::En, Mode::In] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("beam".parse::<Mode>().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ModelConfig {
            mode: Mode::Cb,
            d_s: 64,
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        // Partial documents fill from defaults.
        let sparse: ModelConfig = serde_json::from_str(r#"{"mode":"in","d_s":16,"heads":2}"#).unwrap();
        assert_eq!(sparse.mode, Mode::In);
        assert_eq!(sparse.d_s, 16);
        assert_eq!(sparse.layers, 2);
    }
}
