use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base of the rotary frequency schedule.
pub const ROPE_THETA: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalScheme {
    Rotary,
    None,
}

/// Per-layer widths of a compacted model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerWidths {
    pub n_heads: usize,
    pub d_ffn: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    /// FFN intermediate width of the dense model.
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub norm_epsilon: f64,
    pub max_seq_len: usize,
    pub positional_scheme: PositionalScheme,
    /// Present only for compacted checkpoints, one entry per layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_widths: Option<Vec<LayerWidths>>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("d_ffn", self.d_ffn),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_heads * self.head_dim != self.d_model {
            return Err(Error::Config(format!(
                "n_heads ({}) x head_dim ({}) = {} does not equal d_model ({})",
                self.n_heads,
                self.head_dim,
                self.n_heads * self.head_dim,
                self.d_model
            )));
        }
        if !(self.norm_epsilon > 0.0 && self.norm_epsilon.is_finite()) {
            return Err(Error::Config("norm_epsilon must be positive".into()));
        }
        if self.positional_scheme == PositionalScheme::Rotary && self.head_dim % 2 != 0 {
            return Err(Error::Config("rotary positions need an even head_dim".into()));
        }
        if let Some(widths) = &self.layer_widths {
            if widths.len() != self.n_layers {
                return Err(Error::Config(format!(
                    "layer_widths has {} entries for {} layers",
                    widths.len(),
                    self.n_layers
                )));
            }
            for (i, w) in widths.iter().enumerate() {
                if w.n_heads > self.n_heads || w.d_ffn > self.d_ffn {
                    return Err(Error::Config(format!(
                        "layer {i} widths exceed the dense shape"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that the FFN width splits into whole pruning groups.
    pub fn validate_ffn_grouping(&self, group_size: usize) -> Result<()> {
        if group_size == 0 || self.d_ffn % group_size != 0 {
            return Err(Error::Config(format!(
                "d_ffn ({}) is not divisible by the FFN group size ({group_size})",
                self.d_ffn
            )));
        }
        Ok(())
    }

    /// Widths of layer `i`, dense unless the config is compacted.
    pub fn widths(&self, layer: usize) -> LayerWidths {
        match &self.layer_widths {
            Some(w) => w[layer],
            None => LayerWidths {
                n_heads: self.n_heads,
                d_ffn: self.d_ffn,
            },
        }
    }

    pub fn dense(&self) -> Self {
        Self {
            layer_widths: None,
            ..self.clone()
        }
    }

    pub fn sublayers(&self) -> impl Iterator<Item = SublayerId> {
        (0..self.n_layers).flat_map(|layer| {
            [SublayerKind::Mha, SublayerKind::Ffn]
                .into_iter()
                .map(move |kind| SublayerId { layer, kind })
        })
    }

    pub fn n_sublayers(&self) -> usize {
        2 * self.n_layers
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SublayerKind {
    Mha,
    Ffn,
}

impl SublayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SublayerKind::Mha => "mha",
            SublayerKind::Ffn => "ffn",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            SublayerKind::Mha => 0,
            SublayerKind::Ffn => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(SublayerKind::Mha),
            1 => Some(SublayerKind::Ffn),
            _ => None,
        }
    }
}

/// One MHA or FFN sublayer. Ordered layer-major, MHA before FFN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SublayerId {
    pub layer: usize,
    pub kind: SublayerKind,
}

impl SublayerId {
    pub fn mha(layer: usize) -> Self {
        Self {
            layer,
            kind: SublayerKind::Mha,
        }
    }

    pub fn ffn(layer: usize) -> Self {
        Self {
            layer,
            kind: SublayerKind::Ffn,
        }
    }

    /// Position in the layer-major sublayer sequence.
    pub fn ordinal(self) -> usize {
        2 * self.layer + self.kind.code() as usize
    }

    pub fn from_ordinal(i: usize) -> Self {
        Self {
            layer: i / 2,
            kind: if i % 2 == 0 {
                SublayerKind::Mha
            } else {
                SublayerKind::Ffn
            },
        }
    }
}

impl fmt::Display for SublayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.layer, self.kind.as_str())
    }
}

/// Prunable parameter accounting for one sublayer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunableParams {
    pub id: SublayerId,
    /// Parameters removed with one head (MHA) or one neuron (FFN).
    pub params_per_unit: usize,
    pub total_units: usize,
}

impl PrunableParams {
    pub fn total(&self) -> usize {
        self.params_per_unit * self.total_units
    }
}

/// Heads and FFN neurons are the prunable units; embeddings, norms and the
/// output head are never pruned.
pub fn count_prunable_params(config: &ModelConfig) -> Vec<PrunableParams> {
    config
        .sublayers()
        .map(|id| match id.kind {
            SublayerKind::Mha => PrunableParams {
                id,
                params_per_unit: 4 * config.d_model * config.head_dim,
                total_units: config.n_heads,
            },
            SublayerKind::Ffn => PrunableParams {
                id,
                params_per_unit: 3 * config.d_model,
                total_units: config.d_ffn,
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            head_dim: 16,
            d_ffn: 256,
            vocab_size: 100,
            norm_epsilon: 1e-5,
            max_seq_len: 32,
            positional_scheme: PositionalScheme::Rotary,
            layer_widths: None,
        }
    }

    #[test]
    fn mha_unit_params() {
        let p = count_prunable_params(&cfg());
        assert_eq!(p[0].id, SublayerId::mha(0));
        assert_eq!(p[0].params_per_unit, 4096);
    }

    #[test]
    fn ffn_total_params() {
        let p = count_prunable_params(&cfg());
        assert_eq!(p[1].id, SublayerId::ffn(0));
        assert_eq!(p[1].total(), 49152);
    }

    #[test]
    fn head_product_must_match_d_model() {
        let mut c = cfg();
        c.d_model = 65;
        c.n_heads = 8;
        c.head_dim = 8;
        let err = c.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("d_model"));
    }

    #[test]
    fn ffn_grouping_divisibility() {
        let c = cfg();
        assert!(c.validate_ffn_grouping(16).is_ok());
        assert!(c.validate_ffn_grouping(24).is_err());
    }

    #[test]
    fn ordinal_round_trip() {
        for (i, id) in cfg().sublayers().enumerate() {
            assert_eq!(id.ordinal(), i);
            assert_eq!(SublayerId::from_ordinal(i), id);
        }
    }
}
