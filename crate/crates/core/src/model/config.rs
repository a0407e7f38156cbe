use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Attention aggregation, no memory.
    Tgat,
    /// Summation aggregation with a recurrent per-node memory.
    Tgn,
}

/// How a pair of embeddings is turned into a link score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    Dot,
    /// One hidden layer over the concatenation `[candidate | source]`.
    MlpConcat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    pub neighbor_limit: usize,
    pub use_memory: bool,
    pub score_mode: ScoreMode,
}

impl ModelConfig {
    pub fn tgn() -> Self {
        Self {
            variant: Variant::Tgn,
            layers: 1,
            embed_dim: 100,
            time_dim: 100,
            neighbor_limit: crate::graph::DEFAULT_NEIGHBOR_LIMIT,
            use_memory: true,
            score_mode: ScoreMode::Dot,
        }
    }

    pub fn tgat() -> Self {
        Self { variant: Variant::Tgat, layers: 2, use_memory: false, ..Self::tgn() }
    }

    pub fn for_variant(v: Variant) -> Self {
        match v {
            Variant::Tgn => Self::tgn(),
            Variant::Tgat => Self::tgat(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.layers < 1 || self.layers > 2 {
            return Err(format!("layers must be 1 or 2, got {}", self.layers));
        }
        if self.embed_dim < 1 || self.time_dim < 1 || self.neighbor_limit < 1 {
            return Err("embed_dim, time_dim and neighbor_limit must be at least 1".into());
        }
        if self.variant == Variant::Tgn && !self.use_memory {
            return Err("the tgn variant requires use_memory = true".into());
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tgn()
    }
}
