use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: usize,
    pub width: usize,
    pub mlp_dim: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    pub qk_norm: bool,
    /// Residual-branch dropout during training. Off unless set.
    #[serde(default)]
    pub dropout: f64,
    /// Attention-probability dropout during training. Off unless set.
    #[serde(default)]
    pub attn_dropout: f64,
}

/// Parameter totals. `adaln_modulation` is what an adaLN-conditioned variant
/// of the same backbone would add (a `d -> 6d` modulation per block plus a
/// `d -> 2d` one before the head); this crate conditions with a prefix token
/// instead, so it is reported but never allocated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub embeddings: usize,
    pub blocks: usize,
    pub head: usize,
    pub adaln_modulation: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.embeddings + self.blocks + self.head
    }

    pub fn total_with_adaln(&self) -> usize {
        self.total() + self.adaln_modulation
    }
}

impl ModelConfig {
    /// depth 2, width 8, two heads.
    pub fn micro(vocab_size: usize, seq_len: usize, num_classes: usize) -> Self {
        ModelConfig {
            depth: 2,
            width: 8,
            mlp_dim: 32,
            heads: 2,
            vocab_size,
            seq_len,
            num_classes,
            qk_norm: true,
            dropout: 0.0,
            attn_dropout: 0.0,
        }
    }

    /// depth 4, width 64, four heads.
    pub fn small(vocab_size: usize, seq_len: usize, num_classes: usize) -> Self {
        ModelConfig {
            depth: 4,
            width: 64,
            mlp_dim: 256,
            heads: 4,
            ..Self::micro(vocab_size, seq_len, num_classes)
        }
    }

    fn published(depth: usize, width: usize, mlp_dim: usize) -> Self {
        ModelConfig {
            depth,
            width,
            mlp_dim,
            heads: 16,
            vocab_size: 1024,
            seq_len: 256,
            num_classes: 1000,
            qk_norm: true,
            dropout: 0.1,
            attn_dropout: 0.1,
        }
    }

    pub fn rar_b() -> Self {
        Self::published(24, 768, 3072)
    }

    pub fn rar_l() -> Self {
        Self::published(24, 1024, 4096)
    }

    pub fn rar_xl() -> Self {
        Self::published(32, 1280, 5120)
    }

    pub fn rar_xxl() -> Self {
        Self::published(40, 1408, 6144)
    }

    /// Look up a preset by name. Desk presets take their data shape from the
    /// arguments; the published ones carry their own.
    pub fn preset(name: &str, vocab_size: usize, seq_len: usize, num_classes: usize) -> Result<Self> {
        Ok(match name {
            "micro" => Self::micro(vocab_size, seq_len, num_classes),
            "small" => Self::small(vocab_size, seq_len, num_classes),
            "rar-b" | "rar_b" => Self::rar_b(),
            "rar-l" | "rar_l" => Self::rar_l(),
            "rar-xl" | "rar_xl" => Self::rar_xl(),
            "rar-xxl" | "rar_xxl" => Self::rar_xxl(),
            other => return Err(Error::config(format!("unknown model preset {other:?}"))),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.vocab_size < 2 || self.seq_len < 2 || self.num_classes == 0 {
            return Err(Error::config("need vocab_size >= 2, seq_len >= 2, num_classes >= 1"));
        }
        if self.depth > 0 && self.mlp_dim == 0 {
            return Err(Error::config("mlp_dim must be positive"));
        }
        for (name, p) in [("dropout", self.dropout), ("attn_dropout", self.attn_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("ModelConfig serializes");
        serde_json::to_string(&value).expect("JSON value serializes")
    }

    /// Closed-form parameter count of the allocated model (with the
    /// target-aware table).
    pub fn param_count(&self) -> ParamCount {
        let (d, m, v, t, c) = (self.width, self.mlp_dim, self.vocab_size, self.seq_len, self.num_classes);
        let qk = if self.qk_norm { 4 * self.head_dim() } else { 0 };
        let per_block = 2 * d + 4 * (d * d + d) + qk + 2 * d + (d * m + m) + (m * d + d);
        let final_norm = if self.depth > 0 { 2 * d } else { 0 };
        ParamCount {
            embeddings: v * d + 2 * t * d + (c + 1) * d,
            blocks: self.depth * per_block + final_norm,
            head: d * v + v,
            adaln_modulation: if self.depth > 0 {
                self.depth * (6 * d * d + 6 * d) + (2 * d * d + 2 * d)
            } else {
                0
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_b_matches_reported_size() {
        let n = ModelConfig::rar_b().param_count().total_with_adaln() as f64;
        assert!((n / 261e6 - 1.0).abs() < 0.05, "{n}");
    }

    #[test]
    fn published_sizes_track_the_table() {
        for (cfg, reported) in [
            (ModelConfig::rar_l(), 461e6),
            (ModelConfig::rar_xl(), 955e6),
            (ModelConfig::rar_xxl(), 1499e6),
        ] {
            let n = cfg.param_count().total_with_adaln() as f64;
            assert!((n / reported - 1.0).abs() < 0.05, "{n} vs {reported}");
        }
    }

    #[test]
    fn validation() {
        let mut c = ModelConfig::micro(5, 8, 2);
        assert!(c.validate().is_ok());
        c.heads = 3;
        assert!(c.validate().is_err());
        assert!(ModelConfig::preset("huge", 2, 4, 1).is_err());
    }
}
