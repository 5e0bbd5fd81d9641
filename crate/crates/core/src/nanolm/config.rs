use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Shape of the student model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub context_len: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// Default shape; vocab size comes from the tokenizer.
    pub fn for_vocab(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            model_dim: 128,
            ff_dim: 512,
            context_len: 1024,
            vocab_size,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("model_dim", self.model_dim),
            ("ff_dim", self.ff_dim),
            ("context_len", self.context_len),
            ("vocab_size", self.vocab_size),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(CoreError::invalid(format!("{name} must be positive")));
            }
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(CoreError::invalid(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ModelConfig::for_vocab(235);
        cfg.validate().unwrap();
        assert_eq!(cfg.n_layers, 4);
        assert_eq!(cfg.model_dim, 128);
        assert_eq!(cfg.head_dim(), 32);
    }

    #[test]
    fn bad_shapes_rejected() {
        let mut cfg = ModelConfig::for_vocab(100);
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        cfg.n_heads = 0;
        assert!(cfg.validate().is_err());
    }
}
