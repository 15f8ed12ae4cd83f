use serde::{Deserialize, Serialize};

use crate::attributes::tokenizer::MAX_TOKENS;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageEncoderConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        Self {
            image_height: 384,
            image_width: 128,
            patch_size: 32,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
        }
    }
}

impl ImageEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_height == 0 || self.image_width == 0 {
            return Err(Error::config("image and patch extents must be positive"));
        }
        if self.image_height % self.patch_size != 0 || self.image_width % self.patch_size != 0 {
            return Err(Error::config(format!(
                "image {}×{} is not divisible by patch size {}",
                self.image_height, self.image_width, self.patch_size
            )));
        }
        check_heads(self.embed_dim, self.num_heads)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_size, self.image_width / self.patch_size)
    }

    /// Number of patches (without `[CLS]`).
    pub fn num_patches(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub cross_layers: usize,
    pub num_heads: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8192,
            max_tokens: MAX_TOKENS,
            embed_dim: 64,
            num_layers: 2,
            cross_layers: 2,
            num_heads: 4,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= 4 {
            return Err(Error::config("vocabulary must hold more than the 4 special tokens"));
        }
        if self.max_tokens == 0 {
            return Err(Error::config("max_tokens must be positive"));
        }
        check_heads(self.embed_dim, self.num_heads)
    }
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if dim == 0 || heads == 0 || dim % heads != 0 {
        return Err(Error::config(format!("embed_dim {dim} is not divisible into {heads} heads")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image: ImageEncoderConfig,
    pub text: TextEncoderConfig,
    /// Width of the contrastive feature space.
    pub proj_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image: ImageEncoderConfig::default(),
            text: TextEncoderConfig::default(),
            proj_dim: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        self.text.validate()?;
        if self.proj_dim == 0 {
            return Err(Error::config("proj_dim must be positive"));
        }
        Ok(())
    }

    /// A very small model for gradient checks and unit tests.
    pub fn tiny(vocab_size: usize, dim: usize) -> Self {
        Self {
            image: ImageEncoderConfig {
                image_height: 16,
                image_width: 8,
                patch_size: 4,
                embed_dim: dim,
                num_layers: 1,
                num_heads: 2,
            },
            text: TextEncoderConfig {
                vocab_size,
                max_tokens: MAX_TOKENS,
                embed_dim: dim,
                num_layers: 1,
                cross_layers: 1,
                num_heads: 2,
            },
            proj_dim: dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_give_48_patches() {
        let c = ImageEncoderConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 48);
        assert_eq!(c.grid(), (12, 4));
    }

    #[test]
    fn indivisible_dims_are_a_config_error() {
        let c = ImageEncoderConfig {
            image_height: 100,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let t = TextEncoderConfig {
            num_heads: 5,
            ..Default::default()
        };
        assert!(t.validate().is_err());
    }
}
