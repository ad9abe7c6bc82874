use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CLIP release per-channel statistics, RGB order.
pub const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

/// Per-channel input normalization applied after augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: CLIP_MEAN,
            std: CLIP_STD,
        }
    }
}

/// ViT architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    #[serde(default = "default_eps")]
    pub layernorm_eps: f64,
    #[serde(default)]
    pub normalization: Normalization,
}

fn default_eps() -> f64 {
    1e-5
}

impl EncoderConfig {
    /// ViT-B/16: 12 layers, width 768, 12 heads.
    pub fn vit_b() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            embed_dim: 768,
            num_layers: 12,
            num_heads: 12,
            mlp_ratio: 4,
            layernorm_eps: default_eps(),
            normalization: Normalization::default(),
        }
    }

    /// ViT-L/14: 24 layers, width 1024, 16 heads.
    pub fn vit_l() -> Self {
        Self {
            image_size: 224,
            patch_size: 14,
            embed_dim: 1024,
            num_layers: 24,
            num_heads: 16,
            mlp_ratio: 4,
            layernorm_eps: default_eps(),
            normalization: Normalization::default(),
        }
    }

    /// Tiny architecture for tests and desk-scale runs.
    pub fn toy() -> Self {
        Self {
            image_size: 16,
            patch_size: 4,
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            mlp_ratio: 4,
            layernorm_eps: default_eps(),
            normalization: Normalization::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "vit-b" => Ok(Self::vit_b()),
            "vit-l" => Ok(Self::vit_l()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::config(format!("unknown encoder preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(self.layernorm_eps > 0.0) {
            return Err(Error::config("layernorm_eps must be positive"));
        }
        if self.normalization.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("normalization std must be positive"));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn mlp_dim(&self) -> usize {
        self.mlp_ratio * self.embed_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts() {
        assert_eq!(EncoderConfig::vit_b().num_tokens(), 197);
        assert_eq!(EncoderConfig::toy().num_tokens(), 17);
        assert_eq!(EncoderConfig::vit_l().num_patches(), 256);
    }

    #[test]
    fn presets_validate() {
        for name in ["vit-b", "vit-l", "toy"] {
            EncoderConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(EncoderConfig::preset("vit-h").is_err());
    }

    #[test]
    fn rejects_indivisible_sizes() {
        let mut cfg = EncoderConfig::toy();
        cfg.patch_size = 5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = EncoderConfig::toy();
        cfg.num_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::toy();
        cfg.num_layers = 0;
        assert!(cfg.validate().is_err());
    }
}
