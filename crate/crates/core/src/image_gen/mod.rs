//! Report-to-image generation: a learned text embedding feeding a
//! two-stage conditional GAN (a coarse low-resolution stage, then a
//! refinement stage conditioned on both the coarse image and the text).

mod model;
pub(crate) mod train;

pub use model::{
    ImageGenModel, Stage, TextEmbedding, CHECKPOINT_KIND, STAGE1_GROUPS, STAGE2_GROUPS,
};
pub use train::{generator_sample_loss, train_image_generator, StageTrace};

use crate::error::{Error, Result};

/// Hyperparameters of the image generator. The full profile uses the
/// published 256-dim text embedding, 2e-4 for generator and discriminator,
/// and 64/256 stage resolutions; the toy profile runs 32/64.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ImageGenConfig {
    pub embed_dim: usize,
    pub word_embed_dim: usize,
    pub noise_dim: usize,
    pub lr: f64,
    pub stage1_resolution: usize,
    pub stage2_resolution: usize,
    /// Tag recording the adversarial objective in manifests/checkpoints.
    pub adversarial_loss: String,
    /// Weight of the paired L1 reconstruction term in the generator loss;
    /// stabilizes desk-scale training and carries the text conditioning.
    pub l1_weight: f64,
    pub base_channels: usize,
    pub vocab_size: usize,
    pub batch_size: usize,
}

impl ImageGenConfig {
    pub fn full(vocab_size: usize) -> ImageGenConfig {
        ImageGenConfig {
            embed_dim: 256,
            word_embed_dim: 128,
            noise_dim: 100,
            lr: 2e-4,
            stage1_resolution: 64,
            stage2_resolution: 256,
            adversarial_loss: "non-saturating".into(),
            l1_weight: 1.0,
            base_channels: 32,
            vocab_size,
            batch_size: 8,
        }
    }

    pub fn toy(vocab_size: usize) -> ImageGenConfig {
        ImageGenConfig {
            embed_dim: 256,
            word_embed_dim: 64,
            noise_dim: 100,
            lr: 1e-3,
            stage1_resolution: 32,
            stage2_resolution: 64,
            adversarial_loss: "non-saturating".into(),
            l1_weight: 1.0,
            base_channels: 16,
            vocab_size,
            batch_size: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("image generator lr must be positive".into()));
        }
        for (name, dim) in [
            ("embed_dim", self.embed_dim),
            ("word_embed_dim", self.word_embed_dim),
            ("noise_dim", self.noise_dim),
            ("base_channels", self.base_channels),
            ("vocab_size", self.vocab_size),
            ("batch_size", self.batch_size),
        ] {
            if dim == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, res) in [
            ("stage1_resolution", self.stage1_resolution),
            ("stage2_resolution", self.stage2_resolution),
        ] {
            if !res.is_power_of_two() || res < 8 {
                return Err(Error::Config(format!(
                    "{name} = {res} must be a power of two >= 8"
                )));
            }
        }
        if self.stage2_resolution <= self.stage1_resolution {
            return Err(Error::Config(
                "stage 2 resolution must exceed stage 1".into(),
            ));
        }
        if self.l1_weight < 0.0 {
            return Err(Error::Config("l1_weight must be >= 0".into()));
        }
        Ok(())
    }
}
