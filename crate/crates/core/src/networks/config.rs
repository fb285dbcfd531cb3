use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture hyperparameters shared by every network and stored in
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Canvas side S.
    pub canvas: usize,
    /// Inheritance encoder stride r (a power of two).
    pub stride: usize,
    /// Shared latent channels c of the component encoders.
    pub latent_channels: usize,
    /// Noise channels n appended to the decoder input.
    pub noise_channels: usize,
    /// Attribute-module bottleneck size d.
    pub attr_latent_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_channels: usize,
    pub attr_widths: [usize; 5],
    pub critic_widths: [usize; 4],
    pub classifier_widths: [usize; 3],
    /// Channel widths of the five perceptual blocks.
    pub perceptual_widths: [usize; 5],
}

impl NetConfig {
    /// Small networks for CPU-scale training on 64×64 toy faces.
    pub fn desk(canvas: usize) -> Self {
        NetConfig {
            canvas,
            stride: 4,
            latent_channels: 32,
            noise_channels: 8,
            attr_latent_dim: 128,
            encoder_hidden: 16,
            decoder_channels: 32,
            attr_widths: [16, 32, 64, 64, 128],
            critic_widths: [8, 16, 32, 64],
            classifier_widths: [16, 32, 64],
            perceptual_widths: [8, 16, 32, 32, 32],
        }
    }

    /// 256×256 configuration with VGG19-width perceptual features.
    pub fn full() -> Self {
        NetConfig {
            canvas: 256,
            stride: 4,
            latent_channels: 64,
            noise_channels: 8,
            attr_latent_dim: 512,
            encoder_hidden: 32,
            decoder_channels: 64,
            attr_widths: [32, 64, 128, 256, 256],
            critic_widths: [64, 128, 256, 256],
            classifier_widths: [64, 128, 256],
            perceptual_widths: [64, 128, 256, 512, 512],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation("net_config", m));
        if !self.stride.is_power_of_two() || self.stride < 2 {
            return bad(format!("stride must be a power of two ≥ 2, got {}", self.stride));
        }
        if self.canvas % 32 != 0 {
            return bad(format!("canvas must be divisible by 32, got {}", self.canvas));
        }
        if self.latent_channels == 0 || self.attr_latent_dim == 0 || self.decoder_channels < 4 {
            return bad("channel counts must be positive".into());
        }
        Ok(())
    }

    /// Decoder input channels: c + 4 (age) + 1 (gender) + n.
    pub fn decoder_input_channels(&self) -> usize {
        self.latent_channels + 5 + self.noise_channels
    }

    pub fn latent_side(&self) -> usize {
        self.canvas / self.stride
    }

    pub fn down_steps(&self) -> usize {
        self.stride.trailing_zeros() as usize
    }
}
