//! Attribute enhancement module `f_att`: a conditional auto-encoder whose
//! bottleneck is concatenated with the 5-dim age/gender encoding.
//!
//! The decoder predicts a correction added to the input in pre-activation
//! space, so an untrained module is close to the identity and the
//! bottleneck only has to carry the attribute edit.

use tch::nn::{self, Module};
use tch::Tensor;

use super::config::NetConfig;
use super::layers::{conv3, init_var_store, lrelu, scale_weights, to_unit_range};
use crate::{Error, Result};

pub const STAGES: usize = 5;

/// Scale applied to the initial weights of the last decoder convolution.
const OUTPUT_GAIN: f64 = 0.1;

/// Inputs are clamped this far inside (0, 1) before inverting the output
/// activation.
const BASE_MARGIN: f64 = 1e-3;

#[derive(Debug)]
pub struct AttributeNet {
    vs: nn::VarStore,
    cfg: NetConfig,
    enc_convs: Vec<nn::Conv2D>,
    enc_fc: nn::Linear,
    dec_fc: nn::Linear,
    dec_convs: Vec<nn::Conv2D>,
    bottleneck_side: i64,
}

impl AttributeNet {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let root = vs.root();
        let w = cfg.attr_widths;
        let side = (cfg.canvas >> STAGES) as i64;
        let flat = w[STAGES - 1] as i64 * side * side;

        let enc_convs = (0..STAGES)
            .map(|i| {
                let cin = if i == 0 { 3 } else { w[i - 1] };
                conv3(&root / "enc" / format!("conv{i}"), cin, w[i])
            })
            .collect();
        let enc_fc = nn::linear(&root / "enc" / "fc", flat, cfg.attr_latent_dim as i64, Default::default());
        let dec_fc = nn::linear(
            &root / "dec" / "fc",
            cfg.attr_latent_dim as i64 + 5,
            flat,
            Default::default(),
        );
        // Mirror of the encoder widths, ending in RGB.
        let dec_convs = (0..STAGES)
            .map(|i| {
                let cin = w[STAGES - 1 - i];
                let cout = if i + 1 == STAGES { 3 } else { w[STAGES - 2 - i] };
                conv3(&root / "dec" / format!("conv{i}"), cin, cout)
            })
            .collect();
        init_var_store(&vs, seed, 1.0);
        let dec_convs: Vec<nn::Conv2D> = dec_convs;
        scale_weights(&dec_convs[STAGES - 1], OUTPUT_GAIN);
        Ok(AttributeNet {
            vs,
            cfg: cfg.clone(),
            enc_convs,
            enc_fc,
            dec_fc,
            dec_convs,
            bottleneck_side: side,
        })
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// `[B, 3, S, S]` → `[B, d]`.
    pub fn encode(&self, xs: &Tensor) -> Result<Tensor> {
        let s = self.cfg.canvas as i64;
        let size = xs.size();
        if size.len() != 4 || size[1..] != [3, s, s] {
            return Err(Error::ShapeMismatch(format!(
                "attribute input must be [B, 3, {s}, {s}], got {size:?}"
            )));
        }
        let mut h = xs.shallow_clone();
        for c in &self.enc_convs {
            h = lrelu(&c.forward(&h)).max_pool2d_default(2);
        }
        Ok(self.enc_fc.forward(&h.flatten(1, -1)))
    }

    /// `[B, d]` latent, `[B, 5]` label encoding and the `[B, 3, S, S]` face
    /// being edited → `[B, 3, S, S]`.
    pub fn decode(&self, latent: &Tensor, labels: &Tensor, base: &Tensor) -> Tensor {
        let b = latent.size()[0];
        let z = Tensor::cat(&[latent.shallow_clone(), labels.to_kind(latent.kind())], 1);
        let w = self.cfg.attr_widths[STAGES - 1] as i64;
        let mut h = lrelu(&self.dec_fc.forward(&z)).view([b, w, self.bottleneck_side, self.bottleneck_side]);
        for (i, c) in self.dec_convs.iter().enumerate() {
            let size = h.size();
            let up = h.upsample_nearest2d([size[2] * 2, size[3] * 2], None, None);
            h = c.forward(&up);
            if i + 1 < STAGES {
                h = lrelu(&h);
            }
        }
        let pre = (base.clamp(BASE_MARGIN, 1.0 - BASE_MARGIN) * 2.0 - 1.0).atanh();
        to_unit_range(&(h + pre))
    }

    pub fn forward(&self, xs: &Tensor, labels: &Tensor) -> Result<Tensor> {
        let b = xs.size()[0];
        if labels.size() != vec![b, 5] {
            return Err(Error::ShapeMismatch(format!("labels {:?}, expected [{b}, 5]", labels.size())));
        }
        Ok(self.decode(&self.encode(xs)?, labels, xs))
    }
}
