//! Adversarial networks: the WGAN patch critic of the inheritance module and
//! the sigmoid discriminator of the attribute module.

use tch::nn::{self, Module};
use tch::Tensor;

use super::config::NetConfig;
use super::layers::{conv, down, init_var_store, lrelu};
use crate::Result;

/// Anything that maps an image batch to per-sample scores. Used by the
/// losses so that analytic critics can be plugged in.
pub trait Scorer {
    /// `[B, 3, H, W]` → `[B, ...]` scores.
    fn score(&self, xs: &Tensor) -> Tensor;
}

/// Critic emitting a 2×2 map of realism scores per image.
#[derive(Debug)]
pub struct PatchCritic {
    vs: nn::VarStore,
    convs: Vec<nn::Conv2D>,
    head: nn::Conv2D,
}

impl PatchCritic {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let root = vs.root();
        let w = cfg.critic_widths;
        let convs = (0..w.len())
            .map(|i| down(&root / format!("conv{i}"), if i == 0 { 3 } else { w[i - 1] }, w[i]))
            .collect();
        let head = conv(&root / "head", w[w.len() - 1], 1, 1, 1, 0);
        init_var_store(&vs, seed, 1.0);
        Ok(PatchCritic { vs, convs, head })
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    /// `[B, 3, S, S]` → `[B, 2, 2]`.
    pub fn forward(&self, xs: &Tensor) -> Tensor {
        let mut h = xs.shallow_clone();
        for c in &self.convs {
            h = lrelu(&c.forward(&h));
        }
        let pooled = h.adaptive_avg_pool2d([2, 2]);
        self.head.forward(&pooled).squeeze_dim(1)
    }
}

impl Scorer for PatchCritic {
    fn score(&self, xs: &Tensor) -> Tensor {
        self.forward(xs)
    }
}

/// Real-vs-synthesised discriminator with a scalar sigmoid output.
#[derive(Debug)]
pub struct AttributeDiscriminator {
    vs: nn::VarStore,
    convs: Vec<nn::Conv2D>,
    head: nn::Linear,
}

impl AttributeDiscriminator {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let root = vs.root();
        let w = cfg.critic_widths;
        let convs = (0..w.len())
            .map(|i| down(&root / format!("conv{i}"), if i == 0 { 3 } else { w[i - 1] }, w[i]))
            .collect();
        let head = nn::linear(&root / "head", w[w.len() - 1] as i64, 1, Default::default());
        init_var_store(&vs, seed, 1.0);
        Ok(AttributeDiscriminator { vs, convs, head })
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    /// `[B, 3, S, S]` → `[B]` probabilities in (0, 1).
    pub fn forward(&self, xs: &Tensor) -> Tensor {
        let mut h = xs.shallow_clone();
        for c in &self.convs {
            h = lrelu(&c.forward(&h));
        }
        let pooled = h.mean_dim(&[2i64, 3][..], false, None);
        self.head.forward(&pooled).squeeze_dim(1).sigmoid()
    }
}

impl Scorer for AttributeDiscriminator {
    fn score(&self, xs: &Tensor) -> Tensor {
        self.forward(xs)
    }
}
