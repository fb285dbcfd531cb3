//! Residual age and gender classifiers used as frozen attribute critics.

use tch::nn::{self, Module};
use tch::Tensor;

use super::config::NetConfig;
use super::layers::{down, init_var_store, lrelu, ResBlock};
use crate::Result;

#[derive(Debug)]
struct Backbone {
    downs: Vec<nn::Conv2D>,
    blocks: Vec<ResBlock>,
    head: nn::Linear,
}

impl Backbone {
    fn new(p: nn::Path, cfg: &NetConfig, outputs: i64) -> Self {
        let w = cfg.classifier_widths;
        let downs = (0..w.len())
            .map(|i| down(&p / format!("down{i}"), if i == 0 { 3 } else { w[i - 1] }, w[i]))
            .collect();
        let blocks = (0..w.len())
            .map(|i| ResBlock::new(&p / format!("res{i}"), w[i]))
            .collect();
        let head = nn::linear(&p / "head", w[w.len() - 1] as i64, outputs, Default::default());
        Backbone { downs, blocks, head }
    }
}

impl Module for Backbone {
    fn forward(&self, xs: &Tensor) -> Tensor {
        let mut h = xs.shallow_clone();
        for (d, b) in self.downs.iter().zip(&self.blocks) {
            h = b.forward(&lrelu(&d.forward(&h)));
        }
        let pooled = lrelu(&h).mean_dim(&[2i64, 3][..], false, None);
        self.head.forward(&pooled)
    }
}

/// Four-way age-stage classifier.
#[derive(Debug)]
pub struct AgeClassifier {
    vs: nn::VarStore,
    net: Backbone,
}

impl AgeClassifier {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let net = Backbone::new(vs.root() / "age", cfg, 4);
        init_var_store(&vs, seed, 1.0);
        Ok(AgeClassifier { vs, net })
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    /// `[B, 4]` unnormalised scores.
    pub fn logits(&self, xs: &Tensor) -> Tensor {
        self.net.forward(xs)
    }

    /// `[B, 4]` stage probabilities.
    pub fn forward(&self, xs: &Tensor) -> Tensor {
        self.logits(xs).softmax(-1, None)
    }
}

/// Binary gender classifier; output is P(F).
#[derive(Debug)]
pub struct GenderClassifier {
    vs: nn::VarStore,
    net: Backbone,
}

impl GenderClassifier {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let net = Backbone::new(vs.root() / "gender", cfg, 1);
        init_var_store(&vs, seed, 1.0);
        Ok(GenderClassifier { vs, net })
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    /// `[B]` logits.
    pub fn logits(&self, xs: &Tensor) -> Tensor {
        self.net.forward(xs).squeeze_dim(1)
    }

    /// `[B]` probabilities in (0, 1).
    pub fn forward(&self, xs: &Tensor) -> Tensor {
        self.logits(xs).sigmoid()
    }
}
