//! Fixed VGG19-topology feature extractor with two tap points: the second
//! convolution before the second max-pool and the fourth convolution before
//! the fifth max-pool.
//!
//! Variables are named `features.<index>` with torchvision's layer indices,
//! so pretrained VGG19 weights load directly into the full-width variant.

use std::path::Path;

use tch::nn::{self, Module};
use tch::{Kind, Tensor};

use super::layers::{conv3, init_var_store};
use crate::Result;

const BLOCK_CONVS: [usize; 5] = [2, 2, 4, 4, 4];
const VGG19_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// The two tapped feature maps.
#[derive(Debug)]
pub struct PerceptualFeatures {
    pub tap22: Tensor,
    pub tap54: Tensor,
}

#[derive(Debug)]
pub struct PerceptualExtractor {
    vs: nn::VarStore,
    blocks: Vec<Vec<nn::Conv2D>>,
    normalize: bool,
}

impl PerceptualExtractor {
    fn build(widths: [usize; 5]) -> (nn::VarStore, Vec<Vec<nn::Conv2D>>) {
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let features = vs.root() / "features";
        let mut index = 0usize;
        let mut cin = 3;
        let mut blocks = Vec::new();
        for (b, &n) in BLOCK_CONVS.iter().enumerate() {
            let mut convs = Vec::new();
            for _ in 0..n {
                convs.push(conv3(&features / index.to_string(), cin, widths[b]));
                cin = widths[b];
                index += 2; // conv + relu
            }
            index += 1; // max-pool
            blocks.push(convs);
        }
        (vs, blocks)
    }

    /// Randomly initialised extractor with fixed weights derived from `seed`.
    pub fn random(widths: [usize; 5], seed: u64) -> Self {
        let (mut vs, blocks) = Self::build(widths);
        // He-uniform keeps activations from vanishing through 16 layers.
        init_var_store(&vs, seed, 6f64.sqrt());
        vs.freeze();
        PerceptualExtractor {
            vs,
            blocks,
            normalize: false,
        }
    }

    /// Full-width VGG19 features loaded from a `tch` weight file.
    pub fn pretrained(path: &Path) -> Result<Self> {
        let (mut vs, blocks) = Self::build(VGG19_WIDTHS);
        vs.load(path)?;
        vs.freeze();
        Ok(PerceptualExtractor {
            vs,
            blocks,
            normalize: true,
        })
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    /// `[B, 3, S, S]` in [0, 1] → both taps (post-ReLU).
    pub fn features(&self, xs: &Tensor) -> PerceptualFeatures {
        let mut h = if self.normalize {
            let mean = Tensor::from_slice(&IMAGENET_MEAN).view([1, 3, 1, 1]).to_kind(xs.kind());
            let std = Tensor::from_slice(&IMAGENET_STD).view([1, 3, 1, 1]).to_kind(xs.kind());
            (xs - mean) / std
        } else {
            xs.shallow_clone()
        };
        let mut tap22 = None;
        for (b, convs) in self.blocks.iter().enumerate() {
            for (j, c) in convs.iter().enumerate() {
                h = c.forward(&h).relu();
                if b == 1 && j == 1 {
                    tap22 = Some(h.shallow_clone());
                }
            }
            if b + 1 < self.blocks.len() {
                h = h.max_pool2d_default(2);
            }
        }
        PerceptualFeatures {
            tap22: tap22.expect("block 2 has two convolutions"),
            tap54: h,
        }
    }

    pub fn kind(&self) -> Kind {
        self.vs
            .variables()
            .values()
            .next()
            .map(|t| t.kind())
            .unwrap_or(Kind::Float)
    }
}
