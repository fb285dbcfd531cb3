//! Building blocks and deterministic parameter initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tch::nn::{self, Module};
use tch::Tensor;

pub(crate) fn lrelu(xs: &Tensor) -> Tensor {
    xs.maximum(&(xs * 0.2))
}

/// Uniform-init gain that preserves activation variance through a
/// leaky-ReLU layer with slope 0.2.
pub const LRELU_GAIN: f64 = 2.4019223070763068;

pub(crate) fn to_unit_range(xs: &Tensor) -> Tensor {
    (xs.tanh() + 1.0) * 0.5
}

pub(crate) fn conv(p: nn::Path, cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> nn::Conv2D {
    let cfg = nn::ConvConfig {
        stride: stride as i64,
        padding: padding as i64,
        ..Default::default()
    };
    nn::conv2d(p, cin as i64, cout as i64, k as i64, cfg)
}

/// `3×3` convolution preserving spatial size.
pub(crate) fn conv3(p: nn::Path, cin: usize, cout: usize) -> nn::Conv2D {
    conv(p, cin, cout, 3, 1, 1)
}

/// `4×4` stride-2 convolution halving spatial size.
pub(crate) fn down(p: nn::Path, cin: usize, cout: usize) -> nn::Conv2D {
    conv(p, cin, cout, 4, 2, 1)
}

/// Pre-activation residual block: `x + conv(lrelu(conv(lrelu(x))))`.
#[derive(Debug)]
pub struct ResBlock {
    conv1: nn::Conv2D,
    conv2: nn::Conv2D,
}

impl ResBlock {
    pub fn new(p: nn::Path, channels: usize) -> Self {
        ResBlock {
            conv1: conv3(&p / "conv1", channels, channels),
            conv2: conv3(&p / "conv2", channels, channels),
        }
    }
}

impl Module for ResBlock {
    fn forward(&self, xs: &Tensor) -> Tensor {
        let h = self.conv1.forward(&lrelu(xs));
        xs + self.conv2.forward(&lrelu(&h))
    }
}

/// Overwrites every variable of `vs` from a seeded stream: weights uniform
/// in `±gain/√fan_in`, biases uniform in `±1/√fan_in`. Variables are visited
/// in name order so the result depends only on `seed` and the architecture.
pub fn init_var_store(vs: &nn::VarStore, seed: u64, gain: f64) {
    let vars = vs.variables();
    let mut names: Vec<&String> = vars.keys().collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fan_in_of = |name: &str| -> usize {
        let weight = name.strip_suffix("bias").map(|s| format!("{s}weight"));
        let t = weight.as_ref().and_then(|w| vars.get(w)).unwrap_or(&vars[name]);
        let size = t.size();
        if size.len() <= 1 {
            size.first().copied().unwrap_or(1).max(1) as usize
        } else {
            size[1..].iter().product::<i64>().max(1) as usize
        }
    };
    tch::no_grad(|| {
        for name in names {
            let var = &vars[name];
            let fan_in = fan_in_of(name) as f64;
            let bound = if name.ends_with("bias") {
                1.0 / fan_in.sqrt()
            } else {
                gain / fan_in.sqrt()
            };
            let n = var.numel();
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            let t = Tensor::from_slice(&values)
                .reshape(var.size())
                .to_kind(var.kind());
            let mut var = var.shallow_clone();
            var.copy_(&t);
        }
    });
}

/// Multiplies the weights of `c` by `k` in place.
pub(crate) fn scale_weights(c: &nn::Conv2D, k: f64) {
    tch::no_grad(|| {
        let _ = c.ws.shallow_clone().g_mul_scalar_(k);
    });
}

/// Sets every variable of `vs` to zero.
pub fn zero_var_store(vs: &nn::VarStore) {
    tch::no_grad(|| {
        for (_, v) in vs.variables() {
            let mut v = v;
            let _ = v.zero_();
        }
    });
}

/// SHA-256 over variable names and raw values, in name order.
pub fn parameter_hash(vs: &nn::VarStore) -> String {
    let vars = vs.variables();
    let mut names: Vec<&String> = vars.keys().collect();
    names.sort();
    let mut h = Sha256::new();
    for name in names {
        h.update(name.as_bytes());
        let t = vars[name].detach().to_kind(tch::Kind::Double).contiguous().view([-1]);
        let vals = Vec::<f64>::try_from(&t).unwrap_or_default();
        for v in vals {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

/// Total number of scalar parameters.
pub fn parameter_count(vs: &nn::VarStore) -> usize {
    vs.variables().values().map(|t| t.numel()).sum()
}
