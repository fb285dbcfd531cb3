//! Adam with explicit, checkpointable moment tensors.

use serde::{Deserialize, Serialize};
use tch::{nn, Tensor};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(name, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::validation("eps", "must be positive"));
        }
        Ok(())
    }
}

/// Adam over the trainable variables of one var store, visited in name order.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    steps: u64,
    names: Vec<String>,
    params: Vec<Tensor>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(vs: &nn::VarStore, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        let vars = vs.variables();
        let mut names: Vec<String> = vars
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(n, _)| n.clone())
            .collect();
        names.sort();
        let params: Vec<Tensor> = names.iter().map(|n| vars[n].shallow_clone()).collect();
        let m = params.iter().map(|p| p.zeros_like().detach()).collect();
        let v = params.iter().map(|p| p.zeros_like().detach()).collect();
        Ok(Adam {
            cfg,
            steps: 0,
            names,
            params,
            m,
            v,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Differentiates `loss` w.r.t. the tracked parameters only and applies
    /// one update. Gradients are not accumulated into `.grad()`.
    pub fn minimize(&mut self, loss: &Tensor) -> Result<()> {
        let inputs: Vec<&Tensor> = self.params.iter().collect();
        let grads = Tensor::f_run_backward(&[loss], &inputs, false, false)?;
        self.apply(&grads);
        Ok(())
    }

    /// One update from externally computed gradients (undefined = unused).
    pub fn apply(&mut self, grads: &[Tensor]) {
        self.steps += 1;
        let t = self.steps as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        tch::no_grad(|| {
            for (i, g) in grads.iter().enumerate() {
                if !g.defined() {
                    continue;
                }
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                let _ = m.g_mul_scalar_(c.beta1).g_add_(&(g * (1.0 - c.beta1)));
                let _ = v.g_mul_scalar_(c.beta2).g_add_(&(g.square() * (1.0 - c.beta2)));
                let denom = (&*v / bc2).sqrt() + c.eps;
                let update = (&*m / bc1) / denom * c.lr;
                let _ = self.params[i].g_sub_(&update);
            }
        });
    }

    /// Moments and step count as named tensors for checkpointing.
    pub fn state(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![(format!("{prefix}/steps"), Tensor::from_slice(&[self.steps as i64]))];
        for (i, n) in self.names.iter().enumerate() {
            out.push((format!("{prefix}/m/{n}"), self.m[i].shallow_clone()));
            out.push((format!("{prefix}/v/{n}"), self.v[i].shallow_clone()));
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, tensors: &std::collections::HashMap<String, Tensor>) -> Result<()> {
        let get = |key: String| {
            tensors
                .get(&key)
                .ok_or_else(|| Error::Incompatible(format!("missing optimizer tensor {key}")))
        };
        let steps = get(format!("{prefix}/steps"))?.int64_value(&[0]);
        for (i, n) in self.names.clone().iter().enumerate() {
            for (which, slot) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let src = get(format!("{prefix}/{which}/{n}"))?;
                if src.size() != slot.size() {
                    return Err(Error::Incompatible(format!(
                        "optimizer tensor {prefix}/{which}/{n}: {:?} vs {:?}",
                        src.size(),
                        slot.size()
                    )));
                }
                tch::no_grad(|| slot.copy_(src));
            }
        }
        self.steps = steps as u64;
        Ok(())
    }
}
