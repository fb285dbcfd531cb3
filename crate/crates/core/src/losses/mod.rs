//! Training objectives for the inheritance and attribute modules.
//!
//! All reductions are batch means. Distances are normalised by element count
//! so that the default weights behave the same across canvas sizes.

use std::ops::{Add, Mul};

use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::networks::{AgeClassifier, GenderClassifier, PerceptualExtractor, PerceptualFeatures, Scorer};
use crate::{Error, Result};

pub mod gradcheck;

const PROB_EPS: f64 = 1e-7;

/// Loss weights. Field names follow the usual lambda subscripts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the attribute objective in the total.
    pub lambda0: f64,
    /// Inheritance pixel term.
    pub lambda11: f64,
    /// Inheritance adversarial term.
    pub lambda12: f64,
    /// Inheritance perceptual term.
    pub lambda13: f64,
    /// Attribute adversarial term.
    pub lambda21: f64,
    /// Attribute perceptual term.
    pub lambda22: f64,
    /// Gradient penalty of the patch critic.
    pub lambda_gp: f64,
    /// Age/gender classification of attribute-module renders under relabelled
    /// targets. Not part of the attribute reconstruction objective.
    pub lambda_ctl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda0: 1.0,
            lambda11: 10.0,
            lambda12: 0.1,
            lambda13: 0.1,
            lambda21: 0.001,
            lambda22: 0.1,
            lambda_gp: 10.0,
            lambda_ctl: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("lambda0", self.lambda0),
            ("lambda11", self.lambda11),
            ("lambda12", self.lambda12),
            ("lambda13", self.lambda13),
            ("lambda21", self.lambda21),
            ("lambda22", self.lambda22),
            ("lambda_gp", self.lambda_gp),
            ("lambda_ctl", self.lambda_ctl),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(name, format!("must be a nonnegative real, got {v}")));
            }
        }
        Ok(())
    }

    /// Every weight multiplied by `k`.
    pub fn scaled(&self, k: f64) -> LossWeights {
        LossWeights {
            lambda0: self.lambda0 * k,
            lambda11: self.lambda11 * k,
            lambda12: self.lambda12 * k,
            lambda13: self.lambda13 * k,
            lambda21: self.lambda21 * k,
            lambda22: self.lambda22 * k,
            lambda_gp: self.lambda_gp * k,
            lambda_ctl: self.lambda_ctl * k,
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.size(),
            b.size()
        )));
    }
    Ok(())
}

/// Mean over the batch of the per-image RMS pixel distance.
pub fn pixel_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "pixel_loss")?;
    let bsz = a.size()[0];
    let per_image = (a - b).reshape([bsz, -1]);
    let numel = per_image.size()[1] as f64;
    let norms = per_image.norm_scalaropt_dim(2.0, [1i64], false);
    Ok(norms.mean(None::<Kind>) / numel.sqrt())
}

/// Per-sample critic value: the score map reduced by its mean.
pub fn critic_value(critic: &dyn Scorer, xs: &Tensor) -> Tensor {
    let s = critic.score(xs);
    let b = s.size()[0];
    s.reshape([b, -1]).mean_dim(&[1i64][..], false, None::<Kind>)
}

/// Uniform(0, 1) interpolation weights, one per sample, shaped `[B, 1, 1, 1]`.
pub fn interpolation_weights<R: Rng + ?Sized>(rng: &mut R, batch: i64, kind: Kind) -> Tensor {
    let u: Vec<f64> = (0..batch).map(|_| rng.random::<f64>()).collect();
    Tensor::from_slice(&u).view([batch, 1, 1, 1]).to_kind(kind)
}

/// `λ_gp · mean_b (‖∇ D(ũ_b)‖₂ − 1)²` at `ũ = u·real + (1−u)·fake`.
///
/// The graph is kept so the penalty can itself be differentiated.
pub fn gradient_penalty(critic: &dyn Scorer, real: &Tensor, fake: &Tensor, u: &Tensor, lambda_gp: f64) -> Result<Tensor> {
    same_shape(real, fake, "gradient_penalty")?;
    let bsz = real.size()[0];
    if u.numel() as i64 != bsz {
        return Err(Error::ShapeMismatch(format!(
            "gradient_penalty: {} weights for batch {bsz}",
            u.numel()
        )));
    }
    let u = u.view([bsz, 1, 1, 1]);
    let mixed: Tensor = &u * real + (-&u + 1.0) * fake;
    // leaf-like input when both endpoints are constants
    let mixed = if mixed.requires_grad() {
        mixed
    } else {
        mixed.detach().set_requires_grad(true)
    };
    let d = critic_value(critic, &mixed).sum(None::<Kind>);
    let grads = Tensor::run_backward(&[d], &[&mixed], true, true);
    let norms = grads[0]
        .reshape([bsz, -1])
        .norm_scalaropt_dim(2.0, [1i64], false);
    Ok((norms - 1.0).square().mean(None::<Kind>) * lambda_gp)
}

/// Critic and generator sides of the WGAN objective.
#[derive(Debug)]
pub struct WganLosses {
    pub critic: Tensor,
    pub generator: Tensor,
}

/// `mean D(fake) − mean D(real) + penalty`. Pass a detached `fake` for
/// critic updates.
pub fn wgan_critic_loss(critic: &dyn Scorer, real: &Tensor, fake: &Tensor, u: &Tensor, lambda_gp: f64) -> Result<Tensor> {
    same_shape(real, fake, "wgan_critic_loss")?;
    let gp = gradient_penalty(critic, real, fake, u, lambda_gp)?;
    let w = critic_value(critic, fake).mean(None::<Kind>) - critic_value(critic, real).mean(None::<Kind>);
    Ok(w + gp)
}

/// `−mean D(fake)`.
pub fn wgan_generator_loss(critic: &dyn Scorer, fake: &Tensor) -> Tensor {
    -critic_value(critic, fake).mean(None::<Kind>)
}

pub fn wgan_losses(critic: &dyn Scorer, real: &Tensor, fake: &Tensor, u: &Tensor, lambda_gp: f64) -> Result<WganLosses> {
    Ok(WganLosses {
        critic: wgan_critic_loss(critic, real, fake, u, lambda_gp)?,
        generator: wgan_generator_loss(critic, fake),
    })
}

fn check_labels(labels: &Tensor, batch: i64) -> Result<()> {
    if labels.size() != [batch, 5] {
        return Err(Error::ShapeMismatch(format!(
            "labels must be [{batch}, 5], got {:?}",
            labels.size()
        )));
    }
    Ok(())
}

/// Mean squared L2 distance between stage probabilities `[B, 4]` and the
/// one-hot part of `labels` `[B, 5]`.
pub fn age_loss_from_probs(probs: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let b = probs.size()[0];
    check_labels(labels, b)?;
    if probs.size() != [b, 4] {
        return Err(Error::ShapeMismatch(format!("age probabilities {:?}", probs.size())));
    }
    let target = labels.narrow(1, 0, 4).to_kind(probs.kind());
    Ok((probs - target)
        .square()
        .sum_dim_intlist(&[1i64][..], false, None::<Kind>)
        .mean(None::<Kind>))
}

/// Mean squared distance between P(F) `[B]` and the gender code of `labels`.
pub fn gender_loss_from_probs(probs: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let b = probs.size()[0];
    check_labels(labels, b)?;
    if probs.size() != [b] {
        return Err(Error::ShapeMismatch(format!("gender probabilities {:?}", probs.size())));
    }
    let target = labels.select(1, 4).to_kind(probs.kind());
    Ok((probs - target).square().mean(None::<Kind>))
}

pub fn age_loss(faces: &Tensor, labels: &Tensor, classifier: &AgeClassifier) -> Result<Tensor> {
    age_loss_from_probs(&classifier.forward(faces), labels)
}

pub fn gender_loss(faces: &Tensor, labels: &Tensor, classifier: &GenderClassifier) -> Result<Tensor> {
    gender_loss_from_probs(&classifier.forward(faces), labels)
}

/// Sum over both taps of the mean squared feature difference.
pub fn perceptual_loss_from_features(a: &PerceptualFeatures, b: &PerceptualFeatures) -> Result<Tensor> {
    same_shape(&a.tap22, &b.tap22, "perceptual tap22")?;
    same_shape(&a.tap54, &b.tap54, "perceptual tap54")?;
    Ok((&a.tap22 - &b.tap22).square().mean(None::<Kind>) + (&a.tap54 - &b.tap54).square().mean(None::<Kind>))
}

pub fn perceptual_loss(a: &Tensor, b: &Tensor, extractor: &PerceptualExtractor) -> Result<Tensor> {
    same_shape(a, b, "perceptual_loss")?;
    perceptual_loss_from_features(&extractor.features(a), &extractor.features(b))
}

/// Discriminator and generator sides of the attribute-module GAN.
#[derive(Debug)]
pub struct AdversarialLosses {
    pub discriminator: Tensor,
    pub generator: Tensor,
}

/// Non-saturating GAN losses from probabilities `D(real)` and `D(fake)`.
pub fn adversarial_losses_from_probs(p_real: &Tensor, p_fake: &Tensor) -> AdversarialLosses {
    let r = p_real.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let f = p_fake.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let disc = -r.log().mean(None::<Kind>) - (-&f + 1.0).log().mean(None::<Kind>);
    let gen = -f.log().mean(None::<Kind>);
    AdversarialLosses {
        discriminator: disc,
        generator: gen,
    }
}

pub fn attribute_adversarial_losses(disc: &dyn Scorer, real: &Tensor, fake: &Tensor) -> Result<AdversarialLosses> {
    same_shape(real, fake, "attribute_adversarial_losses")?;
    Ok(adversarial_losses_from_probs(&disc.score(real), &disc.score(fake)))
}

/// Parts of the inheritance objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InheritanceParts<T> {
    pub age: T,
    pub gender: T,
    pub pixel: T,
    pub adversarial: T,
    pub perceptual: T,
}

/// Parts of the attribute objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeParts<T> {
    pub pixel: T,
    pub adversarial: T,
    pub perceptual: T,
}

/// `age + gender + λ11·pixel + λ12·adversarial + λ13·perceptual`.
pub fn total_inheritance_loss<T>(p: InheritanceParts<T>, w: &LossWeights) -> T
where
    T: Add<Output = T> + Mul<f64, Output = T>,
{
    p.age + p.gender + p.pixel * w.lambda11 + p.adversarial * w.lambda12 + p.perceptual * w.lambda13
}

/// `pixel + λ21·adversarial + λ22·perceptual`.
pub fn total_attribute_loss<T>(p: AttributeParts<T>, w: &LossWeights) -> T
where
    T: Add<Output = T> + Mul<f64, Output = T>,
{
    p.pixel + p.adversarial * w.lambda21 + p.perceptual * w.lambda22
}

/// `inheritance + λ0·attribute`.
pub fn total_loss<T>(inheritance: T, attribute: T, w: &LossWeights) -> T
where
    T: Add<Output = T> + Mul<f64, Output = T>,
{
    inheritance + attribute * w.lambda0
}
