//! Central finite-difference checks of the loss gradients.
//!
//! A small two-layer generator produces the fake batch; every loss is
//! differentiated w.r.t. a random sample of its parameters and compared with
//! `(L(θ+h) − L(θ−h)) / 2h` in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::nn::{self, Module};
use tch::{Kind, Tensor};

use super::*;
use crate::networks::layers::init_var_store;
use crate::networks::{AgeStage, AttributeDiscriminator, AttributeLabel, Gender, NetConfig, PatchCritic};
use crate::tensor::labels_to_tensor;

/// `sigmoid(conv3(tanh(conv3(x))))`, 3 → 4 → 3 channels.
#[derive(Debug)]
pub struct ToyGenerator {
    vs: nn::VarStore,
    c1: nn::Conv2D,
    c2: nn::Conv2D,
}

impl ToyGenerator {
    pub fn new(seed: u64) -> Self {
        let mut vs = nn::VarStore::new(tch::Device::Cpu);
        let cfg = nn::ConvConfig {
            padding: 1,
            ..Default::default()
        };
        let c1 = nn::conv2d(vs.root() / "c1", 3, 4, 3, cfg);
        let c2 = nn::conv2d(vs.root() / "c2", 4, 3, 3, cfg);
        init_var_store(&vs, seed, 1.0);
        vs.double();
        ToyGenerator { vs, c1, c2 }
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn forward(&self, xs: &Tensor) -> Tensor {
        self.c2.forward(&self.c1.forward(xs).tanh()).sigmoid()
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error <= tol
    }
}

const REL_FLOOR: f64 = 1e-8;

/// Compares autodiff and central differences for `samples` parameters of
/// `vs` drawn uniformly with `seed`.
pub fn check_parameters(
    name: &str,
    vs: &nn::VarStore,
    samples: usize,
    step: f64,
    seed: u64,
    loss: &dyn Fn() -> Result<Tensor>,
) -> Result<GradCheckReport> {
    let vars = vs.variables();
    let mut names: Vec<&String> = vars.keys().collect();
    names.sort();
    let sizes: Vec<i64> = names.iter().map(|n| vars[*n].numel() as i64).collect();
    let total: i64 = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let l = loss()?;
    let params: Vec<&Tensor> = names.iter().map(|n| &vars[*n]).collect();
    let grads = Tensor::run_backward(&[l], &params, false, true);

    let mut worst = 0f64;
    for _ in 0..samples {
        let mut k = rng.random_range(0..total);
        let mut which = 0;
        while k >= sizes[which] {
            k -= sizes[which];
            which += 1;
        }
        let analytic = if grads[which].defined() {
            grads[which].reshape([-1]).double_value(&[k])
        } else {
            0.0
        };
        let mut elem = params[which].reshape([-1]).get(k);
        let orig = elem.double_value(&[]);
        let eval = |elem: &mut Tensor, x: f64| -> Result<f64> {
            tch::no_grad(|| {
                let _ = elem.fill_(x);
            });
            Ok(loss()?.double_value(&[]))
        };
        let plus = eval(&mut elem, orig + step)?;
        let minus = eval(&mut elem, orig - step)?;
        tch::no_grad(|| {
            let _ = elem.fill_(orig);
        });
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        checked: samples,
        max_rel_error: worst,
    })
}

/// Runs the gradient check for every loss on a 2-layer generator at a
/// 32×32 canvas. The generator parameters are the checked variables except
/// for the critic-side penalty, which is checked w.r.t. the critic weights.
pub fn check_all_losses(samples: usize, step: f64, seed: u64) -> Result<Vec<GradCheckReport>> {
    tch::manual_seed(seed as i64);
    let cfg = NetConfig::desk(32);
    let generator = ToyGenerator::new(seed);
    let mut critic = PatchCritic::new(&cfg, seed + 1)?;
    critic.var_store_mut().double();
    let mut disc = AttributeDiscriminator::new(&cfg, seed + 2)?;
    disc.var_store_mut().double();
    let mut age = AgeClassifier::new(&cfg, seed + 3)?;
    age.var_store_mut().double();
    let mut gender = GenderClassifier::new(&cfg, seed + 4)?;
    gender.var_store_mut().double();
    let mut extractor = PerceptualExtractor::random(cfg.perceptual_widths, seed + 5);
    extractor.var_store_mut().double();
    for vs in [critic.var_store(), disc.var_store(), age.var_store(), gender.var_store()] {
        // frozen networks still need grad flags off so only the generator is checked
        for v in vs.variables().values() {
            let _ = v.shallow_clone().set_requires_grad(false);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = (Kind::Double, tch::Device::Cpu);
    let input = Tensor::rand([2, 3, 32, 32], opts);
    let real = Tensor::rand([2, 3, 32, 32], opts);
    let u = interpolation_weights(&mut rng, 2, Kind::Double);
    let labels = labels_to_tensor(
        &[AttributeLabel::new(AgeStage::B, Gender::M), AttributeLabel::new(AgeStage::D, Gender::F)],
        Kind::Double,
    );
    let w = LossWeights::default();
    let fake = || generator.forward(&input);

    type LossFn<'a> = Box<dyn Fn() -> Result<Tensor> + 'a>;
    let cases: Vec<(&str, LossFn)> = vec![
        ("pixel", Box::new(|| pixel_loss(&fake(), &real))),
        ("wgan_generator", Box::new(|| Ok(wgan_generator_loss(&critic, &fake())))),
        ("gradient_penalty", Box::new(|| gradient_penalty(&critic, &real, &fake(), &u, w.lambda_gp))),
        ("wgan_critic", Box::new(|| wgan_critic_loss(&critic, &real, &fake(), &u, w.lambda_gp))),
        ("age", Box::new(|| age_loss(&fake(), &labels, &age))),
        ("gender", Box::new(|| gender_loss(&fake(), &labels, &gender))),
        ("perceptual", Box::new(|| perceptual_loss(&real, &fake(), &extractor))),
        (
            "attribute_adversarial_generator",
            Box::new(|| Ok(attribute_adversarial_losses(&disc, &real, &fake())?.generator)),
        ),
        (
            "attribute_adversarial_discriminator",
            Box::new(|| Ok(attribute_adversarial_losses(&disc, &real, &fake())?.discriminator)),
        ),
        (
            "total_inheritance",
            Box::new(|| {
                let f = fake();
                let parts = InheritanceParts {
                    age: age_loss(&f, &labels, &age)?,
                    gender: gender_loss(&f, &labels, &gender)?,
                    pixel: pixel_loss(&f, &real)?,
                    adversarial: wgan_generator_loss(&critic, &f),
                    perceptual: perceptual_loss(&real, &f, &extractor)?,
                };
                Ok(total_inheritance_loss(parts, &w))
            }),
        ),
        (
            "total_attribute",
            Box::new(|| {
                let f = fake();
                let parts = AttributeParts {
                    pixel: pixel_loss(&f, &real)?,
                    adversarial: attribute_adversarial_losses(&disc, &real, &f)?.generator,
                    perceptual: perceptual_loss(&real, &f, &extractor)?,
                };
                Ok(total_attribute_loss(parts, &w))
            }),
        ),
    ];

    let mut reports = Vec::new();
    for (i, (name, f)) in cases.iter().enumerate() {
        reports.push(check_parameters(name, generator.var_store(), samples, step, seed + 100 + i as u64, f.as_ref())?);
    }

    // penalty w.r.t. the critic's own weights, on constant endpoints
    for v in critic.var_store().variables().values() {
        let _ = v.shallow_clone().set_requires_grad(true);
    }
    let fixed_fake = fake().detach();
    reports.push(check_parameters(
        "gradient_penalty_critic",
        critic.var_store(),
        samples,
        step,
        seed + 200,
        &|| gradient_penalty(&critic, &real, &fixed_fake, &u, w.lambda_gp),
    )?);
    Ok(reports)
}
