//! Classifier and attribute-module pretraining followed by joint training
//! of the inheritance module, with checkpoints and JSON-lines metrics.
//!
//! Every random draw (pair sampling, decoder noise, penalty interpolation,
//! relabelling) comes from one ChaCha stream whose position is stored in
//! checkpoints, so a resumed run replays the same loss sequence.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::checkpoint::{self, restore_var_store, var_store_entries};
use crate::compositor::{exchange_batch, ExchangeJob, ExchangeOptions};
use crate::data::toy::toy_records;
use crate::data::{load_faces, split_records, DatasetManifest, FaceRecord};
use crate::exec::Exec;
use crate::face_geometry::{component_boxes, ComponentLayout, ControlVector};
use crate::image_io::save_png;
use crate::losses::{self, AttributeParts, InheritanceParts, LossWeights};
use crate::model::{CheckpointMeta, ModelBundle};
use crate::networks::layers::parameter_hash;
use crate::networks::{AgeStage, AttributeDiscriminator, AttributeLabel, Gender, PatchCritic, PerceptualExtractor};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{faces_to_tensor, labels_to_tensor, tensor_to_faces};
use crate::{Error, Result};

pub mod config;

pub use config::{
    attribute_updates_after, is_attribute_iteration, parse_ablation, AblationFlag, AttributePretrain,
    ClassifierPretrain, DatasetSource, NetworkPreset, TrainConfig,
};

/// Losses of one step, keyed by name.
pub type Metrics = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Classifiers,
    Attribute,
    Joint,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub classifier_steps: u64,
    pub attribute_steps: u64,
    pub joint_steps: u64,
    pub attribute_updates: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self
            .seed
            .clone()
            .try_into()
            .map_err(|_| Error::Incompatible("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Incompatible("bad rng position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainingMeta {
    config: TrainConfig,
    progress: Progress,
    rng: RngState,
}

/// Final numbers of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub progress: Progress,
    pub classifier_accuracy: Option<(f64, f64)>,
    pub checkpoints: Vec<PathBuf>,
}

pub struct Trainer {
    cfg: TrainConfig,
    pub models: ModelBundle,
    pub critic: PatchCritic,
    pub disc: AttributeDiscriminator,
    pub perceptual: PerceptualExtractor,
    opt_inh: Adam,
    opt_critic: Adam,
    opt_att: Adam,
    opt_disc: Adam,
    opt_age: Adam,
    opt_gender: Adam,
    rng: ChaCha8Rng,
    train: Vec<FaceRecord>,
    test: Vec<FaceRecord>,
    train_pixels: Tensor,
    train_labels: Tensor,
    males: Vec<usize>,
    females: Vec<usize>,
    layout: ComponentLayout,
    exchange: ExchangeOptions,
    exec: Exec,
    weights: LossWeights,
    progress: Progress,
    metrics: Option<BufWriter<File>>,
}

/// Loads the faces named by `source` for an S canvas.
pub fn load_source(source: &DatasetSource, canvas: usize, exec: Exec) -> Result<Vec<FaceRecord>> {
    match source {
        DatasetSource::Toy { subjects, seed } => toy_records(*subjects, canvas, *seed, exec),
        DatasetSource::Manifest { path } => load_faces(&DatasetManifest::load(path)?, canvas, exec),
    }
}

fn effective_weights(cfg: &TrainConfig) -> LossWeights {
    let mut w = cfg.weights;
    if cfg.has(AblationFlag::AD) {
        w.lambda12 = 0.0;
        w.lambda21 = 0.0;
    }
    if cfg.has(AblationFlag::PI) {
        w.lambda11 = 0.0;
    }
    if cfg.has(AblationFlag::PE) {
        w.lambda13 = 0.0;
        w.lambda22 = 0.0;
    }
    if cfg.has(AblationFlag::AG) {
        w.lambda_ctl = 0.0;
    }
    w
}

fn v(t: &Tensor) -> f64 {
    t.double_value(&[])
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let exec = if cfg.parallel { Exec::Parallel } else { Exec::Sequential };
        let records = load_source(&cfg.dataset, cfg.canvas, exec)?;
        Self::with_records(cfg, records)
    }

    /// Builds a trainer over an explicit face pool (split 90/10 by id).
    pub fn with_records(cfg: TrainConfig, records: Vec<FaceRecord>) -> Result<Self> {
        cfg.validate()?;
        if records.is_empty() {
            return Err(Error::EmptyDataset("no faces to train on".into()));
        }
        let (train, test) = split_records(records);
        let males: Vec<usize> = (0..train.len()).filter(|&i| train[i].label.gender == Gender::M).collect();
        let females: Vec<usize> = (0..train.len()).filter(|&i| train[i].label.gender == Gender::F).collect();
        if males.is_empty() || females.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "training split needs both genders ({} male, {} female)",
                males.len(),
                females.len()
            )));
        }
        let net = cfg.net_config();
        let models = ModelBundle::new(&net, cfg.seed)?;
        let critic = PatchCritic::new(&net, cfg.seed.wrapping_add(10))?;
        let disc = AttributeDiscriminator::new(&net, cfg.seed.wrapping_add(11))?;
        let perceptual = match &cfg.perceptual_weights {
            Some(p) => PerceptualExtractor::pretrained(p)?,
            None => PerceptualExtractor::random(net.perceptual_widths, cfg.seed.wrapping_add(12)),
        };
        let adam = cfg.optimizer;
        let att_adam = AdamConfig {
            lr: cfg.attribute_pretrain.lr.unwrap_or(adam.lr),
            ..adam
        };
        let cls_adam = AdamConfig {
            lr: cfg.classifier.lr,
            beta1: 0.9,
            beta2: 0.999,
            ..adam
        };
        let faces: Vec<_> = train.iter().map(|r| &r.face).collect();
        let train_pixels = faces_to_tensor(&faces, Kind::Float)?;
        let labels: Vec<_> = train.iter().map(|r| r.label).collect();
        let train_labels = labels_to_tensor(&labels, Kind::Float);
        Ok(Trainer {
            opt_inh: Adam::new(models.inheritance.var_store(), adam)?,
            opt_critic: Adam::new(critic.var_store(), adam)?,
            opt_att: Adam::new(models.attribute.var_store(), att_adam)?,
            opt_disc: Adam::new(disc.var_store(), att_adam)?,
            opt_age: Adam::new(models.age.var_store(), cls_adam)?,
            opt_gender: Adam::new(models.gender.var_store(), cls_adam)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6b73_7973_6e74),
            layout: component_boxes(cfg.canvas)?,
            exchange: ExchangeOptions {
                color_correct: cfg.color_correct,
                ..Default::default()
            },
            exec: if cfg.parallel { Exec::Parallel } else { Exec::Sequential },
            weights: effective_weights(&cfg),
            progress: Progress::default(),
            metrics: None,
            models,
            critic,
            disc,
            perceptual,
            train,
            test,
            train_pixels,
            train_labels,
            males,
            females,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn train_records(&self) -> &[FaceRecord] {
        &self.train
    }

    pub fn test_records(&self) -> &[FaceRecord] {
        &self.test
    }

    pub fn layout(&self) -> &ComponentLayout {
        &self.layout
    }

    /// The phase the next step belongs to, or `None` when the run is complete.
    pub fn next_phase(&self) -> Option<Phase> {
        let p = &self.progress;
        if p.classifier_steps < self.cfg.classifier.iterations {
            Some(Phase::Classifiers)
        } else if p.attribute_steps < self.cfg.attribute_pretrain.iterations {
            Some(Phase::Attribute)
        } else if p.joint_steps < self.cfg.iterations {
            Some(Phase::Joint)
        } else {
            None
        }
    }

    fn sample_indices(&mut self, pool: usize, count: usize) -> Vec<i64> {
        (0..count).map(|_| self.rng.random_range(0..pool) as i64).collect()
    }

    fn random_labels(&mut self, count: usize) -> Tensor {
        let ls: Vec<AttributeLabel> = (0..count)
            .map(|_| {
                let age = AgeStage::ALL[self.rng.random_range(0..4)];
                let gender = if self.rng.random::<bool>() { Gender::F } else { Gender::M };
                AttributeLabel::new(age, gender)
            })
            .collect();
        labels_to_tensor(&ls, Kind::Float)
    }

    fn normal(&mut self, shape: [i64; 4]) -> Tensor {
        let n: i64 = shape.iter().product();
        let vals: Vec<f32> = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
        Tensor::from_slice(&vals).reshape(shape)
    }

    fn gather(&self, idx: &[i64]) -> (Tensor, Tensor) {
        let i = Tensor::from_slice(idx);
        (self.train_pixels.index_select(0, &i), self.train_labels.index_select(0, &i))
    }

    /// One classifier update: cross-entropy for age, binary cross-entropy
    /// for gender, on a random batch of training faces.
    pub fn step_classifiers(&mut self) -> Result<Metrics> {
        let idx = self.sample_indices(self.train.len(), self.cfg.classifier.batch_size);
        let (x, y) = self.gather(&idx);
        let stage = y.narrow(1, 0, 4).argmax(1, false);
        let gender = y.select(1, 4);
        let age_loss = self.models.age.logits(&x).cross_entropy_for_logits(&stage);
        let gender_loss = self
            .models
            .gender
            .logits(&x)
            .binary_cross_entropy_with_logits::<Tensor>(&gender, None, None, tch::Reduction::Mean);
        self.progress.classifier_steps += 1;
        let it = self.progress.classifier_steps;
        self.check_finite(&[("classifier_age", &age_loss), ("classifier_gender", &gender_loss)], it, &[&x])?;
        self.opt_age.minimize(&age_loss)?;
        self.opt_gender.minimize(&gender_loss)?;
        let mut m = Metrics::new();
        m.insert("age_ce".into(), v(&age_loss));
        m.insert("gender_bce".into(), v(&gender_loss));
        self.log(Phase::Classifiers, it, &m)?;
        Ok(m)
    }

    /// Held-out (age, gender) accuracy of the classifiers.
    pub fn classifier_accuracy(&self, records: &[FaceRecord]) -> Result<(f64, f64)> {
        if records.is_empty() {
            return Err(Error::EmptyDataset("no held-out faces".into()));
        }
        let (mut age_ok, mut gender_ok) = (0usize, 0usize);
        for chunk in records.chunks(64) {
            let faces: Vec<_> = chunk.iter().map(|r| &r.face).collect();
            let x = faces_to_tensor(&faces, Kind::Float)?;
            let (pa, pg) = tch::no_grad(|| (self.models.age.forward(&x), self.models.gender.forward(&x)));
            let stages = Vec::<i64>::try_from(&pa.argmax(1, false))?;
            let probs = Vec::<f32>::try_from(&pg)?;
            for (k, r) in chunk.iter().enumerate() {
                age_ok += (stages[k] as usize == r.label.age.index()) as usize;
                let g = if probs[k] >= 0.5 { Gender::F } else { Gender::M };
                gender_ok += (g == r.label.gender) as usize;
            }
        }
        let n = records.len() as f64;
        Ok((age_ok as f64 / n, gender_ok as f64 / n))
    }

    /// Attribute objective on `(x, y)` targets plus the relabelled control
    /// term; updates the discriminator and the attribute module.
    fn attribute_update(&mut self, input: &Tensor, target: &Tensor, labels: &Tensor) -> Result<Metrics> {
        let w = self.weights;
        let out = self.models.attribute.forward(input, labels)?;
        let pixel = if self.cfg.has(AblationFlag::PI) {
            Tensor::zeros([], (Kind::Float, tch::Device::Cpu))
        } else {
            losses::pixel_loss(&out, target)?
        };
        let disc_losses = losses::attribute_adversarial_losses(&self.disc, target, &out.detach())?;
        let it = self.progress.joint_steps.max(self.progress.attribute_steps);
        self.check_finite(&[("disc", &disc_losses.discriminator)], it, &[input, target])?;
        if self.weights.lambda21 > 0.0 {
            self.opt_disc.minimize(&disc_losses.discriminator)?;
        }
        let adv = losses::attribute_adversarial_losses(&self.disc, target, &out)?.generator;
        let per = losses::perceptual_loss(&out, target, &self.perceptual)?;
        let relabel = self.random_labels(labels.size()[0] as usize);
        let ctl = if w.lambda_ctl > 0.0 {
            let moved = self.models.attribute.forward(input, &relabel)?;
            losses::age_loss(&moved, &relabel, &self.models.age)? + losses::gender_loss(&moved, &relabel, &self.models.gender)?
        } else {
            Tensor::zeros([], (Kind::Float, tch::Device::Cpu))
        };
        let parts = AttributeParts {
            pixel: pixel.shallow_clone(),
            adversarial: adv.shallow_clone(),
            perceptual: per.shallow_clone(),
        };
        let att_total = losses::total_attribute_loss(parts, &w);
        let objective = &att_total + &ctl * w.lambda_ctl;
        self.check_finite(
            &[("att_pixel", &pixel), ("att_adv", &adv), ("att_per", &per), ("att_ctl", &ctl)],
            it,
            &[input, target],
        )?;
        self.opt_att.minimize(&objective)?;
        let mut m = Metrics::new();
        m.insert("att_pixel".into(), v(&pixel));
        m.insert("att_adv".into(), v(&adv));
        m.insert("att_per".into(), v(&per));
        m.insert("att_ctl".into(), v(&ctl));
        m.insert("att_total".into(), v(&att_total));
        m.insert("disc".into(), v(&disc_losses.discriminator));
        Ok(m)
    }

    /// One attribute-module pretraining step on real faces.
    pub fn step_attribute_pretrain(&mut self) -> Result<Metrics> {
        let idx = self.sample_indices(self.train.len(), self.cfg.batch_size);
        let (x, y) = self.gather(&idx);
        self.progress.attribute_steps += 1;
        let m = self.attribute_update(&x, &x, &y)?;
        self.log(Phase::Attribute, self.progress.attribute_steps, &m)?;
        Ok(m)
    }

    /// Mean attribute-module reconstruction pixel loss over `records` under
    /// their own labels.
    pub fn attribute_reconstruction(&self, records: &[FaceRecord]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in records.chunks(32) {
            let faces: Vec<_> = chunk.iter().map(|r| &r.face).collect();
            let x = faces_to_tensor(&faces, Kind::Float)?;
            let labels: Vec<_> = chunk.iter().map(|r| r.label).collect();
            let y = labels_to_tensor(&labels, Kind::Float);
            let out = tch::no_grad(|| self.models.attribute.forward(&x, &y))?;
            total += v(&losses::pixel_loss(&out, &x)?) * chunk.len() as f64;
        }
        Ok(total / records.len().max(1) as f64)
    }

    /// Fraction of (face, stage) requests for which the age classifier
    /// assigns the requested stage to the attribute module's output. Every
    /// face is re-rendered at all four stages under its own gender.
    pub fn age_control_accuracy(&self, records: &[FaceRecord]) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::EmptyDataset("no faces to score".into()));
        }
        let mut hits = 0usize;
        for chunk in records.chunks(32) {
            let faces: Vec<_> = chunk.iter().map(|r| &r.face).collect();
            let x = faces_to_tensor(&faces, Kind::Float)?;
            for stage in AgeStage::ALL {
                let labels: Vec<_> = chunk.iter().map(|r| AttributeLabel::new(stage, r.label.gender)).collect();
                let y = labels_to_tensor(&labels, Kind::Float);
                let pred = tch::no_grad(|| -> Result<Tensor> {
                    let out = self.models.attribute.forward(&x, &y)?;
                    Ok(self.models.age.forward(&out).argmax(1, false))
                })?;
                hits += Vec::<i64>::try_from(&pred)?
                    .iter()
                    .filter(|&&p| p as usize == stage.index())
                    .count();
            }
        }
        Ok(hits as f64 / (4 * records.len()) as f64)
    }

    /// One joint iteration: component exchange, critic updates, inheritance
    /// update and, every P-th iteration, an attribute update on the current
    /// intermediate faces.
    pub fn step_joint(&mut self) -> Result<Metrics> {
        let b = self.cfg.batch_size;
        let mut pairs = Vec::with_capacity(b);
        for _ in 0..b {
            let m = self.males[self.rng.random_range(0..self.males.len())];
            let f = self.females[self.rng.random_range(0..self.females.len())];
            let vec = ControlVector::from_code(self.rng.random_range(0..32u8));
            pairs.push((m, f, vec));
        }
        let jobs: Vec<ExchangeJob> = pairs
            .iter()
            .map(|&(m, f, vector)| ExchangeJob {
                male: &self.train[m].face,
                female: &self.train[f].face,
                vector,
            })
            .collect();
        let exchanged = exchange_batch(&jobs, &self.layout, &self.exchange, self.exec)?;
        let hat_m: Vec<_> = exchanged.iter().map(|p| &p.0).collect();
        let hat_f: Vec<_> = exchanged.iter().map(|p| &p.1).collect();
        let hat_m = faces_to_tensor(&hat_m, Kind::Float)?;
        let hat_f = faces_to_tensor(&hat_f, Kind::Float)?;
        let (real_m, y_m) = self.gather(&pairs.iter().map(|p| p.0 as i64).collect::<Vec<_>>());
        let (real_f, y_f) = self.gather(&pairs.iter().map(|p| p.1 as i64).collect::<Vec<_>>());
        let vectors: Vec<ControlVector> = pairs.iter().map(|p| p.2).collect();
        let shape = self.models.inheritance.noise_shape(b as i64);
        let (noise_m, noise_f) = if self.cfg.decoder_noise {
            (self.normal(shape), self.normal(shape))
        } else {
            (Tensor::zeros(shape, (Kind::Float, tch::Device::Cpu)), Tensor::zeros(shape, (Kind::Float, tch::Device::Cpu)))
        };

        let (out_m, out_f) = self
            .models
            .inheritance
            .forward(&hat_m, &hat_f, &vectors, &y_m, &y_f, &noise_m, &noise_f)?;
        let w = self.weights;
        let t = self.progress.joint_steps + 1;
        let mut metrics = Metrics::new();

        let adversarial = w.lambda12 > 0.0;
        if adversarial {
            // Both branches go through the critic as one 2B batch; the
            // per-branch means are recovered by scaling by 2.
            let fake = Tensor::cat(&[out_m.detach(), out_f.detach()], 0);
            let real = Tensor::cat(&[&real_m, &real_f], 0);
            let mut last = (0.0, 0.0);
            for _ in 0..self.cfg.critic_steps {
                let u = losses::interpolation_weights(&mut self.rng, 2 * b as i64, Kind::Float);
                let gp = losses::gradient_penalty(&self.critic, &real, &fake, &u, w.lambda_gp)? * 2.0;
                let wd = (losses::critic_value(&self.critic, &fake).mean(Kind::Float)
                    - losses::critic_value(&self.critic, &real).mean(Kind::Float))
                    * 2.0;
                let loss = &wd + &gp;
                self.check_finite(&[("critic", &loss)], t, &[&hat_m, &hat_f])?;
                self.opt_critic.minimize(&loss)?;
                last = (v(&loss), v(&gp));
            }
            metrics.insert("critic".into(), last.0);
            metrics.insert("gp".into(), last.1);
        }

        let zero = || Tensor::zeros([], (Kind::Float, tch::Device::Cpu));
        let mut parts = InheritanceParts {
            age: zero(),
            gender: zero(),
            pixel: zero(),
            adversarial: zero(),
            perceptual: zero(),
        };
        for (out, real, y) in [(&out_m, &real_m, &y_m), (&out_f, &real_f, &y_f)] {
            if !self.cfg.has(AblationFlag::AG) {
                parts.age = parts.age + losses::age_loss(out, y, &self.models.age)?;
                parts.gender = parts.gender + losses::gender_loss(out, y, &self.models.gender)?;
            }
            parts.pixel = parts.pixel + losses::pixel_loss(out, real)?;
            if adversarial {
                parts.adversarial = parts.adversarial + losses::wgan_generator_loss(&self.critic, out);
            }
            if w.lambda13 > 0.0 {
                parts.perceptual = parts.perceptual + losses::perceptual_loss(out, real, &self.perceptual)?;
            }
        }
        let named = [
            ("inh_age", parts.age.shallow_clone()),
            ("inh_gender", parts.gender.shallow_clone()),
            ("inh_pixel", parts.pixel.shallow_clone()),
            ("inh_adv", parts.adversarial.shallow_clone()),
            ("inh_per", parts.perceptual.shallow_clone()),
        ];
        let inh_total = losses::total_inheritance_loss(parts, &w);
        let checks: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (*n, t)).collect();
        self.check_finite(&checks, t, &[&hat_m, &hat_f, &real_m, &real_f])?;
        self.opt_inh.minimize(&inh_total)?;
        for (n, t) in &named {
            metrics.insert((*n).into(), v(t));
        }
        metrics.insert("inh_total".into(), v(&inh_total));
        self.progress.joint_steps = t;

        if is_attribute_iteration(t, self.cfg.attribute_period) {
            let input = Tensor::cat(&[out_m.detach(), out_f.detach()], 0);
            let target = Tensor::cat(&[&real_m, &real_f], 0);
            let labels = Tensor::cat(&[&y_m, &y_f], 0);
            let att = self.attribute_update(&input, &target, &labels)?;
            let att_total = att["att_total"];
            metrics.extend(att);
            metrics.insert(
                "total".into(),
                losses::total_loss(metrics["inh_total"], att_total, &w),
            );
            self.progress.attribute_updates += 1;
        }
        self.log(Phase::Joint, t, &metrics)?;
        Ok(metrics)
    }

    fn check_finite(&self, named: &[(&str, &Tensor)], iteration: u64, batch: &[&Tensor]) -> Result<()> {
        for (name, t) in named {
            if !v(t).is_finite() {
                let dump = self.cfg.run_dir().join(format!("nan-dump-{iteration}"));
                fs::create_dir_all(&dump).map_err(|e| Error::io(&dump, e))?;
                for (k, x) in batch.iter().enumerate() {
                    let faces = tensor_to_faces(&x.detach().nan_to_num(0.0, 1.0, 0.0))?;
                    for (i, f) in faces.iter().enumerate() {
                        save_png(f, &dump.join(format!("input{k}_{i:02}.png")))?;
                    }
                }
                return Err(Error::NonFinite {
                    loss: name.to_string(),
                    iteration,
                    dump,
                });
            }
        }
        Ok(())
    }

    fn log(&mut self, phase: Phase, iteration: u64, m: &Metrics) -> Result<()> {
        if let Some(w) = self.metrics.as_mut() {
            let line = serde_json::json!({ "phase": phase, "iteration": iteration, "losses": m });
            writeln!(w, "{line}").map_err(|e| Error::io("metrics.jsonl", e))?;
        }
        Ok(())
    }

    /// Starts (or, when `append`, continues) `runs/<id>/metrics.jsonl`.
    pub fn open_metrics(&mut self, append: bool) -> Result<PathBuf> {
        let dir = self.cfg.run_dir();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("metrics.jsonl");
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        self.metrics = Some(BufWriter::new(f));
        Ok(path)
    }

    fn flush_metrics(&mut self) -> Result<()> {
        if let Some(w) = self.metrics.as_mut() {
            w.flush().map_err(|e| Error::io("metrics.jsonl", e))?;
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<Option<(Phase, Metrics)>> {
        Ok(match self.next_phase() {
            Some(Phase::Classifiers) => Some((Phase::Classifiers, self.step_classifiers()?)),
            Some(Phase::Attribute) => Some((Phase::Attribute, self.step_attribute_pretrain()?)),
            Some(Phase::Joint) => Some((Phase::Joint, self.step_joint()?)),
            None => None,
        })
    }

    /// Runs every remaining step. Writes `ckpt-0` when pretraining ends,
    /// `ckpt-<iter>` every checkpoint interval and at the final iteration.
    pub fn run(&mut self) -> Result<RunSummary> {
        let mut checkpoints = Vec::new();
        let mut accuracy = None;
        let mut frozen = None;
        while let Some(phase) = self.next_phase() {
            if phase == Phase::Joint && frozen.is_none() {
                frozen = Some(self.classifier_hashes());
            }
            let before = self.progress.clone();
            self.step()?;
            if phase == Phase::Classifiers && self.next_phase() != Some(Phase::Classifiers) && !self.test.is_empty() {
                let acc = self.classifier_accuracy(&self.test)?;
                log::info!("classifier held-out accuracy: age {:.3}, gender {:.3}", acc.0, acc.1);
                accuracy = Some(acc);
            }
            if phase != Phase::Joint && self.next_phase() == Some(Phase::Joint) && before.joint_steps == 0 {
                checkpoints.push(self.save_in_run(0)?);
            }
            if phase == Phase::Joint {
                let t = self.progress.joint_steps;
                let interval = self.cfg.checkpoint_interval;
                if (interval > 0 && t % interval == 0) || t == self.cfg.iterations {
                    checkpoints.push(self.save_in_run(t)?);
                }
                if t % 100 == 0 {
                    log::info!("joint iteration {t}/{}", self.cfg.iterations);
                }
            }
        }
        self.flush_metrics()?;
        if frozen.is_some_and(|h| h != self.classifier_hashes()) {
            return Err(Error::Config("classifier weights changed during joint training".into()));
        }
        Ok(RunSummary {
            progress: self.progress.clone(),
            classifier_accuracy: accuracy,
            checkpoints,
        })
    }

    /// Parameter hashes of the (age, gender) classifiers.
    pub fn classifier_hashes(&self) -> (String, String) {
        (
            parameter_hash(self.models.age.var_store()),
            parameter_hash(self.models.gender.var_store()),
        )
    }

    fn save_in_run(&mut self, iteration: u64) -> Result<PathBuf> {
        self.flush_metrics()?;
        let path = self.cfg.run_dir().join(format!("ckpt-{iteration}"));
        self.save(&path)?;
        Ok(path)
    }

    /// Full training state: every network, optimizer moments, counters and
    /// the RNG position.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = TrainingMeta {
            config: self.cfg.clone(),
            progress: self.progress.clone(),
            rng: RngState::capture(&self.rng),
        };
        let header = self.models.meta(Some(serde_json::to_value(&meta)?));
        let mut tensors = self.models.entries();
        tensors.extend(var_store_entries("critic", self.critic.var_store()));
        tensors.extend(var_store_entries("disc", self.disc.var_store()));
        for (name, opt) in [
            ("opt_inh", &self.opt_inh),
            ("opt_critic", &self.opt_critic),
            ("opt_att", &self.opt_att),
            ("opt_disc", &self.opt_disc),
            ("opt_age", &self.opt_age),
            ("opt_gender", &self.opt_gender),
        ] {
            tensors.extend(opt.state(name));
        }
        checkpoint::save(path, &header, &tensors)
    }

    /// Rebuilds a trainer from `cfg` and restores the state saved at `path`.
    /// The checkpoint must come from a run with the same canvas.
    pub fn resume(cfg: TrainConfig, path: &Path) -> Result<Self> {
        let records = load_source(&cfg.dataset, cfg.canvas, if cfg.parallel { Exec::Parallel } else { Exec::Sequential })?;
        Self::resume_with_records(cfg, records, path)
    }

    pub fn resume_with_records(cfg: TrainConfig, records: Vec<FaceRecord>, path: &Path) -> Result<Self> {
        let contents = checkpoint::load(path)?;
        let header: CheckpointMeta = serde_json::from_value(contents.meta)?;
        if header.net.canvas != cfg.canvas {
            return Err(Error::Incompatible(format!(
                "checkpoint canvas {} differs from configured canvas {}",
                header.net.canvas, cfg.canvas
            )));
        }
        if header.net != cfg.net_config() {
            return Err(Error::Incompatible("checkpoint architecture differs from the configuration".into()));
        }
        let meta: TrainingMeta = serde_json::from_value(
            header
                .training
                .ok_or_else(|| Error::Incompatible("checkpoint holds no training state".into()))?,
        )?;
        let mut t = Self::with_records(cfg, records)?;
        let ts = &contents.tensors;
        t.models.restore(ts)?;
        restore_var_store("critic", t.critic.var_store(), ts)?;
        restore_var_store("disc", t.disc.var_store(), ts)?;
        t.opt_inh.load_state("opt_inh", ts)?;
        t.opt_critic.load_state("opt_critic", ts)?;
        t.opt_att.load_state("opt_att", ts)?;
        t.opt_disc.load_state("opt_disc", ts)?;
        t.opt_age.load_state("opt_age", ts)?;
        t.opt_gender.load_state("opt_gender", ts)?;
        t.rng = meta.rng.restore()?;
        t.progress = meta.progress;
        Ok(t)
    }
}
