//! Descendant synthesis from two parent faces and a set of controls, and
//! multi-generation trees built from repeated synthesis.
//!
//! Synthesis is a pure function of the request and the model weights: the
//! only randomness is the latent (and optional decoder) noise, drawn from a
//! ChaCha stream seeded by the request.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::face_geometry::{align_face, Component, ControlVector, LandmarkSet};
use crate::model::{CheckpointMeta, ModelBundle};
use crate::networks::{exchange_latents, AgeStage, AttributeLabel, Gender};
use crate::tensor::{face_to_tensor, labels_to_tensor, tensor_to_faces};
use crate::{AlignedFace, Error, Result};

/// A parent image as supplied by the caller: either already aligned to the
/// model canvas, or accompanied by landmarks.
#[derive(Debug, Clone)]
pub struct ParentFace {
    pub pixels: Array3<f32>,
    pub landmarks: Option<LandmarkSet>,
}

impl ParentFace {
    pub fn aligned(face: &AlignedFace) -> Self {
        ParentFace {
            pixels: face.pixels().clone(),
            landmarks: None,
        }
    }

    /// Aligns to an `size` canvas; without landmarks the image must already
    /// be `size × size`.
    pub fn align(&self, size: usize, field: &str) -> Result<AlignedFace> {
        match &self.landmarks {
            Some(lm) => align_face(self.pixels.view(), lm, size),
            None => {
                let (h, w, _) = self.pixels.dim();
                if h != size || w != size {
                    return Err(Error::validation(
                        field,
                        format!("image is {w}×{h}; landmarks are required unless the image is pre-aligned at {size}×{size}"),
                    ));
                }
                AlignedFace::new(self.pixels.clone())
            }
        }
    }
}

/// Everything in a request except the parent images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisControls {
    pub vector: ControlVector,
    pub age_stage: AgeStage,
    pub gender: Gender,
    pub seed: u64,
    pub noise_scale: f64,
    /// 1-based component numbers (1 = left eye/brow … 5 = profile); empty
    /// means all five.
    pub noise_components: Vec<u8>,
    /// Also draw the decoder noise map from N(0, 1); it is zero otherwise.
    pub decoder_noise: bool,
}

impl Default for SynthesisControls {
    fn default() -> Self {
        SynthesisControls {
            vector: ControlVector::ZERO,
            age_stage: AgeStage::A,
            gender: Gender::M,
            seed: 0,
            noise_scale: 0.0,
            noise_components: Vec::new(),
            decoder_noise: false,
        }
    }
}

impl SynthesisControls {
    pub fn validate(&self) -> Result<()> {
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::validation(
                "noise_scale",
                format!("must be a finite number >= 0, got {}", self.noise_scale),
            ));
        }
        self.components().map(|_| ())
    }

    pub fn label(&self) -> AttributeLabel {
        AttributeLabel::new(self.age_stage, self.gender)
    }

    /// Components receiving latent noise.
    pub fn components(&self) -> Result<Vec<Component>> {
        if self.noise_components.is_empty() {
            return Ok(Component::ALL.to_vec());
        }
        let mut out = Vec::new();
        for &n in &self.noise_components {
            let c = (n as usize)
                .checked_sub(1)
                .and_then(Component::from_index)
                .ok_or_else(|| Error::validation("noise_components", format!("component {n} is not in 1..5")))?;
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Parses `"1,2"` style component lists.
pub fn parse_components(text: &str) -> Result<Vec<u8>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<u8>()
                .ok()
                .filter(|n| (1..=5).contains(n))
                .ok_or_else(|| Error::validation("noise_components", format!("{:?} is not a component number in 1..5", p.trim())))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthesisRequest {
    pub male: ParentFace,
    pub female: ParentFace,
    pub controls: SynthesisControls,
}

/// Output of one synthesis: the intermediate face `I′` decoded by the
/// inheritance module and the final face `Ī` after attribute enhancement.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub intermediate: AlignedFace,
    pub face: AlignedFace,
}

/// A loaded model ready for inference.
#[derive(Debug)]
pub struct Synthesizer {
    models: ModelBundle,
    meta: CheckpointMeta,
    model_id: String,
}

impl Synthesizer {
    pub fn new(models: ModelBundle) -> Self {
        let meta = models.meta(None);
        let model_id = models.model_id();
        Synthesizer { models, meta, model_id }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (models, meta) = ModelBundle::load(path)?;
        let model_id = models.model_id();
        Ok(Synthesizer { models, meta, model_id })
    }

    pub fn canvas(&self) -> usize {
        self.models.config.canvas
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn meta(&self) -> &CheckpointMeta {
        &self.meta
    }

    pub fn models(&self) -> &ModelBundle {
        &self.models
    }

    /// Aligns both parents and runs [`Synthesizer::synthesize_aligned`].
    pub fn synthesize(&self, req: &SynthesisRequest) -> Result<AlignedFace> {
        req.controls.validate()?;
        let s = self.canvas();
        let male = req.male.align(s, "parent_male")?;
        let female = req.female.align(s, "parent_female")?;
        Ok(self.synthesize_aligned(&male, &female, &req.controls)?.face)
    }

    /// Encodes both parents, exchanges latents under `v`, perturbs the
    /// selected latents, integrates with the requested labels, and decodes
    /// through the inheritance and attribute modules. The descendant is the
    /// combination that follows `v`.
    pub fn synthesize_aligned(&self, male: &AlignedFace, female: &AlignedFace, c: &SynthesisControls) -> Result<Synthesis> {
        c.validate()?;
        let s = self.canvas();
        for (face, field) in [(male, "parent_male"), (female, "parent_female")] {
            if face.size() != s {
                return Err(Error::Incompatible(format!(
                    "{field} is aligned at {} but the model canvas is {s}",
                    face.size()
                )));
            }
        }
        let inh = &self.models.inheritance;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let (intermediate, face) = tch::no_grad(|| -> Result<(Tensor, Tensor)> {
            let kind = inh.kind();
            let xm = face_to_tensor(male, kind);
            let xf = face_to_tensor(female, kind);
            let (mut comb, _) = exchange_latents(&inh.encode(&xm)?, &inh.encode(&xf)?, &[c.vector])?;
            if c.noise_scale > 0.0 {
                for comp in c.components()? {
                    let shape = comb.get(comp).size();
                    let noise = normal(&mut rng, &shape, kind) * c.noise_scale;
                    comb = comb.map_component(comp, |t| t + noise);
                }
            }
            let shape = inh.noise_shape(1);
            let decoder_noise = if c.decoder_noise {
                normal(&mut rng, &shape, kind)
            } else {
                Tensor::zeros(shape, (kind, tch::Device::Cpu))
            };
            let labels = labels_to_tensor(&[c.label()], kind);
            let mid = inh.decode(&inh.integrate(&comb, &labels, &decoder_noise)?);
            let out = self.models.attribute.forward(&mid, &labels)?;
            Ok((mid, out))
        })?;
        Ok(Synthesis {
            intermediate: tensor_to_faces(&intermediate)?.remove(0),
            face: tensor_to_faces(&face)?.remove(0),
        })
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: &[i64], kind: Kind) -> Tensor {
    let n: i64 = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_slice(&v).reshape(shape).to_kind(kind)
}

/// A supplied face in a generation tree. `image` is interpreted by the
/// caller (a path for the CLI, base64 PNG over HTTP).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFace {
    pub id: String,
    pub gender: Gender,
    pub image: String,
    #[serde(default)]
    pub landmarks: Option<LandmarkSet>,
}

/// A child synthesized from two earlier nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeChild {
    pub id: String,
    pub male: String,
    pub female: String,
    #[serde(flatten)]
    pub controls: SynthesisControls,
}

/// Multi-generation synthesis plan: root faces plus children whose parents
/// are root faces or other children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationTree {
    pub faces: Vec<TreeFace>,
    pub children: Vec<TreeChild>,
}

impl GenerationTree {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: GenerationTree = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    fn genders(&self) -> HashMap<&str, Gender> {
        self.faces
            .iter()
            .map(|f| (f.id.as_str(), f.gender))
            .chain(self.children.iter().map(|c| (c.id.as_str(), c.controls.gender)))
            .collect()
    }

    /// Unique ids, known parents in matching gender slots, no cycles.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.faces.iter().map(|f| &f.id).chain(self.children.iter().map(|c| &c.id)) {
            if id.is_empty() {
                return Err(Error::validation("id", "node ids must be non-empty"));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::validation("id", format!("duplicate node id {id:?}")));
            }
        }
        let genders = self.genders();
        for c in &self.children {
            c.controls.validate()?;
            for (slot, parent, want) in [("male", &c.male, Gender::M), ("female", &c.female, Gender::F)] {
                match genders.get(parent.as_str()) {
                    None => {
                        return Err(Error::validation(slot, format!("child {:?}: unknown parent {parent:?}", c.id)));
                    }
                    Some(&g) if g != want => {
                        return Err(Error::validation(
                            slot,
                            format!("child {:?}: parent {parent:?} has gender {g}, slot needs {want}", c.id),
                        ));
                    }
                    _ => {}
                }
            }
        }
        self.order().map(|_| ())
    }

    /// Children in depth-first dependency order (parents before children).
    pub fn order(&self) -> Result<Vec<&TreeChild>> {
        let by_id: HashMap<&str, &TreeChild> = self.children.iter().map(|c| (c.id.as_str(), c)).collect();
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        fn visit<'a>(
            c: &'a TreeChild,
            by_id: &HashMap<&str, &'a TreeChild>,
            marks: &mut HashMap<&'a str, Mark>,
            out: &mut Vec<&'a TreeChild>,
        ) -> Result<()> {
            match marks.get(c.id.as_str()) {
                Some(Mark::Done) => return Ok(()),
                Some(Mark::Active) => {
                    return Err(Error::validation("children", format!("cycle through node {:?}", c.id)));
                }
                None => {}
            }
            marks.insert(&c.id, Mark::Active);
            for p in [&c.male, &c.female] {
                if let Some(parent) = by_id.get(p.as_str()) {
                    visit(parent, by_id, marks, out)?;
                }
            }
            marks.insert(&c.id, Mark::Done);
            out.push(c);
            Ok(())
        }
        let mut marks = HashMap::new();
        let mut out = Vec::with_capacity(self.children.len());
        for c in &self.children {
            visit(c, &by_id, &mut marks, &mut out)?;
        }
        Ok(out)
    }
}

/// Synthesizes every child of `tree`; generated faces are fed to the next
/// generation as parents. `load` turns a [`TreeFace::image`] into pixels.
pub fn synthesize_tree(
    tree: &GenerationTree,
    synth: &Synthesizer,
    load: impl Fn(&TreeFace) -> Result<Array3<f32>>,
) -> Result<BTreeMap<String, AlignedFace>> {
    tree.validate()?;
    let s = synth.canvas();
    let mut faces: HashMap<String, AlignedFace> = HashMap::new();
    for f in &tree.faces {
        let parent = ParentFace {
            pixels: load(f)?,
            landmarks: f.landmarks.clone(),
        };
        faces.insert(f.id.clone(), parent.align(s, &format!("faces.{}", f.id))?);
    }
    let mut out = BTreeMap::new();
    for c in tree.order()? {
        let face = synth.synthesize_aligned(&faces[&c.male], &faces[&c.female], &c.controls)?.face;
        faces.insert(c.id.clone(), face.clone());
        out.insert(c.id.clone(), face);
    }
    Ok(out)
}
