//! Inheritance module: per-component encoders, latent exchange, feature
//! integration with label and noise maps, and a shared decoder.

use tch::nn::{self, Module};
use tch::{Kind, Tensor};

use super::config::NetConfig;
use super::layers::{conv3, down, init_var_store, lrelu, scale_weights, LRELU_GAIN, to_unit_range, ResBlock};
use crate::face_geometry::{component_boxes, Component, ComponentLayout, ControlVector};
use crate::{Error, Result};

pub const RES_BLOCKS: usize = 3;

/// Scale applied to the initial decoder output weights so untrained
/// outputs start near mid-grey instead of saturating.
const OUTPUT_GAIN: f64 = 0.1;

/// Five per-component feature maps, each `[B, c, h_i, w_i]`, in component order.
#[derive(Debug)]
pub struct LatentComponentSet {
    maps: Vec<Tensor>,
}

impl LatentComponentSet {
    pub fn new(maps: Vec<Tensor>) -> Result<Self> {
        if maps.len() != 5 {
            return Err(Error::ShapeMismatch(format!("expected 5 component maps, got {}", maps.len())));
        }
        Ok(LatentComponentSet { maps })
    }

    pub fn get(&self, c: Component) -> &Tensor {
        &self.maps[c.index()]
    }

    pub fn maps(&self) -> &[Tensor] {
        &self.maps
    }

    pub fn shapes(&self) -> Vec<Vec<i64>> {
        self.maps.iter().map(|m| m.size()).collect()
    }

    pub fn batch(&self) -> i64 {
        self.maps[0].size()[0]
    }

    pub fn shallow_clone(&self) -> Self {
        LatentComponentSet {
            maps: self.maps.iter().map(|m| m.shallow_clone()).collect(),
        }
    }

    /// Rows `start..start+len` of every map.
    pub fn narrow(&self, start: i64, len: i64) -> Self {
        LatentComponentSet {
            maps: self.maps.iter().map(|m| m.narrow(0, start, len)).collect(),
        }
    }

    pub fn map_component(mut self, c: Component, f: impl FnOnce(&Tensor) -> Tensor) -> Self {
        let t = f(&self.maps[c.index()]);
        self.maps[c.index()] = t;
        self
    }
}

fn selection_mask(vectors: &[ControlVector], c: Component, batch: i64) -> Result<Tensor> {
    let bits: Vec<bool> = match vectors.len() as i64 {
        1 => vec![vectors[0].bit(c); batch as usize],
        n if n == batch => vectors.iter().map(|v| v.bit(c)).collect(),
        n => {
            return Err(Error::ShapeMismatch(format!(
                "{n} control vectors for a batch of {batch}"
            )))
        }
    };
    Ok(Tensor::from_slice(&bits).view([batch, 1, 1, 1]))
}

/// Swaps entry `i` between `a` and `b` for every sample whose vector has
/// bit `i` set. The first result follows `v` (starting from `a`), the
/// second follows its inverse. Values are selected, never recomputed.
///
/// `vectors` holds either one vector for the whole batch or one per sample.
pub fn exchange_latents(
    a: &LatentComponentSet,
    b: &LatentComponentSet,
    vectors: &[ControlVector],
) -> Result<(LatentComponentSet, LatentComponentSet)> {
    if a.shapes() != b.shapes() {
        return Err(Error::ShapeMismatch(format!(
            "latent sets differ: {:?} vs {:?}",
            a.shapes(),
            b.shapes()
        )));
    }
    let batch = a.batch();
    let mut first = Vec::with_capacity(5);
    let mut second = Vec::with_capacity(5);
    for c in Component::ALL {
        let mask = selection_mask(vectors, c, batch)?;
        let (ai, bi) = (a.get(c), b.get(c));
        first.push(bi.where_self(&mask, ai));
        second.push(ai.where_self(&mask, bi));
    }
    Ok((LatentComponentSet { maps: first }, LatentComponentSet { maps: second }))
}

#[derive(Debug)]
struct ComponentEncoder {
    downs: Vec<nn::Conv2D>,
    blocks: Vec<ResBlock>,
}

impl ComponentEncoder {
    fn new(p: nn::Path, cfg: &NetConfig) -> Self {
        let steps = cfg.down_steps();
        let downs = (0..steps)
            .map(|i| {
                let cin = if i == 0 { 3 } else { cfg.encoder_hidden };
                let cout = if i + 1 == steps { cfg.latent_channels } else { cfg.encoder_hidden };
                down(&p / format!("down{i}"), cin, cout)
            })
            .collect();
        let blocks = (0..RES_BLOCKS)
            .map(|i| ResBlock::new(&p / format!("res{i}"), cfg.latent_channels))
            .collect();
        ComponentEncoder { downs, blocks }
    }
}

impl Module for ComponentEncoder {
    fn forward(&self, xs: &Tensor) -> Tensor {
        let mut h = xs.shallow_clone();
        for d in &self.downs {
            h = lrelu(&d.forward(&h));
        }
        for b in &self.blocks {
            h = b.forward(&h);
        }
        h
    }
}

#[derive(Debug)]
struct InheritanceDecoder {
    input: nn::Conv2D,
    blocks: Vec<ResBlock>,
    ups: Vec<nn::Conv2D>,
    output: nn::Conv2D,
}

impl InheritanceDecoder {
    fn new(p: nn::Path, cfg: &NetConfig) -> Self {
        let dc = cfg.decoder_channels;
        let input = conv3(&p / "input", cfg.decoder_input_channels(), dc);
        let blocks = (0..RES_BLOCKS)
            .map(|i| ResBlock::new(&p / format!("res{i}"), dc))
            .collect();
        let mut ch = dc;
        let ups = (0..cfg.down_steps())
            .map(|i| {
                let next = (ch / 2).max(4);
                let c = conv3(&p / format!("up{i}"), ch, next);
                ch = next;
                c
            })
            .collect();
        let output = conv3(&p / "output", ch, 3);
        InheritanceDecoder {
            input,
            blocks,
            ups,
            output,
        }
    }
}

impl Module for InheritanceDecoder {
    fn forward(&self, xs: &Tensor) -> Tensor {
        let mut h = lrelu(&self.input.forward(xs));
        for b in &self.blocks {
            h = b.forward(&h);
        }
        for u in &self.ups {
            let size = h.size();
            let up = h.upsample_nearest2d([size[2] * 2, size[3] * 2], None, None);
            h = lrelu(&u.forward(&up));
        }
        to_unit_range(&self.output.forward(&h))
    }
}

/// The inheritance network `f_inh`.
#[derive(Debug)]
pub struct InheritanceNet {
    vs: nn::VarStore,
    cfg: NetConfig,
    layout: ComponentLayout,
    latent_layout: ComponentLayout,
    encoders: Vec<ComponentEncoder>,
    decoder: InheritanceDecoder,
}

impl InheritanceNet {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = component_boxes(cfg.canvas)?;
        let latent_layout = layout.downscaled(cfg.stride)?;
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let root = vs.root();
        let encoders = Component::ALL
            .iter()
            .map(|c| ComponentEncoder::new(&root / "enc" / c.name(), cfg))
            .collect();
        let decoder = InheritanceDecoder::new(&root / "dec", cfg);
        init_var_store(&vs, seed, LRELU_GAIN);
        scale_weights(&decoder.output, OUTPUT_GAIN);
        Ok(InheritanceNet {
            vs,
            cfg: cfg.clone(),
            layout,
            latent_layout,
            encoders,
            decoder,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ComponentLayout {
        &self.layout
    }

    pub fn latent_layout(&self) -> &ComponentLayout {
        &self.latent_layout
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    fn check_faces(&self, faces: &Tensor) -> Result<()> {
        let s = self.cfg.canvas as i64;
        let size = faces.size();
        if size.len() != 4 || size[1] != 3 || size[2] != s || size[3] != s {
            return Err(Error::ShapeMismatch(format!(
                "inheritance input must be [B, 3, {s}, {s}], got {size:?}"
            )));
        }
        Ok(())
    }

    /// Profile input: the face with the four inner component boxes blacked out.
    pub fn profile_input(&self, faces: &Tensor) -> Tensor {
        let s = self.cfg.canvas as i64;
        let mut keep = vec![1f32; (s * s) as usize];
        for c in Component::INNER {
            let b = self.layout.get(c);
            for r in b.top..b.bottom() {
                for col in b.left..b.right() {
                    keep[r * s as usize + col] = 0.0;
                }
            }
        }
        let mask = Tensor::from_slice(&keep).view([1, 1, s, s]).to_kind(faces.kind());
        faces * mask
    }

    /// Encodes each component patch with its own encoder.
    pub fn encode(&self, faces: &Tensor) -> Result<LatentComponentSet> {
        self.check_faces(faces)?;
        let mut maps = Vec::with_capacity(5);
        for c in Component::ALL {
            let input = if c == Component::Profile {
                self.profile_input(faces)
            } else {
                let b = self.layout.get(c);
                faces
                    .narrow(2, b.top as i64, b.height as i64)
                    .narrow(3, b.left as i64, b.width as i64)
            };
            maps.push(self.encoders[c.index()].forward(&input));
        }
        LatentComponentSet::new(maps)
    }

    /// Expected `[c, h, w]` of every latent map.
    pub fn latent_shapes(&self) -> Vec<[i64; 3]> {
        let c = self.cfg.latent_channels as i64;
        Component::ALL
            .iter()
            .map(|&comp| {
                let b = self.latent_layout.get(comp);
                [c, b.height as i64, b.width as i64]
            })
            .collect()
    }

    /// `[B, n, S/r, S/r]`.
    pub fn noise_shape(&self, batch: i64) -> [i64; 4] {
        let side = self.cfg.latent_side() as i64;
        [batch, self.cfg.noise_channels as i64, side, side]
    }

    /// Pastes component latents over the profile latent at their scaled
    /// box positions, then appends the 4-channel age map, the gender map and
    /// the noise map.
    pub fn integrate(&self, latents: &LatentComponentSet, labels: &Tensor, noise: &Tensor) -> Result<Tensor> {
        let expected: Vec<Vec<i64>> = self.latent_shapes().iter().map(|s| s.to_vec()).collect();
        let got: Vec<Vec<i64>> = latents.shapes().iter().map(|s| s[1..].to_vec()).collect();
        if expected != got {
            return Err(Error::ShapeMismatch(format!("latent shapes {got:?}, expected {expected:?}")));
        }
        let batch = latents.batch();
        let side = self.cfg.latent_side() as i64;
        if noise.size() != self.noise_shape(batch).to_vec() {
            return Err(Error::ShapeMismatch(format!(
                "noise map {:?}, expected {:?}",
                noise.size(),
                self.noise_shape(batch)
            )));
        }
        if labels.size() != vec![batch, 5] {
            return Err(Error::ShapeMismatch(format!("labels {:?}, expected [{batch}, 5]", labels.size())));
        }
        let mut canvas = latents.get(Component::Profile).shallow_clone();
        for c in Component::INNER {
            let b = self.latent_layout.get(c);
            let pad = [
                b.left as i64,
                side - b.right() as i64,
                b.top as i64,
                side - b.bottom() as i64,
            ];
            let placed = latents.get(c).constant_pad_nd(pad);
            let mut inside = vec![false; (side * side) as usize];
            for r in b.top..b.bottom() {
                for col in b.left..b.right() {
                    inside[r * side as usize + col] = true;
                }
            }
            let mask = Tensor::from_slice(&inside).view([1, 1, side, side]);
            canvas = placed.where_self(&mask, &canvas);
        }
        let labels = labels.to_kind(canvas.kind());
        let age = labels.narrow(1, 0, 4).view([batch, 4, 1, 1]).expand([batch, 4, side, side], false);
        let gender = labels.narrow(1, 4, 1).view([batch, 1, 1, 1]).expand([batch, 1, side, side], false);
        Ok(Tensor::cat(&[canvas, age, gender, noise.to_kind(labels.kind())], 1))
    }

    pub fn decode(&self, features: &Tensor) -> Tensor {
        self.decoder.forward(features)
    }

    /// Training-time forward pass: encode both exchange faces, swap the
    /// selected latents back, integrate with each parent's own labels and
    /// noise, and decode both branches. Returns `(I′_M, I′_F)`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        hat_male: &Tensor,
        hat_female: &Tensor,
        vectors: &[ControlVector],
        labels_male: &Tensor,
        labels_female: &Tensor,
        noise_male: &Tensor,
        noise_female: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        if hat_male.size() != hat_female.size() {
            return Err(Error::ShapeMismatch(format!(
                "male input {:?} vs female input {:?}",
                hat_male.size(),
                hat_female.size()
            )));
        }
        let a = self.encode(hat_male)?;
        let b = self.encode(hat_female)?;
        let (comb_m, comb_f) = exchange_latents(&a, &b, vectors)?;
        let out_m = self.decode(&self.integrate(&comb_m, labels_male, noise_male)?);
        let out_f = self.decode(&self.integrate(&comb_f, labels_female, noise_female)?);
        Ok((out_m, out_f))
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
