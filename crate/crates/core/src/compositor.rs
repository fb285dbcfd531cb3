//! Component exchange between two parent faces.
//!
//! Builds the low-quality synthetic inputs of the inheritance module: each
//! component selected by the control vector is swapped between the male and
//! the female face, optionally colour-corrected toward the face receiving it
//! (`patch / blur(patch) · blur(target)`).

use ndarray::{s, Array3, ArrayView3, ArrayViewMut3};

use crate::exec::Exec;
use crate::face_geometry::{BoxRect, Component, ComponentLayout, ControlVector, Parent};
use crate::{AlignedFace, Error, Result};

/// Gaussian blur parameters. The kernel radius is `ceil(3·sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSpec {
    pub sigma: f64,
    pub epsilon: f64,
}

pub const DEFAULT_EPSILON: f64 = 1e-4;
/// Default blur width as a fraction of the shorter side of the pasted box.
pub const DEFAULT_SIGMA_FRACTION: f64 = 0.08;

impl BlurSpec {
    pub fn new(sigma: f64, epsilon: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::validation("sigma", format!("must be > 0, got {sigma}")));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::validation("epsilon", format!("must be > 0, got {epsilon}")));
        }
        Ok(BlurSpec { sigma, epsilon })
    }

    /// Default spec for a `height × width` patch.
    pub fn for_box(height: usize, width: usize) -> Self {
        let sigma = (DEFAULT_SIGMA_FRACTION * height.min(width) as f64).max(1e-3);
        BlurSpec {
            sigma,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn radius(&self) -> usize {
        (3.0 * self.sigma).ceil() as usize
    }

    fn kernel(&self) -> Vec<f64> {
        let r = self.radius() as i64;
        let two_var = 2.0 * self.sigma * self.sigma;
        (-r..=r).map(|k| (-(k * k) as f64 / two_var).exp()).collect()
    }
}

/// One separable pass along `axis` (0 = rows, 1 = columns). Taps falling
/// outside the image are dropped and the remaining weights renormalised.
fn blur_axis(input: &Array3<f64>, kernel: &[f64], axis: usize) -> Array3<f64> {
    let (h, w, c) = input.dim();
    let n = if axis == 0 { h } else { w };
    let r = (kernel.len() / 2) as i64;
    let mut out = Array3::<f64>::zeros((h, w, c));
    // Normalisers only differ near the borders; precompute per position.
    let norms: Vec<f64> = (0..n as i64)
        .map(|i| {
            let lo = (i - r).max(0);
            let hi = (i + r).min(n as i64 - 1);
            (lo..=hi).map(|k| kernel[(k - i + r) as usize]).sum()
        })
        .collect();
    for row in 0..h {
        for col in 0..w {
            let i = if axis == 0 { row } else { col } as i64;
            let lo = (i - r).max(0);
            let hi = (i + r).min(n as i64 - 1);
            for ch in 0..c {
                let mut acc = 0.0;
                for k in lo..=hi {
                    let wgt = kernel[(k - i + r) as usize];
                    let v = if axis == 0 {
                        input[[k as usize, col, ch]]
                    } else {
                        input[[row, k as usize, ch]]
                    };
                    acc += wgt * v;
                }
                out[[row, col, ch]] = acc / norms[i as usize];
            }
        }
    }
    out
}

fn blur_f64(image: ArrayView3<f32>, spec: &BlurSpec) -> Array3<f64> {
    let kernel = spec.kernel();
    let x = image.mapv(f64::from);
    let x = blur_axis(&x, &kernel, 1);
    blur_axis(&x, &kernel, 0)
}

/// Separable Gaussian blur with a normalised kernel of radius `ceil(3σ)`.
pub fn gaussian_blur(image: ArrayView3<f32>, spec: &BlurSpec) -> Array3<f32> {
    blur_f64(image, spec).mapv(|v| v as f32)
}

/// `clip(patch / (blur(patch) + ε) · blur(target), 0, 1)`.
pub fn color_correct(patch: ArrayView3<f32>, target: ArrayView3<f32>, spec: &BlurSpec) -> Result<Array3<f32>> {
    if patch.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "patch {:?} vs target {:?}",
            patch.dim(),
            target.dim()
        )));
    }
    let bp = blur_f64(patch, spec);
    let bt = blur_f64(target, spec);
    let mut out = Array3::<f32>::zeros(patch.dim());
    ndarray::Zip::from(&mut out)
        .and(&patch)
        .and(&bp)
        .and(&bt)
        .for_each(|o, &p, &b_p, &b_t| {
            *o = (p as f64 / (b_p + spec.epsilon) * b_t).clamp(0.0, 1.0) as f32;
        });
    Ok(out)
}

/// How the colour-correction blur is chosen for each pasted region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlurPolicy {
    /// `sigma = fraction · min(box height, box width)`.
    PerBox { fraction: f64, epsilon: f64 },
    Fixed(BlurSpec),
}

impl Default for BlurPolicy {
    fn default() -> Self {
        BlurPolicy::PerBox {
            fraction: DEFAULT_SIGMA_FRACTION,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl BlurPolicy {
    fn spec_for(&self, b: &BoxRect) -> BlurSpec {
        match *self {
            BlurPolicy::PerBox { fraction, epsilon } => BlurSpec {
                sigma: (fraction * b.height.min(b.width) as f64).max(1e-3),
                epsilon,
            },
            BlurPolicy::Fixed(spec) => spec,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeOptions {
    pub color_correct: bool,
    pub blur: BlurPolicy,
}

impl Default for ExchangeOptions {
    fn default() -> Self {
        ExchangeOptions {
            color_correct: true,
            blur: BlurPolicy::default(),
        }
    }
}

impl ExchangeOptions {
    pub fn without_color_correction() -> Self {
        ExchangeOptions {
            color_correct: false,
            ..Default::default()
        }
    }
}

fn region<'a>(img: &'a Array3<f32>, b: &BoxRect) -> ArrayView3<'a, f32> {
    img.slice(s![b.top..b.bottom(), b.left..b.right(), ..])
}

fn region_mut<'a>(img: &'a mut Array3<f32>, b: &BoxRect) -> ArrayViewMut3<'a, f32> {
    img.slice_mut(s![b.top..b.bottom(), b.left..b.right(), ..])
}

/// Builds the face received by `receiver`: every component whose bit is set
/// is swapped, i.e. taken from the other parent; all others keep the
/// receiver's own pixels. When enabled, swapped inner components are
/// colour-corrected toward the receiver's own region. A swapped profile is
/// pasted as is, since it is the canvas the inner patches are matched to. Regions are written profile first, then components 1–4.
fn compose(
    receiver: &Array3<f32>,
    donor: &Array3<f32>,
    layout: &ComponentLayout,
    v: &ControlVector,
    opts: &ExchangeOptions,
) -> Result<Array3<f32>> {
    let mut out = receiver.clone();
    let order = std::iter::once(Component::Profile).chain(Component::INNER);
    for c in order {
        let b = layout.get(c);
        let own = region(receiver, &b);
        if v.bit(c) {
            let foreign = region(donor, &b);
            if opts.color_correct && c != Component::Profile {
                let corrected = color_correct(foreign, own, &opts.blur.spec_for(&b))?;
                region_mut(&mut out, &b).assign(&corrected);
            } else {
                region_mut(&mut out, &b).assign(&foreign);
            }
        } else if c != Component::Profile {
            // Re-apply the receiver's own component over a swapped profile.
            region_mut(&mut out, &b).assign(&own);
        }
    }
    Ok(out)
}

/// Component exchange: returns `(Î_M, Î_F)`.
///
/// `Î_M` is the male face with every component `i` where `v_i = 1` taken
/// from the female face; `Î_F` is the female face with those same
/// components taken from the male face. `Î_M` therefore follows `v` and
/// `Î_F` follows its inverse, and exchanging the same components back
/// recovers both parents.
pub fn exchange_components(
    male: &AlignedFace,
    female: &AlignedFace,
    layout: &ComponentLayout,
    v: &ControlVector,
    opts: &ExchangeOptions,
) -> Result<(AlignedFace, AlignedFace)> {
    let s = layout.canvas_size();
    if male.size() != s || female.size() != s {
        return Err(Error::ShapeMismatch(format!(
            "faces are {}/{} but the layout canvas is {s}",
            male.size(),
            female.size()
        )));
    }
    let m = compose(male.pixels(), female.pixels(), layout, v, opts)?;
    let f = compose(female.pixels(), male.pixels(), layout, v, opts)?;
    Ok((AlignedFace::new(m)?, AlignedFace::new(f)?))
}

/// Parent that supplies pixel `(row, col)` of each output under `v`, with
/// colour correction disabled. `None` means the pixel is outside every box
/// and keeps the receiving face's value.
pub fn pixel_sources(layout: &ComponentLayout, v: &ControlVector) -> ndarray::Array2<Option<(Parent, Parent)>> {
    layout.ownership_map().mapv(|owner| {
        owner.map(|c| {
            if v.bit(c) {
                (Parent::Female, Parent::Male)
            } else {
                (Parent::Male, Parent::Female)
            }
        })
    })
}

/// One training pair's worth of exchange input.
pub struct ExchangeJob<'a> {
    pub male: &'a AlignedFace,
    pub female: &'a AlignedFace,
    pub vector: ControlVector,
}

/// Runs [`exchange_components`] over a batch.
pub fn exchange_batch(
    jobs: &[ExchangeJob<'_>],
    layout: &ComponentLayout,
    opts: &ExchangeOptions,
    exec: Exec,
) -> Result<Vec<(AlignedFace, AlignedFace)>> {
    exec.map(jobs, |j| exchange_components(j.male, j.female, layout, &j.vector, opts))
        .into_iter()
        .collect()
}
