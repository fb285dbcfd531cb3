//! Procedural cartoon faces whose components sit inside the standard
//! component boxes, and a descriptor oracle that attributes each component
//! of a face to one of two parents.
//!
//! Parameter ranges (fractions of the canvas side S unless noted):
//!
//! | parameter         | range / value                                   |
//! |-------------------|-------------------------------------------------|
//! | skin colour       | base (0.86, 0.70, 0.58), ±0.04 per channel      |
//! | hair, iris, mouth | HSV hue uniform, saturation 0.55–1, value 0.5–0.95 |
//! | brow thickness    | 0.02–0.04, +0.02 for male faces                 |
//! | jaw half-width    | 0.33, +0.05 male / −0.02 female below the eyes   |
//! | nose shape        | 0–1, nostril spread 0.04 + 0.05·p               |
//! | wrinkle lines     | A 0, B 1, C 3, D 6                              |
//! | skin desaturation | A 0, B 0.03, C 0.06, D 0.10                     |

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, FaceRecord, ManifestEntry};
use crate::exec::Exec;
use crate::face_geometry::{eye_anchors, AlignedFace, Component, ComponentLayout, LandmarkSet};
use crate::image_io::save_png;
use crate::networks::{AgeStage, AttributeLabel, Gender};
use crate::{Error, Result};

pub const WRINKLES: [usize; 4] = [0, 1, 3, 6];
pub const DESATURATION: [f32; 4] = [0.0, 0.03, 0.06, 0.10];
const SKIN_BASE: [f32; 3] = [0.86, 0.70, 0.58];
const SKIN_JITTER: f32 = 0.04;
const BROW_COLOR: [f32; 3] = [0.16, 0.11, 0.08];
const PUPIL_COLOR: [f32; 3] = [0.05, 0.05, 0.05];
const IRIS_RADIUS: f64 = 0.075;
const PUPIL_RADIUS: f64 = 0.022;
const BROW_Y: f64 = 0.30;
const BROW_HALF_WIDTH: f64 = 0.085;
const MALE_BROW_EXTRA: f32 = 0.02;
const FACE_CENTER_Y: f64 = 0.50;
const FACE_HALF_HEIGHT: f64 = 0.45;
const FACE_HALF_WIDTH: f64 = 0.33;
const MALE_JAW: f64 = 0.05;
const FEMALE_JAW: f64 = -0.02;
const MOUTH_CENTER: (f64, f64) = (0.5, 0.76);
const MOUTH_RADII: (f64, f64) = (0.11, 0.05);
/// Distance ratio below which an attribution is declared ambiguous.
pub const AMBIGUITY_RATIO: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyFaceSpec {
    pub skin_color: [f32; 3],
    pub hair_color: [f32; 3],
    pub iris_color_left: [f32; 3],
    pub iris_color_right: [f32; 3],
    pub mouth_color: [f32; 3],
    /// Fraction of S, before the gender offset.
    pub brow_thickness: f32,
    /// In [0, 1].
    pub nose_shape_param: f32,
    pub age_stage: AgeStage,
    pub gender: Gender,
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn vivid<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    hsv(rng.random(), rng.random_range(0.55..1.0), rng.random_range(0.5..0.95))
}

impl ToyFaceSpec {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, age_stage: AgeStage, gender: Gender) -> Self {
        let skin = SKIN_BASE.map(|c| c + rng.random_range(-SKIN_JITTER..SKIN_JITTER));
        ToyFaceSpec {
            skin_color: skin,
            hair_color: vivid(rng),
            iris_color_left: vivid(rng),
            iris_color_right: vivid(rng),
            mouth_color: vivid(rng),
            brow_thickness: rng.random_range(0.02..0.04),
            nose_shape_param: rng.random(),
            age_stage,
            gender,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let colors = [
            ("skin_color", self.skin_color),
            ("hair_color", self.hair_color),
            ("iris_color_left", self.iris_color_left),
            ("iris_color_right", self.iris_color_right),
            ("mouth_color", self.mouth_color),
        ];
        for (name, c) in colors {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::validation(name, format!("{c:?} is outside [0,1]³")));
            }
        }
        if !(0.0..=0.08).contains(&self.brow_thickness) {
            return Err(Error::validation("brow_thickness", "must lie in [0, 0.08]"));
        }
        if !(0.0..=1.0).contains(&self.nose_shape_param) {
            return Err(Error::validation("nose_shape_param", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn label(&self) -> AttributeLabel {
        AttributeLabel::new(self.age_stage, self.gender)
    }
}

fn desaturate(c: [f32; 3], amount: f32) -> [f32; 3] {
    let gray = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
    c.map(|v| v * (1.0 - amount) + gray * amount)
}

fn scale(c: [f32; 3], k: f32) -> [f32; 3] {
    c.map(|v| (v * k).clamp(0.0, 1.0))
}

struct Canvas {
    px: Array3<f32>,
    s: f64,
}

impl Canvas {
    fn fill_where(&mut self, color: [f32; 3], inside: impl Fn(f64, f64) -> bool) {
        let n = self.px.dim().0;
        for row in 0..n {
            for col in 0..n {
                // pixel centre
                if inside(col as f64 + 0.5, row as f64 + 0.5) {
                    for ch in 0..3 {
                        self.px[[row, col, ch]] = color[ch];
                    }
                }
            }
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, r: f64, color: [f32; 3]) {
        self.fill_where(color, |x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r * r);
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, color: [f32; 3]) {
        self.fill_where(color, |x, y| ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0);
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: [f32; 3]) {
        self.fill_where(color, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1);
    }
}

fn jaw_half_width(gender: Gender) -> f64 {
    FACE_HALF_WIDTH
        + match gender {
            Gender::M => MALE_JAW,
            Gender::F => FEMALE_JAW,
        }
}

/// Wrinkle line rectangles `(x0, y0, x1, y1)` as fractions of S; line `i`
/// goes to the forehead, left cheek, right cheek in turn.
fn wrinkle_lines(count: usize) -> Vec<(f64, f64, f64, f64)> {
    (0..count)
        .map(|i| {
            let k = (i / 3) as f64;
            match i % 3 {
                0 => (0.28, 0.075 + 0.05 * k, 0.72, 0.105 + 0.05 * k),
                1 => (0.20, 0.60 + 0.07 * k, 0.32, 0.63 + 0.07 * k),
                _ => (0.69, 0.60 + 0.07 * k, 0.80, 0.63 + 0.07 * k),
            }
        })
        .collect()
}

fn toy_landmarks(spec: &ToyFaceSpec, size: usize) -> Result<LandmarkSet> {
    let s = size as f64;
    let [le, re] = eye_anchors(size);
    let mut pts = Vec::with_capacity(68);
    let jaw = jaw_half_width(spec.gender) * s;
    let cy = FACE_CENTER_Y * s;
    for k in 0..17 {
        let t = std::f64::consts::PI * k as f64 / 16.0;
        pts.push([s / 2.0 - jaw * t.cos(), cy + FACE_HALF_HEIGHT * s * t.sin()]);
    }
    for eye in [le, re] {
        for k in 0..5 {
            let dx = (k as f64 / 4.0 - 0.5) * 2.0 * BROW_HALF_WIDTH * s;
            pts.push([eye[0] + dx, BROW_Y * s]);
        }
    }
    for k in 0..4 {
        pts.push([s / 2.0, (0.42 + 0.045 * k as f64) * s]);
    }
    let spread = (0.04 + 0.05 * spec.nose_shape_param as f64) * s;
    for k in 0..5 {
        pts.push([s / 2.0 + spread * (k as f64 / 2.0 - 1.0), 0.57 * s]);
    }
    // six points symmetric about each anchor so their mean is the anchor
    for eye in [le, re] {
        for k in 0..6 {
            let t = std::f64::consts::TAU * k as f64 / 6.0;
            pts.push([eye[0] + IRIS_RADIUS * s * t.cos(), eye[1] + 0.5 * IRIS_RADIUS * s * t.sin()]);
        }
    }
    let (mx, my) = (MOUTH_CENTER.0 * s, MOUTH_CENTER.1 * s);
    for k in 0..12 {
        let t = std::f64::consts::TAU * k as f64 / 12.0;
        pts.push([mx + MOUTH_RADII.0 * s * t.cos(), my + MOUTH_RADII.1 * s * t.sin()]);
    }
    for k in 0..8 {
        let t = std::f64::consts::TAU * k as f64 / 8.0;
        pts.push([mx + 0.6 * MOUTH_RADII.0 * s * t.cos(), my + 0.3 * MOUTH_RADII.1 * s * t.sin()]);
    }
    LandmarkSet::new(pts)
}

/// Renders `spec` on an S×S canvas. Pure: the same spec always yields the
/// same pixels.
pub fn generate_toy_face(spec: &ToyFaceSpec, size: usize) -> Result<(AlignedFace, LandmarkSet, AttributeLabel)> {
    spec.validate()?;
    if size < 32 {
        return Err(Error::validation("size", "toy faces need S ≥ 32"));
    }
    let s = size as f64;
    let mut c = Canvas {
        px: Array3::zeros((size, size, 3)),
        s,
    };
    let stage = spec.age_stage.index();
    let skin = desaturate(spec.skin_color, DESATURATION[stage]);

    c.fill_where(spec.hair_color, |_, _| true);
    let (cx, cy) = (0.5 * s, FACE_CENTER_Y * s);
    let (top_rx, low_rx, ry) = (FACE_HALF_WIDTH * s, jaw_half_width(spec.gender) * s, FACE_HALF_HEIGHT * s);
    let eye_line = 0.40 * s;
    c.fill_where(skin, |x, y| {
        let rx = if y < eye_line { top_rx } else { low_rx };
        ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
    });

    let line = scale(skin, 0.62);
    for (x0, y0, x1, y1) in wrinkle_lines(WRINKLES[stage]) {
        c.rect(x0 * s, y0 * s, x1 * s, y1 * s, line);
    }

    let brow = spec.brow_thickness
        + match spec.gender {
            Gender::M => MALE_BROW_EXTRA,
            Gender::F => 0.0,
        };
    let [le, re] = eye_anchors(size);
    for (eye, iris) in [(le, spec.iris_color_left), (re, spec.iris_color_right)] {
        c.rect(
            eye[0] - BROW_HALF_WIDTH * s,
            BROW_Y * s - brow as f64 * s,
            eye[0] + BROW_HALF_WIDTH * s,
            BROW_Y * s,
            BROW_COLOR,
        );
        c.disc(eye[0], eye[1], IRIS_RADIUS * c.s, iris);
        c.disc(eye[0], eye[1], PUPIL_RADIUS * c.s, PUPIL_COLOR);
    }

    let nose = scale(skin, 0.78);
    c.rect(0.49 * s, 0.43 * s, 0.51 * s + 1.0, 0.56 * s, nose);
    let spread = 0.04 + 0.05 * spec.nose_shape_param as f64;
    for side in [-1.0, 1.0] {
        c.disc(0.5 * s + side * spread * s, 0.57 * s, 0.025 * s, scale(skin, 0.6));
    }

    let (mx, my) = (MOUTH_CENTER.0 * s, MOUTH_CENTER.1 * s);
    c.ellipse(mx, my, MOUTH_RADII.0 * s, MOUTH_RADII.1 * s, spec.mouth_color);
    c.rect(mx - MOUTH_RADII.0 * s * 0.8, my - 0.5, mx + MOUTH_RADII.0 * s * 0.8, my + 0.5, scale(spec.mouth_color, 0.55));

    let face = AlignedFace::new(c.px)?;
    Ok((face, toy_landmarks(spec, size)?, spec.label()))
}

/// Specs for `subjects` toy faces: genders alternate, stages cycle every two
/// subjects, appearance drawn from a per-subject stream of `seed`.
pub fn toy_specs(subjects: usize, seed: u64) -> Vec<ToyFaceSpec> {
    (0..subjects)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let gender = if i % 2 == 0 { Gender::M } else { Gender::F };
            let stage = AgeStage::ALL[(i / 2) % 4];
            ToyFaceSpec::random(&mut rng, stage, gender)
        })
        .collect()
}

pub fn toy_image_name(i: usize) -> String {
    format!("toy_{i:05}.png")
}

/// In-memory toy pool; ids match the file names of [`generate_toy_dataset`].
pub fn toy_records(subjects: usize, size: usize, seed: u64, exec: Exec) -> Result<Vec<FaceRecord>> {
    let specs = toy_specs(subjects, seed);
    exec.map_range(subjects, |i| {
        let (face, _, label) = generate_toy_face(&specs[i], size)?;
        Ok(FaceRecord {
            id: toy_image_name(i),
            face,
            label,
        })
    })
    .into_iter()
    .collect()
}

/// Writes PNGs, landmark JSON files, the specs and `manifest.json` into `dir`.
pub fn generate_toy_dataset(dir: &Path, subjects: usize, size: usize, seed: u64, exec: Exec) -> Result<DatasetManifest> {
    if subjects == 0 {
        return Err(Error::validation("subjects", "must be positive"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let specs = toy_specs(subjects, seed);
    let entries: Vec<Result<ManifestEntry>> = exec.map_range(subjects, |i| {
        let (face, landmarks, label) = generate_toy_face(&specs[i], size)?;
        let image = toy_image_name(i);
        let lm = format!("toy_{i:05}.landmarks.json");
        save_png(&face, &dir.join(&image))?;
        let lm_path = dir.join(&lm);
        fs::write(&lm_path, serde_json::to_string(&landmarks)?).map_err(|e| Error::io(&lm_path, e))?;
        Ok(ManifestEntry {
            image_path: image.into(),
            gender: label.gender,
            age_years: None,
            age_stage: Some(label.age),
            landmarks_path: Some(lm.into()),
        })
    });
    let manifest = DatasetManifest {
        entries: entries.into_iter().collect::<Result<_>>()?,
        base: dir.to_path_buf(),
    };
    manifest.save(&dir.join("manifest.json"))?;
    let specs_path = dir.join("toy_specs.json");
    fs::write(&specs_path, serde_json::to_string_pretty(&specs)?).map_err(|e| Error::io(&specs_path, e))?;
    Ok(manifest)
}

/// Mean colour and mean gradient magnitude over the pixels a component owns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentDescriptor {
    pub mean: [f64; 3],
    pub edge_density: f64,
}

impl ComponentDescriptor {
    pub fn distance(&self, other: &ComponentDescriptor) -> f64 {
        let dc: f64 = (0..3).map(|c| (self.mean[c] - other.mean[c]).powi(2)).sum();
        (dc + (self.edge_density - other.edge_density).powi(2)).sqrt()
    }
}

/// Descriptors of all five components. Each is computed over the pixels the
/// component owns under the paste order, so the profile excludes the inner
/// boxes and an overlapped box excludes the part pasted over it.
pub fn toy_component_oracle(face: &AlignedFace, layout: &ComponentLayout) -> Result<[ComponentDescriptor; 5]> {
    if face.size() != layout.canvas_size() {
        return Err(Error::ShapeMismatch(format!(
            "face is {0}×{0}, layout is for {1}×{1}",
            face.size(),
            layout.canvas_size()
        )));
    }
    let owner: Array2<Option<Component>> = layout.ownership_map();
    let px = face.pixels();
    let n = face.size();
    let mut sums = [[0f64; 3]; 5];
    let mut counts = [0usize; 5];
    let mut edges = [0f64; 5];
    let mut edge_counts = [0usize; 5];
    for row in 0..n {
        for col in 0..n {
            let Some(c) = owner[[row, col]] else { continue };
            let k = c.index();
            counts[k] += 1;
            for ch in 0..3 {
                sums[k][ch] += px[[row, col, ch]] as f64;
            }
            if row + 1 < n && col + 1 < n && owner[[row + 1, col]] == Some(c) && owner[[row, col + 1]] == Some(c) {
                let mut g = 0.0;
                for ch in 0..3 {
                    let dx = (px[[row, col + 1, ch]] - px[[row, col, ch]]) as f64;
                    let dy = (px[[row + 1, col, ch]] - px[[row, col, ch]]) as f64;
                    g += (dx * dx + dy * dy).sqrt();
                }
                edges[k] += g / 3.0;
                edge_counts[k] += 1;
            }
        }
    }
    let mut out = [ComponentDescriptor {
        mean: [0.0; 3],
        edge_density: 0.0,
    }; 5];
    for k in 0..5 {
        let cnt = counts[k].max(1) as f64;
        out[k] = ComponentDescriptor {
            mean: sums[k].map(|s| s / cnt),
            edge_density: edges[k] / edge_counts[k].max(1) as f64,
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Attribution {
    Male,
    Female,
    Ambiguous,
}

/// Attributes each component of `child` to the parent with the nearer
/// descriptor, or `Ambiguous` when the farther/nearer distance ratio is
/// below [`AMBIGUITY_RATIO`].
pub fn attribute_components(
    child: &AlignedFace,
    male: &AlignedFace,
    female: &AlignedFace,
    layout: &ComponentLayout,
) -> Result<[Attribution; 5]> {
    let c = toy_component_oracle(child, layout)?;
    let m = toy_component_oracle(male, layout)?;
    let f = toy_component_oracle(female, layout)?;
    Ok(std::array::from_fn(|k| {
        let (dm, df) = (c[k].distance(&m[k]), c[k].distance(&f[k]));
        let (near, far) = if dm <= df { (dm, df) } else { (df, dm) };
        if far < AMBIGUITY_RATIO * near || far == 0.0 {
            Attribution::Ambiguous
        } else if dm < df {
            Attribution::Male
        } else {
            Attribution::Female
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compositor::{exchange_components, ExchangeOptions};
    use crate::face_geometry::{component_boxes, ControlVector, Parent};

    fn red_left_spec() -> ToyFaceSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut spec = ToyFaceSpec::random(&mut rng, AgeStage::C, Gender::F);
        spec.iris_color_left = [1.0, 0.0, 0.0];
        spec
    }

    #[test]
    fn rendering_is_pure() {
        let spec = red_left_spec();
        let (a, la, _) = generate_toy_face(&spec, 64).unwrap();
        let (b, lb, _) = generate_toy_face(&spec, 64).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn red_iris_dominates_left_eye_box() {
        let (face, _, _) = generate_toy_face(&red_left_spec(), 64).unwrap();
        let b = component_boxes(64).unwrap().get(Component::LeftEyeBrow);
        // mean over the iris disc region of the box
        let [le, _] = eye_anchors(64);
        let r = IRIS_RADIUS * 64.0;
        let mut sum = [0f64; 3];
        let mut n = 0.0;
        for row in b.top..b.bottom() {
            for col in b.left..b.right() {
                let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
                let d = ((x - le[0]).powi(2) + (y - le[1]).powi(2)).sqrt();
                if d <= r && d > PUPIL_RADIUS * 64.0 + 1.0 {
                    for ch in 0..3 {
                        sum[ch] += face.pixels()[[row, col, ch]] as f64;
                    }
                    n += 1.0;
                }
            }
        }
        let m = sum.map(|s| s / n);
        assert!(m[0] - m[1] >= 0.2 && m[0] - m[2] >= 0.2, "{m:?}");
    }

    #[test]
    fn landmark_eye_centres_hit_anchors() {
        for size in [64, 128, 256] {
            let (_, lm, _) = generate_toy_face(&red_left_spec(), size).unwrap();
            let [le, re] = eye_anchors(size);
            let (l, r) = (lm.left_eye_center(), lm.right_eye_center());
            assert!((l[0] - le[0]).abs() < 0.5 && (l[1] - le[1]).abs() < 0.5);
            assert!((r[0] - re[0]).abs() < 0.5 && (r[1] - re[1]).abs() < 0.5);
        }
    }

    #[test]
    fn features_stay_inside_their_boxes() {
        let layout = component_boxes(64).unwrap();
        let [le, re] = eye_anchors(64);
        let r = IRIS_RADIUS * 64.0;
        for (c, e) in [(Component::LeftEyeBrow, le), (Component::RightEyeBrow, re)] {
            let b = layout.get(c);
            assert!(e[0] - r >= b.left as f64 && e[0] + r <= b.right() as f64);
            assert!(BROW_Y * 64.0 - 0.06 * 64.0 >= b.top as f64 && e[1] + r <= b.bottom() as f64);
        }
        let m = layout.get(Component::Mouth);
        let (mx, my) = (MOUTH_CENTER.0 * 64.0, MOUTH_CENTER.1 * 64.0);
        assert!(mx - MOUTH_RADII.0 * 64.0 >= m.left as f64 && mx + MOUTH_RADII.0 * 64.0 <= m.right() as f64);
        assert!(my + MOUTH_RADII.1 * 64.0 <= m.bottom() as f64);
        // wrinkles live in the profile-owned region
        let owner = layout.ownership_map();
        for (x0, y0, x1, y1) in wrinkle_lines(6) {
            for row in (y0 * 64.0) as usize..(y1 * 64.0).ceil() as usize {
                for col in (x0 * 64.0) as usize..(x1 * 64.0).ceil() as usize {
                    assert_eq!(owner[[row, col]], Some(Component::Profile), "({row},{col})");
                }
            }
        }
    }

    #[test]
    fn age_and_gender_change_the_render() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = ToyFaceSpec::random(&mut rng, AgeStage::A, Gender::M);
        let (a, _, _) = generate_toy_face(&base, 64).unwrap();
        for stage in [AgeStage::B, AgeStage::C, AgeStage::D] {
            let (b, _, _) = generate_toy_face(&ToyFaceSpec { age_stage: stage, ..base.clone() }, 64).unwrap();
            assert_ne!(a, b);
        }
        let (f, _, _) = generate_toy_face(&ToyFaceSpec { gender: Gender::F, ..base.clone() }, 64).unwrap();
        assert_ne!(a, f);
        assert!(generate_toy_face(&ToyFaceSpec { nose_shape_param: 2.0, ..base }, 64).is_err());
    }

    #[test]
    fn uniform_gray_descriptors() {
        let layout = component_boxes(64).unwrap();
        let d = toy_component_oracle(&AlignedFace::filled(64, [0.5; 3]), &layout).unwrap();
        for c in d {
            for m in c.mean {
                assert!((m - 0.5).abs() < 1e-6);
            }
            assert_eq!(c.edge_density, 0.0);
        }
    }

    #[test]
    fn identical_parents_are_ambiguous() {
        let layout = component_boxes(64).unwrap();
        let (face, _, _) = generate_toy_face(&red_left_spec(), 64).unwrap();
        let att = attribute_components(&face, &face, &face, &layout).unwrap();
        assert!(att.iter().all(|a| *a == Attribution::Ambiguous));
    }

    #[test]
    fn oracle_recovers_exchanged_components() {
        let layout = component_boxes(64).unwrap();
        let specs = toy_specs(40, 9);
        let opts = ExchangeOptions::without_color_correction();
        for pair in 0..10 {
            let m = generate_toy_face(&ToyFaceSpec { gender: Gender::M, ..specs[2 * pair].clone() }, 64).unwrap().0;
            let f = generate_toy_face(&ToyFaceSpec { gender: Gender::F, ..specs[2 * pair + 1].clone() }, 64).unwrap().0;
            for v in ControlVector::all() {
                let (hm, hf) = exchange_components(&m, &f, &layout, &v, &opts).unwrap();
                let am = attribute_components(&hm, &m, &f, &layout).unwrap();
                let af = attribute_components(&hf, &m, &f, &layout).unwrap();
                for c in Component::ALL {
                    let want = match v.source(c) {
                        Parent::Male => (Attribution::Male, Attribution::Female),
                        Parent::Female => (Attribution::Female, Attribution::Male),
                    };
                    assert_eq!((am[c.index()], af[c.index()]), want, "pair {pair} v {v} {c:?}");
                }
            }
        }
    }

    #[test]
    fn toy_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_toy_dataset(dir.path(), 6, 64, 5, Exec::Parallel).unwrap();
        assert_eq!(m.entries.len(), 6);
        let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.entries, m.entries);
        let recs = super::super::load_faces(&loaded, 64, Exec::Sequential).unwrap();
        let mem = toy_records(6, 64, 5, Exec::Sequential).unwrap();
        for (a, b) in recs.iter().zip(&mem) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.label, b.label);
            // PNG quantisation plus identity alignment
            let diff = (a.face.pixels() - b.face.pixels()).mapv(f32::abs).fold(0f32, |x, y| x.max(*y));
            assert!(diff <= 1.0 / 255.0 + 1e-4, "{diff}");
        }
    }

    #[test]
    fn sequential_and_parallel_pools_agree() {
        let a = toy_records(8, 64, 2, Exec::Sequential).unwrap();
        let b = toy_records(8, 64, 2, Exec::Parallel).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.face, y.face);
        }
    }
}
