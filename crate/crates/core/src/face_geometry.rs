//! Face alignment, component box geometry and control-vector semantics.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The five facial components, in control-vector bit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    LeftEyeBrow,
    RightEyeBrow,
    Nose,
    Mouth,
    Profile,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::LeftEyeBrow,
        Component::RightEyeBrow,
        Component::Nose,
        Component::Mouth,
        Component::Profile,
    ];

    /// The four inner components, in paste order.
    pub const INNER: [Component; 4] = [
        Component::LeftEyeBrow,
        Component::RightEyeBrow,
        Component::Nose,
        Component::Mouth,
    ];

    /// Zero-based bit index.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Component> {
        Component::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::LeftEyeBrow => "left_eye_brow",
            Component::RightEyeBrow => "right_eye_brow",
            Component::Nose => "nose",
            Component::Mouth => "mouth",
            Component::Profile => "profile",
        }
    }
}

/// Which parent a component is inherited from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parent {
    Male,
    Female,
}

impl Parent {
    pub fn other(self) -> Parent {
        match self {
            Parent::Male => Parent::Female,
            Parent::Female => Parent::Male,
        }
    }
}

/// 5-bit inheritance selector. Bit `i` clear means component `i` comes from
/// the male parent, set means it comes from the female parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ControlVector([bool; 5]);

impl ControlVector {
    pub const ZERO: ControlVector = ControlVector([false; 5]);
    pub const ONES: ControlVector = ControlVector([true; 5]);

    pub fn new(bits: [bool; 5]) -> Self {
        ControlVector(bits)
    }

    /// Builds a vector from the low five bits of `code`; bit 4 of `code` is
    /// the first (left eye&brow) component so that `from_code(0b00110)`
    /// renders as `"00110"`.
    pub fn from_code(code: u8) -> Self {
        let mut bits = [false; 5];
        for (i, b) in bits.iter_mut().enumerate() {
            *b = (code >> (4 - i)) & 1 == 1;
        }
        ControlVector(bits)
    }

    pub fn code(&self) -> u8 {
        self.0
            .iter()
            .fold(0u8, |acc, &b| (acc << 1) | u8::from(b))
    }

    /// All 32 vectors, in code order.
    pub fn all() -> impl Iterator<Item = ControlVector> {
        (0u8..32).map(ControlVector::from_code)
    }

    pub fn bits(&self) -> [bool; 5] {
        self.0
    }

    pub fn bit(&self, c: Component) -> bool {
        self.0[c.index()]
    }

    pub fn source(&self, c: Component) -> Parent {
        if self.bit(c) {
            Parent::Female
        } else {
            Parent::Male
        }
    }

    pub fn invert(&self) -> ControlVector {
        let mut bits = self.0;
        for b in bits.iter_mut() {
            *b = !*b;
        }
        ControlVector(bits)
    }

    pub fn with_bit(mut self, c: Component, value: bool) -> Self {
        self.0[c.index()] = value;
        self
    }
}

/// Parses a 5-character string of `'0'`/`'1'`.
pub fn parse_control_vector(text: &str) -> Result<ControlVector> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() != 5 {
        return Err(Error::validation(
            "vector",
            format!("expected 5 characters of '0'/'1', got {} characters", chars.len()),
        ));
    }
    let mut bits = [false; 5];
    for (i, ch) in chars.into_iter().enumerate() {
        bits[i] = match ch {
            '0' => false,
            '1' => true,
            other => {
                return Err(Error::validation(
                    "vector",
                    format!("character {other:?} at position {} is not '0' or '1'", i + 1),
                ))
            }
        };
    }
    Ok(ControlVector(bits))
}

impl FromStr for ControlVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_control_vector(s)
    }
}

impl fmt::Display for ControlVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl Serialize for ControlVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ControlVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_control_vector(&s).map_err(serde::de::Error::custom)
    }
}

/// 68-point facial landmarks in source-image pixel coordinates (x, y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub const COUNT: usize = 68;
    const LEFT_EYE: std::ops::Range<usize> = 36..42;
    const RIGHT_EYE: std::ops::Range<usize> = 42..48;

    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        let set = LandmarkSet { points };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != Self::COUNT {
            return Err(Error::validation(
                "landmarks",
                format!("expected {} points, got {}", Self::COUNT, self.points.len()),
            ));
        }
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::validation(
                "landmarks",
                format!("point {i} has a non-finite coordinate"),
            ));
        }
        Ok(())
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: LandmarkSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn mean_of(&self, range: std::ops::Range<usize>) -> [f64; 2] {
        let n = range.len() as f64;
        let (sx, sy) = self.points[range]
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        [sx / n, sy / n]
    }

    /// Mean of the image-left eye contour (points 36..42).
    pub fn left_eye_center(&self) -> [f64; 2] {
        self.mean_of(Self::LEFT_EYE)
    }

    /// Mean of the image-right eye contour (points 42..48).
    pub fn right_eye_center(&self) -> [f64; 2] {
        self.mean_of(Self::RIGHT_EYE)
    }
}

/// Square RGB face on the aligned canvas, values in [0, 1], stored H×W×3.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFace {
    pixels: Array3<f32>,
}

impl AlignedFace {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h != w || c != 3 || h == 0 {
            return Err(Error::ShapeMismatch(format!(
                "aligned face must be S×S×3, got {h}×{w}×{c}"
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(
                "image",
                format!("pixel value {v} outside [0, 1]"),
            ));
        }
        Ok(AlignedFace { pixels })
    }

    /// Clips into [0, 1] instead of rejecting out-of-range values.
    pub fn from_clipped(mut pixels: Array3<f32>) -> Result<Self> {
        pixels.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self::new(pixels)
    }

    pub fn filled(size: usize, rgb: [f32; 3]) -> Self {
        let pixels = Array3::from_shape_fn((size, size, 3), |(_, _, c)| rgb[c]);
        AlignedFace { pixels }
    }

    pub fn size(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn view(&self) -> ArrayView3<'_, f32> {
        self.pixels.view()
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }
}

/// Axis-aligned box in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BoxRect {
    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.bottom() && col >= self.left && col < self.right()
    }

    /// The box at `1/factor` resolution; `None` unless every edge divides.
    pub fn downscaled(&self, factor: usize) -> Option<BoxRect> {
        let all = [self.top, self.left, self.height, self.width];
        if all.iter().any(|v| v % factor != 0) {
            return None;
        }
        Some(BoxRect {
            top: self.top / factor,
            left: self.left / factor,
            height: self.height / factor,
            width: self.width / factor,
        })
    }
}

/// Box sizes (height, width) on a 256 canvas.
pub const REFERENCE_CANVAS: usize = 256;
pub const REFERENCE_SIZES: [(usize, usize); 5] = [(96, 80), (96, 80), (80, 80), (128, 64), (256, 256)];

/// Box centres as (x, y) fractions of the canvas side. The profile always
/// spans the whole canvas.
pub const BOX_CENTERS: [(f64, f64); 4] = [(0.35, 0.38), (0.65, 0.38), (0.50, 0.55), (0.50, 0.76)];

/// Canonical (x, y) eye-centre positions as fractions of the canvas side.
pub const LEFT_EYE_ANCHOR: (f64, f64) = (0.35, 0.40);
pub const RIGHT_EYE_ANCHOR: (f64, f64) = (0.65, 0.40);

/// Box origins are snapped to this grid so every encoder stride up to it
/// lands on whole latent cells.
pub const POSITION_QUANTUM: usize = 4;

const MIN_CANVAS: usize = 32;

/// Per-component boxes on an S×S canvas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentLayout {
    boxes: [BoxRect; 5],
    canvas_size: usize,
}

impl ComponentLayout {
    pub fn canvas_size(&self) -> usize {
        self.canvas_size
    }

    pub fn boxes(&self) -> &[BoxRect; 5] {
        &self.boxes
    }

    pub fn get(&self, c: Component) -> BoxRect {
        self.boxes[c.index()]
    }

    /// Builds a layout from explicit boxes; used for restricted layouts in
    /// tests and for latent-resolution layouts.
    pub fn from_boxes(canvas_size: usize, boxes: [BoxRect; 5]) -> Result<Self> {
        for (i, b) in boxes.iter().enumerate() {
            if b.height == 0 || b.width == 0 || b.bottom() > canvas_size || b.right() > canvas_size {
                return Err(Error::validation(
                    "layout",
                    format!("box {i} {b:?} does not fit a {canvas_size} canvas"),
                ));
            }
        }
        Ok(ComponentLayout { boxes, canvas_size })
    }

    /// The same layout at `1/factor` resolution, as used on encoder latents.
    pub fn downscaled(&self, factor: usize) -> Result<ComponentLayout> {
        if factor == 0 || self.canvas_size % factor != 0 {
            return Err(Error::ShapeMismatch(format!(
                "canvas {} is not divisible by stride {factor}",
                self.canvas_size
            )));
        }
        let mut boxes = self.boxes;
        for (i, b) in boxes.iter_mut().enumerate() {
            *b = b.downscaled(factor).ok_or_else(|| {
                Error::ShapeMismatch(format!(
                    "{} box {:?} is not aligned to stride {factor}",
                    Component::ALL[i].name(),
                    self.boxes[i]
                ))
            })?;
        }
        Ok(ComponentLayout {
            boxes,
            canvas_size: self.canvas_size / factor,
        })
    }

    /// Component owning each canvas pixel under the paste order (profile
    /// first, then components 1–4, later pastes overwriting earlier ones).
    /// Pixels outside every box map to `None`.
    pub fn ownership_map(&self) -> Array2<Option<Component>> {
        let s = self.canvas_size;
        let mut map = Array2::from_elem((s, s), None);
        let order = std::iter::once(Component::Profile).chain(Component::INNER);
        for c in order {
            let b = self.get(c);
            map.slice_mut(ndarray::s![b.top..b.bottom(), b.left..b.right()])
                .fill(Some(c));
        }
        map
    }
}

fn round_even(v: f64) -> usize {
    ((v / 2.0).round() as usize) * 2
}

fn snap(v: f64, quantum: usize) -> i64 {
    ((v / quantum as f64).round() as i64) * quantum as i64
}

/// Component boxes for an S×S canvas: reference sizes scaled by S/256 and
/// rounded to even integers, centred on [`BOX_CENTERS`], origins snapped to
/// [`POSITION_QUANTUM`] and kept strictly inside the canvas.
pub fn component_boxes(size: usize) -> Result<ComponentLayout> {
    if size < MIN_CANVAS || size % 4 != 0 {
        return Err(Error::validation(
            "size",
            format!("canvas side must be ≥ {MIN_CANVAS} and divisible by 4, got {size}"),
        ));
    }
    let scale = size as f64 / REFERENCE_CANVAS as f64;
    let q = POSITION_QUANTUM as i64;
    let s = size as i64;
    let mut boxes = [BoxRect {
        top: 0,
        left: 0,
        height: size,
        width: size,
    }; 5];
    for (i, &(cx, cy)) in BOX_CENTERS.iter().enumerate() {
        let (rh, rw) = REFERENCE_SIZES[i];
        let height = round_even(rh as f64 * scale);
        let width = round_even(rw as f64 * scale);
        let (h, w) = (height as i64, width as i64);
        if h + 2 * q > s || w + 2 * q > s {
            return Err(Error::validation(
                "size",
                format!("canvas {size} is too small to hold the {} box", Component::ALL[i].name()),
            ));
        }
        let top = snap(cy * size as f64 - height as f64 / 2.0, POSITION_QUANTUM).clamp(q, s - h - q);
        let left = snap(cx * size as f64 - width as f64 / 2.0, POSITION_QUANTUM).clamp(q, s - w - q);
        boxes[i] = BoxRect {
            top: top as usize,
            left: left as usize,
            height,
            width,
        };
    }
    Ok(ComponentLayout {
        boxes,
        canvas_size: size,
    })
}

/// 2-D similarity transform `p ↦ a·p + b` in complex form, with `a = scale·e^{iθ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    a: [f64; 2],
    b: [f64; 2],
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        a: [1.0, 0.0],
        b: [0.0, 0.0],
    };

    /// The unique similarity mapping `src[0] → dst[0]` and `src[1] → dst[1]`.
    pub fn from_pairs(src: [[f64; 2]; 2], dst: [[f64; 2]; 2]) -> Result<Self> {
        let dp = [src[1][0] - src[0][0], src[1][1] - src[0][1]];
        let dq = [dst[1][0] - dst[0][0], dst[1][1] - dst[0][1]];
        let denom = dp[0] * dp[0] + dp[1] * dp[1];
        if denom < 1e-12 {
            return Err(Error::DegenerateGeometry(
                "eye centres coincide; cannot solve the alignment transform".into(),
            ));
        }
        // a = dq / dp
        let a = [
            (dq[0] * dp[0] + dq[1] * dp[1]) / denom,
            (dq[1] * dp[0] - dq[0] * dp[1]) / denom,
        ];
        let ap0 = mul(a, src[0]);
        let b = [dst[0][0] - ap0[0], dst[0][1] - ap0[1]];
        Ok(Similarity { a, b })
    }

    pub fn scale(&self) -> f64 {
        self.a[0].hypot(self.a[1])
    }

    pub fn rotation(&self) -> f64 {
        self.a[1].atan2(self.a[0])
    }

    pub fn translation(&self) -> [f64; 2] {
        self.b
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let ap = mul(self.a, p);
        [ap[0] + self.b[0], ap[1] + self.b[1]]
    }

    pub fn inverse(&self) -> Similarity {
        let n = self.a[0] * self.a[0] + self.a[1] * self.a[1];
        let inv_a = [self.a[0] / n, -self.a[1] / n];
        let nb = mul(inv_a, self.b);
        Similarity {
            a: inv_a,
            b: [-nb[0], -nb[1]],
        }
    }
}

fn mul(a: [f64; 2], p: [f64; 2]) -> [f64; 2] {
    [a[0] * p[0] - a[1] * p[1], a[0] * p[1] + a[1] * p[0]]
}

/// Canonical eye-centre targets on an S canvas.
pub fn eye_anchors(size: usize) -> [[f64; 2]; 2] {
    let s = size as f64;
    [
        [LEFT_EYE_ANCHOR.0 * s, LEFT_EYE_ANCHOR.1 * s],
        [RIGHT_EYE_ANCHOR.0 * s, RIGHT_EYE_ANCHOR.1 * s],
    ]
}

/// The transform taking the landmark eye centres to the canonical anchors.
pub fn alignment_transform(landmarks: &LandmarkSet, size: usize) -> Result<Similarity> {
    landmarks.validate()?;
    Similarity::from_pairs(
        [landmarks.left_eye_center(), landmarks.right_eye_center()],
        eye_anchors(size),
    )
}

/// Bilinear sample with edge clamping; pixel `(row, col)` sits at `(x = col, y = row)`.
fn sample_bilinear(image: &ArrayView3<f32>, x: f64, y: f64, out: &mut [f32; 3]) {
    let (h, w, _) = image.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    for (c, o) in out.iter_mut().enumerate() {
        let top = image[[y0, x0, c]] * (1.0 - fx) + image[[y0, x1, c]] * fx;
        let bottom = image[[y1, x0, c]] * (1.0 - fx) + image[[y1, x1, c]] * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
}

/// Warps `image` so the eye centres land on the canonical anchors of an
/// `out_size` canvas (bilinear resampling, edge clamping, output clipped to [0, 1]).
pub fn align_face(image: ArrayView3<f32>, landmarks: &LandmarkSet, out_size: usize) -> Result<AlignedFace> {
    let (h, w, c) = image.dim();
    if c != 3 || h == 0 || w == 0 {
        return Err(Error::ShapeMismatch(format!("expected H×W×3 image, got {h}×{w}×{c}")));
    }
    if out_size == 0 {
        return Err(Error::validation("size", "output size must be positive"));
    }
    let inverse = alignment_transform(landmarks, out_size)?.inverse();
    let mut out = Array3::<f32>::zeros((out_size, out_size, 3));
    let mut px = [0f32; 3];
    for row in 0..out_size {
        for col in 0..out_size {
            let [x, y] = inverse.apply([col as f64, row as f64]);
            sample_bilinear(&image, x, y, &mut px);
            for ch in 0..3 {
                out[[row, col, ch]] = px[ch].clamp(0.0, 1.0);
            }
        }
    }
    AlignedFace::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn landmarks_with_eyes(left: [f64; 2], right: [f64; 2]) -> LandmarkSet {
        let mut pts = vec![[0.0, 0.0]; 68];
        for (k, p) in pts.iter_mut().enumerate().take(42).skip(36) {
            let t = (k - 36) as f64 / 6.0 * std::f64::consts::TAU;
            *p = [left[0] + 2.0 * t.cos(), left[1] + 1.0 * t.sin()];
        }
        for (k, p) in pts.iter_mut().enumerate().take(48).skip(42) {
            let t = (k - 42) as f64 / 6.0 * std::f64::consts::TAU;
            *p = [right[0] + 2.0 * t.cos(), right[1] + 1.0 * t.sin()];
        }
        LandmarkSet::new(pts).unwrap()
    }

    fn close(a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
        (a[0] - b[0]).abs() < tol && (a[1] - b[1]).abs() < tol
    }

    #[test]
    fn parses_vectors() {
        let v = parse_control_vector("00110").unwrap();
        assert_eq!(v.bits(), [false, false, true, true, false]);
        assert_eq!(v.source(Component::LeftEyeBrow), Parent::Male);
        assert_eq!(v.source(Component::Nose), Parent::Female);
        assert_eq!(v.source(Component::Mouth), Parent::Female);
        assert_eq!(v.source(Component::Profile), Parent::Male);
        assert_eq!(parse_control_vector("00000").unwrap(), ControlVector::ZERO);
    }

    #[test]
    fn rejects_malformed_vectors() {
        match parse_control_vector("0012a") {
            Err(Error::Validation { field, message }) => {
                assert_eq!(field, "vector");
                assert!(message.contains("position 4"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_control_vector("0101").is_err());
        assert!(parse_control_vector("010101").is_err());
    }

    #[test]
    fn inversion() {
        let v = parse_control_vector("00110").unwrap();
        assert_eq!(v.invert().to_string(), "11001");
        assert_eq!(ControlVector::ZERO.invert(), ControlVector::ONES);
        for v in ControlVector::all() {
            assert_eq!(v.invert().invert(), v);
            assert_eq!(parse_control_vector(&v.to_string()).unwrap(), v);
            assert_eq!(ControlVector::from_code(v.code()), v);
        }
        assert_eq!(ControlVector::all().count(), 32);
    }

    #[test]
    fn reference_box_sizes() {
        let layout = component_boxes(256).unwrap();
        let sizes: Vec<_> = layout.boxes().iter().map(|b| (b.height, b.width)).collect();
        assert_eq!(sizes, vec![(96, 80), (96, 80), (80, 80), (128, 64), (256, 256)]);

        let layout = component_boxes(64).unwrap();
        let sizes: Vec<_> = layout.boxes().iter().map(|b| (b.height, b.width)).collect();
        assert_eq!(sizes, vec![(24, 20), (24, 20), (20, 20), (32, 16), (64, 64)]);

        assert!(component_boxes(30).is_err());
        assert!(component_boxes(28).is_err());
        assert!(component_boxes(66).is_err());
    }

    #[test]
    fn reference_layout_is_stride_four_aligned() {
        for s in [64, 128, 256] {
            let layout = component_boxes(s).unwrap();
            let latent = layout.downscaled(4).unwrap();
            assert_eq!(latent.canvas_size(), s / 4);
        }
    }

    #[test]
    fn ownership_follows_paste_order() {
        let layout = component_boxes(64).unwrap();
        let own = layout.ownership_map();
        let mouth = layout.get(Component::Mouth);
        assert_eq!(own[[mouth.top, mouth.left]], Some(Component::Mouth));
        assert_eq!(own[[0, 0]], Some(Component::Profile));
        assert!(own.iter().all(|o| o.is_some()));
    }

    proptest! {
        #[test]
        fn boxes_fit_strictly(k in 8usize..=96) {
            let s = k * 4;
            let layout = component_boxes(s).unwrap();
            for c in Component::INNER {
                let b = layout.get(c);
                prop_assert!(b.top > 0 && b.left > 0);
                prop_assert!(b.bottom() < s && b.right() < s);
            }
            let p = layout.get(Component::Profile);
            prop_assert_eq!((p.top, p.left, p.height, p.width), (0, 0, s, s));
        }
    }

    #[test]
    fn similarity_from_known_eyes() {
        // eyes at (10,20) and (30,20), 64 canvas
        let lm = landmarks_with_eyes([10.0, 20.0], [30.0, 20.0]);
        let t = alignment_transform(&lm, 64).unwrap();
        assert!((t.scale() - 0.96).abs() < 1e-12);
        let mid = t.apply([20.0, 20.0]);
        assert!(close(mid, [32.0, 25.6], 1e-9), "{mid:?}");
        let anchors = eye_anchors(64);
        assert!(close(t.apply(lm.left_eye_center()), anchors[0], 0.5));
        assert!(close(t.apply(lm.right_eye_center()), anchors[1], 0.5));
    }

    #[test]
    fn mirrored_face_rotates_by_pi() {
        let lm = landmarks_with_eyes([30.0, 20.0], [10.0, 20.0]);
        let t = alignment_transform(&lm, 64).unwrap();
        assert!((t.rotation().abs() - std::f64::consts::PI).abs() < 1e-9);
        let anchors = eye_anchors(64);
        assert!(close(t.apply(lm.left_eye_center()), anchors[0], 0.5));
        assert!(close(t.apply(lm.right_eye_center()), anchors[1], 0.5));
    }

    #[test]
    fn coincident_eyes_are_degenerate() {
        let lm = landmarks_with_eyes([20.0, 20.0], [20.0, 20.0]);
        assert!(matches!(
            align_face(Array3::zeros((64, 64, 3)).view(), &lm, 64),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn inverse_round_trips() {
        let t = Similarity::from_pairs([[3.0, 4.0], [10.0, -2.0]], [[1.0, 1.0], [5.0, 9.0]]).unwrap();
        let p = [7.25, -1.5];
        let q = t.inverse().apply(t.apply(p));
        assert!(close(p, q, 1e-12));
    }

    #[test]
    fn canonical_input_aligns_to_itself() {
        let s = 32;
        let img = Array3::from_shape_fn((s, s, 3), |(r, c, ch)| ((r * 7 + c * 3 + ch * 11) % 17) as f32 / 16.0);
        let anchors = eye_anchors(s);
        let lm = landmarks_with_eyes(anchors[0], anchors[1]);
        let out = align_face(img.view(), &lm, s).unwrap();
        let err = out
            .pixels()
            .iter()
            .zip(img.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0f32, f32::max);
        assert!(err < 1e-6, "max err {err}");
        let again = align_face(img.view(), &lm, s).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn landmark_json() {
        let pts: Vec<[f64; 2]> = (0..68).map(|i| [i as f64, 2.0 * i as f64]).collect();
        let text = serde_json::json!({ "points": pts }).to_string();
        let set = LandmarkSet::from_json(&text).unwrap();
        assert_eq!(set.points().len(), 68);
        let short = serde_json::json!({ "points": [[1.0, 2.0]] }).to_string();
        assert!(LandmarkSet::from_json(&short).is_err());
    }
}
