//! Parameterized image transformations `τ_g` and two-view sampling.
//!
//! Each transformation family is described by a [`GroupSpec`] whose raw
//! parameter is mapped onto a normalized `g ∈ [0, 1]`. Continuous variants of
//! the finite families (gradual flips, partial grayscale) interpolate between
//! the pure states so parameter sweeps are possible.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::rng::{mix_seed, rng_from, DetRng};
use crate::targets::TargetFamily;
use crate::tensor::rem_euclid;

/// Image with interleaved channels, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid("images need 1 or 3 channels"));
        }
        if height == 0 || width == 0 || data.len() != height * width * channels {
            return Err(Error::Shape {
                op: "Image::new",
                expected: vec![height, width, channels],
                got: vec![data.len()],
            });
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("pixel values must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    fn from_raw_clamped(like: &Image, mut data: Vec<f64>) -> Self {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self {
            height: like.height,
            width: like.width,
            channels: like.channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    fn at_or_zero(&self, y: isize, x: isize, c: usize) -> f64 {
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            0.0
        } else {
            self.get(y as usize, x as usize, c)
        }
    }

    /// Bilinear sample with zero fill outside the image.
    fn bilinear(&self, sy: f64, sx: f64, c: usize) -> f64 {
        let y0 = sy.floor();
        let x0 = sx.floor();
        let fy = sy - y0;
        let fx = sx - x0;
        let (y0, x0) = (y0 as isize, x0 as isize);
        let mut v = (1.0 - fy) * (1.0 - fx) * self.at_or_zero(y0, x0, c);
        if fx != 0.0 {
            v += (1.0 - fy) * fx * self.at_or_zero(y0, x0 + 1, c);
        }
        if fy != 0.0 {
            v += fy * (1.0 - fx) * self.at_or_zero(y0 + 1, x0, c);
            if fx != 0.0 {
                v += fy * fx * self.at_or_zero(y0 + 1, x0 + 1, c);
            }
        }
        v
    }

    /// Per-pixel luminance.
    pub fn luminance(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// Mean absolute pixel difference.
    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }

    pub fn map_coords(&self, mut f: impl FnMut(usize, usize, usize) -> f64) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Image::from_raw_clamped(self, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Rot360,
    Rot4Fold,
    HFlip,
    VFlip,
    Grayscale,
    Brightness,
    Contrast,
    Saturation,
    Hue,
    Rrc,
}

impl TransformKind {
    pub const ALL: [TransformKind; 10] = [
        Self::Rot360,
        Self::Rot4Fold,
        Self::HFlip,
        Self::VFlip,
        Self::Grayscale,
        Self::Brightness,
        Self::Contrast,
        Self::Saturation,
        Self::Hue,
        Self::Rrc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rot360 => "rot360",
            Self::Rot4Fold => "rot4fold",
            Self::HFlip => "hflip",
            Self::VFlip => "vflip",
            Self::Grayscale => "grayscale",
            Self::Brightness => "brightness",
            Self::Contrast => "contrast",
            Self::Saturation => "saturation",
            Self::Hue => "hue",
            Self::Rrc => "rrc",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| invalid(alloc::format!("unknown transformation '{name}'")))
    }

    fn is_color_jitter(self) -> bool {
        matches!(
            self,
            Self::Brightness | Self::Contrast | Self::Saturation | Self::Hue
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawRange {
    Interval { lo: f64, hi: f64 },
    Finite(Vec<f64>),
}

/// A transformation family with its parameter normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub kind: TransformKind,
    pub raw_range: RawRange,
    pub cyclic: bool,
    pub target_family: TargetFamily,
    pub finite: bool,
}

impl GroupSpec {
    pub fn new(kind: TransformKind) -> Self {
        use TransformKind::*;
        let (raw_range, cyclic) = match kind {
            Rot360 => (RawRange::Interval { lo: -180.0, hi: 180.0 }, true),
            Rot4Fold => (RawRange::Finite(vec![0.0, 90.0, 180.0, 270.0]), true),
            HFlip | VFlip => (RawRange::Finite(vec![0.0, 1.0]), true),
            Grayscale => (RawRange::Finite(vec![0.0, 1.0]), false),
            Brightness | Contrast | Saturation => (RawRange::Interval { lo: 0.6, hi: 1.4 }, false),
            Hue => (RawRange::Interval { lo: -0.1, hi: 0.1 }, false),
            Rrc => (RawRange::Interval { lo: 0.2, hi: 1.0 }, false),
        };
        let finite = matches!(raw_range, RawRange::Finite(_));
        let target_family = if cyclic {
            TargetFamily::VonMises
        } else {
            TargetFamily::Gaussian
        };
        Self {
            kind,
            raw_range,
            cyclic,
            target_family,
            finite,
        }
    }

    pub fn with_target_family(mut self, family: TargetFamily) -> Self {
        self.target_family = family;
        self
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Normalized parameter of the untransformed image.
    pub fn identity_param(&self) -> f64 {
        use TransformKind::*;
        match self.kind {
            Rot360 | Brightness | Contrast | Saturation | Hue => 0.5,
            Rot4Fold => 0.125,
            HFlip | VFlip => 0.25,
            Grayscale => 0.0,
            Rrc => 1.0,
        }
    }

    /// Normalized values of the finite set, or `None` for continuous kinds.
    pub fn finite_params(&self) -> Option<Vec<f64>> {
        match &self.raw_range {
            RawRange::Finite(set) => Some(set.iter().map(|&r| self.map_unchecked(r)).collect()),
            RawRange::Interval { .. } => None,
        }
    }

    /// Uniform draw over the normalized parameter domain.
    pub fn sample_param(&self, rng: &mut DetRng) -> f64 {
        match self.finite_params() {
            Some(set) => set[rng.gen_range(0..set.len())],
            None => rng.gen::<f64>(),
        }
    }

    fn map_unchecked(&self, raw: f64) -> f64 {
        use TransformKind::*;
        match (&self.raw_range, self.kind) {
            (_, Rot4Fold) => 0.125 + raw / 360.0,
            (_, HFlip | VFlip) => 0.25 + raw / 2.0,
            (_, Grayscale) => raw,
            (RawRange::Interval { lo, hi }, _) => {
                let (center, width) = ((lo + hi) / 2.0, hi - lo);
                0.5 + (raw - center) / width
            }
            (RawRange::Finite(_), _) => raw,
        }
    }
}

/// Map a raw parameter onto `g ∈ [0, 1]`.
pub fn map_param(spec: &GroupSpec, raw: f64) -> Result<f64> {
    match &spec.raw_range {
        RawRange::Interval { lo, hi } => {
            if !(*lo..=*hi).contains(&raw) {
                return Err(Error::OutOfRange {
                    what: "raw transformation parameter",
                    value: raw,
                    lo: *lo,
                    hi: *hi,
                });
            }
        }
        RawRange::Finite(set) => {
            if !set.iter().any(|s| (s - raw).abs() < 1e-9) {
                return Err(invalid(alloc::format!(
                    "raw parameter {raw} is not in the finite set of {}",
                    spec.name()
                )));
            }
        }
    }
    Ok(spec.map_unchecked(raw))
}

/// Inverse of [`map_param`], extended continuously to all of `[0, 1]`.
/// For flips and grayscale the result is the blend weight towards the
/// transformed state.
pub fn unmap_param(spec: &GroupSpec, g: f64) -> f64 {
    use TransformKind::*;
    match (&spec.raw_range, spec.kind) {
        (_, Rot4Fold) => (g - 0.125) * 360.0,
        (_, HFlip | VFlip) => ((g - 0.25) / 0.5).clamp(0.0, 1.0),
        (_, Grayscale) => g,
        (RawRange::Interval { lo, hi }, _) => {
            let (center, width) = ((lo + hi) / 2.0, hi - lo);
            center + (g - 0.5) * width
        }
        (RawRange::Finite(_), _) => g,
    }
}

/// Apply `τ_g`. `seed` only affects random resized crops (crop center).
pub fn apply_transform(img: &Image, spec: &GroupSpec, g: f64, seed: u64) -> Result<Image> {
    if !(0.0..=1.0).contains(&g) {
        return Err(Error::OutOfRange {
            what: "normalized transformation parameter",
            value: g,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let raw = unmap_param(spec, g);
    use TransformKind::*;
    Ok(match spec.kind {
        Rot360 | Rot4Fold => rotate(img, raw),
        HFlip => blend(img, &mirror(img, true), raw),
        VFlip => blend(img, &mirror(img, false), raw),
        Grayscale => grayscale(img, raw),
        Brightness => brightness(img, raw),
        Contrast => contrast(img, raw),
        Saturation => saturation(img, raw),
        Hue => hue(img, raw),
        Rrc => resized_crop(img, raw, seed),
    })
}

/// Rotate counterclockwise by `degrees` about the image center, bilinear
/// sampling with zero fill. Quarter turns of square images are exact.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    let turns = degrees / 90.0;
    if turns == turns.round() {
        let k = (turns.round() as i64).rem_euclid(4) as usize;
        if k == 0 {
            return img.clone();
        }
        if img.height == img.width {
            let mut out = img.clone();
            for _ in 0..k {
                out = quarter_turn(&out);
            }
            return out;
        }
    }
    let theta = degrees * PI / 180.0;
    let (s, c) = theta.sin_cos();
    let cy = (img.height as f64 - 1.0) / 2.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    img.map_coords(|y, x, ch| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = cx + c * dx - s * dy;
        let sy = cy + s * dx + c * dy;
        img.bilinear(sy, sx, ch)
    })
}

fn quarter_turn(img: &Image) -> Image {
    let n = img.width;
    img.map_coords(|y, x, c| img.get(x, n - 1 - y, c))
}

/// Horizontal (`horizontal = true`) or vertical mirror.
pub fn mirror(img: &Image, horizontal: bool) -> Image {
    let (h, w) = (img.height, img.width);
    img.map_coords(|y, x, c| {
        if horizontal {
            img.get(y, w - 1 - x, c)
        } else {
            img.get(h - 1 - y, x, c)
        }
    })
}

fn blend(a: &Image, b: &Image, w: f64) -> Image {
    if w == 0.0 {
        return a.clone();
    }
    if w == 1.0 {
        return b.clone();
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (1.0 - w) * x + w * y)
        .collect();
    Image::from_raw_clamped(a, data)
}

fn grayscale(img: &Image, w: f64) -> Image {
    if img.channels == 1 || w == 0.0 {
        return img.clone();
    }
    let lum = img.luminance();
    let data = img
        .data
        .chunks(3)
        .zip(&lum)
        .flat_map(|(p, l)| p.iter().map(move |v| (1.0 - w) * v + w * l))
        .collect();
    Image::from_raw_clamped(img, data)
}

fn brightness(img: &Image, factor: f64) -> Image {
    if factor == 1.0 {
        return img.clone();
    }
    Image::from_raw_clamped(img, img.data.iter().map(|v| v * factor).collect())
}

fn contrast(img: &Image, factor: f64) -> Image {
    if factor == 1.0 {
        return img.clone();
    }
    let lum = img.luminance();
    let mean = lum.iter().sum::<f64>() / lum.len() as f64;
    Image::from_raw_clamped(
        img,
        img.data
            .iter()
            .map(|v| factor * v + (1.0 - factor) * mean)
            .collect(),
    )
}

fn saturation(img: &Image, factor: f64) -> Image {
    if img.channels == 1 || factor == 1.0 {
        return img.clone();
    }
    let lum = img.luminance();
    let data = img
        .data
        .chunks(3)
        .zip(&lum)
        .flat_map(|(p, l)| p.iter().map(move |v| factor * v + (1.0 - factor) * l))
        .collect();
    Image::from_raw_clamped(img, data)
}

fn hue(img: &Image, shift: f64) -> Image {
    if img.channels == 1 || shift == 0.0 {
        return img.clone();
    }
    let mut data = Vec::with_capacity(img.data.len());
    for p in img.data.chunks(3) {
        let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
        let h = rem_euclid(h + shift, 1.0);
        let (r, g, b) = hsv_to_rgb(h, s, v);
        data.extend_from_slice(&[r, g, b]);
    }
    Image::from_raw_clamped(img, data)
}

/// Hue in `[0, 1)` turns, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, max);
    }
    let h = if max == r {
        rem_euclid((g - b) / delta, 6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = rem_euclid(h, 1.0) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Crop of relative width `scale` (same aspect ratio) around a seeded random
/// center, resized back bilinearly.
fn resized_crop(img: &Image, scale: f64, seed: u64) -> Image {
    if scale >= 1.0 {
        return img.clone();
    }
    let (h, w) = (img.height as f64, img.width as f64);
    let (ch, cw) = (scale * h, scale * w);
    let mut rng = rng_from(seed, &[0x5252_43]);
    let y0 = rng.gen::<f64>() * (h - ch);
    let x0 = rng.gen::<f64>() * (w - cw);
    img.map_coords(|y, x, c| {
        let sy = (y0 + (y as f64 + 0.5) * scale - 0.5).clamp(0.0, h - 1.0);
        let sx = (x0 + (x as f64 + 0.5) * scale - 0.5).clamp(0.0, w - 1.0);
        img.bilinear(sy, sx, c)
    })
}

/// Separable 3×3 Gaussian blur with edge replication.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let side = (-1.0 / (2.0 * sigma * sigma)).exp();
    let norm = 1.0 + 2.0 * side;
    let k = [side / norm, 1.0 / norm, side / norm];
    let (h, w) = (img.height as isize, img.width as isize);
    let clampi = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let horiz = img.map_coords(|y, x, c| {
        (-1..=1)
            .map(|d| k[(d + 1) as usize] * img.get(y, clampi(x as isize + d, w), c))
            .sum()
    });
    horiz.map_coords(|y, x, c| {
        (-1..=1)
            .map(|d| k[(d + 1) as usize] * horiz.get(clampi(y as isize + d, h), x, c))
            .sum()
    })
}

/// One entry of an augmentation stack.
#[derive(Debug, Clone, PartialEq)]
pub enum StackItem {
    Identity,
    /// Fires with probability `prob`; when it fires the parameter is drawn
    /// uniformly over the normalized domain.
    Transform { spec: GroupSpec, prob: f64 },
    /// Brightness, contrast, saturation and hue in random order.
    ColorJitter { prob: f64 },
    GaussianBlur { sigma_lo: f64, sigma_hi: f64, prob: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackPreset {
    Identity,
    RrcPlusOne,
    FullStack,
}

impl StackPreset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::RrcPlusOne => "rrc_plus_one",
            Self::FullStack => "full_stack",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Self::Identity),
            "rrc_plus_one" => Ok(Self::RrcPlusOne),
            "full_stack" => Ok(Self::FullStack),
            other => Err(invalid(alloc::format!("unknown stack preset '{other}'"))),
        }
    }

    pub fn items(self) -> Vec<StackItem> {
        use TransformKind::*;
        match self {
            Self::Identity => vec![StackItem::Identity],
            Self::RrcPlusOne => vec![StackItem::Transform {
                spec: GroupSpec::new(Rrc),
                prob: 1.0,
            }],
            // Uniform draws over {identity, transformed}: hflip with prob 1
            // flips half the time, grayscale with prob 0.4 converts 20%.
            Self::FullStack => vec![
                StackItem::Transform {
                    spec: GroupSpec::new(Rrc),
                    prob: 1.0,
                },
                StackItem::ColorJitter { prob: 0.8 },
                StackItem::Transform {
                    spec: GroupSpec::new(HFlip),
                    prob: 1.0,
                },
                StackItem::Transform {
                    spec: GroupSpec::new(Grayscale),
                    prob: 0.4,
                },
                StackItem::GaussianBlur {
                    sigma_lo: 0.1,
                    sigma_hi: 2.0,
                    prob: 0.5,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub view1: Image,
    pub g1: f64,
    pub view2: Image,
    pub g2: f64,
}

fn stack_covers(stack: &[StackItem], kind: TransformKind) -> bool {
    stack.iter().any(|item| match item {
        StackItem::Transform { spec, .. } => spec.kind == kind,
        StackItem::ColorJitter { .. } => kind.is_color_jitter(),
        _ => false,
    })
}

/// Produce one augmented view; returns the normalized parameter of the
/// structured transformation as actually applied.
pub fn sample_view(img: &Image, stack: &[StackItem], structured: &GroupSpec, rng: &mut DetRng) -> Result<(Image, f64)> {
    if stack.is_empty() {
        return Err(invalid("augmentation stack is empty"));
    }
    let mut out = img.clone();
    let mut recorded = structured.identity_param();
    for item in stack {
        match item {
            StackItem::Identity => {}
            StackItem::Transform { spec, prob } => {
                let fires = rng.gen::<f64>() < *prob;
                let g = spec.sample_param(rng);
                let seed: u64 = rng.gen();
                if fires {
                    out = apply_transform(&out, spec, g, seed)?;
                    if spec.kind == structured.kind {
                        recorded = g;
                    }
                }
            }
            StackItem::ColorJitter { prob } => {
                let fires = rng.gen::<f64>() < *prob;
                let mut order = [
                    TransformKind::Brightness,
                    TransformKind::Contrast,
                    TransformKind::Saturation,
                    TransformKind::Hue,
                ];
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.gen_range(0..=i));
                }
                let gs: [f64; 4] = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
                if fires {
                    for (kind, g) in order.into_iter().zip(gs) {
                        let spec = GroupSpec::new(kind);
                        out = apply_transform(&out, &spec, g, 0)?;
                        if kind == structured.kind {
                            recorded = g;
                        }
                    }
                }
            }
            StackItem::GaussianBlur {
                sigma_lo,
                sigma_hi,
                prob,
            } => {
                let fires = rng.gen::<f64>() < *prob;
                let sigma = sigma_lo + rng.gen::<f64>() * (sigma_hi - sigma_lo);
                if fires {
                    out = gaussian_blur(&out, sigma);
                }
            }
        }
    }
    if !stack_covers(stack, structured.kind) {
        let g = structured.sample_param(rng);
        let seed: u64 = rng.gen();
        out = apply_transform(&out, structured, g, seed)?;
        recorded = g;
    }
    Ok((out, recorded))
}

/// Two independently augmented views of `img` from the seeded stream.
pub fn sample_training_pair(img: &Image, stack: &[StackItem], structured: &GroupSpec, seed: u64) -> Result<TrainingPair> {
    let mut r1 = rng_from(seed, &[1]);
    let mut r2 = rng_from(seed, &[2]);
    let (view1, g1) = sample_view(img, stack, structured, &mut r1)?;
    let (view2, g2) = sample_view(img, stack, structured, &mut r2)?;
    Ok(TrainingPair { view1, g1, view2, g2 })
}

/// Seed for sample `index` at `epoch` under `base` seed.
pub fn sample_seed(base: u64, index: usize, epoch: usize) -> u64 {
    mix_seed(base, &[index as u64, epoch as u64])
}

pub fn describe_stack(stack: &[StackItem]) -> String {
    let mut parts: Vec<String> = Vec::new();
    for item in stack {
        parts.push(match item {
            StackItem::Identity => String::from("identity"),
            StackItem::Transform { spec, prob } => alloc::format!("{}(p={prob})", spec.name()),
            StackItem::ColorJitter { prob } => alloc::format!("color_jitter(p={prob})"),
            StackItem::GaussianBlur { prob, .. } => alloc::format!("blur(p={prob})"),
        });
    }
    parts.join("+")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> Image {
        let n = h * w * c;
        Image::new(h, w, c, (0..n).map(|i| (i as f64 * 0.618).fract()).collect()).unwrap()
    }

    #[test]
    fn table_mappings() {
        let rot = GroupSpec::new(TransformKind::Rot360);
        assert_eq!(map_param(&rot, -180.0).unwrap(), 0.0);
        assert_eq!(map_param(&rot, 0.0).unwrap(), 0.5);
        let hf = GroupSpec::new(TransformKind::HFlip);
        assert_eq!(map_param(&hf, 0.0).unwrap(), 0.25);
        assert_eq!(map_param(&hf, 1.0).unwrap(), 0.75);
        let r4 = GroupSpec::new(TransformKind::Rot4Fold);
        assert_eq!(map_param(&r4, 90.0).unwrap(), 0.375);
        assert!(map_param(&r4, 45.0).is_err());
        assert!(map_param(&rot, 181.0).is_err());
        assert_eq!(unmap_param(&rot, 0.5), 0.0);
        assert_eq!(unmap_param(&GroupSpec::new(TransformKind::Brightness), 0.5), 1.0);
        assert_eq!(unmap_param(&GroupSpec::new(TransformKind::Hue), 0.5), 0.0);
    }

    #[test]
    fn continuous_round_trip_and_monotone() {
        for kind in [
            TransformKind::Rot360,
            TransformKind::Brightness,
            TransformKind::Contrast,
            TransformKind::Saturation,
            TransformKind::Hue,
            TransformKind::Rrc,
        ] {
            let spec = GroupSpec::new(kind);
            let RawRange::Interval { lo, hi } = spec.raw_range else { panic!() };
            let mut prev = -1.0;
            for i in 0..=50 {
                let raw = lo + (hi - lo) * i as f64 / 50.0;
                let g = map_param(&spec, raw).unwrap();
                assert!(g > prev);
                prev = g;
                assert!((unmap_param(&spec, g) - raw).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_parameters_are_no_ops() {
        let img = ramp(6, 6, 3);
        for kind in TransformKind::ALL {
            let spec = GroupSpec::new(kind);
            let out = apply_transform(&img, &spec, spec.identity_param(), 9).unwrap();
            assert_eq!(out, img, "{}", kind.name());
        }
    }

    #[test]
    fn full_flip_is_exact_mirror() {
        let img = ramp(5, 7, 1);
        let out = apply_transform(&img, &GroupSpec::new(TransformKind::HFlip), 0.75, 0).unwrap();
        for y in 0..5 {
            for x in 0..7 {
                assert_eq!(out.get(y, x, 0), img.get(y, 6 - x, 0));
            }
        }
    }

    #[test]
    fn quarter_turns_compose_exactly() {
        let img = ramp(8, 8, 1);
        let spec = GroupSpec::new(TransformKind::Rot360);
        let a = apply_transform(&img, &spec, 0.75, 0).unwrap();
        let b = apply_transform(&a, &spec, 0.75, 0).unwrap();
        let direct = apply_transform(&img, &spec, 1.0, 0).unwrap();
        assert_eq!(b, direct);
        let four = (0..4).fold(img.clone(), |acc, _| rotate(&acc, 90.0));
        assert_eq!(four, img);
    }

    #[test]
    fn quarter_turn_matches_general_path() {
        let img = ramp(9, 9, 1);
        let exact = rotate(&img, 90.0);
        let approx = rotate(&img, 90.0 + 1e-9);
        assert!(exact.mean_abs_diff(&approx) < 1e-6);
    }

    #[test]
    fn out_of_range_parameter_errors() {
        let img = ramp(4, 4, 1);
        assert!(apply_transform(&img, &GroupSpec::new(TransformKind::Rot360), 1.2, 0).is_err());
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_breaks_associativity() {
        let img = ramp(4, 4, 1);
        let hi = GroupSpec::new(TransformKind::Contrast);
        let a = apply_transform(&apply_transform(&img, &hi, 1.0, 0).unwrap(), &hi, 0.0, 0).unwrap();
        let b = apply_transform(&apply_transform(&img, &hi, 0.0, 0).unwrap(), &hi, 1.0, 0).unwrap();
        assert!(a.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, b);
    }

    #[test]
    fn pair_sampling_is_deterministic() {
        let img = ramp(8, 8, 3);
        let stack = StackPreset::FullStack.items();
        let spec = GroupSpec::new(TransformKind::Rot360);
        let a = sample_training_pair(&img, &stack, &spec, 42).unwrap();
        let b = sample_training_pair(&img, &stack, &spec, 42).unwrap();
        assert_eq!(a, b);
        assert!(sample_training_pair(&img, &[], &spec, 42).is_err());
    }

    #[test]
    fn identity_stack_gives_pure_rotations() {
        let img = ramp(8, 8, 1);
        let spec = GroupSpec::new(TransformKind::Rot360);
        let pair = sample_training_pair(&img, &[StackItem::Identity], &spec, 3).unwrap();
        assert_eq!(pair.view1, apply_transform(&img, &spec, pair.g1, 0).unwrap());
        assert_eq!(pair.view2, apply_transform(&img, &spec, pair.g2, 0).unwrap());
    }

    #[test]
    fn structured_kind_inside_stack_records_identity_when_not_fired() {
        let img = ramp(6, 6, 3);
        let spec = GroupSpec::new(TransformKind::Grayscale);
        let stack = vec![StackItem::Transform {
            spec: spec.clone(),
            prob: 0.0,
        }];
        let pair = sample_training_pair(&img, &stack, &spec, 1).unwrap();
        assert_eq!(pair.g1, 0.0);
        assert_eq!(pair.view1, img);
    }
}
