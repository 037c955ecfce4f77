//! Seeded synthetic datasets.

use duet_core::dataset::Dataset;
use duet_core::rng::rng_from;
use duet_core::transforms::{mirror, Image};
use rand::Rng;

use crate::error::{LabError, LabResult};

pub const SIDE: usize = 28;
/// Bar half-widths, one per class.
pub const BAR_HALF_WIDTHS: [f64; 3] = [0.9, 1.7, 2.6];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    OrientedBars,
    TwoClassBlobs,
}

impl SynthKind {
    pub fn from_name(name: &str) -> LabResult<Self> {
        match name {
            "oriented_bars" => Ok(Self::OrientedBars),
            "two_class_blobs" => Ok(Self::TwoClassBlobs),
            other => Err(LabError::Config(format!("unknown synthetic dataset '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::OrientedBars => "oriented_bars",
            Self::TwoClassBlobs => "two_class_blobs",
        }
    }
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((px - a.0) * dx + (py - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
    (qx * qx + qy * qy).sqrt()
}

/// A horizontal bar pointing right from near the centre, with a round knob
/// at its right end so that no rotation other than the identity maps it to
/// itself.
pub fn oriented_bar(half_width: f64, length: f64, dy: f64) -> Image {
    let c = SIDE as f64 / 2.0;
    let a = (c - 2.0, c + dy);
    let b = (c + length, c + dy);
    let knob = half_width + 1.2;
    let mut px = vec![0.0; SIDE * SIDE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let bar = half_width + 0.5 - segment_distance(fx, fy, a, b);
            let dk = ((fx - b.0).powi(2) + (fy - b.1).powi(2)).sqrt();
            let end = knob + 0.5 - dk;
            px[y * SIDE + x] = bar.max(end).clamp(0.0, 1.0);
        }
    }
    Image::new(SIDE, SIDE, 1, px).expect("intensities are clamped")
}

fn blob(cx: f64, cy: f64, sigma: f64, noise: &[f64]) -> Image {
    let px = (0..SIDE * SIDE)
        .map(|k| {
            let (x, y) = ((k % SIDE) as f64 + 0.5, (k / SIDE) as f64 + 0.5);
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            ((-0.5 * d2 / (sigma * sigma)).exp() * 0.9 + noise[k]).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(SIDE, SIDE, 1, px).expect("intensities are clamped")
}

/// `n` images; image `i` depends only on `(seed, i)`.
pub fn synthesize(kind: SynthKind, n: usize, seed: u64) -> LabResult<Dataset> {
    if n == 0 {
        return Err(LabError::Config("synthetic dataset needs n >= 1".into()));
    }
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_from(seed, &[0x5E7, i as u64]);
        match kind {
            SynthKind::OrientedBars => {
                let class = i % BAR_HALF_WIDTHS.len();
                let (length, dy) = if i == 0 {
                    (8.0, 0.0)
                } else {
                    (rng.gen_range(7.0..10.0), rng.gen_range(-1.0..1.0))
                };
                images.push(oriented_bar(BAR_HALF_WIDTHS[class], length, dy));
                labels.push(class);
            }
            SynthKind::TwoClassBlobs => {
                let class = i % 2;
                let base = if class == 0 { 8.0 } else { 20.0 };
                let cx = base + rng.gen_range(-2.0..2.0);
                let cy = base + rng.gen_range(-2.0..2.0);
                let noise: Vec<f64> = (0..SIDE * SIDE).map(|_| rng.gen_range(0.0..0.05)).collect();
                images.push(blob(cx, cy, 2.5, &noise));
                labels.push(class);
            }
        }
    }
    Ok(Dataset::new(kind.name(), images, Some(labels), seed)?)
}

/// The dataset followed by the horizontal mirror of every image (labels kept).
pub fn with_mirrors(ds: &Dataset) -> LabResult<Dataset> {
    let mut images = ds.images.clone();
    images.extend(ds.images.iter().map(|im| mirror(im, true)));
    let labels = ds.labels.as_ref().map(|l| l.iter().chain(l.iter()).copied().collect());
    Ok(Dataset::new(format!("{}+mirror", ds.name), images, labels, ds.base_seed)?)
}
