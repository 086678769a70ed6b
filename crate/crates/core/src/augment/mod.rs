//! Preprocessing and the seeded augmentation pipeline.
//!
//! Images are single-sample tensors `(1, H, W, C)` with values in `[0, 1]`;
//! masks are [`LabelMap`]s. Every geometric step moves the image and its mask
//! together: images are resampled bilinearly, masks with nearest neighbour so
//! no new labels appear. Vacated pixels become 0 / background.

mod geometry;
mod intensity;

pub use geometry::{
    flip, resize, resize_image, resize_mask, rotate, warp_columns, warp_offset, warp_rows, zoom_crop,
};
pub use intensity::{equalize, equalize_image, normalize, IntensityRange, HIST_BINS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::metrics::LabelMap;
use crate::tensor::Tensor4;

/// Image with its label mask.
pub type Pair = (Tensor4<f32>, LabelMap);

/// Deterministic random stream for augmentation draws.
pub struct AugRng(ChaCha8Rng);

impl AugRng {
    pub fn new(seed: u64) -> Self {
        AugRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform on `[lo, hi)`; returns `lo` for an empty interval.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.0.random();
        lo + (hi - lo) * u
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform(0.0, 1.0) < p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    pub warp_prob: f64,
    pub warp_amplitude_range: (f64, f64),
    pub warp_frequency_range: (f64, f64),
    pub max_rotation_deg: f64,
    pub zoom_range: (f64, f64),
    /// `(height, width)` of every output.
    pub target_size: (usize, usize),
    #[serde(default = "yes")]
    pub equalize: bool,
}

fn yes() -> bool {
    true
}

impl AugmentPolicy {
    /// Light-microscopy settings: rotations up to 60 degrees, zoom 0.8..1.2.
    pub fn microscopy(target_size: (usize, usize)) -> Self {
        AugmentPolicy {
            flip_prob: 0.5,
            warp_prob: 0.5,
            warp_amplitude_range: (10.0, 50.0),
            warp_frequency_range: (0.5, 2.0),
            max_rotation_deg: 60.0,
            zoom_range: (0.8, 1.2),
            target_size,
            equalize: true,
        }
    }

    /// MRI settings: rotations up to 20 degrees, zoom 0.9..1.1.
    pub fn brats(target_size: (usize, usize)) -> Self {
        AugmentPolicy {
            max_rotation_deg: 20.0,
            zoom_range: (0.9, 1.1),
            ..Self::microscopy(target_size)
        }
    }

    /// A policy under which [`transform`] is the identity (apart from the
    /// optional rescale).
    pub fn neutral(target_size: (usize, usize)) -> Self {
        AugmentPolicy {
            flip_prob: 0.0,
            warp_prob: 0.0,
            max_rotation_deg: 0.0,
            zoom_range: (1.0, 1.0),
            equalize: false,
            ..Self::microscopy(target_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("flip_prob", self.flip_prob), ("warp_prob", self.warp_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err!("{name} must be in [0, 1], got {p}"));
            }
        }
        let ranges = [
            ("warp_amplitude_range", self.warp_amplitude_range),
            ("warp_frequency_range", self.warp_frequency_range),
            ("zoom_range", self.zoom_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(config_err!("{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
            }
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite()) {
            return Err(config_err!("max_rotation_deg must be >= 0, got {}", self.max_rotation_deg));
        }
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(config_err!("target_size must be positive, got {:?}", self.target_size));
        }
        Ok(())
    }
}

/// The random choices of one [`transform`] call, in draw order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Draws {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub warp_horizontal: bool,
    pub warp_vertical: bool,
    pub amplitude: f64,
    pub frequency: f64,
    pub angle_deg: f64,
    pub zoom: f64,
}

impl Draws {
    /// Always consumes exactly eight values: flip-h, flip-v, warp-h, warp-v,
    /// amplitude, frequency, angle, zoom.
    pub fn sample(policy: &AugmentPolicy, rng: &mut AugRng) -> Self {
        Draws {
            flip_horizontal: rng.bernoulli(policy.flip_prob),
            flip_vertical: rng.bernoulli(policy.flip_prob),
            warp_horizontal: rng.bernoulli(policy.warp_prob),
            warp_vertical: rng.bernoulli(policy.warp_prob),
            amplitude: rng.uniform(policy.warp_amplitude_range.0, policy.warp_amplitude_range.1),
            frequency: rng.uniform(policy.warp_frequency_range.0, policy.warp_frequency_range.1),
            angle_deg: rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg),
            zoom: rng.uniform(policy.zoom_range.0, policy.zoom_range.1),
        }
    }
}

/// Applies `draws` in pipeline order: (rescale) → flip → warp → rotate →
/// zoom → (crop/pad).
pub fn apply(image: &Tensor4<f32>, mask: &LabelMap, draws: &Draws, target_size: (usize, usize)) -> Result<Pair> {
    let (mut img, mut m) = resize(image, mask, target_size)?;
    (img, m) = flip(&img, &m, draws.flip_horizontal, draws.flip_vertical)?;
    if draws.warp_horizontal {
        (img, m) = warp_rows(&img, &m, draws.amplitude, draws.frequency)?;
    }
    if draws.warp_vertical {
        (img, m) = warp_columns(&img, &m, draws.amplitude, draws.frequency)?;
    }
    (img, m) = rotate(&img, &m, draws.angle_deg)?;
    zoom_crop(&img, &m, draws.zoom, target_size)
}

/// One seeded random transform of an image/mask pair.
pub fn transform(image: &Tensor4<f32>, mask: &LabelMap, policy: &AugmentPolicy, seed: u64) -> Result<Pair> {
    policy.validate()?;
    let mut rng = AugRng::new(seed);
    let draws = Draws::sample(policy, &mut rng);
    apply(image, mask, &draws, policy.target_size)
}

/// Random flips: one Bernoulli(`prob`) draw per axis.
pub fn random_flip(image: &Tensor4<f32>, mask: &LabelMap, rng: &mut AugRng, prob: f64) -> Result<Pair> {
    let h = rng.bernoulli(prob);
    let v = rng.bernoulli(prob);
    flip(image, mask, h, v)
}

/// Random sine warp: each pass applied with probability `policy.warp_prob`,
/// sharing one amplitude and frequency draw.
pub fn random_warp(image: &Tensor4<f32>, mask: &LabelMap, rng: &mut AugRng, policy: &AugmentPolicy) -> Result<Pair> {
    let h = rng.bernoulli(policy.warp_prob);
    let v = rng.bernoulli(policy.warp_prob);
    let a = rng.uniform(policy.warp_amplitude_range.0, policy.warp_amplitude_range.1);
    let f = rng.uniform(policy.warp_frequency_range.0, policy.warp_frequency_range.1);
    let (mut img, mut m) = (image.clone(), mask.clone());
    if h {
        (img, m) = warp_rows(&img, &m, a, f)?;
    }
    if v {
        (img, m) = warp_columns(&img, &m, a, f)?;
    }
    Ok((img, m))
}

pub fn random_rotate(image: &Tensor4<f32>, mask: &LabelMap, rng: &mut AugRng, max_deg: f64) -> Result<Pair> {
    let angle = rng.uniform(-max_deg, max_deg);
    rotate(image, mask, angle)
}

pub fn random_zoom_crop(
    image: &Tensor4<f32>,
    mask: &LabelMap,
    rng: &mut AugRng,
    zoom_range: (f64, f64),
    target_size: (usize, usize),
) -> Result<Pair> {
    let z = rng.uniform(zoom_range.0, zoom_range.1);
    zoom_crop(image, mask, z, target_size)
}
