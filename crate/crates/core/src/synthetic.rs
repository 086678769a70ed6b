//! Synthetic three-class "cell" images for smoke tests and demos: a dark
//! background, mid-intensity elliptical cells and brighter nuclei inside
//! them, with mild additive noise. Labels: 0 background, 1 cell, 2 nucleus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{Dataset, Sample};
use crate::error::{config_err, Result};
use crate::metrics::LabelMap;
use crate::tensor::{Shape4, Tensor4};

pub const BACKGROUND_LEVEL: f32 = 0.1;
pub const CELL_LEVEL: f32 = 0.45;
pub const NUCLEUS_LEVEL: f32 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobOptions {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of cells per image.
    pub cells: (usize, usize),
    /// Peak amplitude of the uniform noise.
    pub noise: f32,
}

impl BlobOptions {
    pub fn new(height: usize, width: usize) -> Self {
        BlobOptions {
            height,
            width,
            cells: (2, 4),
            noise: 0.05,
        }
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64, scale: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (dx * self.cos + dy * self.sin) / (self.rx * scale);
        let v = (-dx * self.sin + dy * self.cos) / (self.ry * scale);
        u * u + v * v <= 1.0
    }
}

/// One image and mask; identical seeds give identical samples.
pub fn blob_sample(options: &BlobOptions, seed: u64) -> (Tensor4<f32>, LabelMap) {
    let (h, w) = (options.height, options.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let short = h.min(w) as f64;
    let count = rng.random_range(options.cells.0..=options.cells.1);
    let cells: Vec<(Ellipse, f64, f64, f64)> = (0..count)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let e = Ellipse {
                cy: rng.random_range(0.15..0.85) * h as f64,
                cx: rng.random_range(0.15..0.85) * w as f64,
                ry: rng.random_range(0.09..0.17) * short,
                rx: rng.random_range(0.09..0.17) * short,
                cos: angle.cos(),
                sin: angle.sin(),
            };
            // nucleus: scaled copy, shifted off-centre a little
            let scale = rng.random_range(0.35..0.55);
            let oy = rng.random_range(-0.2..0.2) * e.ry;
            let ox = rng.random_range(-0.2..0.2) * e.rx;
            (e, scale, oy, ox)
        })
        .collect();
    let mut labels = vec![0u8; h * w];
    for (e, scale, oy, ox) in &cells {
        let nucleus = Ellipse {
            cy: e.cy + oy,
            cx: e.cx + ox,
            ..*e
        };
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                if nucleus.contains(py, px, *scale) {
                    labels[y * w + x] = 2;
                } else if e.contains(py, px, 1.0) && labels[y * w + x] != 2 {
                    labels[y * w + x] = 1;
                }
            }
        }
    }
    let data = labels
        .iter()
        .map(|&l| {
            let level = [BACKGROUND_LEVEL, CELL_LEVEL, NUCLEUS_LEVEL][l as usize];
            (level + options.noise * rng.random_range(-1.0f32..1.0)).clamp(0.0, 1.0)
        })
        .collect();
    let image = Tensor4::from_vec(Shape4::new(1, h, w, 1), data).expect("length matches shape");
    let mask = LabelMap::new(h, w, labels).expect("length matches shape");
    (image, mask)
}

/// `count` samples with ids `blob_000`, ...; sample `i` uses seed `seed + i`.
pub fn blob_dataset(count: usize, options: &BlobOptions, seed: u64) -> Result<Dataset> {
    if options.height == 0 || options.width == 0 || options.cells.0 > options.cells.1 {
        return Err(config_err!("invalid blob options {options:?}"));
    }
    let samples = (0..count)
        .map(|i| {
            let (image, mask) = blob_sample(options, seed.wrapping_add(i as u64));
            Sample::new(image, mask, format!("blob_{i:03}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, 3, 1, format!("synthetic blobs {}x{}", options.height, options.width))
}
