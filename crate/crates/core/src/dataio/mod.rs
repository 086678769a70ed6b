//! Samples, label encodings, dataset generation and splitting, and the
//! on-disk formats (PNG, raw float slices, JSON manifests).

mod manifest;
mod png_io;
mod raw;

pub use manifest::{load_manifest, write_dataset, Manifest, ManifestEntry};
pub use png_io::{read_image_png, read_mask_png, read_sample, write_image_png, write_mask_png, write_paletted_png, PALETTE};
pub use raw::{read_raw, write_raw, RawHeader, RAW_MAGIC};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{equalize_image, resize, transform, AugmentPolicy};
use crate::error::{data_err, shape_err, Error, Result};
use crate::metrics::LabelMap;
use crate::par::map_indexed;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `(1, H, W, channels)`, values in `[0, 1]`.
    pub image: Tensor4<f32>,
    pub mask: LabelMap,
    pub id: String,
}

impl Sample {
    pub fn new(image: Tensor4<f32>, mask: LabelMap, id: impl Into<String>) -> Result<Self> {
        let s = image.shape();
        if s.batch != 1 || (s.height, s.width) != (mask.height, mask.width) {
            return Err(shape_err!(
                "sample image {s} does not match mask {}x{}",
                mask.height,
                mask.width
            ));
        }
        Ok(Sample {
            image,
            mask,
            id: id.into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub num_channels: usize,
    pub note: String,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, num_channels: usize, note: impl Into<String>) -> Result<Self> {
        let ds = Dataset {
            samples,
            num_classes,
            num_channels,
            note: note.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        let shape = first.image.shape();
        for s in &self.samples {
            if s.image.shape() != shape {
                return Err(data_err!("sample {} has shape {}, expected {shape}", s.id, s.image.shape()));
            }
            if s.image.shape().channels != self.num_channels {
                return Err(data_err!(
                    "sample {} has {} channels, dataset declares {}",
                    s.id,
                    s.image.shape().channels,
                    self.num_channels
                ));
            }
            s.mask
                .check_classes(self.num_classes)
                .map_err(|e| data_err!("sample {}: {e}", s.id))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn subset(&self, indices: &[usize], note: &str) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            num_classes: self.num_classes,
            num_channels: self.num_channels,
            note: format!("{} ({note})", self.note),
        }
    }
}

/// Merges binary cell and nucleus masks (nonzero = set) into
/// 0 background / 1 cell / 2 nucleus. Nuclei take precedence.
pub fn combine_masks(cells: &LabelMap, nuclei: &LabelMap) -> Result<LabelMap> {
    if (cells.height, cells.width) != (nuclei.height, nuclei.width) {
        return Err(shape_err!(
            "cell mask {}x{} vs nucleus mask {}x{}",
            cells.height,
            cells.width,
            nuclei.height,
            nuclei.width
        ));
    }
    let labels = cells
        .labels
        .iter()
        .zip(&nuclei.labels)
        .map(|(&c, &n)| if n != 0 { 2 } else if c != 0 { 1 } else { 0 })
        .collect();
    LabelMap::new(cells.height, cells.width, labels)
}

/// Maps the tumour label domain {0, 1, 2, 4} to {0, 1, 2, 3}. Already
/// remapped 3s pass through, so the operation is idempotent.
pub fn remap_labels(mask: &LabelMap) -> Result<LabelMap> {
    let labels = mask
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| match l {
            0..=3 => Ok(l),
            4 => Ok(3),
            other => Err(data_err!("unexpected label {other} at pixel {i}")),
        })
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(mask.height, mask.width, labels)
}

/// Zero-pads (bottom/right) to the next multiple of `multiple` in both
/// dimensions; the mask is padded with background.
pub fn pad_to_multiple(image: &Tensor4<f32>, mask: Option<&LabelMap>, multiple: usize) -> (Tensor4<f32>, Option<LabelMap>) {
    let s = image.shape();
    let (h, w) = (s.height.next_multiple_of(multiple), s.width.next_multiple_of(multiple));
    if (h, w) == (s.height, s.width) {
        return (image.clone(), mask.cloned());
    }
    let img = Tensor4::from_fn(Shape4::new(s.batch, h, w, s.channels), |n, y, x, c| {
        if y < s.height && x < s.width {
            image.at(n, y, x, c)
        } else {
            0.0
        }
    });
    let m = mask.map(|m| {
        let mut out = LabelMap::filled(h, w, 0);
        for y in 0..m.height {
            for x in 0..m.width {
                out.set(y, x, m.get(y, x));
            }
        }
        out
    });
    (img, m)
}

/// Stacks four single-channel slices as channels `(t1, t1ce, t2, flair)`,
/// zero-padding both dimensions up to a multiple of 16.
pub fn stack_modalities(
    t1: &Tensor4<f32>,
    t1ce: &Tensor4<f32>,
    t2: &Tensor4<f32>,
    flair: &Tensor4<f32>,
) -> Result<Tensor4<f32>> {
    let planes = [t1, t1ce, t2, flair];
    let s = t1.shape();
    for p in planes {
        let ps = p.shape();
        if ps.batch != 1 || ps.channels != 1 || (ps.height, ps.width) != (s.height, s.width) {
            return Err(shape_err!("modalities must be equal single-channel slices, got {ps} and {s}"));
        }
    }
    let stacked = Tensor4::from_fn(Shape4::new(1, s.height, s.width, 4), |_, y, x, c| planes[c].at(0, y, x, 0));
    Ok(pad_to_multiple(&stacked, None, 16).0)
}

/// Normalization already happened on read; this applies the optional
/// histogram equalization and rescales to the target size.
pub fn preprocess(sample: &Sample, policy: &AugmentPolicy) -> Result<Sample> {
    let image = if policy.equalize {
        equalize_image(&sample.image)
    } else {
        sample.image.clone()
    };
    let (image, mask) = resize(&image, &sample.mask, policy.target_size)?;
    Sample::new(image, mask, sample.id.clone())
}

/// Expands every original into `multiplier` samples: the preprocessed
/// original followed by `multiplier - 1` random transforms. Output `i` (in
/// original-major order) uses seed `seed + i`.
pub fn generate_dataset(originals: &Dataset, policy: &AugmentPolicy, multiplier: usize, seed: u64) -> Result<Dataset> {
    if multiplier == 0 {
        return Err(Error::Config("multiplier must be >= 1".into()));
    }
    policy.validate()?;
    let pre: Vec<Sample> = originals
        .samples
        .iter()
        .map(|s| preprocess(s, policy))
        .collect::<Result<_>>()?;
    let total = pre.len() * multiplier;
    let samples = map_indexed(total, |i| {
        let (orig, k) = (&pre[i / multiplier], i % multiplier);
        if k == 0 {
            return Ok(orig.clone());
        }
        let (image, mask) = transform(&orig.image, &orig.mask, policy, seed.wrapping_add(i as u64))?;
        Sample::new(image, mask, format!("{}_{k:03}", orig.id))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        samples,
        originals.num_classes,
        originals.num_channels,
        format!("{} x{multiplier} at {}x{}", originals.note, policy.target_size.0, policy.target_size.1),
    )
}

/// Validation count `ceil(fraction * n)`.
pub fn validation_count(n: usize, fraction: f64) -> usize {
    // the tolerance keeps exact products such as 0.1 * 30 from rounding up
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Shuffled split into `(train, val)`; both keep the original sample order.
pub fn split_train_val(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction must be in (0, 1), got {fraction}")));
    }
    let n = dataset.len();
    let n_val = validation_count(n, fraction);
    if n_val == 0 || n_val >= n {
        return Err(data_err!("cannot split {n} samples with fraction {fraction}"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val, train) = order.split_at_mut(n_val);
    val.sort_unstable();
    train.sort_unstable();
    Ok((dataset.subset(train, "train"), dataset.subset(val, "val")))
}
