use crate::tensor::Tensor4;

pub const HIST_BINS: usize = 256;

/// Source intensity range of raw pixel values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntensityRange {
    Bits8,
    Bits16,
    /// Per-image min-max; a constant image maps to all zeros.
    MinMax,
}

pub fn normalize(raw: &[f32], range: IntensityRange) -> Vec<f32> {
    match range {
        IntensityRange::Bits8 => raw.iter().map(|&v| v / 255.0).collect(),
        IntensityRange::Bits16 => raw.iter().map(|&v| v / 65535.0).collect(),
        IntensityRange::MinMax => {
            let lo = raw.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = raw.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            if hi > lo {
                raw.iter().map(|&v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.0; raw.len()]
            }
        }
    }
}

fn bin(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * HIST_BINS as f32) as usize).min(HIST_BINS - 1)
}

/// Histogram equalization of a `[0, 1]` plane with 256 bins:
/// `out = (cdf(bin(x)) - cdf_min) / (1 - cdf_min)`. A single-bin plane is
/// returned unchanged.
pub fn equalize(plane: &[f32]) -> Vec<f32> {
    let mut hist = [0u64; HIST_BINS];
    for &v in plane {
        hist[bin(v)] += 1;
    }
    let n = plane.len() as f64;
    let mut cdf = [0.0f64; HIST_BINS];
    let mut acc = 0;
    for (c, &h) in cdf.iter_mut().zip(&hist) {
        acc += h;
        *c = acc as f64 / n;
    }
    let Some(first) = hist.iter().position(|&h| h > 0) else {
        return plane.to_vec();
    };
    let cdf_min = cdf[first];
    if cdf_min >= 1.0 {
        return plane.to_vec();
    }
    plane
        .iter()
        .map(|&v| ((cdf[bin(v)] - cdf_min) / (1.0 - cdf_min)) as f32)
        .collect()
}

/// Equalizes each channel independently.
pub fn equalize_image(image: &Tensor4<f32>) -> Tensor4<f32> {
    let s = image.shape();
    let mut out = image.clone();
    for n in 0..s.batch {
        for c in 0..s.channels {
            let plane: Vec<f32> = image.sample(n).iter().skip(c).step_by(s.channels).copied().collect();
            let eq = equalize(&plane);
            for (i, v) in eq.into_iter().enumerate() {
                out[n * s.sample_len() + i * s.channels + c] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize(&[0.0, 51.0, 255.0], IntensityRange::Bits8), vec![0.0, 0.2, 1.0]);
        assert_eq!(normalize(&[65535.0], IntensityRange::Bits16), vec![1.0]);
        assert_eq!(normalize(&[7.0; 4], IntensityRange::MinMax), vec![0.0; 4]);
        assert_eq!(normalize(&[2.0, 4.0, 3.0], IntensityRange::MinMax), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn toy_cdf_table() {
        // bins 0, 0, 128, 255 -> cdf 0.5, 0.75, 1.0 with cdf_min 0.5
        assert_eq!(equalize(&[0.0, 0.0, 0.5, 1.0]), vec![0.0, 0.0, 0.5, 1.0]);
        // bins 0, 64, 64, 200 -> cdf 0.25, 0.75, 1.0 -> 0, 2/3, 2/3, 1
        let out = equalize(&[0.0, 0.25, 0.25, 0.79]);
        let want = [0.0, 2.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in out.iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_histogram_nearly_unchanged() {
        let plane: Vec<f32> = (0..HIST_BINS).map(|k| (k as f32 + 0.5) / HIST_BINS as f32).collect();
        for (a, b) in equalize(&plane).iter().zip(&plane) {
            assert!((a - b).abs() <= 1.0 / HIST_BINS as f32);
        }
    }

    #[test]
    fn constant_stays_constant() {
        assert_eq!(equalize(&[0.3; 9]), vec![0.3; 9]);
    }
}
