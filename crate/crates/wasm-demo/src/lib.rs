//! WebAssembly bindings for a static demo page: augmentation preview,
//! warp/equalize preview and a parameter-count calculator.
//!
//! Every preview returns an RGBA strip of square panels laid out left to
//! right, ready for `ImageData`. The rendering helpers are plain Rust so they
//! can be tested natively; only the exported wrappers touch JavaScript types.

use segmicro::augment::{equalize_image, transform, warp_columns, warp_rows, AugmentPolicy};
use segmicro::dataio::PALETTE;
use segmicro::net::config_param_count;
use segmicro::synthetic::{blob_sample, BlobOptions};
use segmicro::{LabelMap, ModelConfig, Tensor4};
use wasm_bindgen::prelude::*;

/// Largest preview side accepted from the page.
pub const MAX_SIDE: usize = 512;

fn check_side(size: usize) -> segmicro::Result<()> {
    if (8..=MAX_SIDE).contains(&size) {
        Ok(())
    } else {
        Err(segmicro::Error::Config(format!("preview size must be in 8..={MAX_SIDE}, got {size}")))
    }
}

/// Gray image in [0, 1] to RGBA bytes.
pub fn render_image(image: &Tensor4<f32>) -> Vec<u8> {
    image
        .data()
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

/// Label map to RGBA bytes using the mask palette; labels beyond it are red.
pub fn render_mask(mask: &LabelMap) -> Vec<u8> {
    mask.labels
        .iter()
        .flat_map(|&l| {
            let [r, g, b] = PALETTE.get(l as usize).copied().unwrap_or([255, 0, 0]);
            [r, g, b, 255]
        })
        .collect()
}

/// Places equally sized square RGBA panels side by side.
pub fn strip(panels: &[Vec<u8>], side: usize) -> Vec<u8> {
    let row = side * 4;
    let mut out = Vec::with_capacity(panels.len() * side * row);
    for y in 0..side {
        for p in panels {
            out.extend_from_slice(&p[y * row..(y + 1) * row]);
        }
    }
    out
}

/// Panels: original image, original mask, augmented image, augmented mask.
pub fn augment_strip(seed: u64, size: usize) -> segmicro::Result<Vec<u8>> {
    check_side(size)?;
    let (image, mask) = blob_sample(&BlobOptions::new(size, size), seed);
    let (aug, aug_mask) = transform(&image, &mask, &AugmentPolicy::microscopy((size, size)), seed)?;
    Ok(strip(
        &[render_image(&image), render_mask(&mask), render_image(&aug), render_mask(&aug_mask)],
        size,
    ))
}

/// Panels: original image, warped image (rows then columns), warped mask and,
/// when `equalize` is set, the histogram-equalized warped image (otherwise
/// the warped image again).
pub fn warp_strip(seed: u64, size: usize, amplitude: f64, frequency: f64, equalize: bool) -> segmicro::Result<Vec<u8>> {
    check_side(size)?;
    let (image, mask) = blob_sample(&BlobOptions::new(size, size), seed);
    let (rows, rows_mask) = warp_rows(&image, &mask, amplitude, frequency)?;
    let (warped, warped_mask) = warp_columns(&rows, &rows_mask, amplitude, frequency)?;
    let last = if equalize { equalize_image(&warped) } else { warped.clone() };
    Ok(strip(
        &[render_image(&image), render_image(&warped), render_mask(&warped_mask), render_image(&last)],
        size,
    ))
}

/// Parses a comma-separated filter list and counts learnable parameters.
pub fn count_params(
    arch: &str,
    filters: &str,
    conv_kernel: usize,
    deconv_kernel: usize,
    out_kernel: usize,
    channels: usize,
    classes: usize,
) -> segmicro::Result<usize> {
    let filters = filters
        .split(',')
        .map(|f| f.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| segmicro::Error::Config(format!("filters must be comma-separated integers: {e}")))?;
    let config = match arch {
        "fcn" => ModelConfig::fcn(&filters, conv_kernel, out_kernel, channels, classes),
        "unet" => ModelConfig::unet(&filters, conv_kernel, deconv_kernel, out_kernel, channels, classes),
        other => return Err(segmicro::Error::Config(format!("unknown architecture {other:?}"))),
    };
    config_param_count(&config)
}

fn js_err(e: segmicro::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = augmentPreview)]
pub fn augment_preview(seed: u32, size: usize) -> Result<Vec<u8>, JsError> {
    augment_strip(seed.into(), size).map_err(js_err)
}

#[wasm_bindgen(js_name = warpPreview)]
pub fn warp_preview(seed: u32, size: usize, amplitude: f64, frequency: f64, equalize: bool) -> Result<Vec<u8>, JsError> {
    warp_strip(seed.into(), size, amplitude, frequency, equalize).map_err(js_err)
}

#[wasm_bindgen(js_name = paramCount)]
pub fn param_count(
    arch: &str,
    filters: &str,
    conv_kernel: usize,
    deconv_kernel: usize,
    out_kernel: usize,
    channels: usize,
    classes: usize,
) -> Result<usize, JsError> {
    count_params(arch, filters, conv_kernel, deconv_kernel, out_kernel, channels, classes).map_err(js_err)
}
