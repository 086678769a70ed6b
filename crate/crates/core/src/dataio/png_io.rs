use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::Sample;
use crate::augment::{normalize, IntensityRange};
use crate::error::{data_err, Error, Result};
use crate::metrics::LabelMap;
use crate::tensor::{Shape4, Tensor4};

/// Palette of exported label maps: black, mid-gray, white, light-gray, then
/// a gray ramp for any further classes.
pub const PALETTE: [[u8; 3]; 4] = [[0, 0, 0], [128, 128, 128], [255, 255, 255], [192, 192, 192]];

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: u8,
    /// One value per channel per pixel, unpacked to full integers.
    values: Vec<u16>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::IDENTITY);
    let bad = |e: png::DecodingError| data_err!("{}: {e}", path.display());
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| data_err!("{}: image too large", path.display()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let depth = info.bit_depth as u8;
    let mut values = Vec::with_capacity(width * height * channels);
    for line in buf.chunks(info.line_size).take(height) {
        let n = width * channels;
        match info.bit_depth {
            BitDepth::Sixteen => values.extend(line.chunks_exact(2).take(n).map(|b| u16::from_be_bytes([b[0], b[1]]))),
            BitDepth::Eight => values.extend(line[..n].iter().map(|&b| b as u16)),
            _ => {
                let per_byte = 8 / depth as usize;
                let mask = (1u16 << depth) - 1;
                values.extend((0..n).map(|i| {
                    let byte = line[i / per_byte] as u16;
                    let shift = 8 - depth as usize * (i % per_byte + 1);
                    (byte >> shift) & mask
                }));
            }
        }
    }
    Ok(Decoded {
        width,
        height,
        color: info.color_type,
        depth,
        values,
    })
}

/// Reads a grayscale (optionally with alpha) PNG of 1-16 bits as a
/// `(1, H, W, 1)` tensor normalized to `[0, 1]`.
pub fn read_image_png(path: &Path) -> Result<Tensor4<f32>> {
    let d = decode(path)?;
    let stride = match d.color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        other => {
            return Err(data_err!(
                "{}: expected a grayscale image, found {other:?}",
                path.display()
            ))
        }
    };
    let raw: Vec<f32> = d.values.iter().step_by(stride).map(|&v| v as f32).collect();
    let norm = match d.depth {
        8 => normalize(&raw, IntensityRange::Bits8),
        16 => normalize(&raw, IntensityRange::Bits16),
        bits => {
            let max = ((1u32 << bits) - 1) as f32;
            raw.iter().map(|v| v / max).collect()
        }
    };
    Tensor4::from_vec(Shape4::new(1, d.height, d.width, 1), norm)
}

/// Reads a grayscale or paletted PNG whose pixel values are class indices.
pub fn read_mask_png(path: &Path) -> Result<LabelMap> {
    let d = decode(path)?;
    if !matches!(d.color, ColorType::Grayscale | ColorType::Indexed) {
        return Err(data_err!(
            "{}: masks must be grayscale or paletted, found {:?}",
            path.display(),
            d.color
        ));
    }
    let labels = d
        .values
        .iter()
        .map(|&v| u8::try_from(v).map_err(|_| data_err!("{}: label value {v} exceeds 255", path.display())))
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(d.height, d.width, labels)
}

pub fn read_sample(image_path: &Path, mask_path: &Path, num_classes: usize, id: &str) -> Result<Sample> {
    let image = if image_path.extension().is_some_and(|e| e == "raw") {
        super::read_raw(image_path)?.1
    } else {
        read_image_png(image_path)?
    };
    let mask = read_mask_png(mask_path)?;
    mask.check_classes(num_classes)
        .map_err(|e| data_err!("{}: {e}", mask_path.display()))?;
    Sample::new(image, mask, id).map_err(|e| data_err!("{} / {}: {e}", image_path.display(), mask_path.display()))
}

fn encode(path: &Path, width: usize, height: usize, color: ColorType, depth: BitDepth, palette: Option<Vec<u8>>, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let bad = |e: png::EncodingError| data_err!("{}: {e}", path.display());
    let mut writer = enc.write_header().map_err(bad)?;
    writer.write_image_data(data).map_err(bad)?;
    writer.finish().map_err(bad)
}

/// Writes channel 0 of a single-sample image as a 16-bit grayscale PNG.
pub fn write_image_png(path: &Path, image: &Tensor4<f32>) -> Result<()> {
    let s = image.shape();
    let mut bytes = Vec::with_capacity(s.pixels() * 2);
    for px in image.sample(0).chunks_exact(s.channels) {
        let v = (px[0].clamp(0.0, 1.0) * 65535.0).round() as u16;
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    encode(path, s.width, s.height, ColorType::Grayscale, BitDepth::Sixteen, None, &bytes)
}

/// Writes class indices as an 8-bit grayscale PNG.
pub fn write_mask_png(path: &Path, mask: &LabelMap) -> Result<()> {
    encode(path, mask.width, mask.height, ColorType::Grayscale, BitDepth::Eight, None, &mask.labels)
}

/// Writes class indices as a paletted PNG using [`PALETTE`].
pub fn write_paletted_png(path: &Path, mask: &LabelMap) -> Result<()> {
    let entries = (mask.max_label() as usize + 1).max(PALETTE.len());
    let palette = (0..entries)
        .flat_map(|i| {
            PALETTE.get(i).copied().unwrap_or_else(|| {
                let g = (i * 37 % 256) as u8;
                [g, g, g]
            })
        })
        .collect();
    encode(path, mask.width, mask.height, ColorType::Indexed, BitDepth::Eight, Some(palette), &mask.labels)
}
