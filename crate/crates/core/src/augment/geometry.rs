use std::f64::consts::PI;

use super::Pair;
use crate::error::{shape_err, Result};
use crate::metrics::LabelMap;
use crate::tensor::{Shape4, Tensor4};

fn check_pair(image: &Tensor4<f32>, mask: &LabelMap) -> Result<Shape4> {
    let s = image.shape();
    if s.batch != 1 || (s.height, s.width) != (mask.height, mask.width) {
        return Err(shape_err!(
            "image {s} and mask {}x{} must be one sample of the same size",
            mask.height,
            mask.width
        ));
    }
    Ok(s)
}

/// Builds a pair by pulling every output pixel from a source pixel (or
/// nothing, giving 0 / background).
fn remap(image: &Tensor4<f32>, mask: &LabelMap, out_h: usize, out_w: usize, src: impl Fn(usize, usize) -> Option<(usize, usize)>) -> Pair {
    let c = image.shape().channels;
    let mut img = Tensor4::zeros(Shape4::new(1, out_h, out_w, c));
    let mut m = LabelMap::filled(out_h, out_w, 0);
    for y in 0..out_h {
        for x in 0..out_w {
            if let Some((sy, sx)) = src(y, x) {
                let o = (y * out_w + x) * c;
                img.data_mut()[o..o + c].copy_from_slice(image.pixel(0, sy, sx));
                m.set(y, x, mask.get(sy, sx));
            }
        }
    }
    (img, m)
}

/// Mirrors columns (`horizontal`) and/or rows (`vertical`).
pub fn flip(image: &Tensor4<f32>, mask: &LabelMap, horizontal: bool, vertical: bool) -> Result<Pair> {
    let s = check_pair(image, mask)?;
    if !horizontal && !vertical {
        return Ok((image.clone(), mask.clone()));
    }
    Ok(remap(image, mask, s.height, s.width, |y, x| {
        let sy = if vertical { s.height - 1 - y } else { y };
        let sx = if horizontal { s.width - 1 - x } else { x };
        Some((sy, sx))
    }))
}

/// Shift of scanline `i`: `int(A * (sin(f * pi * i / 180) + 1) / 2)`.
pub fn warp_offset(i: usize, amplitude: f64, frequency: f64) -> usize {
    (amplitude * ((frequency * PI * i as f64 / 180.0).sin() + 1.0) / 2.0) as usize
}

/// Horizontal warp: row `i` moves right by `warp_offset(i)` pixels.
pub fn warp_rows(image: &Tensor4<f32>, mask: &LabelMap, amplitude: f64, frequency: f64) -> Result<Pair> {
    let s = check_pair(image, mask)?;
    let offsets: Vec<usize> = (0..s.height).map(|i| warp_offset(i, amplitude, frequency)).collect();
    Ok(remap(image, mask, s.height, s.width, |y, x| {
        x.checked_sub(offsets[y]).map(|sx| (y, sx))
    }))
}

/// Vertical warp: column `j` moves down by `warp_offset(j)` pixels.
pub fn warp_columns(image: &Tensor4<f32>, mask: &LabelMap, amplitude: f64, frequency: f64) -> Result<Pair> {
    let s = check_pair(image, mask)?;
    let offsets: Vec<usize> = (0..s.width).map(|j| warp_offset(j, amplitude, frequency)).collect();
    Ok(remap(image, mask, s.height, s.width, |y, x| {
        y.checked_sub(offsets[x]).map(|sy| (sy, x))
    }))
}

const EDGE_TOL: f64 = 1e-6;

fn bilinear(image: &Tensor4<f32>, sy: f64, sx: f64, out: &mut [f32]) {
    let s = image.shape();
    let (h, w) = ((s.height - 1) as f64, (s.width - 1) as f64);
    if sy < -EDGE_TOL || sx < -EDGE_TOL || sy > h + EDGE_TOL || sx > w + EDGE_TOL {
        out.fill(0.0);
        return;
    }
    let (sy, sx) = (sy.clamp(0.0, h), sx.clamp(0.0, w));
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(s.height - 1), (x0 + 1).min(s.width - 1));
    let (fy, fx) = ((sy - y0 as f64) as f32, (sx - x0 as f64) as f32);
    let (p00, p01, p10, p11) = (image.pixel(0, y0, x0), image.pixel(0, y0, x1), image.pixel(0, y1, x0), image.pixel(0, y1, x1));
    for (c, o) in out.iter_mut().enumerate() {
        let top = p00[c] + (p01[c] - p00[c]) * fx;
        let bottom = p10[c] + (p11[c] - p10[c]) * fx;
        *o = top + (bottom - top) * fy;
    }
}

fn nearest(mask: &LabelMap, sy: f64, sx: f64) -> u8 {
    let (y, x) = (sy.round(), sx.round());
    if y < 0.0 || x < 0.0 || y > (mask.height - 1) as f64 || x > (mask.width - 1) as f64 {
        0
    } else {
        mask.get(y as usize, x as usize)
    }
}

/// Rotation by `angle_deg` (counter-clockwise in image coordinates) about
/// the image centre.
pub fn rotate(image: &Tensor4<f32>, mask: &LabelMap, angle_deg: f64) -> Result<Pair> {
    let s = check_pair(image, mask)?;
    if angle_deg == 0.0 {
        return Ok((image.clone(), mask.clone()));
    }
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let cy = (s.height as f64 - 1.0) / 2.0;
    let cx = (s.width as f64 - 1.0) / 2.0;
    let mut img = Tensor4::zeros(s);
    let mut m = LabelMap::filled(s.height, s.width, 0);
    let c = s.channels;
    for y in 0..s.height {
        for x in 0..s.width {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // inverse rotation of the output coordinate
            let sx = cx + dx * cos - dy * sin;
            let sy = cy + dx * sin + dy * cos;
            let o = (y * s.width + x) * c;
            bilinear(image, sy, sx, &mut img.data_mut()[o..o + c]);
            m.set(y, x, nearest(mask, sy, sx));
        }
    }
    Ok((img, m))
}

/// Half-pixel-centre source coordinate of output index `dst`.
fn source_coord(dst: usize, in_len: usize, out_len: usize) -> f64 {
    (dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5
}

pub fn resize_image(image: &Tensor4<f32>, height: usize, width: usize) -> Tensor4<f32> {
    let s = image.shape();
    if (s.height, s.width) == (height, width) {
        return image.clone();
    }
    let c = s.channels;
    let mut out = Tensor4::zeros(Shape4::new(1, height, width, c));
    for y in 0..height {
        let sy = source_coord(y, s.height, height).clamp(0.0, (s.height - 1) as f64);
        for x in 0..width {
            let sx = source_coord(x, s.width, width).clamp(0.0, (s.width - 1) as f64);
            let o = (y * width + x) * c;
            bilinear(image, sy, sx, &mut out.data_mut()[o..o + c]);
        }
    }
    out
}

pub fn resize_mask(mask: &LabelMap, height: usize, width: usize) -> LabelMap {
    if (mask.height, mask.width) == (height, width) {
        return mask.clone();
    }
    let mut out = LabelMap::filled(height, width, 0);
    for y in 0..height {
        let sy = (((y as f64 + 0.5) * mask.height as f64 / height as f64) as usize).min(mask.height - 1);
        for x in 0..width {
            let sx = (((x as f64 + 0.5) * mask.width as f64 / width as f64) as usize).min(mask.width - 1);
            out.set(y, x, mask.get(sy, sx));
        }
    }
    out
}

/// Rescales a pair to `(height, width)`.
pub fn resize(image: &Tensor4<f32>, mask: &LabelMap, size: (usize, usize)) -> Result<Pair> {
    check_pair(image, mask)?;
    Ok((resize_image(image, size.0, size.1), resize_mask(mask, size.0, size.1)))
}

/// Scales by `zoom` about the centre, then centre-crops or centre-pads to
/// `target_size`.
pub fn zoom_crop(image: &Tensor4<f32>, mask: &LabelMap, zoom: f64, target_size: (usize, usize)) -> Result<Pair> {
    let s = check_pair(image, mask)?;
    let zh = ((s.height as f64 * zoom).round() as usize).max(1);
    let zw = ((s.width as f64 * zoom).round() as usize).max(1);
    let (img, m) = resize(image, mask, (zh, zw))?;
    let (th, tw) = target_size;
    if (zh, zw) == (th, tw) {
        return Ok((img, m));
    }
    // signed offset of the target window inside the zoomed frame
    let off_y = (zh as isize - th as isize).div_euclid(2);
    let off_x = (zw as isize - tw as isize).div_euclid(2);
    Ok(remap(&img, &m, th, tw, |y, x| {
        let sy = y as isize + off_y;
        let sx = x as isize + off_x;
        (sy >= 0 && sx >= 0 && (sy as usize) < zh && (sx as usize) < zw).then_some((sy as usize, sx as usize))
    }))
}
