//! Raw multi-channel slices: an 8-line text header followed by
//! little-endian `f32` planes, one full `H x W` plane per channel.
//!
//! ```text
//! SEGMICRO-RAW1
//! height=240
//! width=240
//! channels=4
//! dtype=f32le
//! scale=1
//! labels=0,1,2,4
//! id=patient_017_axial_080
//! ```
//!
//! Stored values are multiplied by `scale` on read.

use std::fs;
use std::path::Path;

use crate::error::{data_err, Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub const RAW_MAGIC: &str = "SEGMICRO-RAW1";

#[derive(Clone, Debug, PartialEq)]
pub struct RawHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub scale: f32,
    pub labels: Vec<u8>,
    pub id: String,
}

pub fn write_raw(path: &Path, header: &RawHeader, image: &Tensor4<f32>) -> Result<()> {
    let s = image.shape();
    if (s.batch, s.height, s.width, s.channels) != (1, header.height, header.width, header.channels) {
        return Err(data_err!("raw header {header:?} does not describe image {s}"));
    }
    if header.id.contains('\n') {
        return Err(data_err!("raw slice id must be a single line"));
    }
    let labels: Vec<String> = header.labels.iter().map(u8::to_string).collect();
    let mut out = format!(
        "{RAW_MAGIC}\nheight={}\nwidth={}\nchannels={}\ndtype=f32le\nscale={}\nlabels={}\nid={}\n",
        header.height,
        header.width,
        header.channels,
        header.scale,
        labels.join(","),
        header.id
    )
    .into_bytes();
    for c in 0..s.channels {
        for px in image.data().chunks_exact(s.channels) {
            out.extend_from_slice(&(px[c] / header.scale).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<(RawHeader, Tensor4<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::with_capacity(8);
    let mut pos = 0;
    while lines.len() < 8 {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| data_err!("{}: truncated header", path.display()))?;
        lines.push(String::from_utf8_lossy(&bytes[pos..pos + end]).into_owned());
        pos += end + 1;
    }
    if lines[0] != RAW_MAGIC {
        return Err(data_err!("{}: bad magic {:?}", path.display(), lines[0]));
    }
    let field = |i: usize, key: &str| -> Result<&str> {
        lines[i]
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| data_err!("{}: header line {} should be {key}=...", path.display(), i + 1))
    };
    let num = |i: usize, key: &str| -> Result<usize> {
        field(i, key)?
            .parse()
            .map_err(|_| data_err!("{}: bad {key}", path.display()))
    };
    let (height, width, channels) = (num(1, "height")?, num(2, "width")?, num(3, "channels")?);
    if field(4, "dtype")? != "f32le" {
        return Err(data_err!("{}: unsupported dtype {}", path.display(), lines[4]));
    }
    let scale: f32 = field(5, "scale")?
        .parse()
        .map_err(|_| data_err!("{}: bad scale", path.display()))?;
    let labels = field(6, "labels")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.trim().parse().map_err(|_| data_err!("{}: bad label {s:?}", path.display())))
        .collect::<Result<Vec<u8>>>()?;
    let id = field(7, "id")?.to_string();
    let shape = Shape4::new(1, height, width, channels);
    let payload = &bytes[pos..];
    if payload.len() != shape.len() * 4 {
        return Err(data_err!(
            "{}: payload has {} bytes, header needs {}",
            path.display(),
            payload.len(),
            shape.len() * 4
        ));
    }
    let plane = height * width;
    let mut image = Tensor4::zeros(shape);
    for (i, b) in payload.chunks_exact(4).enumerate() {
        let (c, p) = (i / plane, i % plane);
        image[p * channels + c] = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) * scale;
    }
    Ok((
        RawHeader {
            height,
            width,
            channels,
            scale,
            labels,
            id,
        },
        image,
    ))
}
