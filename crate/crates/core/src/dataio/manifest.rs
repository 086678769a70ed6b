use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_sample, write_image_png, write_mask_png, write_raw, Dataset, RawHeader};
use crate::error::{data_err, Error, Result};
use crate::par::map_indexed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory. `.png` or `.raw`.
    pub image: String,
    pub mask: String,
}

/// JSON index of a dataset directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub num_classes: usize,
    pub num_channels: usize,
    #[serde(default)]
    pub note: String,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| data_err!("{}: {e}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

/// Loads every sample listed in a manifest file.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let samples = map_indexed(manifest.samples.len(), |i| {
        let e = &manifest.samples[i];
        read_sample(&base.join(&e.image), &base.join(&e.mask), manifest.num_classes, &e.id)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, manifest.num_classes, manifest.num_channels, manifest.note)
}

/// Writes images, masks and `manifest.json` into `dir`. Single-channel
/// images become 16-bit PNGs, multi-channel images raw slices.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let image = if dataset.num_channels == 1 {
            let name = format!("{}.png", s.id);
            write_image_png(&dir.join(&name), &s.image)?;
            name
        } else {
            let name = format!("{}.raw", s.id);
            let shape = s.image.shape();
            let header = RawHeader {
                height: shape.height,
                width: shape.width,
                channels: shape.channels,
                scale: 1.0,
                labels: (0..dataset.num_classes as u8).collect(),
                id: s.id.clone(),
            };
            write_raw(&dir.join(&name), &header, &s.image)?;
            name
        };
        let mask = format!("{}_mask.png", s.id);
        write_mask_png(&dir.join(&mask), &s.mask)?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            image,
            mask,
        });
    }
    let manifest = Manifest {
        num_classes: dataset.num_classes,
        num_channels: dataset.num_channels,
        note: dataset.note.clone(),
        samples: entries,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
