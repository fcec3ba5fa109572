//! Canonical JSON persistence for datasets.
//!
//! The on-disk format is a single JSON object with keys `domain`,
//! `categories`, and `images`; pixels are base64 of little-endian 32-bit
//! floats in channel-major order. Serialization is canonical: keys sorted,
//! compact separators, shortest round-trip float text. Identical datasets
//! produce byte-identical files.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Annotation, BoundingBox, DomainDataset, ImageRaster, LabeledImage};
use crate::error::{Error, Result};

// Field declaration order is alphabetical so serde emits sorted keys.
#[derive(Serialize, Deserialize)]
struct FileAnnotation {
    bbox: [f64; 4],
    category: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    instance_prompt: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct FileImage {
    annotations: Vec<FileAnnotation>,
    height: u32,
    id: String,
    pixels: String,
    width: u32,
}

#[derive(Serialize, Deserialize)]
struct FileDataset {
    categories: Vec<String>,
    domain: String,
    images: Vec<FileImage>,
}

fn encode_pixels(pixels: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(pixels.len() * 4);
    for &p in pixels {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn decode_pixels(encoded: &str) -> std::result::Result<Vec<f32>, String> {
    let bytes = BASE64.decode(encoded).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!("pixel byte length {} not a multiple of 4", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Serializes a dataset to its canonical byte representation.
pub fn to_canonical_json(ds: &DomainDataset) -> Vec<u8> {
    let file = FileDataset {
        categories: ds.categories.clone(),
        domain: ds.domain.clone(),
        images: ds
            .images
            .iter()
            .map(|img| FileImage {
                annotations: img
                    .annotations
                    .iter()
                    .map(|a| FileAnnotation {
                        bbox: [a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max],
                        category: a.category.clone(),
                        instance_prompt: a.instance_prompt.clone(),
                    })
                    .collect(),
                height: img.raster.height,
                id: img.id.clone(),
                pixels: encode_pixels(&img.raster.pixels),
                width: img.raster.width,
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&file).expect("dataset serialization cannot fail");
    bytes.push(b'\n');
    bytes
}

/// Writes the canonical form of `ds` to `path`, creating parent directories.
pub fn save_dataset(ds: &DomainDataset, path: &Path) -> Result<()> {
    ds.validate()?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, to_canonical_json(ds)).map_err(|e| Error::io(path, e))
}

/// Loads and validates a dataset file.
pub fn load_dataset(path: &Path) -> Result<DomainDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: FileDataset =
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut images = Vec::with_capacity(file.images.len());
    for img in file.images {
        let pixels = decode_pixels(&img.pixels)
            .map_err(|msg| Error::parse(path, format!("image '{}' pixels: {msg}", img.id)))?;
        images.push(LabeledImage {
            id: img.id,
            raster: ImageRaster {
                width: img.width,
                height: img.height,
                pixels,
            },
            annotations: img
                .annotations
                .into_iter()
                .map(|a| Annotation {
                    bbox: BoundingBox::new(a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]),
                    category: a.category,
                    instance_prompt: a.instance_prompt,
                })
                .collect(),
            domain: file.domain.clone(),
        });
    }
    let ds = DomainDataset {
        domain: file.domain,
        categories: file.categories,
        images,
    };
    ds.validate()?;
    Ok(ds)
}
