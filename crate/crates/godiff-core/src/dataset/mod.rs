//! Data model for annotated single-domain and pseudo-domain datasets.
//!
//! Pixel values are unit-interval reals stored as f32 (channel-major
//! layout), box coordinates are half-open pixel reals with origin at the
//! top-left. Crop rounding is floor on min coordinates and ceil on max
//! coordinates, clipped to the image.

mod io;
mod synth;

pub use io::{load_dataset, save_dataset, to_canonical_json};
pub use synth::{synth_toy_dataset, SynthParams};

use crate::error::{Error, Result};

/// Axis-aligned box in image pixel coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Intersection-over-union with another box, in [0, 1].
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let iy = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    fn collect_violations(&self, width: u32, height: u32, label: &str, out: &mut Vec<String>) {
        if self.x_min >= self.x_max {
            out.push(format!(
                "{label}: x_min {} must be < x_max {}",
                self.x_min, self.x_max
            ));
        }
        if self.y_min >= self.y_max {
            out.push(format!(
                "{label}: y_min {} must be < y_max {}",
                self.y_min, self.y_max
            ));
        }
        if self.x_min < 0.0 || self.y_min < 0.0 {
            out.push(format!("{label}: coordinates must be non-negative"));
        }
        if self.x_max > f64::from(width) || self.y_max > f64::from(height) {
            out.push(format!(
                "{label}: box ({}, {}, {}, {}) exceeds image bounds {width}x{height}",
                self.x_min, self.y_min, self.x_max, self.y_max
            ));
        }
        for (name, v) in [
            ("x_min", self.x_min),
            ("y_min", self.y_min),
            ("x_max", self.x_max),
            ("y_max", self.y_max),
        ] {
            if !v.is_finite() {
                out.push(format!("{label}: {name} is not finite"));
            }
        }
    }
}

/// One labeled object: box, category, and an optional instance prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub bbox: BoundingBox,
    pub category: String,
    pub instance_prompt: Option<String>,
}

impl Annotation {
    pub fn new(bbox: BoundingBox, category: impl Into<String>) -> Self {
        Annotation {
            bbox,
            category: category.into(),
            instance_prompt: None,
        }
    }
}

/// RGB raster with unit-interval pixels in channel-major layout
/// (`pixels[c * h * w + y * w + x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRaster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<f32>,
}

pub const CHANNELS: usize = 3;

impl ImageRaster {
    pub fn new(width: u32, height: u32, pixels: Vec<f32>) -> Result<Self> {
        let raster = ImageRaster {
            width,
            height,
            pixels,
        };
        let mut violations = Vec::new();
        raster.collect_violations("raster", &mut violations);
        if violations.is_empty() {
            Ok(raster)
        } else {
            Err(Error::Validation(violations))
        }
    }

    /// Solid-color raster.
    pub fn filled(width: u32, height: u32, color: [f32; 3]) -> Self {
        let hw = (width as usize) * (height as usize);
        let mut pixels = Vec::with_capacity(hw * CHANNELS);
        for c in color {
            pixels.extend(std::iter::repeat_n(c, hw));
        }
        ImageRaster {
            width,
            height,
            pixels,
        }
    }

    pub fn pixel(&self, c: usize, x: u32, y: u32) -> f32 {
        let hw = (self.width as usize) * (self.height as usize);
        self.pixels[c * hw + (y as usize) * (self.width as usize) + x as usize]
    }

    pub fn set_pixel(&mut self, c: usize, x: u32, y: u32, v: f32) {
        let hw = (self.width as usize) * (self.height as usize);
        self.pixels[c * hw + (y as usize) * (self.width as usize) + x as usize] = v;
    }

    /// Mean of `0.2126 R + 0.7152 G + 0.0722 B` over all pixels.
    pub fn mean_luminance(&self) -> f64 {
        let hw = (self.width as usize) * (self.height as usize);
        let mut sum = 0.0f64;
        for i in 0..hw {
            sum += 0.2126 * f64::from(self.pixels[i])
                + 0.7152 * f64::from(self.pixels[hw + i])
                + 0.0722 * f64::from(self.pixels[2 * hw + i]);
        }
        sum / hw as f64
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> [f64; 3] {
        let hw = (self.width as usize) * (self.height as usize);
        let mut means = [0.0f64; 3];
        for (c, m) in means.iter_mut().enumerate() {
            *m = self.pixels[c * hw..(c + 1) * hw]
                .iter()
                .map(|&p| f64::from(p))
                .sum::<f64>()
                / hw as f64;
        }
        means
    }

    fn collect_violations(&self, label: &str, out: &mut Vec<String>) {
        let expected = (self.width as usize) * (self.height as usize) * CHANNELS;
        if self.width == 0 || self.height == 0 {
            out.push(format!("{label}: width and height must be positive"));
        }
        if self.pixels.len() != expected {
            out.push(format!(
                "{label}: pixel array length {} != width*height*3 = {expected}",
                self.pixels.len()
            ));
        }
        if let Some(bad) = self
            .pixels
            .iter()
            .position(|p| !(0.0..=1.0).contains(p) || !p.is_finite())
        {
            out.push(format!(
                "{label}: pixel[{bad}] = {} outside [0, 1]",
                self.pixels[bad]
            ));
        }
    }
}

/// One annotated image with its domain tag.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub raster: ImageRaster,
    pub annotations: Vec<Annotation>,
    pub domain: String,
}

/// A set of labeled images sharing a domain tag and a category registry.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain: String,
    pub categories: Vec<String>,
    pub images: Vec<LabeledImage>,
}

impl DomainDataset {
    pub fn total_annotations(&self) -> usize {
        self.images.iter().map(|i| i.annotations.len()).sum()
    }

    /// Checks every type invariant, collecting all violations.
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        let mut seen_ids = std::collections::HashSet::new();
        for img in &self.images {
            let label = format!("image '{}'", img.id);
            if !seen_ids.insert(img.id.as_str()) {
                violations.push(format!("{label}: duplicate id"));
            }
            if img.domain != self.domain {
                violations.push(format!(
                    "{label}: domain tag '{}' != dataset domain '{}'",
                    img.domain, self.domain
                ));
            }
            img.raster.collect_violations(&label, &mut violations);
            for (k, ann) in img.annotations.iter().enumerate() {
                let ann_label = format!("{label} annotation {k}");
                ann.bbox.collect_violations(
                    img.raster.width,
                    img.raster.height,
                    &ann_label,
                    &mut violations,
                );
                if !self.categories.iter().any(|c| c == &ann.category) {
                    violations.push(format!(
                        "{ann_label}: category '{}' not in registry [{}]",
                        ann.category,
                        self.categories.join(", ")
                    ));
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations))
        }
    }
}

/// Extracts the sub-raster covered by `box_` (floor min, ceil max, clipped).
///
/// Pixels are copied verbatim. A box that rounds to zero area is an error.
pub fn crop(raster: &ImageRaster, box_: &BoundingBox) -> Result<ImageRaster> {
    let x0 = box_.x_min.floor().max(0.0) as u32;
    let y0 = box_.y_min.floor().max(0.0) as u32;
    let x1 = (box_.x_max.ceil() as i64).clamp(0, i64::from(raster.width)) as u32;
    let y1 = (box_.y_max.ceil() as i64).clamp(0, i64::from(raster.height)) as u32;
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::validation(format!(
            "crop of box ({}, {}, {}, {}) has zero area after rounding",
            box_.x_min, box_.y_min, box_.x_max, box_.y_max
        )));
    }
    let (w, h) = (x1 - x0, y1 - y0);
    let mut pixels = Vec::with_capacity((w as usize) * (h as usize) * CHANNELS);
    for c in 0..CHANNELS {
        for y in y0..y1 {
            for x in x0..x1 {
                pixels.push(raster.pixel(c, x, y));
            }
        }
    }
    Ok(ImageRaster {
        width: w,
        height: h,
        pixels,
    })
}

/// Concatenates datasets into one tagged "merged", prefixing every image id
/// with its source domain. All inputs must share one category registry.
pub fn merge_datasets(datasets: &[DomainDataset]) -> Result<DomainDataset> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::validation("merge requires at least one dataset"))?;
    for ds in &datasets[1..] {
        if ds.categories != first.categories {
            let a: Vec<&String> = first
                .categories
                .iter()
                .filter(|c| !ds.categories.contains(c))
                .collect();
            let b: Vec<&String> = ds
                .categories
                .iter()
                .filter(|c| !first.categories.contains(c))
                .collect();
            return Err(Error::validation(format!(
                "category registries differ between '{}' and '{}': only-first: {a:?}, only-second: {b:?}",
                first.domain, ds.domain
            )));
        }
    }
    let mut images = Vec::new();
    for ds in datasets {
        for img in &ds.images {
            let mut img = img.clone();
            img.id = format!("{}/{}", ds.domain, img.id);
            img.domain = "merged".to_string();
            images.push(img);
        }
    }
    Ok(DomainDataset {
        domain: "merged".to_string(),
        categories: first.categories.clone(),
        images,
    })
}
