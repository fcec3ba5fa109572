//! Synthetic toy-scene generator: flat background plus solid rectangles.
//!
//! Each rectangle is one annotated object. Rectangle colors are keyed by
//! category (with small per-instance jitter) so region embeddings carry
//! discriminative signal. Every image derives its own seed from
//! `(dataset seed, image index)`, so generation order and thread count
//! cannot change the output.

use super::{Annotation, BoundingBox, DomainDataset, ImageRaster, LabeledImage};
use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::{derive_seed, fnv1a, DetRng};

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub seed: u64,
    pub n_images: usize,
    pub width: u32,
    pub height: u32,
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub categories: Vec<String>,
    pub domain: String,
}

const MAX_IOU: f64 = 0.3;
const PLACEMENT_RETRIES: usize = 64;

fn category_color(category: &str) -> [f32; 3] {
    let h = fnv1a(category.as_bytes());
    // spread channels over [0.15, 0.95]
    let chan = |shift: u32| 0.15 + 0.8 * ((h >> shift) & 0xffff) as f32 / 65535.0;
    [chan(0), chan(16), chan(32)]
}

fn clamp_unit(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

fn render_image(params: &SynthParams, index: usize) -> LabeledImage {
    let mut rng = DetRng::new(derive_seed(params.seed, "synth-image", &[index as u64]));
    let (w, h) = (params.width, params.height);

    // muted background so objects stand out
    let bg = [
        0.35 + 0.3 * rng.next_unit() as f32,
        0.35 + 0.3 * rng.next_unit() as f32,
        0.35 + 0.3 * rng.next_unit() as f32,
    ];
    let mut raster = ImageRaster::filled(w, h, bg);

    let target_boxes = rng.next_in_range(params.min_boxes, params.max_boxes);
    let min_side = w.min(h);
    let mut placed: Vec<BoundingBox> = Vec::new();
    let mut annotations = Vec::new();

    for _ in 0..target_boxes {
        let mut box_ = None;
        for _ in 0..PLACEMENT_RETRIES {
            let bw = rng.next_in_range((min_side / 8).max(2) as usize, (min_side / 3) as usize) as u32;
            let bh = rng.next_in_range((min_side / 8).max(2) as usize, (min_side / 3) as usize) as u32;
            let x0 = rng.next_index((w - bw) as usize + 1) as u32;
            let y0 = rng.next_index((h - bh) as usize + 1) as u32;
            let candidate = BoundingBox::new(
                f64::from(x0),
                f64::from(y0),
                f64::from(x0 + bw),
                f64::from(y0 + bh),
            );
            if placed.iter().all(|b| b.iou(&candidate) <= MAX_IOU) {
                box_ = Some(candidate);
                break;
            }
        }
        let Some(box_) = box_ else {
            log::warn!(
                "image {index}: box placement failed after {PLACEMENT_RETRIES} retries, \
                 reducing box count to {}",
                placed.len()
            );
            break;
        };

        let category = params.categories[rng.next_index(params.categories.len())].clone();
        let base = category_color(&category);
        let jitter: Vec<f32> = (0..3).map(|_| (rng.next_unit() as f32 - 0.5) * 0.1).collect();
        let color = [
            clamp_unit(base[0] + jitter[0]),
            clamp_unit(base[1] + jitter[1]),
            clamp_unit(base[2] + jitter[2]),
        ];
        for (c, &col) in color.iter().enumerate() {
            for y in box_.y_min as u32..box_.y_max as u32 {
                for x in box_.x_min as u32..box_.x_max as u32 {
                    raster.set_pixel(c, x, y, col);
                }
            }
        }
        placed.push(box_);
        annotations.push(Annotation::new(box_, category));
    }

    LabeledImage {
        id: format!("img{index}"),
        raster,
        annotations,
        domain: params.domain.clone(),
    }
}

/// Generates a deterministic toy dataset.
pub fn synth_toy_dataset(params: &SynthParams) -> Result<DomainDataset> {
    let mut violations = Vec::new();
    if params.width < 16 || params.height < 16 {
        violations.push(format!(
            "width and height must be >= 16, got {}x{}",
            params.width, params.height
        ));
    }
    if params.min_boxes < 1 {
        violations.push("min_boxes must be >= 1".to_string());
    }
    if params.min_boxes > params.max_boxes {
        violations.push(format!(
            "min_boxes {} > max_boxes {}",
            params.min_boxes, params.max_boxes
        ));
    }
    if params.categories.is_empty() {
        violations.push("categories must be non-empty".to_string());
    }
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }

    let indices: Vec<usize> = (0..params.n_images).collect();
    let images = parallel::map_indexed(&indices, |_, &i| render_image(params, i));
    let ds = DomainDataset {
        domain: params.domain.clone(),
        categories: params.categories.clone(),
        images,
    };
    ds.validate()?;
    Ok(ds)
}
