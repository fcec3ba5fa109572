//! Object quality filtering via region embeddings and an RBF kernel.
//!
//! Each annotated region of the source image is compared against the same
//! region of a regenerated pseudo-source image; boxes whose embeddings drift
//! apart are dropped, and the surviving annotation list is broadcast to all
//! pseudo-target domains.
//!
//! Two retention rules are provided. `Intent` (default) keeps boxes with
//! similarity >= tau, preserving only regions that stayed close to the
//! source. `PaperLiteral` keeps similarity <= tau, the inverted reading;
//! both are exposed because the two conventions circulate. Ties retain in
//! both modes.

use crate::dataset::{crop, Annotation, BoundingBox, DomainDataset, ImageRaster, LabeledImage};
use crate::error::{Error, Result};
use crate::parallel;
use crate::prompt::{DescriptorSets, Tagger};
use crate::ptdg::{generate_pseudo_domain, Generator, GeneratorConfig, StyleDomainSpec};

/// Fixed-dimension real feature vector for an image region.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "embedding entry {bad} is not finite"
            )));
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Retention rule applied to RBF similarities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// retain iff similarity >= tau
    Intent,
    /// retain iff similarity <= tau
    PaperLiteral,
}

impl FilterMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "intent" => Ok(FilterMode::Intent),
            "paper-literal" => Ok(FilterMode::PaperLiteral),
            other => Err(Error::validation(format!(
                "unknown filter mode '{other}' (expected 'intent' or 'paper-literal')"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FilterMode::Intent => "intent",
            FilterMode::PaperLiteral => "paper-literal",
        }
    }

    /// Whether a box with similarity `s` is retained at threshold `tau`.
    pub fn retains(&self, s: f64, tau: f64) -> bool {
        match self {
            FilterMode::Intent => s >= tau,
            FilterMode::PaperLiteral => s <= tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// RBF spread
    pub gamma: f64,
    /// retention threshold
    pub tau: f64,
    pub mode: FilterMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            gamma: 0.5,
            tau: 0.8,
            mode: FilterMode::Intent,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            violations.push(format!("filter.gamma = {} must be > 0", self.gamma));
        }
        if self.mode == FilterMode::Intent
            && (!self.tau.is_finite() || self.tau <= 0.0 || self.tau > 1.0)
        {
            violations.push(format!(
                "filter.tau = {} outside (0, 1] in intent mode",
                self.tau
            ));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations))
        }
    }
}

/// Region embedding interface (stands in for a pretrained image encoder).
pub trait Embedder: Send + Sync {
    fn id(&self) -> &'static str;
    /// Dimension of every embedding this encoder produces.
    fn dim(&self) -> usize;
    fn embed(&self, region: &ImageRaster) -> Result<Embedding>;
}

/// Deterministic 18-d statistics embedder: per-channel mean (3) + std (3) +
/// 3-bin histogram (9) + gradient energy (3). Resolution-invariant by
/// construction, so crops need no resizing.
#[derive(Debug, Default)]
pub struct StubEmbedder;

pub const STUB_EMBED_DIM: usize = 18;

impl Embedder for StubEmbedder {
    fn id(&self) -> &'static str {
        "stub"
    }

    fn dim(&self) -> usize {
        STUB_EMBED_DIM
    }

    fn embed(&self, region: &ImageRaster) -> Result<Embedding> {
        let w = region.width as usize;
        let h = region.height as usize;
        let hw = w * h;
        if hw == 0 {
            return Err(Error::validation("cannot embed an empty region"));
        }
        let mut values = Vec::with_capacity(STUB_EMBED_DIM);
        let mut means = [0.0f64; 3];
        let mut stds = [0.0f64; 3];
        let mut hists = [[0.0f64; 3]; 3];
        let mut grads = [0.0f64; 3];

        for c in 0..3 {
            let plane = &region.pixels[c * hw..(c + 1) * hw];
            let mean = plane.iter().map(|&p| f64::from(p)).sum::<f64>() / hw as f64;
            let var = plane
                .iter()
                .map(|&p| {
                    let d = f64::from(p) - mean;
                    d * d
                })
                .sum::<f64>()
                / hw as f64;
            means[c] = mean;
            stds[c] = var.sqrt();
            for &p in plane {
                let bin = if f64::from(p) < 1.0 / 3.0 {
                    0
                } else if f64::from(p) < 2.0 / 3.0 {
                    1
                } else {
                    2
                };
                hists[c][bin] += 1.0;
            }
            for b in &mut hists[c] {
                *b /= hw as f64;
            }
            // mean absolute neighbor difference, horizontal + vertical
            let mut g = 0.0f64;
            let mut n = 0usize;
            for y in 0..h {
                for x in 1..w {
                    g += (f64::from(plane[y * w + x]) - f64::from(plane[y * w + x - 1])).abs();
                    n += 1;
                }
            }
            for y in 1..h {
                for x in 0..w {
                    g += (f64::from(plane[y * w + x]) - f64::from(plane[(y - 1) * w + x])).abs();
                    n += 1;
                }
            }
            grads[c] = if n == 0 { 0.0 } else { g / n as f64 };
        }

        values.extend_from_slice(&means);
        values.extend_from_slice(&stds);
        for ch in &hists {
            values.extend_from_slice(ch);
        }
        values.extend_from_slice(&grads);
        Embedding::new(values)
    }
}

/// Looks up an embedder implementation by id.
pub fn embedder_by_id(id: &str) -> Result<Box<dyn Embedder>> {
    match id {
        "stub" => Ok(Box::new(StubEmbedder)),
        other => Err(Error::validation(format!("unknown embedder id '{other}'"))),
    }
}

/// Crops the annotated region and embeds it.
pub fn embed_region(
    image: &LabeledImage,
    bbox: &BoundingBox,
    embedder: &dyn Embedder,
) -> Result<Embedding> {
    let region = crop(&image.raster, bbox)?;
    embedder.embed(&region)
}

/// RBF similarity `exp(-gamma * ||a - b||^2)`, in (0, 1].
///
/// For `gamma * ||a - b||^2` beyond ~745 the result underflows to +0.0,
/// the IEEE limit of the mathematical value.
pub fn rbf_similarity(a: &Embedding, b: &Embedding, gamma: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!(
            "embedding dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::validation(format!("gamma = {gamma} must be > 0")));
    }
    let sq: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((-gamma * sq).exp())
}

/// Regenerates the source dataset in its own style ("pseudo-source"), the
/// comparison anchor for filtering.
pub fn build_pseudo_source(
    source: &DomainDataset,
    sets: &DescriptorSets,
    tagger: &dyn Tagger,
    generator: &dyn Generator,
    cfg: &GeneratorConfig,
) -> Result<DomainDataset> {
    let spec = StyleDomainSpec::source_like(&source.domain);
    let (ds, _) = generate_pseudo_domain(source, &spec, sets, tagger, generator, cfg)?;
    Ok(ds)
}

/// Similarity and retention decision for one box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxScore {
    pub box_index: usize,
    pub similarity: f64,
    pub retained: bool,
}

/// Scores every annotated box of `source_img` against `pseudo_source_img`
/// and applies the retention rule. Both images must carry identical
/// annotation lists. Returns retained annotations (order-preserving) plus
/// per-box scores for reporting.
pub fn filter_boxes(
    source_img: &LabeledImage,
    pseudo_source_img: &LabeledImage,
    cfg: &FilterConfig,
    embedder: &dyn Embedder,
) -> Result<(Vec<Annotation>, Vec<BoxScore>)> {
    cfg.validate()?;
    if source_img.annotations.len() != pseudo_source_img.annotations.len()
        || source_img
            .annotations
            .iter()
            .zip(&pseudo_source_img.annotations)
            .any(|(a, b)| a.bbox != b.bbox || a.category != b.category)
    {
        return Err(Error::validation(format!(
            "image '{}': source and pseudo-source annotation lists differ",
            source_img.id
        )));
    }

    let scores = parallel::try_map_indexed(&source_img.annotations, |k, ann| {
        let fa = embed_region(source_img, &ann.bbox, embedder)?;
        let fb = embed_region(pseudo_source_img, &ann.bbox, embedder)?;
        let s = rbf_similarity(&fa, &fb, cfg.gamma)?;
        Ok(BoxScore {
            box_index: k,
            similarity: s,
            retained: cfg.mode.retains(s, cfg.tau),
        })
    })?;

    let retained = scores
        .iter()
        .filter(|s| s.retained)
        .map(|s| source_img.annotations[s.box_index].clone())
        .collect();
    Ok((retained, scores))
}

/// Replaces every pseudo-domain image's annotations with the retained list
/// of its source image (keyed by image id). Rasters are untouched; images
/// with an empty retained list are kept with zero annotations.
pub fn apply_filter_to_domains(
    pseudo_domains: &mut [DomainDataset],
    retained: &std::collections::BTreeMap<String, Vec<Annotation>>,
) -> Result<()> {
    for ds in pseudo_domains.iter_mut() {
        for img in &mut ds.images {
            let list = retained.get(&img.id).ok_or_else(|| {
                Error::validation(format!(
                    "no retained annotation list for image '{}' in domain '{}'",
                    img.id, ds.domain
                ))
            })?;
            img.annotations = list.clone();
        }
    }
    Ok(())
}
