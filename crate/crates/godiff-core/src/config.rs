//! Pipeline configuration.
//!
//! The config file is sectioned key/value TOML; every key has a default, so
//! an empty file (or no file) is a complete configuration. The environment
//! variable `GODIFF_SEED` overrides the config seed; command-line flags
//! override both.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::csn::CsnPolicy;
use crate::dataset::SynthParams;
use crate::error::{Error, Result};
use crate::filter::{embedder_by_id, FilterConfig, FilterMode};
use crate::prompt::{tagger_by_id, DescriptorSets, TagSet};
use crate::ptdg::{generator_by_id, StyleDomainSpec, StyleParams};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// source dataset path; defaults to `<out_dir>/<synth.domain>.json`
    pub source: Option<PathBuf>,
    pub generator: String,
    pub embedder: String,
    pub tagger: String,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            seed: 7,
            out_dir: PathBuf::from("out"),
            source: None,
            generator: "procedural".into(),
            embedder: "stub".into(),
            tagger: "stub".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub categories: Vec<String>,
    pub domain: String,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            images: 16,
            width: 64,
            height: 64,
            min_boxes: 2,
            max_boxes: 3,
            categories: vec!["car".into(), "person".into()],
            domain: "daytime-sunny".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorSection {
    pub objects: Vec<String>,
    pub actions: Vec<String>,
    pub weather: Vec<String>,
    pub scenes: Vec<String>,
    pub times: Vec<String>,
}

impl Default for DescriptorSection {
    fn default() -> Self {
        let d = DescriptorSets::default();
        DescriptorSection {
            objects: d.objects,
            actions: d.actions,
            weather: d.weather,
            scenes: d.scenes,
            times: d.times,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub gamma: f64,
    pub tau: f64,
    pub mode: String,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            gamma: 0.5,
            tau: 0.8,
            mode: "intent".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsnSection {
    pub probability: f64,
    pub max_active: usize,
    pub epsilon: f64,
}

impl Default for CsnSection {
    fn default() -> Self {
        CsnSection {
            probability: 0.1,
            max_active: 2,
            epsilon: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 4,
            batch_size: 4,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub iou_threshold: f64,
    pub source_domain: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            iou_threshold: 0.5,
            source_domain: "daytime-sunny".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmdSection {
    pub gamma: f64,
}

impl Default for MmdSection {
    fn default() -> Self {
        MmdSection { gamma: 0.5 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleSpecSection {
    pub name: String,
    pub tags: Vec<String>,
    #[serde(default = "default_gain")]
    pub gain: [f64; 3],
    #[serde(default)]
    pub bias: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub fog_alpha: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

fn default_gain() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

fn default_gamma() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub pipeline: PipelineSection,
    pub synth: SynthSection,
    pub descriptors: DescriptorSection,
    /// category -> object descriptors consistent with it
    pub consistency: BTreeMap<String, Vec<String>>,
    pub filter: FilterSection,
    pub csn: CsnSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub mmd: MmdSection,
    pub style_spec: Vec<StyleSpecSection>,
}

/// Stylizer calibrations for the four bundled target styles.
fn default_style_specs() -> Vec<StyleSpecSection> {
    let spec = |name: &str, tags: &[&str], gain: [f64; 3], bias: f64, gamma: f64, fog: f64, noise: f64| {
        StyleSpecSection {
            name: name.into(),
            tags: tags.iter().map(|s| s.to_string()).collect(),
            gain,
            bias,
            gamma,
            fog_alpha: fog,
            noise_sigma: noise,
        }
    };
    vec![
        spec("night-sunny", &["night", "dark"], [0.35, 0.35, 0.45], 0.0, 1.1, 0.0, 0.01),
        spec("night-rainy", &["night", "rainy", "dark"], [0.30, 0.30, 0.42], 0.0, 1.15, 0.1, 0.05),
        spec("daytime-foggy", &["daytime", "foggy"], [1.0, 1.0, 1.0], 0.0, 1.0, 0.5, 0.01),
        spec("dusk-rainy", &["dusk", "rainy"], [0.80, 0.65, 0.55], 0.02, 1.05, 0.15, 0.05),
    ]
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pipeline: PipelineSection::default(),
            synth: SynthSection::default(),
            descriptors: DescriptorSection::default(),
            consistency: DescriptorSets::default().consistency,
            filter: FilterSection::default(),
            csn: CsnSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            mmd: MmdSection::default(),
            style_spec: default_style_specs(),
        }
    }
}

impl PipelineConfig {
    /// Parses a TOML config file; missing keys fall back to defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the `GODIFF_SEED` environment override, if set.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("GODIFF_SEED") {
            self.pipeline.seed = v.parse().map_err(|_| {
                Error::validation(format!("GODIFF_SEED = '{v}' is not a valid integer seed"))
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();

        if let Err(e) = generator_by_id(&self.pipeline.generator) {
            violations.push(e.to_string());
        }
        if let Err(e) = embedder_by_id(&self.pipeline.embedder) {
            violations.push(e.to_string());
        }
        if let Err(e) = tagger_by_id(&self.pipeline.tagger) {
            violations.push(e.to_string());
        }
        if let Err(e) = self.filter_config().and_then(|f| f.validate()) {
            violations.push(e.to_string());
        }
        if let Err(e) = self.csn_policy().validate() {
            violations.push(e.to_string());
        }
        if let Err(e) = self.descriptor_sets().validate() {
            violations.push(e.to_string());
        }
        for s in &self.style_spec {
            if let Err(e) = self.style_domain_spec(s).validate() {
                violations.push(format!("style_spec '{}': {e}", s.name));
            }
        }
        if self.style_spec.is_empty() {
            violations.push("at least one [[style_spec]] is required".to_string());
        }
        if self.train.batch_size < 2 || !self.train.batch_size.is_multiple_of(2) {
            violations.push(format!(
                "train.batch_size = {} must be even and >= 2",
                self.train.batch_size
            ));
        }
        if self.train.steps == 0 {
            violations.push("train.steps must be >= 1".to_string());
        }
        if !self.eval.iou_threshold.is_finite()
            || self.eval.iou_threshold <= 0.0
            || self.eval.iou_threshold > 1.0
        {
            violations.push(format!(
                "eval.iou_threshold = {} outside (0, 1]",
                self.eval.iou_threshold
            ));
        }
        if !self.mmd.gamma.is_finite() || self.mmd.gamma <= 0.0 {
            violations.push(format!("mmd.gamma = {} must be > 0", self.mmd.gamma));
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations))
        }
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            seed: self.pipeline.seed,
            n_images: self.synth.images,
            width: self.synth.width,
            height: self.synth.height,
            min_boxes: self.synth.min_boxes,
            max_boxes: self.synth.max_boxes,
            categories: self.synth.categories.clone(),
            domain: self.synth.domain.clone(),
        }
    }

    pub fn descriptor_sets(&self) -> DescriptorSets {
        DescriptorSets {
            objects: self.descriptors.objects.clone(),
            actions: self.descriptors.actions.clone(),
            weather: self.descriptors.weather.clone(),
            scenes: self.descriptors.scenes.clone(),
            times: self.descriptors.times.clone(),
            consistency: self.consistency.clone(),
        }
    }

    pub fn filter_config(&self) -> Result<FilterConfig> {
        Ok(FilterConfig {
            gamma: self.filter.gamma,
            tau: self.filter.tau,
            mode: FilterMode::parse(&self.filter.mode)?,
        })
    }

    pub fn csn_policy(&self) -> CsnPolicy {
        CsnPolicy {
            probability: self.csn.probability,
            max_active: self.csn.max_active,
            epsilon: self.csn.epsilon,
        }
    }

    pub fn style_domain_spec(&self, s: &StyleSpecSection) -> StyleDomainSpec {
        StyleDomainSpec {
            name: s.name.clone(),
            domain_tags: TagSet::from_tags(s.tags.iter()),
            params: StyleParams {
                gain: s.gain,
                bias: s.bias,
                gamma: s.gamma,
                fog_alpha: s.fog_alpha,
                noise_sigma: s.noise_sigma,
            },
        }
    }

    pub fn style_domain_specs(&self) -> Vec<StyleDomainSpec> {
        self.style_spec.iter().map(|s| self.style_domain_spec(s)).collect()
    }

    /// Path of the source dataset file.
    pub fn source_path(&self) -> PathBuf {
        self.pipeline
            .source
            .clone()
            .unwrap_or_else(|| self.pipeline.out_dir.join(format!("{}.json", self.synth.domain)))
    }
}
