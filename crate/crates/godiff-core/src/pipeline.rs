//! Deterministic orchestration of the end-to-end pipeline and its
//! machine-readable outputs.
//!
//! Stage functions mirror the CLI subcommands. All outputs (dataset files,
//! manifest, CSV/JSON reports) are written canonically, so reruns under any
//! worker-thread count are byte-identical. JSON report schemas carry a
//! `schema_version` field; CSVs carry it as their first column.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::csn::{finite_diff_check, toy_backbone_forward, FeatureMap};
use crate::dataset::{
    load_dataset, merge_datasets, save_dataset, synth_toy_dataset, Annotation, BoundingBox,
    DomainDataset,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_domain, mmd2, mpc, Detection, EvalReport};
use crate::filter::{
    apply_filter_to_domains, build_pseudo_source, embedder_by_id, filter_boxes, Embedding,
};
use crate::prompt::tagger_by_id;
use crate::ptdg::{generate_pseudo_domain, generator_by_id, GeneratorConfig};
use crate::rng::{derive_seed, DetRng};

pub const SCHEMA_VERSION: u32 = 1;

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec(value).expect("report serialization cannot fail");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn generator_config(cfg: &PipelineConfig) -> GeneratorConfig {
    GeneratorConfig::new(cfg.pipeline.generator.clone(), cfg.pipeline.seed)
}

/// Synthesizes the toy source dataset and writes it canonically.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<PathBuf> {
    let ds = synth_toy_dataset(&cfg.synth_params())?;
    let path = cfg.source_path();
    save_dataset(&ds, &path)?;
    Ok(path)
}

// manifest structs: fields declared alphabetically for canonical key order
#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestImage {
    pub global_prompt: String,
    pub id: String,
    pub instance_prompts: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestDomain {
    pub file: String,
    pub images: Vec<ManifestImage>,
    pub name: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub domains: Vec<ManifestDomain>,
    pub generator: String,
    pub schema_version: u32,
    pub seed: u64,
    pub source_domain: String,
}

#[derive(Debug)]
pub struct GenerateOutput {
    pub dataset_paths: Vec<PathBuf>,
    pub manifest_path: PathBuf,
}

/// Generates one pseudo-domain dataset per configured style spec and a
/// provenance manifest (global prompt, instance prompts, and seed per image).
pub fn cmd_generate(cfg: &PipelineConfig) -> Result<GenerateOutput> {
    let source = load_dataset(&cfg.source_path())?;
    let sets = cfg.descriptor_sets();
    let tagger = tagger_by_id(&cfg.pipeline.tagger)?;
    let generator = generator_by_id(&cfg.pipeline.generator)?;
    let gen_cfg = generator_config(cfg);

    let mut dataset_paths = Vec::new();
    let mut manifest_domains = Vec::new();
    for spec in cfg.style_domain_specs() {
        let (ds, records) =
            generate_pseudo_domain(&source, &spec, &sets, tagger.as_ref(), generator.as_ref(), &gen_cfg)?;
        let file = format!("generated/{}.json", spec.name);
        let path = cfg.pipeline.out_dir.join(&file);
        save_dataset(&ds, &path)?;
        dataset_paths.push(path);
        manifest_domains.push(ManifestDomain {
            file,
            images: records
                .into_iter()
                .map(|r| ManifestImage {
                    global_prompt: r.global_prompt,
                    id: r.image_id,
                    instance_prompts: r.instance_prompts,
                    seed: r.seed,
                })
                .collect(),
            name: spec.name.clone(),
        });
    }

    let manifest = Manifest {
        domains: manifest_domains,
        generator: cfg.pipeline.generator.clone(),
        schema_version: SCHEMA_VERSION,
        seed: cfg.pipeline.seed,
        source_domain: source.domain.clone(),
    };
    let manifest_path = cfg.pipeline.out_dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    Ok(GenerateOutput {
        dataset_paths,
        manifest_path,
    })
}

#[derive(Debug)]
pub struct FilterOutput {
    pub filtered_paths: Vec<PathBuf>,
    pub pseudo_source_path: PathBuf,
    pub report_path: PathBuf,
    /// rows as (image_id, box_index, similarity, retained)
    pub rows: Vec<(String, usize, f64, bool)>,
}

/// Builds the pseudo-source, scores every source box, applies the retention
/// rule, and rewrites annotations across all generated pseudo-domains.
pub fn cmd_filter(cfg: &PipelineConfig) -> Result<FilterOutput> {
    let source = load_dataset(&cfg.source_path())?;
    let sets = cfg.descriptor_sets();
    let tagger = tagger_by_id(&cfg.pipeline.tagger)?;
    let generator = generator_by_id(&cfg.pipeline.generator)?;
    let embedder = embedder_by_id(&cfg.pipeline.embedder)?;
    let filter_cfg = cfg.filter_config()?;
    let gen_cfg = GeneratorConfig::new(cfg.pipeline.generator.clone(), cfg.pipeline.seed);

    let pseudo_source = build_pseudo_source(
        &source,
        &sets,
        tagger.as_ref(),
        generator.as_ref(),
        &gen_cfg,
    )?;
    let pseudo_source_path = cfg.pipeline.out_dir.join("pseudo-source.json");
    save_dataset(&pseudo_source, &pseudo_source_path)?;

    let mut retained: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
    let mut rows = Vec::new();
    for (img, pimg) in source.images.iter().zip(&pseudo_source.images) {
        let (kept, scores) = filter_boxes(img, pimg, &filter_cfg, embedder.as_ref())?;
        for s in &scores {
            rows.push((img.id.clone(), s.box_index, s.similarity, s.retained));
        }
        retained.insert(img.id.clone(), kept);
    }

    let mut filtered_paths = Vec::new();
    let mut domains = Vec::new();
    for spec in cfg.style_domain_specs() {
        let path = cfg.pipeline.out_dir.join(format!("generated/{}.json", spec.name));
        domains.push(load_dataset(&path)?);
    }
    apply_filter_to_domains(&mut domains, &retained)?;
    for ds in &domains {
        let path = cfg.pipeline.out_dir.join(format!("filtered/{}.json", ds.domain));
        save_dataset(ds, &path)?;
        filtered_paths.push(path);
    }

    let mut csv = String::from("schema_version,image_id,box_index,similarity,retained\n");
    for (id, k, s, r) in &rows {
        writeln!(csv, "{SCHEMA_VERSION},{id},{k},{s},{r}").expect("string write");
    }
    let report_path = cfg.pipeline.out_dir.join("filter_report.csv");
    write_bytes(&report_path, csv.as_bytes())?;

    Ok(FilterOutput {
        filtered_paths,
        pseudo_source_path,
        report_path,
        rows,
    })
}

// train summary: alphabetical fields
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub batch_size: usize,
    pub grad_check_max_rel_error: f64,
    pub schema_version: u32,
    pub steps: usize,
    pub total_cml: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub report_path: PathBuf,
    pub summary: TrainSummary,
    pub summary_path: PathBuf,
}

fn random_feature_map(seed: u64, channels: usize, h: usize, w: usize) -> FeatureMap {
    let mut rng = DetRng::new(seed);
    let values = (0..channels * h * w).map(|_| rng.next_unit() * 2.0 - 1.0).collect();
    FeatureMap::new(channels, h, w, values).expect("generated map is valid")
}

/// One finite-difference verification of the covariance-loss gradients on
/// seeded random maps with loss above the nonsmooth floor.
fn run_grad_check(seed: u64) -> Result<f64> {
    for attempt in 0..16u64 {
        let a = random_feature_map(derive_seed(seed, "grad-check-a", &[attempt]), 2, 3, 3);
        let b = random_feature_map(derive_seed(seed, "grad-check-b", &[attempt]), 2, 3, 3);
        match finite_diff_check(&a, &b, 1e-5) {
            Ok(err) => return Ok(err),
            Err(_) => continue, // loss too small; draw again
        }
    }
    Err(Error::Contract(
        "could not draw a gradient-check pair with loss > 1e-6".into(),
    ))
}

/// Merges source and filtered pseudo-domains, runs the CSN harness for the
/// configured number of steps, and reports per-step masks and pair losses
/// plus one finite-difference gradient check.
pub fn cmd_train_sim(cfg: &PipelineConfig) -> Result<TrainOutput> {
    let mut datasets = vec![load_dataset(&cfg.source_path())?];
    for spec in cfg.style_domain_specs() {
        let path = cfg.pipeline.out_dir.join(format!("filtered/{}.json", spec.name));
        datasets.push(load_dataset(&path)?);
    }
    let merged = merge_datasets(&datasets)?;
    if merged.images.len() < cfg.train.batch_size {
        return Err(Error::validation(format!(
            "merged dataset has {} images, fewer than batch_size {}",
            merged.images.len(),
            cfg.train.batch_size
        )));
    }

    let policy = cfg.csn_policy();
    let seed = cfg.pipeline.seed;
    let weights_seed = derive_seed(seed, "backbone-weights", &[]);
    let grad_err = run_grad_check(derive_seed(seed, "grad-check", &[]))?;

    let mut csv =
        String::from("schema_version,step,active_mask,cml_losses,grad_check_max_rel_err\n");
    let mut total_cml = 0.0f64;
    for step in 0..cfg.train.steps {
        let mut order: Vec<usize> = (0..merged.images.len()).collect();
        DetRng::new(derive_seed(seed, "train-batch", &[step as u64])).shuffle(&mut order);
        let batch: Vec<FeatureMap> = order[..cfg.train.batch_size]
            .iter()
            .map(|&i| FeatureMap::from_raster(&merged.images[i].raster))
            .collect();
        let out = toy_backbone_forward(
            &batch,
            weights_seed,
            &policy,
            derive_seed(seed, "train-step", &[step as u64]),
        )?;
        let mask: String = out
            .active_mask
            .iter()
            .map(|&g| if g { '1' } else { '0' })
            .collect();
        let mut losses = Vec::new();
        for (l, trace) in out.layers.iter().enumerate() {
            for p in &trace.pair_losses {
                losses.push(format!("{l}:{}-{}:{}", p.first, p.second, p.loss));
            }
        }
        total_cml += out.total_cml.unwrap_or(0.0);
        writeln!(
            csv,
            "{SCHEMA_VERSION},{step},{mask},{},{grad_err}",
            losses.join(";")
        )
        .expect("string write");
    }

    let report_path = cfg.pipeline.out_dir.join("train_report.csv");
    write_bytes(&report_path, csv.as_bytes())?;
    let summary = TrainSummary {
        batch_size: cfg.train.batch_size,
        grad_check_max_rel_error: grad_err,
        schema_version: SCHEMA_VERSION,
        steps: cfg.train.steps,
        total_cml,
    };
    let summary_path = cfg.pipeline.out_dir.join("train_summary.json");
    write_json(&summary_path, &summary)?;
    Ok(TrainOutput {
        report_path,
        summary,
        summary_path,
    })
}

// detection rows: alphabetical fields
#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    bbox: [f64; 4],
    category: String,
    confidence: f64,
    image_id: String,
}

/// Reads a JSON-lines detections file; one object per detection with keys
/// `image_id`, `category`, `bbox`, `confidence`. Image ids are
/// domain-qualified as `<domain>/<image id>`.
pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: DetectionRow = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
        let det = Detection {
            image_id: row.image_id,
            category: row.category,
            bbox: BoundingBox::new(row.bbox[0], row.bbox[1], row.bbox[2], row.bbox[3]),
            confidence: row.confidence,
        };
        det.validate()?;
        out.push(det);
    }
    Ok(out)
}

/// Writes detections in the JSON-lines format read by [`read_detections`].
pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    let mut text = String::new();
    for d in detections {
        let row = DetectionRow {
            bbox: [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
            category: d.category.clone(),
            confidence: d.confidence,
            image_id: d.image_id.clone(),
        };
        text.push_str(&serde_json::to_string(&row).expect("row serialization cannot fail"));
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

// eval report file: alphabetical fields
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReportFile {
    pub iou_threshold: f64,
    pub map: f64,
    pub mpc: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    pub per_domain_map: BTreeMap<String, f64>,
    pub schema_version: u32,
    pub source_domain: String,
}

#[derive(Debug)]
pub struct EvalOutput {
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    pub report: EvalReport,
}

/// Evaluates a detections file against the source dataset and every
/// filtered pseudo-domain. Detections select their domain through the
/// `<domain>/<image id>` prefix of `image_id`.
pub fn cmd_eval(cfg: &PipelineConfig, detections_path: &Path) -> Result<EvalOutput> {
    let detections = read_detections(detections_path)?;
    let mut datasets = vec![load_dataset(&cfg.source_path())?];
    for spec in cfg.style_domain_specs() {
        let path = cfg.pipeline.out_dir.join(format!("filtered/{}.json", spec.name));
        datasets.push(load_dataset(&path)?);
    }

    let mut per_domain_map = BTreeMap::new();
    let mut source_per_class = BTreeMap::new();
    let mut source_map = 0.0f64;
    for ds in &datasets {
        let prefix = format!("{}/", ds.domain);
        let local: Vec<Detection> = detections
            .iter()
            .filter(|d| d.image_id.starts_with(&prefix))
            .map(|d| Detection {
                image_id: d.image_id[prefix.len()..].to_string(),
                ..d.clone()
            })
            .collect();
        let (per_class, map) = evaluate_domain(&local, ds, cfg.eval.iou_threshold)?;
        if ds.domain == cfg.eval.source_domain {
            source_per_class = per_class.clone();
            source_map = map;
        }
        per_domain_map.insert(ds.domain.clone(), map);
    }

    let mpc_value = mpc(&per_domain_map, &cfg.eval.source_domain)?;
    let report = EvalReport {
        per_class_ap: source_per_class,
        map: source_map,
        per_domain_map,
        mpc: mpc_value,
    };

    let file = EvalReportFile {
        iou_threshold: cfg.eval.iou_threshold,
        map: report.map,
        mpc: report.mpc,
        per_class_ap: report.per_class_ap.clone(),
        per_domain_map: report.per_domain_map.clone(),
        schema_version: SCHEMA_VERSION,
        source_domain: cfg.eval.source_domain.clone(),
    };
    let json_path = cfg.pipeline.out_dir.join("eval_report.json");
    write_json(&json_path, &file)?;

    let mut csv = String::from("schema_version,scope,domain,category,value\n");
    for domain in report.per_domain_map.keys() {
        if domain == &cfg.eval.source_domain {
            for (cat, ap) in &report.per_class_ap {
                writeln!(csv, "{SCHEMA_VERSION},class_ap,{domain},{cat},{ap}").expect("write");
            }
        }
    }
    for (domain, map) in &report.per_domain_map {
        writeln!(csv, "{SCHEMA_VERSION},domain_map,{domain},,{map}").expect("write");
    }
    writeln!(csv, "{SCHEMA_VERSION},mpc,,,{}", report.mpc).expect("write");
    let csv_path = cfg.pipeline.out_dir.join("eval_report.csv");
    write_bytes(&csv_path, csv.as_bytes())?;

    Ok(EvalOutput {
        csv_path,
        json_path,
        report,
    })
}

// mmd report: alphabetical fields
#[derive(Debug, Serialize, Deserialize)]
pub struct MmdReportFile {
    pub domain_a: String,
    pub domain_b: String,
    pub gamma: f64,
    pub mmd2: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub schema_version: u32,
}

#[derive(Debug)]
pub struct MmdOutput {
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    pub value: f64,
}

/// Resolves a dataset argument: an existing path, or a domain name looked up
/// under the output directory (source, then filtered/, then generated/).
pub fn resolve_domain_dataset(cfg: &PipelineConfig, name_or_path: &str) -> Result<DomainDataset> {
    let direct = PathBuf::from(name_or_path);
    if direct.is_file() {
        return load_dataset(&direct);
    }
    let candidates = [
        cfg.pipeline.out_dir.join(format!("{name_or_path}.json")),
        cfg.pipeline.out_dir.join(format!("filtered/{name_or_path}.json")),
        cfg.pipeline.out_dir.join(format!("generated/{name_or_path}.json")),
        cfg.pipeline.out_dir.join(name_or_path),
    ];
    for c in &candidates {
        if c.is_file() {
            return load_dataset(c);
        }
    }
    Err(Error::validation(format!(
        "dataset '{name_or_path}' not found as a path or under {}",
        cfg.pipeline.out_dir.display()
    )))
}

/// Embeds every annotated crop of a dataset with the configured embedder.
pub fn embed_dataset_regions(cfg: &PipelineConfig, ds: &DomainDataset) -> Result<Vec<Embedding>> {
    let embedder = embedder_by_id(&cfg.pipeline.embedder)?;
    let mut out = Vec::new();
    for img in &ds.images {
        for ann in &img.annotations {
            out.push(crate::filter::embed_region(img, &ann.bbox, embedder.as_ref())?);
        }
    }
    Ok(out)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Computes the kernel two-sample statistic between the annotated-region
/// embeddings of two datasets.
pub fn cmd_mmd(cfg: &PipelineConfig, domain_a: &str, domain_b: &str) -> Result<MmdOutput> {
    let ds_a = resolve_domain_dataset(cfg, domain_a)?;
    let ds_b = resolve_domain_dataset(cfg, domain_b)?;
    let ea = embed_dataset_regions(cfg, &ds_a)?;
    let eb = embed_dataset_regions(cfg, &ds_b)?;
    let value = mmd2(&ea, &eb, cfg.mmd.gamma)?;

    let report = MmdReportFile {
        domain_a: ds_a.domain.clone(),
        domain_b: ds_b.domain.clone(),
        gamma: cfg.mmd.gamma,
        mmd2: value,
        n_a: ea.len(),
        n_b: eb.len(),
        schema_version: SCHEMA_VERSION,
    };
    let stem = format!("mmd_{}_vs_{}", sanitize(&ds_a.domain), sanitize(&ds_b.domain));
    let json_path = cfg.pipeline.out_dir.join(format!("{stem}.json"));
    write_json(&json_path, &report)?;
    let csv = format!(
        "schema_version,domain_a,domain_b,n_a,n_b,gamma,mmd2\n{SCHEMA_VERSION},{},{},{},{},{},{}\n",
        report.domain_a, report.domain_b, report.n_a, report.n_b, report.gamma, report.mmd2
    );
    let csv_path = cfg.pipeline.out_dir.join(format!("{stem}.csv"));
    write_bytes(&csv_path, csv.as_bytes())?;

    Ok(MmdOutput {
        csv_path,
        json_path,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_config(dir: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.pipeline.out_dir = dir.to_path_buf();
        cfg.synth.images = 6;
        cfg.synth.width = 32;
        cfg.synth.height = 32;
        cfg.train.steps = 2;
        cfg
    }

    #[test]
    fn synth_reruns_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let p1 = cmd_synth(&cfg).unwrap();
        let bytes1 = std::fs::read(&p1).unwrap();
        let p2 = cmd_synth(&cfg).unwrap();
        let bytes2 = std::fs::read(&p2).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn generate_produces_per_spec_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        cmd_synth(&cfg).unwrap();
        let out = cmd_generate(&cfg).unwrap();
        assert_eq!(out.dataset_paths.len(), 4);
        for p in &out.dataset_paths {
            let ds = load_dataset(p).unwrap();
            assert_eq!(ds.images.len(), cfg.synth.images);
        }
        let manifest: Manifest =
            serde_json::from_slice(&std::fs::read(&out.manifest_path).unwrap()).unwrap();
        assert_eq!(manifest.schema_version, SCHEMA_VERSION);
        assert_eq!(manifest.domains.len(), 4);
        for d in &manifest.domains {
            assert_eq!(d.images.len(), cfg.synth.images);
            for img in &d.images {
                assert!(!img.global_prompt.is_empty());
            }
        }
    }

    #[test]
    fn filter_report_counts_every_box() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        cmd_synth(&cfg).unwrap();
        cmd_generate(&cfg).unwrap();
        let out = cmd_filter(&cfg).unwrap();
        let source = load_dataset(&cfg.source_path()).unwrap();
        assert_eq!(out.rows.len(), source.total_annotations());
        let text = std::fs::read_to_string(&out.report_path).unwrap();
        assert_eq!(text.lines().count(), out.rows.len() + 1);
    }

    #[test]
    fn identity_generator_retains_everything() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.pipeline.generator = "identity".into();
        cmd_synth(&cfg).unwrap();
        cmd_generate(&cfg).unwrap();
        let out = cmd_filter(&cfg).unwrap();
        assert!(out.rows.iter().all(|(_, _, s, r)| *s == 1.0 && *r));
    }

    #[test]
    fn filter_mode_flip_inverts_non_ties() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cmd_synth(&cfg).unwrap();
        cmd_generate(&cfg).unwrap();
        let intent = cmd_filter(&cfg).unwrap();
        cfg.filter.mode = "paper-literal".into();
        let literal = cmd_filter(&cfg).unwrap();
        assert_eq!(intent.rows.len(), literal.rows.len());
        for ((id_a, k_a, s_a, r_a), (id_b, k_b, s_b, r_b)) in
            intent.rows.iter().zip(&literal.rows)
        {
            assert_eq!((id_a, k_a, s_a), (id_b, k_b, s_b));
            if s_a != &cfg.filter.tau {
                assert_ne!(r_a, r_b, "row {id_a}:{k_a} did not flip");
            }
        }
    }

    #[test]
    fn train_sim_with_closed_gate() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.csn.probability = 0.0;
        cmd_synth(&cfg).unwrap();
        cmd_generate(&cfg).unwrap();
        cmd_filter(&cfg).unwrap();
        let out = cmd_train_sim(&cfg).unwrap();
        let text = std::fs::read_to_string(&out.report_path).unwrap();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[2], "0000");
            assert!(cols[3].is_empty(), "losses not empty: {line}");
        }
        assert!(out.summary.grad_check_max_rel_error < 1e-4);
        assert_eq!(out.summary.total_cml, 0.0);
    }

    #[test]
    fn train_sim_rerun_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.csn.probability = 0.5;
        cmd_synth(&cfg).unwrap();
        cmd_generate(&cfg).unwrap();
        cmd_filter(&cfg).unwrap();
        let a = cmd_train_sim(&cfg).unwrap();
        let bytes_a = std::fs::read(&a.report_path).unwrap();
        let b = cmd_train_sim(&cfg).unwrap();
        let bytes_b = std::fs::read(&b.report_path).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn eval_perfect_detections_scores_one() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        cmd_synth(&cfg).unwrap();
        cmd_generate(&cfg).unwrap();
        cmd_filter(&cfg).unwrap();

        let mut dets = Vec::new();
        let mut datasets = vec![load_dataset(&cfg.source_path()).unwrap()];
        for spec in cfg.style_domain_specs() {
            datasets.push(
                load_dataset(&cfg.pipeline.out_dir.join(format!("filtered/{}.json", spec.name)))
                    .unwrap(),
            );
        }
        for ds in &datasets {
            for img in &ds.images {
                for ann in &img.annotations {
                    dets.push(Detection {
                        image_id: format!("{}/{}", ds.domain, img.id),
                        category: ann.category.clone(),
                        bbox: ann.bbox,
                        confidence: 1.0,
                    });
                }
            }
        }
        let det_path = dir.path().join("dets.jsonl");
        write_detections(&det_path, &dets).unwrap();

        let out = cmd_eval(&cfg, &det_path).unwrap();
        assert_eq!(out.report.map, 1.0);
        assert_eq!(out.report.mpc, 1.0);
        for v in out.report.per_domain_map.values() {
            assert_eq!(*v, 1.0);
        }

        // empty detections give zero AP everywhere
        let empty_path = dir.path().join("empty.jsonl");
        write_detections(&empty_path, &[]).unwrap();
        let out = cmd_eval(&cfg, &empty_path).unwrap();
        assert_eq!(out.report.map, 0.0);
        assert_eq!(out.report.mpc, 0.0);
    }

    #[test]
    fn mmd_same_domain_is_zero_and_reruns_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        cmd_synth(&cfg).unwrap();
        let a = cmd_mmd(&cfg, "daytime-sunny", "daytime-sunny").unwrap();
        assert_eq!(a.value, 0.0);
        let bytes_a = std::fs::read(&a.json_path).unwrap();
        let b = cmd_mmd(&cfg, "daytime-sunny", "daytime-sunny").unwrap();
        assert_eq!(bytes_a, std::fs::read(&b.json_path).unwrap());
    }

    #[test]
    fn detections_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let dets = vec![Detection {
            image_id: "dom/img0".into(),
            category: "car".into(),
            bbox: BoundingBox::new(1.0, 2.0, 3.0, 4.5),
            confidence: 0.75,
        }];
        write_detections(&path, &dets).unwrap();
        assert_eq!(read_detections(&path).unwrap(), dets);

        std::fs::write(&path, "{\"bbox\":[0,0,1,1],\"category\":\"car\",\"confidence\":2.0,\"image_id\":\"a/b\"}\n").unwrap();
        assert!(read_detections(&path).is_err());
        std::fs::write(&path, "not json\n").unwrap();
        let err = read_detections(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
