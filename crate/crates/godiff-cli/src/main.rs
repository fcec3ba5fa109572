//! `godiff` command-line interface.
//!
//! Subcommands mirror the pipeline stages: `synth`, `generate`, `filter`,
//! `train-sim`, `eval`, `mmd`. Exit codes: 0 success, 1 validation error,
//! 2 i/o error, 3 internal contract violation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use godiff_core::config::PipelineConfig;
use godiff_core::{parallel, pipeline, Error};

#[derive(Parser)]
#[command(
    name = "godiff",
    version,
    about = "Deterministic pseudo-domain data augmentation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (TOML); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config/GODIFF_SEED seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Generator implementation id
    #[arg(long, global = true)]
    generator: Option<String>,

    /// Embedder implementation id
    #[arg(long, global = true)]
    embedder: Option<String>,

    /// Retention rule: intent | paper-literal
    #[arg(long = "filter-mode", global = true)]
    filter_mode: Option<String>,

    /// Worker threads (0 = library default)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the toy source dataset
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate one pseudo-domain dataset per style spec plus a manifest
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score object regions against the pseudo-source and rewrite annotations
    Filter {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the CSN training harness and gradient check
    TrainSim {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a detections file (mAP per domain, mPC)
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON-lines detections file
        #[arg(long)]
        detections: PathBuf,
    },
    /// Kernel two-sample statistic between two datasets' region embeddings
    Mmd {
        #[command(flatten)]
        common: CommonArgs,
        /// First dataset (domain name under the out dir, or a path)
        #[arg(long = "domain-a")]
        domain_a: String,
        /// Second dataset (domain name under the out dir, or a path)
        #[arg(long = "domain-b")]
        domain_b: String,
    },
}

fn load_config(common: &CommonArgs) -> Result<PipelineConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env_overrides()?;
    if let Some(seed) = common.seed {
        cfg.pipeline.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.pipeline.out_dir = out.clone();
    }
    if let Some(generator) = &common.generator {
        cfg.pipeline.generator = generator.clone();
    }
    if let Some(embedder) = &common.embedder {
        cfg.pipeline.embedder = embedder.clone();
    }
    if let Some(mode) = &common.filter_mode {
        cfg.filter.mode = mode.clone();
    }
    cfg.validate()?;
    if common.threads > 0 {
        if let Err(msg) = parallel::configure_threads(common.threads) {
            log::warn!("could not set thread count: {msg}");
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = load_config(&common)?;
            let path = pipeline::cmd_synth(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            let out = pipeline::cmd_generate(&cfg)?;
            for p in &out.dataset_paths {
                println!("wrote {}", p.display());
            }
            println!("wrote {}", out.manifest_path.display());
        }
        Command::Filter { common } => {
            let cfg = load_config(&common)?;
            let out = pipeline::cmd_filter(&cfg)?;
            let kept = out.rows.iter().filter(|r| r.3).count();
            for p in &out.filtered_paths {
                println!("wrote {}", p.display());
            }
            println!("wrote {}", out.report_path.display());
            println!("retained {kept}/{} boxes", out.rows.len());
        }
        Command::TrainSim { common } => {
            let cfg = load_config(&common)?;
            let out = pipeline::cmd_train_sim(&cfg)?;
            println!("wrote {}", out.report_path.display());
            println!("wrote {}", out.summary_path.display());
            println!(
                "gradient check max relative error: {:.3e}",
                out.summary.grad_check_max_rel_error
            );
        }
        Command::Eval { common, detections } => {
            let cfg = load_config(&common)?;
            let out = pipeline::cmd_eval(&cfg, &detections)?;
            println!("wrote {}", out.json_path.display());
            println!("wrote {}", out.csv_path.display());
            for (domain, map) in &out.report.per_domain_map {
                println!("mAP[{domain}] = {:.2}%", map * 100.0);
            }
            println!("mPC = {:.2}%", out.report.mpc * 100.0);
        }
        Command::Mmd {
            common,
            domain_a,
            domain_b,
        } => {
            let cfg = load_config(&common)?;
            let out = pipeline::cmd_mmd(&cfg, &domain_a, &domain_b)?;
            println!("wrote {}", out.json_path.display());
            println!("wrote {}", out.csv_path.display());
            println!("mmd2({domain_a}, {domain_b}) = {}", out.value);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
