//! Command-line front end: data generation, label preparation,
//! pre-training, alignment evaluation and loss-curve export.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use mutdet_core::detector::{checkpoint, Detector, FrozenBackbone};
use mutdet_core::harness::{self, RunConfig, RunOutputs};
use mutdet_core::losses::{CalibrationMode, LossConfig};
use mutdet_core::prep::{read_label_store, write_label_store, PrepConfig};
use mutdet_core::Error;

#[derive(Parser)]
#[command(name = "mutdet", version, about = "Detection pre-training with mutual enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Calibration {
    None,
    EncoderDistill,
    DecoderDistill,
    Siamese,
}

impl From<Calibration> for CalibrationMode {
    fn from(c: Calibration) -> Self {
        match c {
            Calibration::None => CalibrationMode::None,
            Calibration::EncoderDistill => CalibrationMode::EncoderDistill,
            Calibration::DecoderDistill => CalibrationMode::DecoderDistill,
            Calibration::Siamese => CalibrationMode::Siamese,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset of PNG images and instance masks.
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        /// Maximum objects per image.
        #[arg(long)]
        objects: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the pseudo-label store from masks.
    PrepareLabels {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clusters: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Must match the detector's `backbone_seed`.
        #[arg(long, default_value_t = 1)]
        backbone_seed: u64,
        #[arg(long, default_value_t = 100)]
        kmeans_iters: usize,
    },
    /// Pre-train a detector.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        calibration: Option<Calibration>,
        #[arg(long, value_enum)]
        enhance: Option<Switch>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Cosine similarity between matched predicted and object embeddings.
    EvalAlignment {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Optional JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a metrics file to a loss-curve CSV.
    PlotLosses {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => 2,
        Error::NumericalFailure { .. } => 4,
        _ => 3,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            RunConfig::parse_text(&text)
        }
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData {
            seed,
            count,
            objects,
            size,
            out,
        } => {
            let ids = harness::generate_dataset(&out, seed, count, objects, size)?;
            println!("wrote {} images to {}", ids.len(), out.display());
        }
        Command::PrepareLabels {
            data,
            clusters,
            dim,
            out,
            seed,
            backbone_seed,
            kmeans_iters,
        } => {
            let dataset = harness::load_dataset(&data)?;
            let size = dataset[0].image.height();
            let backbone = FrozenBackbone::new(size, dim, backbone_seed)?;
            let cfg = PrepConfig {
                emb_dim: dim,
                k_cls: clusters,
                kmeans_iters,
                seed,
            };
            let prepared = harness::prepare_dataset_labels(&dataset, &backbone, cfg)?;
            write_label_store(&out, &prepared.sets)?;
            let objects: usize = prepared.sets.iter().map(|s| s.len()).sum();
            println!(
                "wrote {objects} pseudo-labels for {} images to {} ({} dropped, k-means inertia {:.6})",
                prepared.sets.len(),
                out.display(),
                prepared.dropped,
                prepared.kmeans.inertia
            );
        }
        Command::Pretrain {
            data,
            labels,
            config,
            calibration,
            enhance,
            out,
            metrics,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(c) = calibration {
                cfg.detector.calibration_mode = c.into();
            }
            if let Some(e) = enhance {
                cfg.detector.enhance = matches!(e, Switch::On);
            }
            cfg.validate()?;
            let dataset = harness::load_dataset(&data)?;
            let sets = read_label_store(&labels)?;
            let mut det = Detector::new(cfg.detector.clone())?;
            let items = harness::training_items(&det, &dataset, &sets)?;
            info!(
                "pre-training on {} images, {} trainable scalars",
                items.len(),
                det.store().num_scalars()
            );
            let outputs = RunOutputs {
                metrics: Some(metrics.clone()),
                checkpoint: Some(out.clone()),
            };
            let summary = harness::pretrain(&mut det, &items, &cfg.train, &outputs)?;
            let last = summary.epoch_means.last().map_or(f64::NAN, |b| b.total);
            println!(
                "{} iterations, final epoch mean loss {last:.6}; checkpoint {}, metrics {}",
                summary.iterations,
                out.display(),
                metrics.display()
            );
        }
        Command::EvalAlignment {
            ckpt,
            data,
            labels,
            out,
        } => {
            let det = checkpoint::load(&ckpt)?;
            let dataset = harness::load_dataset(&data)?;
            let sets = read_label_store(&labels)?;
            let items = harness::training_items(&det, &dataset, &sets)?;
            let report = harness::eval_alignment(&det, &items, &LossConfig::default())?;
            for img in &report.images {
                match img.similarity {
                    Some(s) => println!("{}\t{s:.6}", img.image_id),
                    None => println!("{}\t-", img.image_id),
                }
            }
            println!("mean\t{:.6}", report.mean);
            if let Some(p) = out {
                let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
                fs::write(&p, text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            }
        }
        Command::PlotLosses { metrics, out } => {
            let rows = harness::emit_loss_curves(&metrics, &out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
