//! Experiment runner for the congruent image/report generation pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 precondition error (e.g. cycle training before pretraining).

mod commands;
mod config;
mod manifest;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Profile};
use radcycle_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "radcycle", version, about = "Congruent chest-x-ray image/report generation: training, evaluation, and explanation protocols")]
struct Cli {
    /// TOML experiment configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Profile override (toy or full).
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shape dataset in the collection layout.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// Number of studies (overrides data.n).
        #[arg(long)]
        n: Option<usize>,
        /// Generator seed (overrides seeds.data).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse a collection, build the vocabulary, and fix the split.
    Ingest {
        /// Dataset root (images/ + reports/).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only frontal studies (overrides data.frontal_only).
        #[arg(long)]
        frontal_only: bool,
        /// Train fraction (overrides data.ratio).
        #[arg(long)]
        ratio: Option<f64>,
        /// Split seed (overrides seeds.split).
        #[arg(long)]
        seed: Option<u64>,
        /// Vocabulary frequency cutoff (overrides data.min_freq).
        #[arg(long)]
        min_freq: Option<usize>,
    },
    /// Train the image-to-report generator.
    TrainReport {
        /// Ingested work directory.
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one stage of the report-to-image generator.
    TrainImage {
        #[arg(long)]
        work: PathBuf,
        /// 1 (coarse) or 2 (refinement; freezes stage 1).
        #[arg(long)]
        stage: usize,
        /// Stage-1 checkpoint, required when --stage 2.
        #[arg(long)]
        stage1_ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Joint cycle-consistency training of both pretrained generators.
    TrainCycle {
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        report_ckpt: PathBuf,
        #[arg(long)]
        image_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda_image: Option<f64>,
    },
    /// Report quality (BLEU/ROUGE) and image agreement (top-k/P@k/R@k/KL).
    Evaluate {
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        report_ckpt: PathBuf,
        #[arg(long)]
        image_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trust protocol: label agreement across the prototypical round trip.
    Trust {
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        report_ckpt: PathBuf,
        #[arg(long)]
        image_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Faithfulness protocol: trained vs weight-randomized report model.
    Faithfulness {
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        report_ckpt: PathBuf,
        #[arg(long)]
        image_ckpt: PathBuf,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grad-CAM overlays for the top-3 labels of real/generated pairs.
    Gradcam {
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        report_ckpt: PathBuf,
        #[arg(long)]
        image_ckpt: PathBuf,
        /// Number of held-out studies to render.
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(cli: &Cli) -> radcycle_core::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(profile) = cli.profile {
        config.profile = profile;
    }
    // subcommand flag overrides
    match &cli.command {
        Command::SynthData { n, seed, .. } => {
            if let Some(n) = n {
                config.data.n = *n;
            }
            if let Some(seed) = seed {
                config.seeds.data = *seed;
            }
        }
        Command::Ingest {
            frontal_only,
            ratio,
            seed,
            min_freq,
            ..
        } => {
            if *frontal_only {
                config.data.frontal_only = true;
            }
            if let Some(ratio) = ratio {
                config.data.ratio = *ratio;
            }
            if let Some(seed) = seed {
                config.seeds.split = *seed;
            }
            if let Some(min_freq) = min_freq {
                config.data.min_freq = *min_freq;
            }
        }
        Command::TrainReport { epochs, seed, .. } => {
            if let Some(epochs) = epochs {
                config.train.report_epochs = *epochs;
            }
            if let Some(seed) = seed {
                config.seeds.report = *seed;
            }
        }
        Command::TrainImage { stage, epochs, seed, .. } => {
            if let Some(epochs) = epochs {
                match stage {
                    1 => config.train.stage1_epochs = *epochs,
                    _ => config.train.stage2_epochs = *epochs,
                }
            }
            if let Some(seed) = seed {
                config.seeds.image = *seed;
            }
        }
        Command::TrainCycle {
            epochs,
            seed,
            lambda_image,
            ..
        } => {
            if let Some(epochs) = epochs {
                config.train.cycle_epochs = *epochs;
            }
            if let Some(seed) = seed {
                config.seeds.cycle = *seed;
            }
            if let Some(lambda) = lambda_image {
                config.train.lambda_cycle_image = *lambda;
            }
        }
        Command::Faithfulness { seed, .. } => {
            if let Some(seed) = seed {
                config.seeds.protocol = *seed;
            }
        }
        _ => {}
    }
    Ok(config)
}

fn run(cli: &Cli) -> radcycle_core::Result<()> {
    let config = resolve_config(cli)?;
    match &cli.command {
        Command::SynthData { out, .. } => commands::synth_data(&config, out),
        Command::Ingest { data, out, .. } => commands::ingest(&config, data, out),
        Command::TrainReport { work, out, .. } => commands::train_report(&config, work, out),
        Command::TrainImage {
            work,
            stage,
            stage1_ckpt,
            out,
            ..
        } => commands::train_image(&config, work, *stage, stage1_ckpt.as_deref(), out),
        Command::TrainCycle {
            work,
            report_ckpt,
            image_ckpt,
            out,
            ..
        } => commands::train_cycle_cmd(&config, work, report_ckpt, image_ckpt, out),
        Command::Evaluate {
            work,
            report_ckpt,
            image_ckpt,
            out,
        } => commands::evaluate(&config, work, report_ckpt, image_ckpt, out),
        Command::Trust {
            work,
            report_ckpt,
            image_ckpt,
            out,
        } => commands::trust(&config, work, report_ckpt, image_ckpt, out),
        Command::Faithfulness {
            work,
            report_ckpt,
            image_ckpt,
            k,
            out,
            ..
        } => commands::faithfulness(&config, work, report_ckpt, image_ckpt, *k, out),
        Command::Gradcam {
            work,
            report_ckpt,
            image_ckpt,
            count,
            out,
        } => commands::gradcam_cmd(&config, work, report_ckpt, image_ckpt, *count, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                CoreError::Config(_) => 2,
                CoreError::Precondition(_) => 4,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}
