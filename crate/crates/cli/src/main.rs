use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use segmicro::gradcheck::GradcheckOptions;
use segmicro::{Arch, ModelConfig, OptimizerKind};
use segmicro_cli::commands::{self, default_gradcheck_models};
use segmicro_cli::{CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "segmicro", version, about = "Train and run small segmentation networks")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for `predict`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "SEGMICRO_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Fcn,
    Unet,
}

#[derive(Subcommand)]
enum Command {
    /// Expand original image/mask pairs into a generated training set.
    GenData {
        /// Manifest of the originals (overrides data.originals).
        #[arg(long)]
        originals: Option<PathBuf>,
        /// Write this many synthetic blob samples instead.
        #[arg(long, conflicts_with = "originals")]
        synthetic: Option<usize>,
        /// Side length of synthetic samples.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Write random augmentations of one image/mask pair.
    Augment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Train the configured model and write a run directory.
    Train,
    /// Score a checkpoint on a manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Predict a label map for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Count trainable parameters of a model.
    Params {
        #[arg(long, value_enum)]
        arch: Option<ArchArg>,
        /// Comma-separated filter counts.
        #[arg(long, value_delimiter = ',')]
        filters: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        kernel: usize,
        #[arg(long, default_value_t = 2)]
        deconv: usize,
        #[arg(long, default_value_t = 1)]
        out_kernel: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
    },
    /// Compare analytic gradients with finite differences on small networks.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Check at most this many coordinates per layer.
        #[arg(long)]
        max_coords: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> CliResult<Option<ExperimentConfig>> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(Some(config))
}

fn require_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    load_config(cli)?.ok_or_else(|| CliError::Config("this command needs --config".into()))
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure {threads} threads: {e}")))?;
    }
    match &cli.command {
        Command::GenData { originals, synthetic, size } => {
            let out = out_dir(cli, "generated");
            if let Some(count) = synthetic {
                let seed = cli.seed.or(load_config(cli)?.map(|c| c.seed)).unwrap_or(0);
                let manifest = commands::cmd_gen_synthetic(*count, (*size, *size), seed, &out)?;
                println!("wrote {count} synthetic samples: {}", manifest.display());
            } else {
                let config = require_config(cli)?;
                let (manifest, count) = commands::cmd_gen_data(&config, originals.as_deref(), &out)?;
                println!("wrote {count} samples: {}", manifest.display());
            }
        }
        Command::Augment { image, mask, count } => {
            let config = match load_config(cli)? {
                Some(c) => c,
                None => {
                    let mut c = ExperimentConfig::new(ModelConfig::unet(&[8, 16, 32, 64, 128], 3, 2, 1, 1, 3), OptimizerKind::Adam);
                    c.seed = cli.seed.unwrap_or(0);
                    c
                }
            };
            let written = commands::cmd_augment(&config, image, mask, *count, &out_dir(cli, "augmented"))?;
            println!("wrote {} pairs to {}", written.len(), out_dir(cli, "augmented").display());
        }
        Command::Train => {
            let config = require_config(cli)?;
            let mut stderr = std::io::stderr().lock();
            let run = commands::cmd_train(&config, &out_dir(cli, "runs"), &mut stderr)?;
            let _ = stderr.flush();
            println!("run directory: {}", run.dir.display());
            println!(
                "epochs {}  best {:?}  stop {:?}",
                run.summary.epochs, run.summary.best_epoch, run.summary.stop_reason
            );
            print!("{}", run.metrics.to_text());
        }
        Command::Evaluate { checkpoint, manifest } => {
            let report = commands::cmd_evaluate(checkpoint, manifest)?;
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
                let path = out.join(commands::METRICS_FILE);
                std::fs::write(&path, report.to_json() + "\n").map_err(|e| CliError::io(&path, e))?;
            }
            print!("{}", report.to_text());
        }
        Command::Predict { checkpoint, image } => {
            let out = cli.out.clone().unwrap_or_else(|| default_prediction_path(image));
            let summary = commands::cmd_predict(checkpoint, image, &out)?;
            println!("wrote {} ({}x{})", out.display(), summary.height, summary.width);
            for (class, count) in &summary.class_pixels {
                println!("class {class}: {count} pixels");
            }
        }
        Command::Params {
            arch,
            filters,
            kernel,
            deconv,
            out_kernel,
            channels,
            classes,
        } => {
            let model = match (arch, load_config(cli)?) {
                (Some(ArchArg::Fcn), _) => ModelConfig::fcn(filters, *kernel, *out_kernel, *channels, *classes),
                (Some(ArchArg::Unet), _) => ModelConfig::unet(filters, *kernel, *deconv, *out_kernel, *channels, *classes),
                (None, Some(config)) => config.model,
                (None, None) => return Err(CliError::Config("params needs --arch or --config".into())),
            };
            let count = commands::cmd_params(&model)?;
            let name = match model.arch {
                Arch::Fcn => "fcn",
                Arch::Unet => "unet",
            };
            println!("{name} {:?}: {count} parameters", model.filters);
        }
        Command::Gradcheck { tolerance, max_coords } => {
            let options = GradcheckOptions {
                tolerance: *tolerance,
                max_coords: *max_coords,
                seed: cli.seed.unwrap_or(0),
                ..GradcheckOptions::default()
            };
            let mut failed = Vec::new();
            for (name, model, side) in default_gradcheck_models() {
                let report = commands::gradcheck_model(&model, side, options.seed, &options)?;
                println!("{name} @{side}x{side}");
                print!("{}", report.to_text());
                if !report.passed() {
                    failed.push(name);
                }
            }
            if !failed.is_empty() {
                return Err(CliError::CheckFailed(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn default_prediction_path(image: &Path) -> PathBuf {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    image.with_file_name(format!("{stem}_pred.png"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
