use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use smoe::encoder::EncoderNetwork;
use smoe::estimator::{estimate_image, BlockEstimator, EstimatorOptions, EstimatorRegistry};
use smoe::modelfile::ModelFile;
use smoe::optim::OptimizerConfig;
use smoe::pipeline::{add_speckle, format_psnr, ingest, psnr, save_png, ssim, NoiseSpec};
use smoe::sliding::{sweep, SlidingConfig};
use smoe::{ImageGrid, KernelKind};

#[derive(Parser)]
#[command(name = "smoe", version, about = "Steered Mixture-of-Experts image modelling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every block of an image with gradient descent.
    Fit {
        input: PathBuf,
        #[arg(short = 'n', long, default_value_t = 16)]
        block_size: usize,
        #[arg(long, default_value = "steered")]
        kind: KernelKind,
        #[command(flatten)]
        gd: GdArgs,
        #[command(flatten)]
        out: Outputs,
    },
    /// Predict block models with a trained encoder.
    Predict {
        input: PathBuf,
        #[arg(short, long)]
        weights: PathBuf,
        #[command(flatten)]
        out: Outputs,
    },
    /// Overlapping-window reconstruction averaged over all hypotheses.
    Ssmoe {
        input: PathBuf,
        #[arg(short = 'n', long, default_value_t = 8)]
        window: usize,
        #[arg(short, long, default_value_t = 8)]
        step: usize,
        /// Estimator name: gd, gd-steered, gd-radial or encoder.
        #[arg(short, long, default_value = "gd")]
        estimator: String,
        /// Weight file for the encoder estimator.
        #[arg(short, long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        gd: GdArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Image to score against instead of the input.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Render a model file at any resolution.
    Resample {
        model: PathBuf,
        /// Defaults to the native width.
        #[arg(long)]
        width: Option<usize>,
        /// Defaults to the native height.
        #[arg(long)]
        height: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Add seeded speckle noise.
    Noise {
        input: PathBuf,
        #[arg(long, default_value_t = NoiseSpec::DEFAULT_VARIANCE)]
        variance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// PSNR and SSIM between two images.
    Metrics {
        reference: PathBuf,
        test: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GdArgs {
    #[arg(long, default_value_t = 5000)]
    iterations: usize,
    #[arg(long, default_value_t = 5e-3)]
    learning_rate: f64,
    #[arg(short, long, default_value_t = smoe::model::DEFAULT_KERNELS)]
    kernels: usize,
}

impl GdArgs {
    fn options(&self) -> EstimatorOptions {
        EstimatorOptions {
            kernels: self.kernels,
            optimizer: OptimizerConfig {
                iterations: self.iterations,
                learning_rate: self.learning_rate,
                ..OptimizerConfig::default()
            },
            ..EstimatorOptions::default()
        }
    }
}

#[derive(Args)]
struct Outputs {
    /// Model file to write.
    #[arg(short, long)]
    model: Option<PathBuf>,
    /// Reconstruction PNG to write.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the metrics report here.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Image to score against instead of the input.
    #[arg(long)]
    reference: Option<PathBuf>,
}

struct Report(String);

impl Report {
    fn new() -> Self {
        Report(String::new())
    }

    fn line(&mut self, key: &str, value: impl std::fmt::Display) {
        writeln!(self.0, "{key}: {value}").unwrap();
    }

    fn quality(&mut self, reference: &ImageGrid, test: &ImageGrid) -> Result<()> {
        self.line("psnr", format_psnr(psnr(reference, test)?));
        self.line("ssim", format!("{:.6}", ssim(reference, test)?));
        Ok(())
    }

    fn timing(&mut self, encode: f64, decode: f64) {
        self.line("encode_seconds", format!("{encode:.3}"));
        self.line("decode_seconds", format!("{decode:.3}"));
    }

    fn emit(&self, path: Option<&Path>) -> Result<()> {
        print!("{}", self.0);
        if let Some(path) = path {
            std::fs::write(path, &self.0)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn reference_image(input: &ImageGrid, reference: Option<&Path>) -> Result<ImageGrid> {
    let Some(path) = reference else {
        return Ok(input.clone());
    };
    let image = ingest(path)?;
    if !image.same_dims(input) {
        bail!(
            "reference {} is {}x{}, input is {}x{}",
            path.display(),
            image.width(),
            image.height(),
            input.width(),
            input.height()
        );
    }
    Ok(image)
}

fn run_blocks(input: &Path, estimator: &dyn BlockEstimator, block_size: usize, out: &Outputs) -> Result<()> {
    let image = ingest(input)?;
    let reference = reference_image(&image, out.reference.as_deref())?;
    let est = estimate_image(estimator, &image, block_size)?;
    if let Some(path) = &out.model {
        ModelFile::from_partition(est.models, &est.partition)?.write(path)?;
    }
    if let Some(path) = &out.output {
        save_png(&est.reconstruction, path)?;
    }
    let mut report = Report::new();
    report.line("estimator", estimator.name());
    report.line("block_size", block_size);
    report.line("blocks", est.partition.block_count());
    report.line("width", est.reconstruction.width());
    report.line("height", est.reconstruction.height());
    report.quality(&est.partition.crop(&reference)?, &est.reconstruction)?;
    report.timing(est.encode_seconds, est.decode_seconds);
    report.emit(out.metrics.as_deref())
}

fn run(cli: Cli) -> Result<()> {
    let registry = EstimatorRegistry::with_builtins();
    match cli.command {
        Command::Fit {
            input,
            block_size,
            kind,
            gd,
            out,
        } => {
            let name = format!("gd-{kind}");
            let estimator = registry.create(&name, &gd.options())?;
            run_blocks(&input, estimator.as_ref(), block_size, &out)
        }
        Command::Predict {
            input,
            weights,
            out,
        } => {
            let network = Arc::new(EncoderNetwork::load(&weights)?);
            let block_size = network.block_size();
            let options = EstimatorOptions {
                network: Some(network),
                ..EstimatorOptions::default()
            };
            let estimator = registry.create("encoder", &options)?;
            run_blocks(&input, estimator.as_ref(), block_size, &out)
        }
        Command::Ssmoe {
            input,
            window,
            step,
            estimator,
            weights,
            gd,
            output,
            metrics,
            reference,
        } => {
            let image = ingest(&input)?;
            let reference = reference_image(&image, reference.as_deref())?;
            let options = EstimatorOptions {
                weights,
                ..gd.options()
            };
            let est = registry.create(&estimator, &options)?;
            let config = SlidingConfig::new(window, step);
            let out = sweep(&image, config, est.as_ref())?;
            if let Some(path) = &output {
                save_png(&out.image, path)?;
            }
            let layout = &out.layout;
            let covered =
                reference.crop(layout.origin.0, layout.origin.1, layout.width, layout.height)?;
            let mut report = Report::new();
            report.line("estimator", est.name());
            report.line("window", window);
            report.line("step", step);
            report.line("windows", layout.window_count());
            report.line("width", layout.width);
            report.line("height", layout.height);
            report.quality(&covered, &out.image)?;
            report.timing(out.encode_seconds, out.decode_seconds);
            report.emit(metrics.as_deref())
        }
        Command::Resample {
            model,
            width,
            height,
            output,
        } => {
            let file = ModelFile::read(&model)?;
            let width = width.unwrap_or_else(|| file.native_width());
            let height = height.unwrap_or_else(|| file.native_height());
            let start = Instant::now();
            let image = file.resample(width, height)?;
            let decode = start.elapsed().as_secs_f64();
            save_png(&image, &output)?;
            let mut report = Report::new();
            report.line("width", width);
            report.line("height", height);
            report.line("decode_seconds", format!("{decode:.3}"));
            report.emit(None)
        }
        Command::Noise {
            input,
            variance,
            seed,
            output,
        } => {
            let image = ingest(&input)?;
            let noisy = add_speckle(&image, &NoiseSpec::new(variance, seed))?;
            save_png(&noisy, &output)?;
            let mut report = Report::new();
            report.line("variance", variance);
            report.line("seed", seed);
            report.quality(&image, &noisy)?;
            report.emit(None)
        }
        Command::Metrics {
            reference,
            test,
            output,
        } => {
            let a = ingest(&reference)?;
            let b = ingest(&test)?;
            let mut report = Report::new();
            report.quality(&a, &b)?;
            report.emit(output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("smoe: {e:#}");
            ExitCode::FAILURE
        }
    }
}
