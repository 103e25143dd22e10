//! `dpbn`: train and evaluate D-PBN and tied-weight auto-encoder models on
//! MNIST, run the MaxEnt image-reconstruction demo and the numerical
//! self-test.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 numerical failure.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand, ValueEnum};
use dpbn_core::data_io::{
    prepare, read_idx, read_model, read_pgm, select_subset, write_metrics_csv, write_model, write_pgm_grid, Dataset,
    Dither, GrayImage, ImageGrid,
};
use dpbn_core::selftest::{run_selftest, table_csv, Builtin};
use dpbn_core::training::{evaluate, initial_network, train_with_callback};
use dpbn_core::{reconstruct_image, ActivationKind, DataRange, Decoder, Error, Network, SaddleOptions};
use log::{error, info};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "dpbn", version, about = "Deterministic projected belief network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for initialization and shuffling (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print train/test MSE and sampling efficiency of a saved model as one CSV row.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Experiment config naming the data and the decoder.
        #[arg(long)]
        config: PathBuf,
    },
    /// Reconstruct a square PGM image from its low-frequency DCT block.
    Imgrecon {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 48)]
        keep: usize,
        #[arg(long, value_enum, default_value_t = ImageRange::Unit)]
        range: ImageRange,
        /// Output PGM with the original, linear and MaxEnt panels.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check activations against quadrature and the solver on random instances.
    Selftest {
        /// Write the activation tables here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageRange {
    /// Uniform prior on (0, 1).
    Unit,
    /// Exponential prior on (0, ∞).
    Positives,
}

/// A failure with its exit code.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Numeric(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Numeric(e) => e,
        }
    }

    /// Sorts a library error by what went wrong.
    fn from_core(e: Error, context: impl Into<String>) -> Self {
        let numeric = matches!(
            e,
            Error::Diverged { .. }
                | Error::AllSamplesFailed(_)
                | Error::NonFinite(_)
                | Error::Domain { .. }
                | Error::ExponentialDomain { .. }
        );
        let data = matches!(e, Error::Format(_) | Error::Io(_) | Error::OutOfRange { .. } | Error::Dimension { .. });
        let e = anyhow::Error::new(e).context(context.into());
        if numeric {
            Failure::Numeric(e)
        } else if data {
            Failure::Data(e)
        } else {
            Failure::Usage(e)
        }
    }
}

type Outcome = Result<(), Failure>;

fn core<T>(r: dpbn_core::Result<T>, context: &str) -> Result<T, Failure> {
    r.map_err(|e| Failure::from_core(e, context))
}

fn io<T>(r: std::io::Result<T>, context: impl FnOnce() -> String) -> Result<T, Failure> {
    r.map_err(|e| Failure::Data(anyhow::Error::new(e).context(context())))
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(Failure::Usage)
}

/// Training and test splits as the config describes them.
fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), Failure> {
    let d = &cfg.data;
    let kind = cfg.data_kind().map_err(Failure::Usage)?;
    let train = core(read_idx(&d.train_images, &d.train_labels), "reading training data")?;
    let test = core(read_idx(&d.test_images, &d.test_labels), "reading test data")?;
    let dither = Dither::default();
    let train = core(prepare(&train, kind, d.dither_seed, &dither), "preparing training data")?;
    let test = core(prepare(&test, kind, d.dither_seed + 1, &dither), "preparing test data")?;
    let (train, mut test) = core(select_subset(&train, &test, &d.classes, d.per_class_train), "selecting classes")?;
    if let Some(limit) = d.test_limit {
        test.vectors.truncate(limit);
        test.labels.truncate(limit);
    }
    info!("{} training and {} test samples of classes {:?}", train.len(), test.len(), d.classes);
    Ok((train, test))
}

fn reconstruct(net: &Network, decoder: Decoder, x: &[f64], opts: &SaddleOptions) -> dpbn_core::Result<Vec<f64>> {
    let z = net.feature(x)?;
    match decoder {
        Decoder::Dpbn => Ok(net.reconstruct_dpbn(&z, opts)?.x_bar.unwrap_or_else(|| vec![f64::NAN; x.len()])),
        Decoder::Aec => net.decode_aec(&z),
    }
}

/// Two rows of ten: test samples above their reconstructions.
fn write_grid(net: &Network, decoder: Decoder, test: &Dataset, path: &Path) -> dpbn_core::Result<()> {
    let opts = SaddleOptions::default();
    let shown = &test.vectors[..test.len().min(10)];
    let mut images = Vec::new();
    for x in shown {
        images.push(GrayImage::new(28, 28, x.clone())?);
    }
    for x in shown {
        images.push(GrayImage::new(28, 28, reconstruct(net, decoder, x, &opts)?)?);
    }
    let value_range = match test.range {
        DataRange::UnitInterval => (0.0, 1.0),
        _ => {
            let v = shown.iter().flatten();
            let lo = v.clone().copied().fold(f64::INFINITY, f64::min);
            let hi = v.copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    write_pgm_grid(&ImageGrid { images: &images, columns: 10, value_range }, path)
}

fn cmd_train(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Outcome {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output.dir = o;
    }
    let (train, test) = load_data(&cfg)?;
    let opts = SaddleOptions::default();
    let net_cfg = cfg.network().map_err(Failure::Usage)?;
    let decoder = cfg.decoder();
    let net = core(initial_network(&net_cfg, cfg.seed, decoder, &train.vectors, &opts), "initializing")?;
    let report = core(
        train_with_callback(net, &train.vectors, &test.vectors, &cfg.hyperparams(), decoder, &opts, |_| {}),
        "training",
    )?;

    let dir = &cfg.output.dir;
    io(fs::create_dir_all(dir), || format!("creating {}", dir.display()))?;
    core(write_model(&report.model, dir.join("model.dpbn")), "writing model")?;
    core(write_metrics_csv(&report, dir.join("metrics.csv")), "writing metrics")?;
    core(write_grid(&report.model, decoder, &test, &dir.join("reconstructions.pgm")), "writing image grid")?;
    if let Some(last) = report.last() {
        info!(
            "{} final: train mse {:.6}, test mse {:.6}, efficiency {:.3}/{:.3}; artifacts in {}",
            decoder.name(),
            last.train.mse,
            last.test.mse,
            last.train.sampling_efficiency,
            last.test.sampling_efficiency,
            dir.display()
        );
    }
    Ok(())
}

fn cmd_eval(model: &Path, config: &Path) -> Outcome {
    let cfg = load_config(config)?;
    let net = core(read_model(model), &format!("reading model {}", model.display()))?;
    let (train, test) = load_data(&cfg)?;
    let opts = SaddleOptions::default();
    let decoder = cfg.decoder();
    let tr = core(evaluate(&net, &train.vectors, decoder, &opts), "evaluating training data")?;
    let te = core(evaluate(&net, &test.vectors, decoder, &opts), "evaluating test data")?;
    println!("{},{},{},{}", tr.mse, tr.sampling_efficiency, te.mse, te.sampling_efficiency);
    Ok(())
}

fn cmd_imgrecon(image: &Path, keep: usize, range: ImageRange, out: &Path) -> Outcome {
    let img = core(read_pgm(image), &format!("reading {}", image.display()))?;
    if img.height != img.width {
        return Err(Failure::Data(anyhow!("image must be square, got {}x{}", img.height, img.width)));
    }
    if keep == 0 || keep > img.height {
        return Err(Failure::Usage(anyhow!("--keep must be in 1..={}, got {keep}", img.height)));
    }
    let kind = match range {
        ImageRange::Unit => ActivationKind::Ted,
        ImageRange::Positives => ActivationKind::Exponential,
    };
    let r = core(reconstruct_image(&img, keep, kind, &SaddleOptions::default()), "reconstructing")?;
    if r.solve.failed {
        return Err(Failure::Numeric(anyhow!(
            "MaxEnt solve failed after {} iterations (residual {:.3e})",
            r.solve.iterations,
            r.solve.residual_inf
        )));
    }
    let panels = [r.original, r.linear, r.maxent];
    core(write_pgm_grid(&ImageGrid { images: &panels, columns: 3, value_range: (0.0, 1.0) }, out), "writing output")?;
    info!(
        "{} Newton steps, constraint residual {:.2e}; wrote {}",
        r.solve.iterations,
        r.solve.residual_inf,
        out.display()
    );
    Ok(())
}

fn cmd_selftest(out: Option<PathBuf>) -> Outcome {
    let report = run_selftest(&Builtin);
    let mut csv = String::from("kind,a,lambda,lambda_prime\n");
    for (kind, rows) in &report.tables {
        csv.push_str(&table_csv(Some(*kind), rows));
    }
    match out {
        Some(path) => io(fs::write(&path, csv), || format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    for f in &report.failures {
        error!("{f}");
    }
    if report.passed() {
        info!("selftest: all {} checks passed", report.checks_run);
        Ok(())
    } else {
        Err(Failure::Numeric(anyhow!("{} of {} checks failed", report.failures.len(), report.checks_run)))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Train { config, out, seed } => cmd_train(&config, out, seed),
        Command::Eval { model, config } => cmd_eval(&model, &config),
        Command::Imgrecon { image, keep, range, out } => cmd_imgrecon(&image, keep, range, &out),
        Command::Selftest { out } => cmd_selftest(out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
