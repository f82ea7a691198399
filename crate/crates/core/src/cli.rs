//! Command-line front end; every subcommand is a thin wrapper over the library.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checks::gradient_suite;
use crate::companding::{compress_bits, rescale_full_range};
use crate::error::{Error, Result};
use crate::halftone::floyd_steinberg;
use crate::harness::{
    evaluate_dir, expand, layer_study, train, Checkpoint, Corpus, Degradation, DegradationSpec,
    TrainingConfig,
};
use crate::image::{intensity_histogram, load_image, save_image, Image};

#[derive(Debug, Parser)]
#[command(name = "deepcompand", version, about = "Bit-depth companding and inverse halftoning with a learned expander")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Truncate an 8-bit image to L bits.
    Compress {
        #[arg(long)]
        bits: u8,
        input: PathBuf,
        output: PathBuf,
    },
    /// Stretch an L-bit image to the full 0-255 display range.
    Rescale {
        #[arg(long)]
        bits: u8,
        input: PathBuf,
        output: PathBuf,
    },
    /// Floyd-Steinberg error diffusion to a binary image.
    Halftone { input: PathBuf, output: PathBuf },
    /// Restore a companded image with a trained checkpoint.
    Expand {
        #[arg(long)]
        ckpt: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Restore a halftone with a trained checkpoint.
    Inverse {
        #[arg(long)]
        ckpt: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Train a restoration network.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Continue from the checkpoint at --out if it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Score degraded and restored images against the originals.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        spec: String,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train one model per loss tap and compare them.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "conv1_1,conv3_1")]
        taps: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Intensity histogram.
    Hist {
        input: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Pool all channels into one histogram.
        #[arg(long)]
        pooled: bool,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        /// Include the end-to-end network + loss check.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(path: &Path, seed: Option<u64>, iterations: Option<usize>) -> Result<TrainingConfig> {
    let mut cfg = TrainingConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = iterations {
        cfg.iterations = n;
    }
    Ok(cfg)
}

fn restore(ckpt: &Path, input: &Path, output: &Path, halftone: bool) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt)?;
    let is_halftone = ckpt.config.degradation.kind == Degradation::Halftone;
    if is_halftone != halftone {
        return Err(Error::Mismatch(format!(
            "checkpoint was trained for {}; use `{}`",
            ckpt.config.degradation,
            if is_halftone { "inverse" } else { "expand" }
        )));
    }
    save_image(&expand(&ckpt.params, &load_image(input)?)?, output)
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Compress { bits, input, output } => {
            save_image(&compress_bits(&load_image(&input)?, bits, 8)?, &output)?;
        }
        Command::Rescale { bits, input, output } => {
            let img = load_image(&input)?;
            let tagged = Image::with_bit_depth(img.width(), img.height(), img.channels(), bits, img.into_data())?;
            save_image(&rescale_full_range(&tagged, bits, 8)?, &output)?;
        }
        Command::Halftone { input, output } => {
            save_image(&floyd_steinberg(&load_image(&input)?), &output)?;
        }
        Command::Expand { ckpt, input, output } => restore(&ckpt, &input, &output, false)?,
        Command::Inverse { ckpt, input, output } => restore(&ckpt, &input, &output, true)?,
        Command::Train { config, corpus, out, seed, iterations, resume } => {
            let cfg = load_config(&config, seed, iterations)?;
            let start = if resume && out.exists() {
                Checkpoint::load(&out)?
            } else {
                Checkpoint::initial(&cfg)?
            };
            let data = Corpus::load(&corpus, cfg.degradation, cfg.patch_size)?;
            let phi = cfg.phi.load()?;
            let ckpt = train(&cfg, &data, &phi, start, |c| c.save(&out))?;
            ckpt.save(&out)?;
            let first = ckpt.losses.first().copied().unwrap_or(f32::NAN);
            let last = ckpt.losses.last().copied().unwrap_or(f32::NAN);
            println!(
                "trained {} iterations on {} images; loss {first:.6} -> {last:.6}; fingerprint {}",
                ckpt.iteration,
                data.len(),
                ckpt.fingerprint()
            );
        }
        Command::Eval { ckpt, corpus, spec, csv } => {
            let spec: DegradationSpec = spec.parse()?;
            let report = evaluate_dir(&Checkpoint::load(&ckpt)?, &corpus, spec)?;
            print!("{}", report.to_text());
            if let Some(path) = csv {
                write_text(&path, &report.to_csv())?;
            }
        }
        Command::Study { config, train, test, taps, seed } => {
            let cfg = load_config(&config, seed, None)?;
            let train_set = Corpus::load(&train, cfg.degradation, cfg.patch_size)?;
            let test_set = Corpus::load(&test, cfg.degradation, 11)?;
            let taps: Vec<&str> = taps.iter().map(String::as_str).collect();
            print!("{}", layer_study(&cfg, &taps, &train_set, &test_set)?.to_text());
        }
        Command::Hist { input, csv, pooled } => {
            let hist = intensity_histogram(&load_image(&input)?, !pooled);
            for (c, count) in hist.occupied().iter().enumerate() {
                println!("channel {c}: {count} occupied bins");
            }
            println!("samples: {}", hist.total());
            if let Some(path) = csv {
                write_text(&path, &hist.to_csv())?;
            }
        }
        Command::Gradcheck { full, seed } => {
            let reports = gradient_suite(seed, full);
            for r in &reports {
                println!("{r}");
            }
            let passed = reports.iter().all(|r| r.passed);
            println!("{}", if passed { "all gradients agree" } else { "gradient check FAILED" });
            return Ok(passed);
        }
    }
    Ok(true)
}

/// Parses `args` (program name first) and runs the subcommand. Returns 0 on
/// success, 1 on operational failure, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
