//! Command-line front end. [`run_cli`] parses arguments, dispatches to the
//! core library and maps failures to exit codes: 1 for usage errors, 2 for
//! runtime errors.

use std::io::Write;
use std::path::{Path, PathBuf};

use adaconv::data::{build_dataset, generate_corpus, load_triples, CorpusSpec, Dataset, PipelineParams};
use adaconv::frame::Frame;
use adaconv::infer::{interpolate_recursive, InferMode};
use adaconv::inspect::dump_kernel_heatmaps;
use adaconv::metrics::{interpolation_error, psnr};
use adaconv::net::{KernelNet, NetworkConfig};
use adaconv::train::{train, TrainConfig};
use adaconv::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "adaconv", version, about = "Frame interpolation with per-pixel adaptive convolution kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scale {
    Desk,
    Paper,
}

impl Scale {
    fn network(self) -> NetworkConfig {
        match self {
            Scale::Desk => NetworkConfig::desk(),
            Scale::Paper => NetworkConfig::paper(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render synthetic three-frame clips with random global motion.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        clips: usize,
        /// Largest first-to-last-frame displacement, in pixels.
        #[arg(long, default_value_t = 8.0)]
        max_shift: f64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        /// Chance that a clip carries a moving foreground rectangle.
        #[arg(long, default_value_t = 0.0)]
        foreground: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a training set of triple-patch samples from frame directories.
    Extract {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_weighted: usize,
        #[arg(long, default_value_t = 1000)]
        n_final: usize,
        /// Candidate centres drawn per triple-frame group.
        #[arg(long, default_value_t = 1)]
        per_group: usize,
        /// Side of the stored patches.
        #[arg(long, default_value_t = 29)]
        sample_side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a kernel network with AdaMax.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Scale::Desk)]
        config: Scale,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// AdaMax step size.
        #[arg(long, default_value_t = 0.001)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; 1 runs strictly sequentially.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 0.1)]
        validation_fraction: f64,
        /// Write the model every N steps as well as at the end.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Synthesise the frame(s) between two input frames.
    Interpolate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        frame1: PathBuf,
        #[arg(long)]
        frame2: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Recursion depth D: writes 2^D - 1 frames named `<out>_t<fraction>`.
        #[arg(long)]
        recursive: Option<usize>,
        /// Estimate kernels one pixel at a time instead of shift-and-stitch.
        #[arg(long)]
        pixelwise: bool,
    },
    /// Print interpolation error (RMS, 0-255 scale) and PSNR.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Dump kernel heatmaps for selected pixels.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        frame1: PathBuf,
        #[arg(long)]
        frame2: PathBuf,
        /// `x,y[;x,y...]`
        #[arg(long)]
        pixels: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `x,y;x,y`.
pub fn parse_pixels(spec: &str) -> Result<Vec<(usize, usize)>> {
    spec.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let bad = || Error::Argument(format!("pixel {pair:?} is not of the form x,y"));
            let (x, y) = pair.split_once(',').ok_or_else(bad)?;
            Ok((x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

/// Output path for the frame at `t = index / 2^depth`: `c.png` becomes
/// `c_t25.png` for `t = 0.25`, `c_t125.png` for `t = 0.125`.
pub fn recursive_output_path(out: &Path, index: usize, depth: usize) -> PathBuf {
    let denom = 1u64 << depth;
    // index / 2^depth has exactly `depth` decimal digits.
    let scaled = index as u64 * 5u64.pow(depth as u32);
    let mut digits = format!("{scaled:0width$}", width = depth);
    while digits.len() > 2 && digits.ends_with('0') {
        digits.pop();
    }
    while digits.len() < 2 {
        digits.push('0');
    }
    debug_assert!(index as u64 <= denom);
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_t{digits}.{}", ext.to_string_lossy()),
        None => format!("{stem}_t{digits}"),
    };
    out.with_file_name(name)
}

fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(f)
}

fn execute(cli: Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    match cli.command {
        Command::SynthData {
            out: dir,
            clips,
            max_shift,
            width,
            height,
            foreground,
            seed,
        } => {
            let spec = CorpusSpec {
                clips,
                width,
                height,
                max_shift,
                foreground_probability: foreground,
            };
            for g in generate_corpus(&spec, seed)? {
                let clip = dir.join(&g.source);
                std::fs::create_dir_all(&clip)?;
                for (i, f) in [&g.f1, &g.f2, &g.f3].into_iter().enumerate() {
                    f.save_png(clip.join(format!("frame_{i}.png")))?;
                }
            }
            writeln!(out, "wrote {clips} clips to {}", dir.display())?;
        }
        Command::Extract {
            frames,
            out: dir,
            n_weighted,
            n_final,
            per_group,
            sample_side,
            seed,
        } => {
            let triples = load_triples(&frames)?;
            let params = PipelineParams {
                sample_side,
                candidates_per_group: per_group,
                n_weighted,
                n_final,
                seed,
                ..PipelineParams::desk()
            };
            let manifest = build_dataset(&triples, &params, &dir)?;
            writeln!(out, "{} triples, {} samples written to {}", triples.len(), manifest.len(), dir.display())?;
        }
        Command::Train {
            data,
            out: model,
            config,
            steps,
            batch,
            lambda,
            learning_rate,
            seed,
            threads,
            validation_fraction,
            checkpoint_every,
        } => {
            let dataset = Dataset::load(&data)?;
            let mut net = KernelNet::<f32>::init(config.network(), seed)?;
            let cfg = TrainConfig {
                batch_size: batch,
                steps,
                seed,
                lambda,
                learning_rate,
                validation_fraction,
                checkpoint_every,
                checkpoint_path: Some(model),
            };
            let mut log_error = None;
            let report = with_threads(threads, || {
                train(&mut net, &dataset.samples, &cfg, |l| {
                    if let Err(e) = writeln!(out, "{l}") {
                        log_error.get_or_insert(e);
                    }
                })
            })?;
            if let Some(e) = log_error {
                return Err(e.into());
            }
            if let Some(v) = report.validation {
                writeln!(out, "validation loss {} color {} grad {}", v.total, v.color, v.gradient)?;
            }
        }
        Command::Interpolate {
            model,
            frame1,
            frame2,
            out: target,
            recursive,
            pixelwise,
        } => {
            let net = KernelNet::<f32>::load(&model)?;
            let (a, b) = (Frame::load_png(&frame1)?, Frame::load_png(&frame2)?);
            let mode = if pixelwise { InferMode::Pixelwise } else { InferMode::ShiftStitch };
            match recursive {
                None => {
                    let frames = interpolate_recursive(&net, &a, &b, 1, mode)?;
                    frames[0].save_png(&target)?;
                }
                Some(depth) => {
                    if !(1..=16).contains(&depth) {
                        return Err(Error::Argument(format!("recursion depth {depth} outside [1, 16]")));
                    }
                    for (i, f) in interpolate_recursive(&net, &a, &b, depth, mode)?.iter().enumerate() {
                        f.save_png(recursive_output_path(&target, i + 1, depth))?;
                    }
                }
            }
        }
        Command::Evaluate { pred, truth } => {
            let (p, t) = (Frame::load_png(&pred)?, Frame::load_png(&truth)?);
            writeln!(out, "ie {} psnr {}", interpolation_error(&p, &t)?, psnr(&p, &t)?)?;
        }
        Command::Inspect {
            model,
            frame1,
            frame2,
            pixels,
            out: dir,
        } => {
            let net = KernelNet::<f32>::load(&model)?;
            let (a, b) = (Frame::load_png(&frame1)?, Frame::load_png(&frame2)?);
            let files = dump_kernel_heatmaps(&net, &a, &b, &parse_pixels(&pixels)?, &dir)?;
            writeln!(out, "wrote {} files to {}", files.len(), dir.display())?;
        }
    }
    Ok(())
}

/// Runs one command. `args` includes the program name.
pub fn run_cli<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let rendered = e.render().to_string();
            if informational {
                let _ = write!(out, "{rendered}");
                return 0;
            }
            let _ = write!(err, "{rendered}");
            return EXIT_USAGE;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}
