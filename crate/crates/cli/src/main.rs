//! `trajloom`: synthetic scenes, format conversion, training runs, sampling,
//! metrics, camera captions, gradient checks and plots.

mod commands;
mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trajloom_core::config::RunConfig;

use run::{CliResult, Run, DEFAULT_OUT, OUT_ENV};

#[derive(Parser, Debug)]
#[command(name = "trajloom", version, about = "Dense-trajectory motion toolkit")]
struct Cli {
    /// Output root; defaults to $TRAJLOOM_OUT, then the config's output_dir, then ./trajloom-out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run configuration (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene as a TLF file.
    Synth(SynthArgs),
    /// Expand stride-grid tracks to a dense per-pixel TLF file.
    Rasterize {
        input: PathBuf,
        output: Option<PathBuf>,
    },
    /// Convert absolute tracks to grid-anchor offsets, or back with --invert.
    Offsets {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        invert: bool,
        /// Absolute convention for --invert; defaults to the one the offsets came from.
        #[arg(long, value_enum)]
        to: Option<AbsConvention>,
    },
    /// Share of coordinate variance explained by grid location, absolute vs offsets.
    AnalyzeVariance(VarianceArgs),
    /// Train the trajectory autoencoder on the desk corpus.
    TrainVae,
    /// Train the latent velocity field and visibility head.
    TrainFlow {
        /// Autoencoder checkpoint; defaults to <out>/vae.trjp.
        #[arg(long)]
        vae: Option<PathBuf>,
    },
    /// On-policy K-step fine-tuning of a trained pipeline.
    Finetune {
        /// Pipeline checkpoint; defaults to <out>/pipeline.trjp.
        #[arg(long)]
        pipeline: Option<PathBuf>,
    },
    /// Forecast future tracks from a history TLF file.
    Sample(SampleArgs),
    /// Motion-quality metrics of a TLF file.
    Eval(EvalArgs),
    /// Estimate camera motion and print a caption.
    Camcap { input: PathBuf },
    /// Finite-difference check of every loss and network forward.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Metric tables and SVG figures from run directories.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Extra TLF files to draw.
        #[arg(long)]
        tracks: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Static,
    Translation,
    Rotation,
    Zoom,
    Shear,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AbsConvention {
    Pixel,
    Normalized,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum JitterKind {
    Alternating,
    Random,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub vx: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub vy: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub omega: f64,
    /// Zoom or shear rate per frame.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub rate: f64,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Frame size and stride default to the config's data section.
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Jitter amplitude in pixels.
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long, value_enum, default_value = "random")]
    pub jitter_mode: JitterKind,
    /// Per-point tracker noise for --kind mixed, in pixels.
    #[arg(long, default_value_t = 0.5)]
    pub tracker_noise: f64,
    /// Occluder `x0,y0,x1,y1,start,end` in pixels and frames; repeatable.
    #[arg(long)]
    pub occlusion: Vec<String>,
    #[arg(long, value_enum, default_value = "pixel")]
    pub convention: AbsConvention,
    /// Defaults to <out>/synth.tlf.
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VarianceArgs {
    /// TLF files; synthetic mixed scenes when none are given.
    pub files: Vec<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub scenes: usize,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.5)]
    pub tracker_noise: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SamplerKind {
    Euler,
    Dopri5,
    Dopri5Fixed,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Pipeline checkpoint; defaults to <out>/pipeline.trjp.
    #[arg(long)]
    pub pipeline: Option<PathBuf>,
    /// History tracks; the last segment-length frames are used.
    pub history: PathBuf,
    /// Defaults to <out>/forecast.tlf.
    pub output: Option<PathBuf>,
    /// Overrides the config sampler.
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerKind>,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub atol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricKind {
    Flowtv,
    Divcurl,
    Vepe,
    Variance,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub input: PathBuf,
    /// Repeatable; all metrics that apply when absent.
    #[arg(long, value_enum)]
    pub metric: Vec<MetricKind>,
    /// Reference tracks for VEPE.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Dataset label in the CSV; defaults to the input file stem.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, default_value = "input")]
    pub method: String,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Rasterize { .. } => "rasterize",
            Command::Offsets { .. } => "offsets",
            Command::AnalyzeVariance(_) => "analyze-variance",
            Command::TrainVae => "train-vae",
            Command::TrainFlow { .. } => "train-flow",
            Command::Finetune { .. } => "finetune",
            Command::Sample(_) => "sample",
            Command::Eval(_) => "eval",
            Command::Camcap { .. } => "camcap",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Plot { .. } => "plot",
        }
    }
}

/// Arguments as recorded in the manifest, without the output root.
fn recorded_args(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv.iter().skip(1) {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}

fn execute(cli: Cli, argv: &[String]) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .or_else(|| {
            std::env::var_os(OUT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let mut run = Run::new(cli.command.name(), cfg, out, recorded_args(argv))?;
    match cli.command {
        Command::Synth(a) => commands::synth(&mut run, &a)?,
        Command::Rasterize { input, output } => commands::rasterize(&mut run, &input, output)?,
        Command::Offsets {
            input,
            output,
            invert,
            to,
        } => commands::offsets(&mut run, &input, &output, invert, to)?,
        Command::AnalyzeVariance(a) => commands::analyze_variance(&mut run, &a)?,
        Command::TrainVae => commands::train_vae(&mut run)?,
        Command::TrainFlow { vae } => commands::train_flow(&mut run, vae)?,
        Command::Finetune { pipeline } => commands::finetune(&mut run, pipeline)?,
        Command::Sample(a) => commands::sample(&mut run, &a)?,
        Command::Eval(a) => commands::eval(&mut run, &a)?,
        Command::Camcap { input } => commands::camcap(&mut run, &input)?,
        Command::Gradcheck {
            seeds,
            step,
            tolerance,
        } => {
            // The manifest is written even when a case fails.
            let res = commands::gradcheck(&mut run, seeds, step, tolerance);
            run.finish()?;
            return res;
        }
        Command::Plot { runs, tracks } => plot::plot(&mut run, &runs, &tracks)?,
    }
    run.finish()
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(64)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn output_root_is_not_recorded() {
        let argv: Vec<String> = [
            "trajloom", "--out", "/tmp/x", "synth", "--out=/y", "--kind", "static",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        assert_eq!(recorded_args(&argv), ["synth", "--kind", "static"]);
    }
}
