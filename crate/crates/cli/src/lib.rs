//! `vdm` command-line front end.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vdm_core::directivity::Preset;

#[derive(Debug, Parser)]
#[command(name = "vdm", version, about = "Virtual directional microphone toolkit")]
pub struct Cli {
    /// Print progress and details.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Master seed; falls back to VDM_SEED, then to the config's `seed`.
    #[arg(long, env = "VDM_SEED")]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemKind {
    ReferenceMic,
    Parametric,
    Ls,
    Neural,
}

#[derive(Debug, Args, Clone)]
pub struct SystemArgs {
    #[arg(long, value_enum)]
    pub system: SystemKind,

    /// Network checkpoint (neural system).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Beamformer weights (ls system); designed on the fly when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Source-take corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Training and test datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Render one scene description to WAV files.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scene description (JSON).
        #[arg(long)]
        scene: PathBuf,
    },
    /// Design the least-squares beamformer.
    DesignLs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        wng_floor_db: Option<f64>,
        #[arg(long)]
        grid_deg: Option<f64>,
    },
    /// Run a baseline on the test split of a dataset.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Train the mask network on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Apply a trained network to a multichannel WAV file.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Evaluation tables, realized patterns and heatmaps.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Target pattern values.
    #[command(subcommand)]
    Pattern(PatternCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Parametric,
    Ls,
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Write a synthetic speech-like corpus with a split listing.
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Generate train/validation/test examples.
    Generate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Mean SDR per source count; test sets are grouped by source count.
    Sdr {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        system: SystemArgs,
        /// Dataset directories whose test splits are scored.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
    },
    /// Realized directivity pattern from single-source probes.
    Pattern {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        system: SystemArgs,
    },
    /// Two-source SDR over all DOA pairs.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        system: SystemArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum PatternCommand {
    /// Print S(theta) with six decimals.
    Eval {
        #[arg(long, value_parser = parse_preset)]
        preset: Preset,
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        steer: f64,
    },
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse::<Preset>().map_err(|e| e.to_string())
}

/// Runs the CLI; returns the process exit code (0 success, 1 runtime
/// failure, 2 usage error).
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}
