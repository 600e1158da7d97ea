//! Command-line front end: synthetic data, training, inference, scoring
//! and report/label generation.
//!
//! Exit codes: 0 success, 1 validation or tolerance failure, 2 I/O or
//! file-pairing failure.

pub mod commands;
pub mod config;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use radgraph::checkpoint::CheckpointError;
use radgraph::dataset::DatasetError;
use radgraph::graph::GraphError;
use radgraph::image::ImageError;
use radgraph::model::ModelError;
use radgraph::train::TrainError;

pub use config::RunConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => Self::io(e.to_string()),
            DatasetError::Image {
                source: ImageError::Io { .. },
                ..
            } => Self::io(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => Self::io(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::Io { .. } => Self::io(e.to_string()),
            ImageError::Format(_) => Self::validation(e.to_string()),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::validation(e.to_string())
            }
        }
    )*};
}

validation_from!(TrainError, ModelError, GraphError);

#[derive(Debug, Parser)]
#[command(name = "radgraph", version, about = "Radiology graph generation from images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic image/graph corpus.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Standard deviation of the additive pixel noise.
        #[arg(long, default_value_t = radgraph::synth::DEFAULT_NOISE_SIGMA)]
        noise: f64,
    },
    /// Train a model; writes checkpoint, config copy and metrics log.
    Train {
        /// Run config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted override such as `train.mode=vanilla` (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Predict one graph JSON per `.pgm` image.
    Infer {
        /// Checkpoint manifest, e.g. `run/model.json`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run config; defaults to `config.json` next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Class space; defaults to `ontology.json` next to the checkpoint.
        #[arg(long)]
        ontology: Option<PathBuf>,
    },
    /// Score predicted graphs against ground truth, paired by file name.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Class space; defaults to `ontology.json` in the gt or pred directory.
        #[arg(long)]
        ontology: Option<PathBuf>,
        /// Match relation endpoints by class alone.
        #[arg(long)]
        class_only: bool,
    },
    /// Render one text report per graph.
    Report {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        ontology: Option<PathBuf>,
    },
    /// Print pathology label vectors of every graph as JSON.
    Labels {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long)]
        ontology: Option<PathBuf>,
    },
    /// Finite-difference check of the full training loss.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Use the smallest model configuration instead of the config's.
        #[arg(long)]
        tiny: bool,
        /// Check every mode rather than only `train.mode`.
        #[arg(long)]
        all_modes: bool,
        /// Probe at most this many coordinates per parameter tensor.
        #[arg(long)]
        coords: Option<usize>,
    },
}

/// Runs `command`, writing its standard output to `out`.
pub fn run(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Synth { count, seed, out: dir, noise } => commands::synth(count, seed, &dir, noise, out),
        Command::Train { config, overrides } => {
            let cfg = commands::load_config(config.as_deref(), &overrides)?;
            commands::train(&cfg, out).map(|_| ())
        }
        Command::Infer {
            checkpoint,
            images,
            out: dir,
            config,
            ontology,
        } => commands::infer(&checkpoint, &images, &dir, config.as_deref(), ontology.as_deref(), out),
        Command::Eval {
            pred,
            gt,
            ontology,
            class_only,
        } => commands::eval(&pred, &gt, ontology.as_deref(), class_only, out),
        Command::Report {
            graphs,
            out: dir,
            rules,
            ontology,
        } => commands::report(&graphs, &dir, rules.as_deref(), ontology.as_deref(), out),
        Command::Labels {
            graphs,
            mapping,
            ontology,
        } => commands::labels(&graphs, mapping.as_deref(), ontology.as_deref(), out),
        Command::Gradcheck {
            config,
            overrides,
            tiny,
            all_modes,
            coords,
        } => {
            let cfg = commands::load_config(config.as_deref(), &overrides)?;
            commands::gradcheck(&cfg, tiny, all_modes, coords, out)
        }
    }
}
