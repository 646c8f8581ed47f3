//! The `hiflow` command line: corpus generation, both training stages,
//! sampling, evaluation and diagnostics, each driven by one run config.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Exit statuses other than 0.
pub mod exit {
    /// Bad flags or arguments.
    pub const USAGE: i32 = 2;
    /// Malformed or incomplete configuration.
    pub const CONFIG: i32 = 3;
    /// Unreadable, unwritable or malformed files, missing checkpoints.
    pub const IO: i32 = 4;
    /// The pipeline itself failed (divergence, bad prompt, ...).
    pub const RUNTIME: i32 = 5;
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Config(String),
    Io(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => exit::USAGE,
            Failure::Config(_) => exit::CONFIG,
            Failure::Io(_) => exit::IO,
            Failure::Runtime(_) => exit::RUNTIME,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Config(m) => write!(f, "config: {m}"),
            Failure::Io(m) => write!(f, "i/o: {m}"),
            Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<hiflow_core::Error> for Failure {
    fn from(e: hiflow_core::Error) -> Self {
        use hiflow_core::Error as E;
        match e {
            E::InvalidConfig(_) | E::InvalidSchedule(_) => Failure::Config(e.to_string()),
            E::Io { .. } | E::Format(_) => Failure::Io(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hiflow", version, about = "Coarse-to-fine text-to-motion flow matching at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Master seed; replaces `seed` from the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Override a config value by dotted key, e.g. `train_vae.steps=100`.
    /// Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Output directory for artifacts and the copied config [default: out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate the synthetic motion-text corpus.
    GenData,
    /// Train the motion VAE.
    TrainVae,
    /// Train the TMDiT on the frozen VAE.
    TrainTmdit,
    /// Generate motions from text prompts.
    Sample {
        /// Prompt text; repeatable. Replaces prompts from the config.
        #[arg(long, value_name = "TEXT")]
        prompt: Vec<String>,
        /// File with one prompt per line.
        #[arg(long, value_name = "PATH")]
        prompt_file: Option<PathBuf>,
    },
    /// Compare generated motions against a corpus split.
    Eval,
    /// Noise-consistency diagnostic of the cross-scale transition.
    Diagnose,
    /// Semantic accuracy of ground-truth motions under downsampling.
    Retention,
    /// Print the stage table of the configured schedule.
    InspectSchedule,
}

/// Parses `args` and runs the command. Returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
