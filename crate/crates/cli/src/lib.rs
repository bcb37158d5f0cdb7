//! `flsprop` command-line front end.
//!
//! Each subcommand lives in its own module and returns a [`Failure`] on
//! error, which carries the process exit code.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fls_core::geometry::WindowConfig;

pub mod eval;
pub mod heatmap;
pub mod input;
pub mod manifest;
pub mod propose;
pub mod synth;
pub mod train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "flsprop",
    version,
    about = "Objectness proposals for forward-looking sonar"
)]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic annotated dataset
    Synth(synth::SynthArgs),
    /// Train the objectness network on a dataset
    Train(train::TrainArgs),
    /// Threshold window scores into proposals
    Propose(propose::ProposeArgs),
    /// Render an objectness heatmap
    Heatmap(heatmap::HeatmapArgs),
    /// Recall versus threshold, with a random-scoring baseline
    Eval(eval::EvalArgs),
}

/// Sliding-window flags shared by several subcommands.
#[derive(Clone, Copy, Debug, Args)]
pub struct WindowArgs {
    /// Window side in pixels
    #[arg(long, default_value_t = 96)]
    pub window: u32,
    /// Window stride in pixels
    #[arg(long, default_value_t = 8)]
    pub stride: u32,
}

impl WindowArgs {
    pub fn config(&self) -> Result<WindowConfig, Failure> {
        let cfg = WindowConfig {
            window_size: self.window,
            stride: self.stride,
        };
        cfg.validate().map_err(Failure::usage)?;
        if cfg.window_size != fls_core::neuralnet::INPUT_SIZE as u32 {
            return Err(Failure::usage(format!(
                "the network takes {0}x{0} crops; --window must be {0}",
                fls_core::neuralnet::INPUT_SIZE
            )));
        }
        Ok(cfg)
    }
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(e: impl fmt::Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: anyhow::anyhow!("{e}"),
        }
    }

    pub fn data(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_DATA,
            error: e.into(),
        }
    }

    /// Picks the exit code from the library error kind.
    pub fn from_core(stage: &str, e: fls_core::Error) -> Self {
        use fls_core::Error as E;
        let code = match &e {
            E::Numeric(_) => EXIT_NUMERIC,
            E::InvalidInput(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            // the core error's message already embeds its source
            error: anyhow::anyhow!("{stage}: {e}"),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Extension for tagging library results with the failing stage.
pub trait Stage<T> {
    fn stage(self, stage: &str) -> Result<T, Failure>;
}

impl<T> Stage<T> for fls_core::Result<T> {
    fn stage(self, stage: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::from_core(stage, e))
    }
}

/// Runs a parsed command line, honoring `--threads`.
pub fn run(cli: Cli) -> Result<(), Failure> {
    let threads = match cli.threads {
        Some(0) => return Err(Failure::usage("--threads must be at least 1")),
        Some(n) => n,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .start_handler(|_| flush_subnormals())
        .build()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => synth::run(&a, cli.threads),
        Command::Train(a) => train::run(&a, cli.threads),
        Command::Propose(a) => propose::run(&a, cli.threads),
        Command::Heatmap(a) => heatmap::run(&a, cli.threads),
        Command::Eval(a) => eval::run(&a, cli.threads),
    })
}

/// Sets flush-to-zero and denormals-are-zero on the calling thread. Once
/// units saturate, subnormal arithmetic made x86 training epochs ~1.7x
/// slower.
#[allow(deprecated)]
fn flush_subnormals() {
    #[cfg(target_arch = "x86_64")]
    unsafe {
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        _mm_setcsr(_mm_getcsr() | 0x8040);
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

/// `path` with `suffix` appended to its file name (`model.flsn` → `model.flsn.loss.csv`).
pub fn sibling(path: &std::path::Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}
