//! The `lungxai` command line: `prepare` builds a run directory with the
//! effective configuration and the cached splits; `train`, `evaluate`,
//! `explain` and `report` add stage outputs inside it.

pub mod config;
pub mod error;
pub mod rundir;

mod common;
mod evaluate;
mod explain;
mod prepare;
mod report;
mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Branch, FlagOverrides, Method, RunConfig};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "lungxai",
    version,
    about = "Lung-CT classification with a dense-connectivity CNN and a deep-feature SVM",
    long_about = "Lung-CT classification with a dense-connectivity CNN and a deep-feature SVM.\n\n\
        Typical use: `lungxai prepare --synthetic` (or set data.root to <root>/<class>/*.png),\n\
        then `train`, `evaluate`, `explain` and `report` with --run <run directory>.\n\
        Full-scale reproduction needs the real dataset and pretrained ImageNet weights:\n\
        set dense.backbone=\"densenet169\", svm.extractor=\"mobilenet_v2\" and point\n\
        dense.weights / svm.weights at torchvision-named safetensors files.\n\n\
        Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.\n\
        The environment variable LUNGXAI_OUT overrides the output root (below --out)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration layered over the defaults (and over the run's own
    /// config.toml for commands taking --run).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. --set dense.epochs=5. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub branch: Option<Branch>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load (or synthesise) images, split them and create a run directory.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Parent directory for run directories.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Use the built-in synthetic generator instead of data.root.
        #[arg(long)]
        synthetic: bool,
    },
    /// Train the selected branches on the run's training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
    },
    /// Score a split and write metrics.json, confusion.csv, ROC plots and report.md.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Model directory to use instead of <run>/models/<branch>.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Grad-CAM heatmaps or SHAP attributions for selected images.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        #[arg(long, value_enum)]
        method: Option<Method>,
        /// First sample of the split to explain.
        #[arg(long)]
        index: Option<usize>,
        /// Explain one image file instead of split samples.
        #[arg(long, value_name = "PATH", conflicts_with = "index")]
        image: Option<PathBuf>,
        /// Number of consecutive samples.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Consolidate the latest evaluations of both branches.
    Report {
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
    },
}

/// Runs one parsed command.
pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prepare { common, out, synthetic } => prepare::run(&common, out, synthetic).map(|_| ()),
        Command::Train { common, run } => train::run(&common, &run),
        Command::Evaluate { common, run, split, model } => evaluate::run(&common, &run, &split, model.as_deref()),
        Command::Explain {
            common,
            run,
            method,
            index,
            image,
            count,
            split,
            model,
        } => explain::run(
            &common,
            &run,
            explain::Request {
                method,
                index,
                image,
                count,
                split,
                model,
            },
        ),
        Command::Report { run } => report::run(&run),
    }
}

/// Parses arguments and runs, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
