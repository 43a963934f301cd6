//! `motionlab`: simulate datasets, train and adapt forecasters, and collect
//! evaluation reports.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use forecast::adapt::Strategy;
use forecast::{ExperimentConfig, Scale};

#[derive(Parser, Debug)]
#[command(
    name = "motionlab",
    version,
    about = "Invariant and modular trajectory forecasting experiments"
)]
pub struct Cli {
    /// Model seed for train, adapt and refine.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Experiment config JSON; fields it omits come from its `scale` preset
    /// (or --scale).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = ScaleArg::Desk)]
    pub scale: ScaleArg,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScaleArg {
    Quick,
    Desk,
    Full,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Quick => Scale::Quick,
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Full => Scale::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Style,
    Spurious,
    Transfer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Erm,
    Invariant,
    Modular,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StrategyArg {
    All,
    Mod,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::All => Strategy::All,
            StrategyArg::Mod => Strategy::ModulatorOnly,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate the style datasets (and optionally the subset stand-ins) as TSV.
    Simulate {
        #[arg(long)]
        spurious: bool,
    },
    /// Build the spurious-channel environments and record their sizes and hashes.
    Augment,
    /// Train one model and save it as a checkpoint.
    Train {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Suite::Style)]
        suite: Suite,
    },
    /// Evaluate a checkpoint, or run a whole suite when no checkpoint is given.
    Eval {
        #[arg(long, value_enum, default_value_t = Suite::Style)]
        suite: Suite,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fine-tune a modular checkpoint on k batches of the target style.
    Adapt {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..=6))]
        k: u64,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Refine the predictions of a modular checkpoint on the target test windows.
    Refine {
        #[arg(long, default_value_t = 3)]
        iters: usize,
        #[arg(long)]
        refs: Option<usize>,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Aggregate report rows over seeds and print the table.
    Report {
        /// Report CSVs to merge; defaults to `<out-dir>/report.csv`.
        #[arg(long)]
        input: Vec<PathBuf>,
    },
    /// Print the resolved experiment config as JSON.
    Config,
}

impl Cli {
    pub fn experiment_config(&self) -> forecast::Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, self.scale.into())?,
            None => ExperimentConfig::for_scale(self.scale.into()),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit code of a failure: 2 configuration, 3 missing artifact, 4 numerical.
fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<forecast::Error>() {
        return e.exit_code() as u8;
    }
    if let Some(e) = err.downcast_ref::<commands::Failure>() {
        return e.code();
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
