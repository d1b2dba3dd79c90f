//! The `icewatch` command line: data generation, training, evaluation,
//! fusion, gradient checking and the ablation grid. Every command writes
//! CSV artifacts under the output directory.

pub mod ablation;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use ablation::{run_ablation, AblationCell, AblationPlan, AblationResult};
pub use config::{DataPlan, LstProduct, ModelKind, Profile, RunConfig, Settings, TrainPlan};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit code for an error: non-finite values are numerical failures,
/// everything else is a usage or input problem.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic velocity, temperature and image datasets.
    GenData,
    /// Train one model and write its checkpoint and history.
    Train,
    /// Score a trained model on its test split.
    Eval,
    /// Produce a dated risk report from the three checkpoints.
    Fuse,
    /// Check every differentiable operation against finite differences.
    Gradcheck,
    /// Run the lookback × loss ablation grid.
    Ablate,
}

#[derive(Debug, Parser)]
#[command(name = "icewatch", version, about = "Glacial lake outburst flood forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// `key = value` config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Defaults to $ICEWATCH_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["riskflow", "terraflow", "tempflow"])]
    pub model: Option<String>,
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    pub profile: Option<String>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub lookback: Option<usize>,
    /// TerraFlow loss: mse, mae, weighted-mae or quantile.
    #[arg(long, global = true)]
    pub loss: Option<String>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory; defaults to the output directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Directory holding riskflow/, terraflow/ and tempflow/ runs.
    #[arg(long, global = true)]
    pub checkpoints: Option<PathBuf>,
    /// CSV of `date,image` rows to score.
    #[arg(long, global = true)]
    pub dates: Option<PathBuf>,
    /// Replay the reference season instead of running the models.
    #[arg(long, global = true)]
    pub replay: bool,
    /// Extra `key=value` setting; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Cli {
    /// File settings overlaid with the flags that were given.
    pub fn settings(&self) -> crate::error::Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::parse(&std::fs::read_to_string(path).map_err(|e| {
                Error::invalid(format!("cannot read config {}: {e}", path.display()))
            })?)?,
            None => Settings::default(),
        };
        let mut flags = Settings::default();
        let path = |p: &PathBuf| p.to_string_lossy().into_owned();
        let pairs: [(&str, Option<String>); 14] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("model", self.model.clone()),
            ("profile", self.profile.clone()),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("tau", self.tau.map(|v| v.to_string())),
            ("lookback", self.lookback.map(|v| v.to_string())),
            ("loss", self.loss.clone()),
            ("out", self.out.as_ref().map(path)),
            ("data", self.data.as_ref().map(path)),
            ("checkpoints", self.checkpoints.as_ref().map(path)),
            ("dates", self.dates.as_ref().map(path)),
            ("replay", self.replay.then(|| "true".to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                flags.set(k, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            flags.set(k.trim(), v.trim())?;
        }
        s.merge(&flags);
        Ok(s)
    }
}

/// Runs one command, writing progress to `log`.
pub fn execute(command: Command, cfg: &RunConfig, log: &mut dyn Write) -> crate::error::Result<i32> {
    match command {
        Command::GenData => commands::gen_data(cfg, log),
        Command::Train => commands::train(cfg, log),
        Command::Eval => commands::eval(cfg, log),
        Command::Fuse => commands::fuse(cfg, log),
        Command::Gradcheck => commands::gradcheck(cfg, log),
        Command::Ablate => commands::ablate(cfg, log),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_args(args, &mut std::io::stdout().lock())
}

/// [`main_with_args`] with progress sent to `log` instead of stdout.
pub fn run_with_args<I, T>(args: I, log: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let env_seed = std::env::var(config::SEED_ENV).ok();
    let result = cli
        .settings()
        .and_then(|s| RunConfig::from_settings(s, env_seed.as_deref()))
        .and_then(|cfg| execute(cli.command, &cfg, log));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("icewatch: {e}");
            exit_code(&e)
        }
    }
}
