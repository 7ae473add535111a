//! Command-line front end: `run`, `sweep` and `summarize`.
//!
//! Exit codes: 0 on success, 1 for configuration, usage and I/O errors, 2
//! when a run diverges or produces a non-finite loss.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use super::config::{ExperimentConfig, RawConfig};
use super::run::{create, dump_tape, export_data, run_experiment, with_path};
use super::summary::{summarize, Summary};
use crate::error::{Error, Result};
use crate::metrics::{CsvWriter, Row};

#[derive(Parser, Debug)]
#[command(name = "evograd", version, about = "Evolutionary hypergradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment over a set of seeds.
    Run(RunArgs),
    /// Measure memory and time while scaling one dimension of the problem.
    Sweep(SweepArgs),
    /// Mean and std of each run's final metrics across seeds.
    Summarize(SummarizeArgs),
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct RunArgs {
    /// `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// one_d_grid, one_d_traj, rotation, reweight or scaling.
    #[arg(long)]
    experiment: Option<String>,
    /// evograd, t1t2, oracle or baseline-no-meta.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Population size; a comma-separated list where several are compared.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    /// gaussian or sign-gaussian.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    meta_lr: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON path; defaults to the CSV path with a .json extension.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Record wall-clock time per step.
    #[arg(long)]
    timing: bool,
    /// Write the graph of one estimate at the initial state.
    #[arg(long)]
    dump_tape: Option<PathBuf>,
    /// Write the generated training set as CSV.
    #[arg(long)]
    export_data: Option<PathBuf>,
    /// Any other option as KEY=VALUE; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// model_width, hyperparam_count or population_k; all when omitted.
    #[arg(long)]
    dimension: Option<String>,
    /// Comma-separated grid values for a single dimension.
    #[arg(long)]
    grid: Option<String>,
    /// Timed meta-steps per grid point.
    #[arg(long)]
    steps: Option<String>,
    #[arg(long, default_value = "0")]
    seed: String,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// Metrics CSV written by `run` or `sweep`.
    csv: PathBuf,
    /// Also write the summary JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn raw(&self) -> Result<RawConfig> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::load(path)?,
            None => RawConfig::default(),
        };
        let flags = [
            ("experiment", &self.experiment),
            ("method", &self.method),
            ("seeds", &self.seeds),
            ("k", &self.k),
            ("sigma", &self.sigma),
            ("tau", &self.tau),
            ("noise", &self.noise),
            ("lr", &self.lr),
            ("meta_lr", &self.meta_lr),
            ("steps", &self.steps),
            ("epochs", &self.epochs),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                raw.set(key, vec![v.clone()]);
            }
        }
        let paths = [
            ("out", &self.out),
            ("summary", &self.summary),
            ("dump_tape", &self.dump_tape),
            ("export_data", &self.export_data),
        ];
        for (key, value) in paths {
            if let Some(p) = value {
                raw.set(key, vec![p.display().to_string()]);
            }
        }
        if self.timing {
            raw.set("timing", vec!["true".into()]);
        }
        let mut errs = Vec::new();
        for pair in &self.set {
            match pair.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => raw.set(k, vec![v.trim().to_string()]),
                _ => errs.push(format!("--set: expected KEY=VALUE, got '{pair}'")),
            }
        }
        if errs.is_empty() {
            Ok(raw)
        } else {
            Err(Error::Config(errs))
        }
    }
}

impl SweepArgs {
    fn raw(&self) -> RawConfig {
        let mut raw = RawConfig::default();
        raw.set("experiment", vec!["scaling".into()]);
        raw.set("seeds", vec![self.seed.clone()]);
        raw.set("out", vec![self.out.display().to_string()]);
        for (key, value) in [("dimension", &self.dimension), ("grid", &self.grid), ("steps", &self.steps)] {
            if let Some(v) = value {
                raw.set(key, vec![v.clone()]);
            }
        }
        raw
    }
}

/// Prints to stdout, ignoring a reader that has gone away.
fn print(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_csv(rows: &[Row], path: &Path) -> Result<()> {
    let mut w = CsvWriter::new(BufWriter::new(create(path)?));
    w.write_all(rows)?;
    w.into_inner()?;
    Ok(())
}

fn write_text(text: &str, path: &Path) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

fn execute(cfg: &ExperimentConfig) -> Result<()> {
    if let Some(path) = &cfg.export_data {
        export_data(cfg, path)?;
    }
    if let Some(path) = &cfg.dump_tape {
        dump_tape(cfg, path)?;
    }
    let rows = run_experiment(cfg)?;
    write_csv(&rows, &cfg.out)?;
    let json = Summary::from_rows(&rows)?.to_json()?;
    write_text(&json, &cfg.summary_path())?;
    print(&json);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => execute(&ExperimentConfig::from_raw(&args.raw()?)?),
        Command::Sweep(args) => execute(&ExperimentConfig::from_raw(&args.raw())?),
        Command::Summarize(args) => {
            let file = File::open(&args.csv).map_err(|e| with_path(e, &args.csv))?;
            let json = summarize(BufReader::new(file))?.to_json()?;
            if let Some(path) = &args.out {
                write_text(&json, path)?;
            }
            print(&json);
            Ok(())
        }
    }
}

/// Exit code for an error raised by a command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence(_) | Error::NonFiniteLoss { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
