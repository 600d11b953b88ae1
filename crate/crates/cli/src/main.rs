use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use srnn_cli::experiment::{self, RESOLVED_FILE};
use srnn_cli::report::{collect, write_report};
use srnn_cli::{EvalReport, ExperimentConfig, Preset};

#[derive(Parser)]
#[command(name = "srnn", version, about = "Train and evaluate symplectic recurrent networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training and test sets.
    Generate(RunArgs),
    /// Train a model on the generated data.
    Train(RunArgs),
    /// Score a trained model (or a baseline) on the test set.
    Evaluate(RunArgs),
    /// Gather evaluated runs into report.csv.
    Report {
        /// Run directories to include.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Defaults that the config file overrides.
    #[arg(long, default_value = "desk")]
    preset: Preset,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    /// Preset, then the config file (or the run's resolved config when no
    /// file is given), then command-line flags.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let resolved = self.out_dir.join(RESOLVED_FILE);
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, self.preset)?,
            None if resolved.exists() => ExperimentConfig::load(&resolved, self.preset)?,
            None => ExperimentConfig::from_text("", self.preset)?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got '{kv}'");
            };
            cfg.set(k.trim(), v.trim()).with_context(|| format!("--set {kv}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(report: &EvalReport) {
    for (name, e) in [("noisy", &report.noisy), ("clean", &report.clean)] {
        let (m, s) = EvalReport::summary(e);
        println!("{name}: error {m} ± {s} over {} samples, {} steps", report.samples(), report.horizon);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.resolve()?;
            experiment::generate(&cfg, &args.out_dir)?;
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            if let Some(outcome) = experiment::train_run(&cfg, &args.out_dir)? {
                if let Some(last) = outcome.history.last() {
                    println!("epoch {}: train loss {:e}", last.epoch, last.train_loss);
                }
            }
        }
        Command::Evaluate(args) => {
            let cfg = args.resolve()?;
            print_summary(&experiment::evaluate_run(&cfg, &args.out_dir)?);
        }
        Command::Report { runs, out_dir } => {
            let (rows, missing) = collect(&runs);
            for (run, err) in &missing {
                eprintln!("skipping {}: {err:#}", run.display());
            }
            if rows.is_empty() {
                bail!("no evaluated runs among {} given", runs.len());
            }
            std::fs::create_dir_all(&out_dir)?;
            let path: &Path = &out_dir.join("report.csv");
            write_report(&rows, BufWriter::new(File::create(path)?))?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
