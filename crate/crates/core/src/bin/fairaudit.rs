use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fairaudit::experiment::{Experiment, ExperimentConfig, ReportFormat, OUT_ENV};
use fairaudit::Result;

#[derive(Parser)]
#[command(
    name = "fairaudit",
    version,
    about = "Train biased and fair classifiers and audit who the debiasing changed"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config and the environment).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Structured,
    Tables,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Load, split and standardize the dataset.
    PrepareData(Common),
    /// Train the biased model(s) and write biased predictions.
    Train(Common),
    /// Derive fair models for every (method, run) cell.
    Mitigate(Common),
    /// Compare fair predictions with the biased ones.
    Audit(Common),
    /// Characterize the instances two methods change.
    Plsda(Common),
    /// Render the audit as a structured document and/or flat tables.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        format: Format,
    },
    /// Every stage in order.
    RunAll(Common),
}

fn experiment(common: &Common) -> Result<Experiment> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(dir) = std::env::var_os(OUT_ENV) {
        config.output_dir = PathBuf::from(dir);
    }
    if let Some(dir) = &common.out {
        config.output_dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        config.base_seed = seed;
    }
    Experiment::new(config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrepareData(c) => {
            let load = experiment(&c)?.prepare_data()?;
            println!(
                "{} rows read, {} dropped, {} train / {} test",
                load.rows_read, load.rows_dropped_missing, load.train_rows, load.test_rows
            );
        }
        Command::Train(c) => experiment(&c)?.train()?,
        Command::Mitigate(c) => {
            let summary = experiment(&c)?.mitigate()?;
            println!(
                "{} cells done, {} failed",
                summary.succeeded,
                summary.failed.len()
            );
            for (method, run, reason) in &summary.failed {
                eprintln!("  {method} run {run}: {reason}");
            }
        }
        Command::Audit(c) => {
            let exp = experiment(&c)?;
            exp.audit()?;
            println!("{}", exp.audit_path().display());
        }
        Command::Plsda(c) => {
            for s in experiment(&c)?.plsda()? {
                match (s.auc, &s.skipped) {
                    (Some(auc), _) => {
                        println!("{} vs {} run {}: AUC {auc:.3}", s.first, s.second, s.run)
                    }
                    (None, reason) => println!(
                        "{} vs {} run {}: skipped ({})",
                        s.first,
                        s.second,
                        s.run,
                        reason.as_deref().unwrap_or("")
                    ),
                }
            }
        }
        Command::Report { common, format } => {
            let format = match format {
                Format::Structured => ReportFormat::Structured,
                Format::Tables => ReportFormat::Tables,
                Format::Both => ReportFormat::Both,
            };
            let (_, rendered) = experiment(&common)?.report(format)?;
            for f in &rendered.files {
                println!("{}", f.display());
            }
        }
        Command::RunAll(c) => {
            let (_, rendered) = experiment(&c)?.run_all()?;
            if let Some(hash) = &rendered.report_hash {
                println!("report sha256 {hash}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
