//! `hybridcorr` command-line front end.
//!
//! Exit codes: 0 success, 1 output failure, 2 bad input (config, panel,
//! matrix, flags), 3 estimation or study failure, 4 repair failure or a
//! non-PSD simulation matrix.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hybridcorr::study::{TableFormat, DAILY_DT, INTRADAY_DT};

use crate::commands::{EstimateArgs, RepairArgs, SimulateArgs, StudyArgs};
use crate::error::CliResult;

#[derive(Parser)]
#[command(
    name = "hybridcorr",
    version,
    about = "Correlation estimation, completion and repair for hybrid rate/equity systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => TableFormat::Text,
            Format::Csv => TableFormat::Csv,
        }
    }
}

fn parse_dt(s: &str) -> Result<f64, String> {
    let dt = match s {
        "daily" => DAILY_DT,
        "intraday" => INTRADAY_DT,
        other => other
            .parse::<f64>()
            .map_err(|e| format!("`{other}`: {e}"))?,
    };
    if dt > 0.0 && dt.is_finite() {
        Ok(dt)
    } else {
        Err(format!("dt must be a positive number, got {s}"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate, complete and repair the correlation matrix of an observed panel.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        /// Output directory; overrides `outputs.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        bound: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        no_repair: bool,
        #[arg(long)]
        no_complete: bool,
    },
    /// Simulate one path of the configured system and write its observation panel.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Panel CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Step in years, or `daily` / `intraday`.
        #[arg(long, value_parser = parse_dt)]
        dt: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo accuracy study over a preset or configured system.
    Study {
        /// One of g2g2, g2heston, hestonheston.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Path length; repeat for several table rows.
        #[arg(long)]
        n: Vec<usize>,
        #[arg(long, value_parser = parse_dt)]
        dt: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Rate parameters used for estimation are the true ones times this factor.
        #[arg(long)]
        factor: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Clamp and shrink a stored matrix to positive semidefinite.
    Repair {
        /// Labeled matrix CSV.
        matrix: PathBuf,
        /// Comma-separated block sizes; inferred from label prefixes when absent.
        #[arg(long, value_delimiter = ',')]
        blocks: Vec<usize>,
        #[arg(long)]
        bound: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        /// Output directory for repaired.csv and report.json; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print loadings, normalizers and coefficient systems for the configured components.
    Coeffs {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Estimate {
            config,
            panel,
            out,
            bound,
            tol,
            no_repair,
            no_complete,
        } => {
            let summary = commands::estimate(&EstimateArgs {
                config,
                panel,
                out,
                bound,
                tol,
                no_repair,
                no_complete,
            })?;
            print!("{summary}");
        }
        Command::Simulate {
            config,
            out,
            n,
            dt,
            seed,
        } => {
            for d in commands::simulate(&SimulateArgs {
                config,
                out,
                n,
                dt,
                seed,
            })? {
                eprintln!("warning: {d}");
            }
        }
        Command::Study {
            preset,
            config,
            n,
            dt,
            trials,
            factor,
            seed,
            format,
            out,
        } => {
            let args = StudyArgs {
                preset,
                config,
                n,
                dt,
                trials,
                factor,
                seed,
                format: format.into(),
                out,
            };
            let (_, notes) = commands::study(&args)?;
            for note in notes {
                eprintln!("{note}");
            }
        }
        Command::Repair {
            matrix,
            blocks,
            bound,
            tol,
            out,
        } => {
            let to_stdout = out.is_none();
            let blocks = (!blocks.is_empty()).then_some(blocks);
            let report = commands::repair_matrix(&RepairArgs {
                matrix,
                blocks,
                bound,
                tol,
                out,
            })?;
            if to_stdout {
                eprintln!(
                    "{}",
                    serde_json::to_string_pretty(&report).unwrap_or_default()
                );
            } else {
                println!("alpha_star = {}", report["result"]["alpha_star"]);
            }
        }
        Command::Coeffs { config } => print!("{}", commands::coeffs(&config)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
