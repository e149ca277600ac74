//! Command-line front end. Exit codes: 0 success, 1 input error, 2
//! internal failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::pipeline::{self, FeaturePaths};

#[derive(Debug, Parser)]
#[command(name = "hhlogit", version, about = "Household-specific conditional logit estimation from clickstream logs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML key-value config file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct MarketFlags {
    /// Number of most-visited sites forming the market.
    #[arg(long)]
    pub top_j: Option<usize>,
    /// Reference alternative for brand dummies (default: most visited).
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a visit log, writing it in canonical panel order.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Treat bad rows as fatal.
        #[arg(long)]
        strict: bool,
        /// Canonical panel file (default: `<input stem>.panels.csv`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build choice occasions and covariates in long format.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        window_seconds: Option<i64>,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the market definition (default: next to output).
        #[arg(long)]
        market: Option<PathBuf>,
        /// Household-level aggregates table.
        #[arg(long)]
        aggregates: Option<PathBuf>,
        #[command(flatten)]
        market_flags: MarketFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate one conditional logit per household.
    Fit {
        #[arg(long)]
        occasions: PathBuf,
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Per-variable coefficient statistics across households.
    Summarize {
        #[arg(long)]
        fits: PathBuf,
        #[arg(long)]
        market: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise correlations of coefficients or of household aggregates.
    Correlate {
        #[arg(long, conflicts_with = "aggregates", required_unless_present = "aggregates")]
        fits: Option<PathBuf>,
        #[arg(long)]
        aggregates: Option<PathBuf>,
        #[arg(long)]
        market: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scatter data and an SVG plot of two coefficients.
    Scatter {
        #[arg(long)]
        fits: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        points: PathBuf,
    },
    /// Generate a synthetic visit log with known coefficients.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// ingest → features → fit → summarize → correlate into one directory.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        window_seconds: Option<i64>,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        market_flags: MarketFlags,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    match &common.config {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn apply_market(cfg: &mut Config, flags: &MarketFlags) {
    if let Some(j) = flags.top_j {
        cfg.top_j = j;
    }
    if let Some(r) = &flags.reference {
        cfg.reference = Some(r.clone());
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest { input, strict, output } => {
            let output = output.unwrap_or_else(|| {
                let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("visits");
                sibling(&input, &format!("{stem}.panels.csv"))
            });
            let (households, errors) = pipeline::ingest(&input, &output)?;
            for e in &errors {
                eprintln!("{e}");
            }
            eprintln!("{households} households written to {}", output.display());
            if strict && !errors.is_empty() {
                return Err(Error::Invalid(format!("{} malformed rows", errors.len())));
            }
        }
        Command::Features { input, window_seconds, output, market, aggregates, market_flags, common } => {
            let mut cfg = load_config(&common)?;
            apply_market(&mut cfg, &market_flags);
            if let Some(w) = window_seconds {
                cfg.window_seconds = w;
            }
            cfg.validate()?;
            let market = market.unwrap_or_else(|| sibling(&output, "market.csv"));
            let out = pipeline::features(&input, &cfg, &FeaturePaths { occasions: output, market, aggregates })?;
            if !out.without_market_visits.is_empty() {
                eprintln!("{} households never visited a market alternative", out.without_market_visits.len());
            }
        }
        Command::Fit { occasions, market, workers, output, common } => {
            let mut cfg = load_config(&common)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let r = pipeline::fit(&occasions, &market, &cfg, &output)?;
            eprintln!(
                "fitted {} households, skipped {} in {:.2}s ({:.0} households/s)",
                r.fitted, r.skipped, r.elapsed_seconds, r.households_per_second
            );
        }
        Command::Summarize { fits, market, out } => {
            pipeline::summarize(&fits, market.as_deref(), &out)?;
        }
        Command::Correlate { fits, aggregates, market, out } => match (fits, aggregates) {
            (Some(f), None) => {
                pipeline::correlate_fits(&f, market.as_deref(), &out)?;
            }
            (None, Some(a)) => {
                pipeline::correlate_aggregates(&a, &out)?;
            }
            _ => return Err(Error::Invalid("give exactly one of --fits or --aggregates".into())),
        },
        Command::Scatter { fits, x, y, out, points } => {
            let n = pipeline::scatter(&fits, &x, &y, &out, &points)?;
            eprintln!("{n} points");
        }
        Command::Simulate { spec, out, truth } => {
            let n = pipeline::simulate(&spec, &out, &truth)?;
            eprintln!("simulated {n} households");
        }
        Command::Pipeline { input, out_dir, window_seconds, workers, market_flags, common } => {
            let mut cfg = load_config(&common)?;
            apply_market(&mut cfg, &market_flags);
            if let Some(w) = window_seconds {
                cfg.window_seconds = w;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let report = pipeline::run_pipeline(&input, &out_dir, &cfg)?;
            for e in &report.row_errors {
                eprintln!("{e}");
            }
            eprintln!(
                "{} households; fitted {}, skipped {} in {:.2}s",
                report.households, report.fit.fitted, report.fit.skipped, report.fit.elapsed_seconds
            );
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Internal(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match std::panic::catch_unwind(|| execute(cli.command)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            2
        }
    }
}
