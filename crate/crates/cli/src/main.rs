use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use coopsa::harness::{
    emit_table, estimate_deviation_prob, load_config, run_experiment, SolutionReport, TableFormat,
};

#[derive(Parser)]
#[command(name = "coopsa", version, about = "Cooperative stochastic approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write report.json, cells.csv and table.txt.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit nonzero if any cell failed.
        #[arg(long)]
        strict: bool,
    },
    /// Render a saved report.
    Table {
        report: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Estimate the probability of landing within the given tolerances.
    Deviation {
        config: PathBuf,
        #[arg(long, default_value_t = f64::INFINITY)]
        eps_obj: f64,
        #[arg(long, default_value_t = f64::INFINITY)]
        eps_cons: f64,
        #[arg(long, default_value_t = 200)]
        replications: usize,
    },
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(config: &Path, out: Option<PathBuf>, strict: bool) -> Result<()> {
    let cfg = load_config(config).with_context(|| format!("loading {}", config.display()))?;
    let report = run_experiment(&cfg)?;
    let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir, "report.json", &report.to_json()?)?;
    write(&dir, "cells.csv", &emit_table(&report, TableFormat::Csv)?)?;
    let text = emit_table(&report, TableFormat::Text)?;
    write(&dir, "table.txt", &text)?;
    print!("{text}");
    eprintln!("wrote {}", dir.display());
    let failed: Vec<_> = report.cells.iter().filter(|c| c.error.is_some()).collect();
    for c in &failed {
        eprintln!("cell N={} seed={}: {}", c.n, c.seed, c.error.as_deref().unwrap_or(""));
    }
    if strict && !failed.is_empty() {
        bail!("{} of {} cells failed", failed.len(), report.cells.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, strict } => run(&config, out, strict),
        Command::Table { report, format } => (|| {
            let text = fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let report = SolutionReport::from_json(&text)?;
            let format = match format {
                Format::Csv => TableFormat::Csv,
                Format::Text => TableFormat::Text,
            };
            print!("{}", emit_table(&report, format)?);
            Ok(())
        })(),
        Command::Deviation { config, eps_obj, eps_cons, replications } => (|| {
            let cfg = load_config(&config)?;
            let r = estimate_deviation_prob(&cfg, eps_obj, eps_cons, replications)?;
            println!(
                "N={} eps_obj={} eps_cons={} probability={:.4} se={:.4} ({} of {}; {} empty B)",
                r.n, r.eps_objective, r.eps_constraint, r.probability, r.se, r.successes, r.replications, r.empty_b
            );
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
