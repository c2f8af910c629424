use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use hetmean_harness::acceptance::{self, Suite};
use hetmean_harness::compare::{ratio_table, ratios_from_series};
use hetmean_harness::output::{to_csv, write_outputs};
use hetmean_harness::{apply_seed_override, run_experiment, ExperimentConfig, SweepParam};

#[derive(Parser)]
#[command(name = "hetmean", about = "Private heterogeneous mean estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output prefix; overrides the config's `output`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also print paired variance ratios against the first estimator.
        #[arg(long)]
        compare: bool,
    },
    /// Run the acceptance criteria; exits 1 if any fails.
    Accept {
        #[arg(long, default_value = "primary")]
        suite: Suite,
        /// Run only these criteria, e.g. `--only 2,9`.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
    /// Run a config repeatedly with one parameter varied.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    apply_seed_override(&mut cfg)?;
    Ok(cfg)
}

fn run_one(cfg: &ExperimentConfig, output: Option<&Path>, compare: bool) -> Result<String> {
    let result = run_experiment(cfg)?;
    for (kind, msgs) in &result.errors {
        for m in msgs {
            eprintln!("warning: {} failed: {m}", kind.name());
        }
    }
    if let Some(prefix) = output.or(cfg.output.as_deref()) {
        let (csv, json) = write_outputs(prefix, cfg, &result)?;
        eprintln!("wrote {} and {}", csv.display(), json.display());
    }
    if compare {
        eprint!("{}", ratio_table(&ratios_from_series(cfg.seed, &result.series)?));
    }
    Ok(to_csv(&result.summaries))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            output,
            compare,
        } => {
            let cfg = load(&config)?;
            print!("{}", run_one(&cfg, output.as_deref(), compare)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Accept { suite, only } => {
            let report = if only.is_empty() {
                acceptance::run_suite(suite)
            } else {
                acceptance::run_selected(suite, &only)?
            };
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Sweep {
            config,
            param,
            values,
            output,
        } => {
            let base = load(&config)?;
            for (i, cfg) in base.sweep(param, &values)?.iter().enumerate() {
                let prefix = output
                    .as_ref()
                    .or(cfg.output.as_ref())
                    .map(|p| PathBuf::from(format!("{}-{i}", p.display())));
                let csv = run_one(cfg, prefix.as_deref(), false)?;
                // One header for the whole sweep.
                let body = if i == 0 { &csv[..] } else { csv.split_once('\n').map_or("", |x| x.1) };
                print!("{body}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
