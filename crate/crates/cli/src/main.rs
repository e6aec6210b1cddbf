use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use legcnet_cli::report::RunReport;
use legcnet_cli::run::{analyze_run, diagnose_run};
use legcnet_cli::{report_table, run, CliError, LoadedConfig, StrategyName, TableId};

#[derive(Parser)]
#[command(name = "legcnet", version, about = "Chaos- and causality-driven pruning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Root directory for run outputs; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Restrict to these strategies (repeatable); dense is always included.
    #[arg(long = "strategy", value_enum)]
    strategies: Vec<StrategyName>,
}

impl Common {
    fn load(&self) -> Result<LoadedConfig, CliError> {
        let mut l = LoadedConfig::load(&self.config)?;
        l.config = l.config.with_overrides(self.seeds.clone(), &self.strategies)?;
        Ok(l)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train, prune, retrain and diagnose every (seed, strategy) cell.
    Run(Common),
    /// Print report tables of an existing run as CSV.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long = "table", value_enum, required = true)]
        tables: Vec<TableId>,
    },
    /// Recompute exponents and Granger tests from stored trajectories.
    Analyze(Common),
    /// Recompute spectra, SHAP and closeness from stored checkpoints.
    Diagnose(Common),
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run(c) => {
            let outcome = run(&c.load()?, c.out.as_deref())?;
            let failed = outcome.report.n_failed();
            println!("{}", outcome.dir.display());
            if failed > 0 {
                eprintln!("{failed} of {} cells failed; see cells.csv", outcome.report.cells.len());
            }
            Ok(failed == 0)
        }
        Command::Report { common, tables } => {
            let loaded = common.load()?;
            let dir = loaded.run_dir(common.out.as_deref())?;
            let report = if dir.exists() {
                RunReport::load(&dir)?
            } else {
                RunReport::empty(&loaded.config, loaded.hash()?)
            };
            let mut stdout = std::io::stdout().lock();
            for t in tables {
                let bytes = report_table(&report, t)?;
                stdout.write_all(&bytes).map_err(|e| CliError::io("<stdout>", e))?;
            }
            Ok(true)
        }
        Command::Analyze(c) => {
            for (cell, pr) in analyze_run(&c.load()?, c.out.as_deref())? {
                println!("{}: {} pruned", cell.display(), pr.n_pruned);
            }
            Ok(true)
        }
        Command::Diagnose(c) => {
            for cell in diagnose_run(&c.load()?, c.out.as_deref())? {
                println!("{}", cell.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
