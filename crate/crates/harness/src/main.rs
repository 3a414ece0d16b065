use std::path::{Path, PathBuf};
use std::process::ExitCode;

use banditlab::config::{parse_seeds, AlgoSpec, ExperimentConfig};
use banditlab::experiment::{diagnose, run_experiment, sweep, SweepParam};
use banditlab::output::{emit_outputs, plot_dir, write_diagnostics, write_sweep};
use banditlab::{HarnessError, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "banditlab", version, about = "Model-selection bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured algorithm on every seed and write CSV outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to these algorithms (repeatable); unknown names use defaults.
        #[arg(long = "algo")]
        algos: Vec<String>,
        /// `a..b` or a comma-separated list.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank hyperparameter settings by mean final regret.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `name=lo:hi:k[:log]` (repeatable); without it the default tuning ranges are used.
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long = "algo")]
        algos: Vec<String>,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Restricted-eigenvalue and covariance diagnostics on uniformly explored designs.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Redraw summary.svg from the regret CSVs in a directory.
    Plot {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load(config: &Path, seeds: &Option<String>, out: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(o) = out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            algos,
            seeds,
            out,
        } => {
            let mut cfg = load(&config, &seeds, &out)?;
            if !algos.is_empty() {
                cfg.select_algorithms(&algos)?;
            }
            let result = run_experiment(&cfg)?;
            for run in &result.runs {
                let finals: Vec<f64> = run.traces.iter().map(|t| t.cumulative_regret()).collect();
                let (mean, se) = banditlab::experiment::mean_stderr(&finals);
                let unsolved: usize = run.traces.iter().map(|t| t.nonconverged_solves).sum();
                eprintln!("{:<11} R(n) = {mean:.4} +- {se:.4}  (unconverged solves: {unsolved})", run.spec.name());
            }
            let written = emit_outputs(&result, &cfg.output_dir, cfg.svg)?;
            if cfg.diagnostics.is_some() && !written.is_empty() {
                write_diagnostics(&cfg.output_dir.join("diagnostics.csv"), &diagnose(&cfg)?)?;
            }
            eprintln!("wrote {} files to {}", written.len(), cfg.output_dir.display());
        }
        Command::Sweep {
            config,
            params,
            algos,
            seeds,
            out,
        } => {
            let mut cfg = load(&config, &seeds, &out)?;
            if !algos.is_empty() {
                cfg.select_algorithms(&algos)?;
            }
            let params = params.iter().map(|p| SweepParam::parse(p)).collect::<Result<Vec<_>>>()?;
            let bases: Vec<AlgoSpec> = if params.is_empty() {
                cfg.algorithms.clone()
            } else {
                // only algorithms that own every swept parameter
                cfg.algorithms
                    .iter()
                    .filter(|a| params.iter().all(|p| AlgoSpec::clone(a).set_param(&p.name, p.values[0]).is_ok()))
                    .cloned()
                    .collect()
            };
            if !params.is_empty() && bases.is_empty() {
                return Err(HarnessError::Config("no configured algorithm takes the swept parameters".into()));
            }
            if !bases.is_empty() {
                ensure_dir(&cfg.output_dir)?;
            }
            for base in &bases {
                let entries = sweep(&cfg, base, &params)?;
                if let Some(best) = entries.first() {
                    eprintln!("{:<11} best: {}  R(n) = {:.4}", base.name(), best.spec.describe(), best.mean_regret);
                }
                write_sweep(&cfg.output_dir.join(format!("sweep_{}.csv", base.name())), &entries)?;
            }
        }
        Command::Diagnose { config, seeds, out } => {
            let cfg = load(&config, &seeds, &out)?;
            let rows = diagnose(&cfg)?;
            ensure_dir(&cfg.output_dir)?;
            let path = cfg.output_dir.join("diagnostics.csv");
            write_diagnostics(&path, &rows)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Plot { dir } => {
            let path = plot_dir(&dir)?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("banditlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
