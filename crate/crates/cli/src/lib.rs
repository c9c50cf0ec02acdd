//! Command-line front end: `estimate` runs a battery of estimators on a
//! fused CSV file, `simulate` runs Monte Carlo scenarios.

pub mod config;
pub mod error;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use fusion_iv::data::read_fused_csv;
use fusion_iv::estimators::{run_battery, BatteryOptions};
use fusion_iv::inference::BootstrapOptions;
use fusion_iv::sim::{render_table, run_scenario, MonteCarloConfig, MonteCarloReport, ScenarioConfig};
use serde::Serialize;

pub use config::{EstimateConfig, FormulaSet, OutputFormat, SimulateConfig};
pub use error::{CliError, EXIT_ESTIMATION, EXIT_VALIDATION};
pub use report::{EstimateReport, EstimateRow};

#[derive(Debug, Parser)]
#[command(name = "fusion-iv", version, about = "Treatment effects from fused instrumental-variable samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the average treatment effect from a fused CSV file.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the format in the configuration.
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
        #[arg(long, env = "FUSION_IV_THREADS")]
        threads: Option<usize>,
    },
    /// Run Monte Carlo scenarios and report bias, SD and MSE.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "FUSION_IV_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate {
            data,
            config,
            out,
            format,
            threads,
        } => {
            let cfg: EstimateConfig = config::load(&config)?;
            let format = format.unwrap_or(cfg.format);
            let report = with_threads(threads, || cmd_estimate(&data, &cfg))?;
            let body = match format {
                OutputFormat::Json => to_json(&report)?,
                OutputFormat::Tsv => report.to_tsv(),
                OutputFormat::Text => report.to_text(),
            };
            emit(out.as_deref(), &body)
        }
        Command::Simulate {
            config,
            threads,
            out,
            format,
        } => {
            let cfg: SimulateConfig = config::load(&config)?;
            let format = format.unwrap_or(cfg.format);
            let reports = cmd_simulate(&cfg, threads.or(cfg.threads))?;
            let body = match format {
                OutputFormat::Json => to_json(&SimulationOutput { reports: &reports })?,
                OutputFormat::Text => render_table(&reports),
                OutputFormat::Tsv => return Err(CliError::config("simulate writes json or text")),
            };
            emit(out.as_deref(), &body)
        }
    }
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match threads {
        Some(0) => Err(CliError::config("thread count must be positive")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::config(e.to_string()))?
            .install(f),
        None => f(),
    }
}

/// Runs the configured estimators on the CSV at `data`.
pub fn cmd_estimate(data: &Path, cfg: &EstimateConfig) -> Result<EstimateReport, CliError> {
    cfg.validate()?;
    let sample = read_fused_csv(data)?;
    let opts = BatteryOptions {
        sandwich: true,
        level: cfg.level,
        bootstrap: (cfg.bootstrap > 0).then(|| BootstrapOptions {
            level: cfg.level,
            ..BootstrapOptions::new(cfg.bootstrap, cfg.seed)
        }),
        ..BatteryOptions::default()
    };
    let results = run_battery(&sample, &cfg.kinds, &cfg.model_spec(), &opts)?;
    Ok(EstimateReport::new(&sample, cfg.level, cfg.bootstrap, &results))
}

/// Runs every configured scenario in order.
pub fn cmd_simulate(cfg: &SimulateConfig, threads: Option<usize>) -> Result<Vec<MonteCarloReport>, CliError> {
    cfg.validate()?;
    if threads == Some(0) {
        return Err(CliError::config("thread count must be positive"));
    }
    cfg.scenarios
        .iter()
        .map(|&id| {
            let mc = MonteCarloConfig {
                scenario: ScenarioConfig::new(id),
                params: cfg.params.clone(),
                n: cfg.n,
                reps: cfg.reps,
                kinds: cfg.kinds.clone(),
                seed: cfg.seed,
                sandwich: cfg.sandwich,
                level: cfg.level,
            };
            run_scenario(&mc, threads).map_err(CliError::from)
        })
        .collect()
}

#[derive(Serialize)]
struct SimulationOutput<'a> {
    reports: &'a [MonteCarloReport],
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.into()))?;
    s.push('\n');
    Ok(s)
}

/// Writes `body` to `out` through a temporary file in the same directory,
/// so a failed run never leaves a partial file behind.
fn emit(out: Option<&Path>, body: &str) -> Result<(), CliError> {
    match out {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            stdout.flush()?;
        }
        Some(path) => {
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(body.as_bytes())?;
            tmp.as_file().sync_all()?;
            tmp.persist(path).map_err(|e| CliError::Output(e.error))?;
        }
    }
    Ok(())
}
