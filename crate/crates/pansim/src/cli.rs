//! Command-line front end. Exit codes: 0 success, 1 usage, 2 scenario or
//! input file error, 3 calibration infeasible.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::calibrate::{self, SearchSpace, Targets};
use crate::experiments::{self, mobile_geometry, ExperimentError};
use crate::scenario_file::{load_scenario, render_scenario, Scenario, ScenarioFileError};
use crate::trace_csv::{self, TraceError};
use crate::{gaps, report};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_SCENARIO: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "pansim", version, about = "Discrete-event simulator for a PAN with a mobile end device")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML). Built-in defaults when omitted.
    #[arg(long, value_name = "FILE")]
    pub scenario: Option<PathBuf>,
    /// Override the scenario's RNG seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write trace.csv, energy.csv and summary.txt.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory, created if missing.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// One run per power level on the same seed; coverage summary.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated levels in dBm (a trailing "dBm" is accepted).
        /// Defaults to the scenario's sweep list.
        #[arg(long, value_name = "LIST", value_delimiter = ',', value_parser = parse_dbm)]
        powers: Option<Vec<f64>>,
        /// Also write coverage.csv, coverage.dat and one trace per level here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Grid search for propagation constants and stationary positions.
    Calibrate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Target gaps as START:END pairs in metres, comma-separated.
        #[arg(long, value_name = "LIST", value_delimiter = ',', value_parser = parse_gap, default_value = "2:4,11:13")]
        gaps: Vec<(f64, f64)>,
        /// Power at which the target gaps appear, dBm.
        #[arg(long, value_name = "DBM", default_value_t = 0.0, allow_negative_numbers = true)]
        gap_power: f64,
        /// Lowest level that must be gap-free, dBm.
        #[arg(long, value_name = "DBM", default_value_t = 4.0, allow_negative_numbers = true)]
        gap_free_power: f64,
        /// Largest allowed error per gap boundary, metres.
        #[arg(long, value_name = "M", default_value_t = 0.5)]
        tolerance: f64,
        /// Write the calibrated scenario to this file.
        #[arg(long, value_name = "FILE")]
        write: Option<PathBuf>,
    },
    /// Broadcast handover with power control against the scan baseline.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Also write compare.txt here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Coverage gaps of each mobile node in a trace CSV.
    Gaps {
        /// Trace written by `run`.
        #[arg(long, value_name = "FILE")]
        trace: PathBuf,
        /// Scenario used for the run; bounds the grid by the trajectory.
        #[arg(long, value_name = "FILE")]
        scenario: Option<PathBuf>,
        /// Cell size, metres.
        #[arg(long, value_name = "M", default_value_t = 0.1)]
        cell: f64,
    },
    /// Print the annotated default scenario.
    DefaultScenario,
}

fn parse_dbm(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let t = t.strip_suffix("dBm").unwrap_or(t).trim();
    t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("{s:?} is not a power in dBm"))
}

fn parse_gap(s: &str) -> Result<(f64, f64), String> {
    let bad = || format!("{s:?} is not START:END in metres");
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if a < b {
        Ok((a, b))
    } else {
        Err(bad())
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioFileError),
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Gaps(#[from] gaps::GapError),
    #[error("calibration infeasible")]
    Infeasible,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => EXIT_USAGE,
            CliError::Scenario(_) | CliError::Trace { .. } | CliError::Gaps(_) => EXIT_SCENARIO,
            CliError::Infeasible => EXIT_INFEASIBLE,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::NoPowers | ExperimentError::UnknownLevel(_) => CliError::Usage(e.to_string()),
            ExperimentError::NoMobile => CliError::Scenario(ScenarioFileError::Invalid {
                key: "node".into(),
                message: e.to_string(),
            }),
            ExperimentError::Sim(s) => CliError::Scenario(s.into()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn load(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let mut s = match &args.scenario {
        Some(p) => load_scenario(p)?,
        None => Scenario::default(),
    };
    if let Some(seed) = args.seed {
        s.sim.seed = seed;
    }
    Ok(s)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Run { scenario, out: dir } => {
            let s = load(&scenario)?;
            let r = pansim_core::sim::run(s.sim).map_err(ScenarioFileError::from)?;
            make_dir(&dir)?;
            let path = dir.join("trace.csv");
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            trace_csv::write_trace(std::io::BufWriter::new(file), &r.trace)
                .map_err(|source| CliError::Trace { path: path.clone(), source })?;
            write_file(&dir.join("energy.csv"), &report::energy_csv(&r))?;
            let summary = report::run_summary(&r);
            write_file(&dir.join("summary.txt"), &summary)?;
            emit(out, &summary)
        }
        Command::Sweep { scenario, powers, out: dir } => {
            let s = load(&scenario)?;
            let powers = powers.unwrap_or_else(|| s.sweep.powers.clone());
            let res = experiments::sweep(&s.sim, &powers, s.sweep.cell)?;
            let summary = report::sweep_summary(&res);
            if let Some(dir) = dir {
                make_dir(&dir)?;
                write_file(&dir.join("coverage.csv"), &report::coverage_csv(&res))?;
                write_file(&dir.join("coverage.dat"), &report::coverage_dat(&res))?;
                write_file(&dir.join("summary.txt"), &summary)?;
                for l in &res.levels {
                    let path = dir.join(format!("trace_{}dBm.csv", l.power));
                    write_file(&path, &trace_csv::trace_to_string(&l.report.trace))?;
                }
            }
            emit(out, &summary)
        }
        Command::Calibrate { scenario, gaps, gap_power, gap_free_power, tolerance, write } => {
            let s = load(&scenario)?;
            if gaps.is_empty() {
                return Err(CliError::Usage("at least one target gap is required".into()));
            }
            let targets = Targets { gaps, gap_power, gap_free_power, tolerance, cell: s.sweep.cell };
            let cal = calibrate::calibrate(&s.sim, &targets, &SearchSpace::default());
            emit(out, &report::calibration_summary(&cal, &s.sim.phy.levels))?;
            if !cal.feasible() {
                return Err(CliError::Infeasible);
            }
            if let (Some(path), Some(best)) = (write, &cal.best) {
                let cfg = calibrate::apply(&s.sim, best);
                write_file(&path, &render_scenario(&Scenario { sim: cfg, sweep: s.sweep.clone() }))?;
            }
            Ok(())
        }
        Command::Compare { scenario, out: dir } => {
            let s = load(&scenario)?;
            let c = experiments::compare(&s.sim)?;
            let text = report::comparison_summary(&c);
            if let Some(dir) = dir {
                make_dir(&dir)?;
                write_file(&dir.join("compare.txt"), &text)?;
            }
            emit(out, &text)
        }
        Command::Gaps { trace, scenario, cell } => {
            if !(cell > 0.0) {
                return Err(CliError::Usage("--cell must be positive".into()));
            }
            let file = fs::File::open(&trace).map_err(io_err(&trace))?;
            let rows = trace_csv::read_trace(std::io::BufReader::new(file))
                .map_err(|source| CliError::Trace { path: trace.clone(), source })?;
            let bounds = match scenario {
                Some(p) => mobile_geometry(&load_scenario(&p)?.sim).map(|g| g.2),
                None => None,
            };
            let found = gaps::gap_analysis(&rows, bounds, cell)?;
            let mut text = String::new();
            for (node, ivs) in found {
                text.push_str(&format!("node {node}: {}\n", report::fmt_intervals(&ivs)));
            }
            emit(out, &text)
        }
        Command::DefaultScenario => emit(out, &render_scenario(&Scenario::default())),
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if !matches!(e, CliError::Infeasible) {
                let _ = writeln!(err, "error: {e}");
            }
            e.exit_code()
        }
    }
}
