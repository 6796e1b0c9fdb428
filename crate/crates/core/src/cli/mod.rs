//! Command-line surface: `simulate`, `analyze` and `boundaries`.
//!
//! Exit codes: 0 success, 2 configuration, 3 data, 4 numeric.

mod config;

pub use config::{CompletePaths, OutputPaths, RunConfig, ScenarioEntry};

use crate::boundaries::{indinc_boundaries, mvn_boundaries, BoundarySchedule, MvnConfig, SpendingPlan};
use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::mcsim::{
    analyze_dataset, run_study, write_summary_csv, Design, LookReport, SimReport, StudyOptions, TestFamily, TestSpec,
};
use crate::survdata::read_subjects_csv;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// Version written into analysis state files.
pub const STATE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("state file does not match the data: {0}")]
    StateMismatch(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::StateMismatch(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::InvalidSpec(_) | Error::InvalidPlan(_) | Error::LookOutOfRange { .. } => CliError::Config(m),
            Error::Schema(_)
            | Error::InsufficientData(_)
            | Error::ArmMissing { .. }
            | Error::RestrictionExceedsFollowup { .. }
            | Error::NotSymmetric { .. }
            | Error::DimensionMismatch { .. } => CliError::Data(m),
            _ => CliError::Numeric(m),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "seqcombine", version, about = "Group sequential monitoring with independent-increments combinations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run Monte Carlo studies and write JSON and CSV reports.
    Simulate(SimulateArgs),
    /// Monitor one test on a dataset through a given look.
    Analyze(AnalyzeArgs),
    /// Compute boundaries for a covariance matrix and a spending plan.
    Boundaries(BoundariesArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Run configuration (JSON); defaults reproduce the reference study.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "SEQCOMBINE_THREADS")]
    pub threads: Option<usize>,
    /// Restrict to these scenario names.
    #[arg(long)]
    pub scenario: Vec<String>,
    /// Restrict to these tests.
    #[arg(long)]
    pub test: Vec<String>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Dataset with columns entry_time, event_time, arm.
    pub data: PathBuf,
    /// Run configuration supplying the design.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub test: String,
    /// Look (one-based) to analyze through.
    #[arg(long)]
    pub look: usize,
    /// State file holding earlier looks; created or extended.
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundariesArgs {
    /// Covariance matrix of the statistics, one row per line.
    pub cov: PathBuf,
    /// Spending plan JSON: {"alpha": .., "fractions": [..]}.
    pub plan: PathBuf,
    #[arg(long, value_enum, default_value = "mvn")]
    pub method: MethodArg,
    /// Lattice seed for the mvn method.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MethodArg {
    Indinc,
    Mvn,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Boundaries(a) => cmd_boundaries(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn read_text(path: &Path, kind: fn(String) -> CliError) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| kind(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => Ok(RunConfig::from_json(&read_text(p, CliError::Config)?)?),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(reps) = args.reps {
        config.reps = reps;
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    if !args.scenario.is_empty() {
        for name in &args.scenario {
            if !config.scenarios.iter().any(|s| &s.name == name) {
                return Err(CliError::Config(format!("--scenario: unknown scenario {name}")));
            }
        }
        config.scenarios.retain(|s| args.scenario.contains(&s.name));
    }
    if !args.test.is_empty() {
        for name in &args.test {
            if !config.tests.iter().any(|t| t.name() == name) {
                return Err(CliError::Config(format!("--test: unknown or unconfigured test {name}")));
            }
        }
        config.tests.retain(|t| args.test.iter().any(|n| n == t.name()));
    }
    config.validate()?;
    let dir = args
        .out
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    let reports = run_config(&config, |report, elapsed| {
        eprintln!(
            "{}: {} tests x {} trials in {:.1} s",
            report.label.as_deref().unwrap_or(""),
            report.tests.len(),
            report.reps,
            elapsed.as_secs_f64()
        );
    })?;

    write_text(&dir.join(&config.output.json), &to_json(&reports))?;
    let mut csv = Vec::new();
    write_summary_csv(&reports, &mut csv)?;
    write_text(&dir.join(&config.output.csv), &String::from_utf8(csv).expect("utf-8 csv"))?;
    let covs = covariance_csv(&reports, config.design.looks());
    if covs.lines().count() > 1 {
        write_text(&dir.join(&config.output.cov_csv), &covs)?;
    }
    Ok(())
}

/// Runs every configured scenario in order, labelling each report with its
/// scenario name and calling `progress` after each one.
pub fn run_config(config: &RunConfig, mut progress: impl FnMut(&SimReport, Duration)) -> Result<Vec<SimReport>> {
    config.validate()?;
    let tests = config.resolved_tests()?;
    let mut reports = Vec::with_capacity(config.scenarios.len());
    for scenario in &config.scenarios {
        let started = Instant::now();
        let options = StudyOptions {
            reps: config.reps,
            seed: config.seed,
            threads: config.threads,
            complete_paths: config.complete_paths.applies(scenario.family),
            mvn: config.mvn,
            covariance: config.covariance_source,
            pilot_reps: config.pilot_reps,
        };
        let mut report = run_study(&scenario.spec(), &config.design, &tests, &options)?;
        report.label = Some(scenario.name.clone());
        progress(&report, started.elapsed());
        reports.push(report);
    }
    Ok(reports)
}

/// Standardized covariance matrices, one row of each matrix per line.
pub fn covariance_csv(reports: &[SimReport], looks: usize) -> String {
    let mut out = String::from("scenario,test,row");
    for k in 1..=looks {
        out.push_str(&format!(",c{k}"));
    }
    out.push('\n');
    for report in reports {
        let label = report.label.as_deref().unwrap_or("");
        for t in &report.tests {
            let Some(m) = &t.standardized_cov else { continue };
            for (i, row) in m.rows().iter().enumerate() {
                out.push_str(&format!("{label},{},{}", t.test.name(), i + 1));
                for v in row {
                    out.push_str(&format!(",{v:.6}"));
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Persisted analysis of earlier looks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisState {
    pub version: u32,
    pub test: TestSpec,
    pub design: Design,
    pub looks: Vec<LookReport>,
}

/// What `analyze` prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub test: TestSpec,
    pub look: usize,
    /// First look at which the boundary was crossed.
    pub stop_look: Option<usize>,
    pub looks: Vec<LookReport>,
}

fn analysis_test(config: &RunConfig, name: &str) -> CliResult<TestSpec> {
    let family = TestFamily::from_name(name).ok_or_else(|| CliError::Config(format!("--test: unknown test {name}")))?;
    let spec = config
        .tests
        .iter()
        .find(|t| t.family == family)
        .copied()
        .unwrap_or_else(|| TestSpec::new(family));
    Ok(spec.resolve(config.design.t_delay)?)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let config = load_config(args.config.as_deref())?;
    let test = analysis_test(&config, &args.test)?;
    let design = &config.design;
    if args.look == 0 || args.look > design.looks() {
        return Err(CliError::Config(format!(
            "--look: must lie in 1..={}, got {}",
            design.looks(),
            args.look
        )));
    }
    let file = std::fs::File::open(&args.data).map_err(|e| CliError::Data(format!("{}: {e}", args.data.display())))?;
    let subjects = read_subjects_csv(file)?;

    let previous = match &args.state {
        Some(p) if p.exists() => {
            let state: AnalysisState = serde_json::from_str(&read_text(p, CliError::Data)?)
                .map_err(|e| CliError::StateMismatch(format!("{}: {e}", p.display())))?;
            if state.version != STATE_VERSION {
                return Err(CliError::StateMismatch(format!("unsupported state version {}", state.version)));
            }
            if state.test != test || &state.design != design {
                return Err(CliError::StateMismatch("state was written for a different test or design".into()));
            }
            Some(state)
        }
        _ => None,
    };
    let through = args.look.max(previous.as_ref().map_or(0, |s| s.looks.len()));
    let mut looks = analyze_dataset(subjects, design, &test, through, config.mvn)?;
    if let Some(state) = &previous {
        for (fresh, frozen) in looks.iter().zip(&state.looks) {
            if fresh != frozen {
                return Err(CliError::StateMismatch(format!(
                    "look {} recomputed from the data differs from the stored look",
                    frozen.look
                )));
            }
        }
    }
    if let Some(p) = &args.state {
        let state = AnalysisState {
            version: STATE_VERSION,
            test,
            design: design.clone(),
            looks: looks.clone(),
        };
        write_text(p, &to_json(&state))?;
    }
    looks.truncate(args.look);
    let report = AnalysisReport {
        test,
        look: args.look,
        stop_look: looks.iter().find(|l| l.reject).map(|l| l.look),
        looks,
    };
    let text = to_json(&report);
    if let Some(p) = &args.out {
        write_text(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

/// Reads a square matrix written as comma-separated rows; a leading
/// non-numeric row is taken as a header.
pub fn read_matrix_csv(text: &str) -> CliResult<SymMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(CliError::Data(format!("covariance row {}: {e}", i + 1))),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data("covariance matrix is empty".into()));
    }
    Ok(SymMatrix::from_rows(&rows)?)
}

pub fn cmd_boundaries(args: &BoundariesArgs) -> CliResult<()> {
    let plan: SpendingPlan = serde_json::from_str(&read_text(&args.plan, CliError::Config)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.plan.display())))?;
    plan.validate()?;
    let cov = read_matrix_csv(&read_text(&args.cov, CliError::Data)?)?;
    if cov.dim() != plan.looks() {
        return Err(CliError::Data(format!(
            "covariance has {} rows but the plan has {} looks",
            cov.dim(),
            plan.looks()
        )));
    }
    let schedule = boundaries_for(&cov, &plan, args.method, args.seed)?;
    let text = to_json(&schedule);
    if let Some(p) = &args.out {
        write_text(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

/// Boundary schedule for covariance `cov` under `plan`.
pub fn boundaries_for(
    cov: &SymMatrix,
    plan: &SpendingPlan,
    method: MethodArg,
    seed: Option<u64>,
) -> CliResult<BoundarySchedule> {
    crate::matrix::chol_decompose(cov)?;
    let schedule = match method {
        MethodArg::Indinc => indinc_boundaries(&cov.diagonal(), plan)?,
        MethodArg::Mvn => {
            let mut config = MvnConfig::default();
            if let Some(seed) = seed {
                config.seed = seed;
            }
            mvn_boundaries(&cov.to_correlation()?, plan, &config)?
        }
    };
    Ok(schedule)
}
