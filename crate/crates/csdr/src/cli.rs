//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use csdr_core::{standardize, SdrError, SimModel, SimModelSpec};
use thiserror::Error;

use crate::bench::{consistency_curve, run_benchmark, BenchOptions};
use crate::io::{prepare, read_csv_path, DataError, PrepareOptions};
use crate::method::{fit_method, parse_methods, Method, Settings};
use crate::report::{format_grid, write_curve_csv, write_report_csv, FitConfigEcho, FitReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(SdrError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<SdrError> for CliError {
    fn from(e: SdrError) -> Self {
        match e {
            SdrError::InvalidDimension(_) | SdrError::InvalidModel(_) => CliError::Usage(e.to_string()),
            SdrError::TooFewObservations { .. }
            | SdrError::NonFinite(_)
            | SdrError::RankDeficient { .. }
            | SdrError::DegenerateResponse
            | SdrError::Shape { .. } => CliError::Data(e.to_string()),
            other => CliError::Numeric(other),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Model(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("cannot write {}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "csdr", version, about = "Central subspace estimation (dOPG, dMAVE and baselines)")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate directions from a CSV file.
    Fit(FitArgs),
    /// Replicated runs on a simulation model.
    Simulate(SimulateArgs),
    /// Mean errors over a grid of sample sizes.
    Curve(CurveArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Tuning {
    /// Bandwidth constant.
    #[arg(long, default_value_t = Settings::default().c0)]
    pub c0: f64,
    /// Trimming threshold for density estimates.
    #[arg(long, default_value_t = Settings::default().omega0)]
    pub omega0: f64,
    /// Convergence tolerance.
    #[arg(long, default_value_t = Settings::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = Settings::default().max_iter)]
    pub max_iter: usize,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Tuning {
    fn settings(&self) -> Result<Settings, CliError> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(CliError::Usage(format!("--{name} must be a positive number")))
            }
        };
        positive(self.c0, "c0")?;
        positive(self.omega0, "omega0")?;
        positive(self.tol, "tol")?;
        if self.max_iter == 0 {
            return Err(CliError::Usage("--max-iter must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        Ok(Settings {
            c0: self.c0,
            omega0: self.omega0,
            tol: self.tol,
            max_iter: self.max_iter,
        })
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Name of the response column.
    #[arg(long)]
    pub response: String,
    #[arg(long)]
    pub q: usize,
    #[arg(long, default_value = "dmave")]
    pub method: String,
    /// Expand a categorical column into indicators (all levels but the last).
    #[arg(long)]
    pub dummy: Vec<String>,
    /// Scale each covariate to unit standard deviation before fitting.
    #[arg(long)]
    pub scale_columns: bool,
    /// JSON output path (default: standard output).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: u32,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    /// Dimension of the estimated subspace (default: the model's own).
    #[arg(long)]
    pub q: Option<usize>,
    /// Power of the mean index in model 2.
    #[arg(long, default_value_t = 1)]
    pub d: u32,
    #[arg(long, default_value = "dmave,dopg,sir")]
    pub methods: String,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// CSV report path; a JSON report is written next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Record wall-clock time in `runtime_s` (makes the report nondeterministic).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long, default_value_t = 3)]
    pub model: u32,
    /// Comma-separated ascending sample sizes.
    #[arg(long, default_value = "200,400,800")]
    pub ns: String,
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub d: u32,
    #[arg(long, default_value = "dmave,dopg")]
    pub methods: String,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// CSV output path (default: standard output).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError>
where
    T: Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn methods(list: &str) -> Result<Vec<Method>, CliError> {
    parse_methods(list).map_err(CliError::Usage)
}

fn model(id: u32) -> Result<SimModel, CliError> {
    SimModel::from_id(id).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn cmd_fit(args: &FitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let settings = args.tuning.settings()?;
    let method: Method = args.method.parse().map_err(CliError::Usage)?;
    let table = read_csv_path(&args.input)?;
    let prepared = prepare(
        &table,
        &PrepareOptions {
            response: args.response.clone(),
            dummies: args.dummy.clone(),
            scale_columns: args.scale_columns,
        },
    )?;
    let p = prepared.dataset.p();
    if args.q == 0 || args.q >= p {
        return Err(CliError::Usage(format!("q = {} must lie in [1, {p}) for {p} covariates", args.q)));
    }
    let std = standardize(&prepared.dataset)?;
    let fit = with_threads(args.tuning.threads, || fit_method(&std, method, args.q, &settings))??;
    let report = FitReport::new(
        &fit,
        FitConfigEcho {
            input: args.input.display().to_string(),
            response: prepared.response,
            covariates: prepared.covariates,
            dummy: args.dummy.clone(),
            scale_columns: args.scale_columns,
            c0: settings.c0,
            omega0: settings.omega0,
            tol: settings.tol,
            max_iter: settings.max_iter,
        },
    );
    let json = serde_json::to_string_pretty(&report).expect("fit report serializes");
    match &args.output {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{json}").and_then(|_| w.flush()).map_err(|e| io_error(path, e))?;
        }
        None => writeln!(out, "{json}").map_err(|e| CliError::Data(e.to_string()))?,
    }
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let settings = args.tuning.settings()?;
    let model = model(args.model)?;
    let methods = methods(&args.methods)?;
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let q = args.q.unwrap_or(model.default_q());
    let spec = SimModelSpec::new(model, args.n, args.p, args.seed).with_d(args.d);
    let opts = BenchOptions {
        settings,
        record_runtime: args.timing,
    };
    let report = with_threads(args.tuning.threads, || {
        run_benchmark(&spec, &methods, q, args.reps, args.seed, &opts)
    })??;
    write!(out, "{}", format_grid(&report)).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(path) = &args.output {
        let mut w = create(path)?;
        write_report_csv(&report, &mut w).map_err(|e| io_error(path, e))?;
        let json_path = path.with_extension("json");
        let mut j = create(&json_path)?;
        serde_json::to_writer_pretty(&mut j, &report).map_err(|e| io_error(&json_path, e))?;
        writeln!(j).and_then(|_| j.flush()).map_err(|e| io_error(&json_path, e))?;
    }
    Ok(())
}

fn parse_ns(list: &str) -> Result<Vec<usize>, CliError> {
    let ns = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("invalid sample size '{s}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if ns.is_empty() {
        return Err(CliError::Usage("--ns needs at least one sample size".into()));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Usage("--ns must be strictly ascending".into()));
    }
    Ok(ns)
}

pub fn cmd_curve(args: &CurveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let settings = args.tuning.settings()?;
    let model = model(args.model)?;
    let methods = methods(&args.methods)?;
    let ns = parse_ns(&args.ns)?;
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let q = args.q.unwrap_or(model.default_q());
    let opts = BenchOptions {
        settings,
        record_runtime: false,
    };
    let rows = with_threads(args.tuning.threads, || {
        consistency_curve(model, args.p, q, args.d, &ns, &methods, args.reps, args.seed, &opts)
    })??;
    match &args.output {
        Some(path) => {
            let mut w = create(path)?;
            write_curve_csv(&rows, &mut w).map_err(|e| io_error(path, e))?;
        }
        None => write_curve_csv(&rows, out).map_err(|e| CliError::Data(e.to_string()))?,
    }
    Ok(())
}

/// Parse `args` (program name first), run the command, and return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Curve(a) => cmd_curve(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn main_exit_code() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
