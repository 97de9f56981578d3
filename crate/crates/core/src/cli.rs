//! Command-line front end: `estimate`, `simulate` and `report`.
//!
//! Exit codes are those of [`Error::exit_code`]; command-line usage errors
//! exit with 2.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use crate::covariance::CovarianceMode;
use crate::error::{Error, Result};
use crate::md::{confidence_interval, estimate_md, wald_test, EstimatorConfig, MDEstimate};
use crate::panel::{load_panel, write_estimate, PanelFormat};
use crate::simulation::presets::preset;
use crate::simulation::table::{
    compare_with_reference, merge_reports, render_comparison, render_tables, Reference,
};
use crate::simulation::{run_monte_carlo, SimulationConfig, SimulationReport, MAX_FAILURE_SHARE};

#[derive(Debug, Parser)]
#[command(
    name = "panelq",
    version,
    about = "Minimum-distance quantile regression for fixed-effects panels"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Master seed (simulate only; overrides the preset or config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "PANELQ_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,
    /// File receiving the machine-readable record (or the report text).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// What goes to standard output.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Iid,
    Dependent,
}

impl From<ModeArg> for CovarianceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Iid => CovarianceMode::Iid,
            ModeArg::Dependent => CovarianceMode::Dependent,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the pooled estimator to a long-format CSV panel.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment.
    Simulate(SimulateArgs),
    /// Merge simulation records and render them as tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// CSV with header `id,time,y,x1,...,xp`.
    #[arg(long)]
    pub input: PathBuf,
    /// Quantile level; repeat for several.
    #[arg(long = "tau", default_value = "0.5")]
    pub taus: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Iid)]
    pub mode: ModeArg,
    /// Bandwidth override.
    #[arg(long = "d-t")]
    pub d_t: Option<f64>,
    /// Lag truncation override (dependent mode).
    #[arg(long = "m-t")]
    pub m_t: Option<usize>,
    /// Skip individuals whose fit fails instead of aborting.
    #[arg(long)]
    pub drop_failed: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config_file: Option<PathBuf>,
    /// Named grid, `table1`..`table6` or `table1_se`..`table3_se`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Replications per cell, overriding the preset or config file.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub replications: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Simulation record files.
    #[arg(required = true)]
    pub records: Vec<PathBuf>,
    /// Compare with the bundled reference values.
    #[arg(long)]
    pub reference: bool,
    /// Compare with reference values from a CSV file instead.
    #[arg(long, conflicts_with = "reference")]
    pub reference_file: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", chain(&e));
            e.exit_code()
        }
    }
}

fn chain(e: &Error) -> String {
    let mut text = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let s_text = s.to_string();
        if !text.contains(&s_text) {
            text.push_str(": ");
            text.push_str(&s_text);
        }
        source = s.source();
    }
    text
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.common.threads {
        builder = builder.num_threads(k as usize);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    match &cli.command {
        Command::Estimate(args) => cmd_estimate(&pool, &cli.common, args, out),
        Command::Simulate(args) => cmd_simulate(&pool, &cli.common, args, out, err),
        Command::Report(args) => cmd_report(&cli.common, args, out),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn cmd_estimate(
    pool: &rayon::ThreadPool,
    common: &CommonArgs,
    args: &EstimateArgs,
    out: &mut dyn Write,
) -> Result<()> {
    if let Some(tau) = args.taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::Parameter(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    if args.m_t.is_some() && args.mode == ModeArg::Iid {
        return Err(Error::Config("--m-t requires --mode dependent".into()));
    }
    if let Some(d) = args.d_t {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Parameter(format!("--d-t must be positive, got {d}")));
        }
    }
    let cfg = EstimatorConfig {
        mode: args.mode.into(),
        d_t: args.d_t,
        m_t: args.m_t,
        drop_failed: args.drop_failed,
        ..EstimatorConfig::default()
    };
    let mut sink = common.output.as_deref().map(create).transpose()?;
    let panel = load_panel(open(&args.input)?, PanelFormat::CsvLong)?;
    let estimates = pool.install(|| {
        args.taus
            .iter()
            .map(|&tau| estimate_md(&panel, tau, &cfg))
            .collect::<Result<Vec<_>>>()
    })?;
    for est in &estimates {
        match common.format {
            OutputFormat::Table => write_summary(est, out)?,
            OutputFormat::Record => {
                write_estimate(est, &mut *out)?;
            }
        }
        if let Some(s) = sink.as_mut() {
            write_estimate(est, s)?;
        }
    }
    if let Some(mut s) = sink {
        s.flush()?;
    }
    Ok(())
}

fn write_summary(est: &MDEstimate, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "tau = {}  mode = {}  n = {}  T = {}  d_T = {:.6}{}  m_T = {}",
        est.tau,
        est.mode,
        est.n,
        est.t,
        est.d_t,
        if est.d_t_clamped { " (clamped)" } else { "" },
        est.m_t
    )?;
    writeln!(
        out,
        "{:<12} {:>12} {:>12} {:>12} {:>12}",
        "", "estimate", "std. error", "95% lower", "95% upper"
    )?;
    for j in 0..est.p() {
        let (lo, hi) = confidence_interval(est, j, 0.95)?;
        let name = est
            .regressors
            .get(j)
            .cloned()
            .unwrap_or_else(|| format!("x{}", j + 1));
        writeln!(
            out,
            "{:<12} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            name, est.beta_md[j], est.std_errors[j], lo, hi
        )?;
    }
    let p = est.p();
    let wald = wald_test(est, &DMatrix::identity(p, p), &DVector::zeros(p))?;
    writeln!(
        out,
        "Wald test beta = 0: statistic = {:.4}, df = {}, p-value = {:.4e}",
        wald.statistic, wald.df, wald.p_value
    )?;
    let truncated = est.n_truncated_densities();
    if truncated > 0 {
        writeln!(out, "density weights truncated: {truncated}")?;
    }
    for (id, reason) in &est.dropped {
        writeln!(out, "dropped {id}: {reason}")?;
    }
    writeln!(out)?;
    Ok(())
}

fn simulation_config(common: &CommonArgs, args: &SimulateArgs) -> Result<SimulationConfig> {
    let mut cfg = match (&args.config_file, &args.preset) {
        (Some(path), None) => serde_json::from_reader(open(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        (None, Some(name)) => preset(name)?,
        _ => {
            return Err(Error::Config(
                "give exactly one of --config-file and --preset".into(),
            ))
        }
    };
    if let Some(r) = args.replications {
        cfg.replications = r as usize;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(
    pool: &rayon::ThreadPool,
    common: &CommonArgs,
    args: &SimulateArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let cfg = simulation_config(common, args)?;
    let mut sink = common.output.as_deref().map(create).transpose()?;
    let started = Instant::now();
    let report = pool.install(|| run_monte_carlo(&cfg))?;
    writeln!(
        err,
        "simulated {} cells x {} replications in {:.2}s",
        report.cells.len(),
        cfg.replications,
        started.elapsed().as_secs_f64()
    )?;
    match common.format {
        OutputFormat::Table => write!(out, "{}", render_tables(&report.cells))?,
        OutputFormat::Record => report.write_record(&mut *out)?,
    }
    if let Some(s) = sink.as_mut() {
        report.write_record(&mut *s)?;
        s.flush()?;
    }
    if let Some(c) = report.cells.iter().find(|c| c.failed) {
        return Err(Error::Simulation(format!(
            "cell lambda = {}, {}, n = {}, T = {}, tau = {}: {} of {} replications failed \
             (limit {:.0}%), first: {}",
            c.lambda,
            c.dist,
            c.n,
            c.t,
            c.tau,
            c.failures,
            c.replications,
            100.0 * MAX_FAILURE_SHARE,
            c.first_failure.as_deref().unwrap_or("unknown")
        )));
    }
    Ok(())
}

fn cmd_report(common: &CommonArgs, args: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    if common.format == OutputFormat::Record {
        return Err(Error::Config(
            "report renders tables only; use --format table".into(),
        ));
    }
    let reference = match (&args.reference_file, args.reference) {
        (Some(path), _) => Some(Reference::from_csv(open(path)?)?),
        (None, true) => Some(Reference::bundled()),
        (None, false) => None,
    };
    let reports = args
        .records
        .iter()
        .map(|path| {
            SimulationReport::read_record(open(path)?).map_err(|e| match e {
                Error::Version { found, expected } => Error::Version {
                    found: format!("{found} in {}", path.display()),
                    expected,
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cells = merge_reports(&reports);
    let mut text = render_tables(&cells);
    if let Some(reference) = reference {
        text.push_str(&render_comparison(&compare_with_reference(
            &cells, &reference,
        )));
    }
    write!(out, "{text}")?;
    if let Some(path) = &common.output {
        let mut s = create(path)?;
        s.write_all(text.as_bytes())?;
        s.flush()?;
    }
    Ok(())
}
