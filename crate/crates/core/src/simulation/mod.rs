//! Monte Carlo experiments on location-scale-shift panels.
//!
//! A *data cell* is one `(λ, dist, n, T)` combination; every requested `τ`
//! is estimated on the same generated panels. Replication `r` of data cell
//! `c` draws from its own ChaCha20 stream keyed by `(seed, c, r)`, and
//! results are reduced in replication order, so reports do not depend on
//! the number of worker threads.

pub mod dgp;
pub mod oracle;
pub mod presets;
pub mod table;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::ErrorDist;
use crate::error::{Error, Result};
use crate::md::{confidence_interval, estimate_md_with, wald_test, EstimatorConfig, Execution};
use crate::panel::check_header;

pub use dgp::{generate_panel, replication_rng, true_beta, Dependence, DgpSpec, GeneratedPanel};
pub use oracle::{population_oracle, population_weights, PopulationMatrices};

pub const REPORT_FORMAT: &str = "panelq.simulation";
pub const REPORT_VERSION: u32 = 1;
/// A cell is marked failed when more than this share of replications fail.
pub const MAX_FAILURE_SHARE: f64 = 0.01;
/// Nominal level of the recorded confidence intervals and Wald tests.
pub const NOMINAL_LEVEL: f64 = 0.95;

fn default_beta() -> f64 {
    1.0
}

/// Grid, design and estimator settings for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_grid: Vec<usize>,
    pub t_grid: Vec<usize>,
    pub taus: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub error_dists: Vec<ErrorDist>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub dependence: Dependence,
    #[serde(default)]
    pub estimator: EstimatorConfig,
}

impl SimulationConfig {
    /// Single-cell configuration with default design constants.
    pub fn single(n: usize, t: usize, tau: f64, lambda: f64, dist: ErrorDist) -> Self {
        Self {
            n_grid: vec![n],
            t_grid: vec![t],
            taus: vec![tau],
            lambdas: vec![lambda],
            error_dists: vec![dist],
            beta: 1.0,
            replications: 500,
            seed: 1,
            dependence: Dependence::None,
            estimator: EstimatorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("n_grid", self.n_grid.is_empty()),
            ("t_grid", self.t_grid.is_empty()),
            ("taus", self.taus.is_empty()),
            ("lambdas", self.lambdas.is_empty()),
            ("error_dists", self.error_dists.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("{name} is empty")));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.replications > u32::MAX as usize {
            return Err(Error::Config("too many replications".into()));
        }
        if let Some(t) = self.t_grid.iter().find(|&&t| t < 4) {
            return Err(Error::Config(format!("T = {t} is below the minimum of 4")));
        }
        if self.n_grid.contains(&0) {
            return Err(Error::Config("n must be positive".into()));
        }
        if let Some(tau) = self.taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Config(format!("tau = {tau} is outside (0, 1)")));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        for &lambda in &self.lambdas {
            if !lambda.is_finite() {
                return Err(Error::Config("lambda must be finite".into()));
            }
            for &dist in &self.error_dists {
                for &n in &self.n_grid {
                    self.dgp_spec(n, 4, lambda, dist).validate()?;
                }
            }
        }
        if let Some(d) = self.estimator.d_t {
            if !(d > 0.0) {
                return Err(Error::Config(format!("d_t = {d} must be positive")));
            }
        }
        if self.data_cells().len() > u32::MAX as usize {
            return Err(Error::Config("grid too large".into()));
        }
        Ok(())
    }

    fn dgp_spec(&self, n: usize, t: usize, lambda: f64, dist: ErrorDist) -> DgpSpec {
        DgpSpec {
            n,
            t,
            beta: self.beta,
            lambda,
            dist,
            dependence: self.dependence,
            error_scale: 1.0,
        }
    }

    /// Data cells in canonical order: λ, distribution, n, T.
    pub fn data_cells(&self) -> Vec<DataCell> {
        let mut out = Vec::new();
        for &lambda in &self.lambdas {
            for &dist in &self.error_dists {
                for &n in &self.n_grid {
                    for &t in &self.t_grid {
                        out.push(DataCell { lambda, dist, n, t });
                    }
                }
            }
        }
        out
    }
}

/// Design shared by all `τ` of one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataCell {
    pub lambda: f64,
    pub dist: ErrorDist,
    pub n: usize,
    pub t: usize,
}

/// Summary of one `(λ, dist, n, T, τ)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub lambda: f64,
    pub dist: ErrorDist,
    pub n: usize,
    pub t: usize,
    pub tau: f64,
    pub beta0: f64,
    pub replications: usize,
    pub replications_used: usize,
    pub failures: usize,
    /// More than 1% of replications failed.
    pub failed: bool,
    pub first_failure: Option<String>,
    pub mean_beta: Option<f64>,
    /// `T · mean(β̂ − β₀)`.
    pub t_times_bias: Option<f64>,
    /// `√(nT) · sd(β̂)`; absent with fewer than two usable replications.
    pub sqrt_nt_times_se: Option<f64>,
    /// Monte Carlo standard error of `t_times_bias`.
    pub mc_std_error_of_bias: Option<f64>,
    /// `√(nT) · mean(reported SE)`.
    pub sqrt_nt_times_mean_reported_se: Option<f64>,
    /// Share of 95% intervals covering `β₀`.
    pub coverage: Option<f64>,
    /// Share of 5% Wald tests of `β = β₀` rejecting.
    pub wald_rejection_rate: Option<f64>,
}

impl CellResult {
    pub fn key(&self) -> CellKey {
        CellKey::new(self.lambda, self.dist, self.n, self.t, self.tau)
    }
}

/// Cell coordinates with `λ` and `τ` stored as fixed-point integers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub lambda_milli: i64,
    pub dist: ErrorDist,
    pub n: usize,
    pub t: usize,
    pub tau_micro: i64,
}

impl CellKey {
    pub fn new(lambda: f64, dist: ErrorDist, n: usize, t: usize, tau: f64) -> Self {
        Self {
            lambda_milli: (lambda * 1e3).round() as i64,
            dist,
            n,
            t,
            tau_micro: (tau * 1e6).round() as i64,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda_milli as f64 / 1e3
    }

    pub fn tau(&self) -> f64 {
        self.tau_micro as f64 / 1e6
    }
}

/// Machine-readable outcome of [`run_monte_carlo`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub format: String,
    pub version: u32,
    /// Crate name and version that produced the record.
    pub build: String,
    pub config: SimulationConfig,
    pub cells: Vec<CellResult>,
}

impl SimulationReport {
    pub fn cell(
        &self,
        lambda: f64,
        dist: ErrorDist,
        n: usize,
        t: usize,
        tau: f64,
    ) -> Option<&CellResult> {
        let key = CellKey::new(lambda, dist, n, t, tau);
        self.cells.iter().find(|c| c.key() == key)
    }

    /// Pretty-printed JSON followed by a newline.
    pub fn write_record<W: Write>(&self, mut sink: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut sink, self)?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_record<R: BufRead>(mut source: R) -> Result<Self> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        check_header(&value, REPORT_FORMAT, REPORT_VERSION)?;
        Ok(serde_json::from_value(value)?)
    }
}

pub fn build_id() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

/// Outcome of one replication at one `τ`.
#[derive(Debug, Clone)]
pub struct Draw {
    pub beta_hat: f64,
    pub std_error: f64,
    pub covered: bool,
    pub rejected: bool,
}

/// Estimates every `τ` of `cfg` on replication `rep` of data cell `index`.
pub fn run_replication(
    cfg: &SimulationConfig,
    index: usize,
    cell: &DataCell,
    rep: usize,
) -> Vec<std::result::Result<Draw, String>> {
    let mut rng = replication_rng(cfg.seed, index as u32, rep as u32);
    let spec = cfg.dgp_spec(cell.n, cell.t, cell.lambda, cell.dist);
    let generated = match generate_panel(&spec, &mut rng) {
        Ok(g) => g,
        Err(e) => return vec![Err(e.to_string()); cfg.taus.len()],
    };
    cfg.taus
        .iter()
        .map(|&tau| {
            let beta0 = generated.true_slope(tau).map_err(|e| e.to_string())?;
            let est = estimate_md_with(&generated.panel, tau, &cfg.estimator, Execution::Serial)
                .map_err(|e| e.to_string())?;
            let (lo, hi) =
                confidence_interval(&est, 0, NOMINAL_LEVEL).map_err(|e| e.to_string())?;
            let wald = wald_test(
                &est,
                &DMatrix::identity(1, 1),
                &DVector::from_element(1, beta0),
            )
            .map_err(|e| e.to_string())?;
            Ok(Draw {
                beta_hat: est.beta_md[0],
                std_error: est.std_errors[0],
                covered: lo <= beta0 && beta0 <= hi,
                rejected: wald.p_value < 1.0 - NOMINAL_LEVEL,
            })
        })
        .collect()
}

/// Runs every cell of `cfg` on the current rayon pool.
pub fn run_monte_carlo(cfg: &SimulationConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let cells = cfg.data_cells();
    let reps = cfg.replications;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    let draws: Vec<Vec<std::result::Result<Draw, String>>> = jobs
        .par_iter()
        .map(|&(c, r)| run_replication(cfg, c, &cells[c], r))
        .collect();

    let mut out = Vec::with_capacity(cells.len() * cfg.taus.len());
    for (c, cell) in cells.iter().enumerate() {
        let block = &draws[c * reps..(c + 1) * reps];
        for (k, &tau) in cfg.taus.iter().enumerate() {
            let beta0 = true_beta(tau, cfg.beta, cell.lambda, cell.dist)?;
            let column = block.iter().map(|d| &d[k]);
            out.push(summarize(cell, tau, beta0, column));
        }
    }
    Ok(SimulationReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        build: build_id(),
        config: cfg.clone(),
        cells: out,
    })
}

fn summarize<'a, I>(cell: &DataCell, tau: f64, beta0: f64, draws: I) -> CellResult
where
    I: Iterator<Item = &'a std::result::Result<Draw, String>>,
{
    let mut ok = Vec::new();
    let mut failures = 0usize;
    let mut first_failure = None;
    let mut total = 0usize;
    for d in draws {
        total += 1;
        match d {
            Ok(draw) => ok.push(draw),
            Err(e) => {
                failures += 1;
                first_failure.get_or_insert_with(|| e.clone());
            }
        }
    }
    let used = ok.len();
    let nt = (cell.n * cell.t) as f64;
    let t = cell.t as f64;
    let mean = |f: &dyn Fn(&Draw) -> f64| ok.iter().map(|d| f(d)).sum::<f64>() / used as f64;
    let (mean_beta, sd) = if used == 0 {
        (None, None)
    } else {
        let m = mean(&|d| d.beta_hat);
        let sd = (used > 1).then(|| {
            let ss: f64 = ok.iter().map(|d| (d.beta_hat - m).powi(2)).sum();
            (ss / (used - 1) as f64).sqrt()
        });
        (Some(m), sd)
    };
    let some = |v: f64| (used > 0).then_some(v);
    CellResult {
        lambda: cell.lambda,
        dist: cell.dist,
        n: cell.n,
        t: cell.t,
        tau,
        beta0,
        replications: total,
        replications_used: used,
        failures,
        failed: failures as f64 > MAX_FAILURE_SHARE * total as f64,
        first_failure,
        mean_beta,
        t_times_bias: mean_beta.map(|m| t * (m - beta0)),
        sqrt_nt_times_se: sd.map(|s| nt.sqrt() * s),
        mc_std_error_of_bias: sd.map(|s| t * s / (used as f64).sqrt()),
        sqrt_nt_times_mean_reported_se: if used > 0 {
            Some(nt.sqrt() * mean(&|d| d.std_error))
        } else {
            None
        },
        coverage: some(ok.iter().filter(|d| d.covered).count() as f64 / used.max(1) as f64),
        wald_rejection_rate: some(
            ok.iter().filter(|d| d.rejected).count() as f64 / used.max(1) as f64,
        ),
    }
}

/// One `(n, λ, dist, τ)` group of [`bias_constancy_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstancyDiagnostic {
    pub lambda: f64,
    pub dist: ErrorDist,
    pub n: usize,
    pub tau: f64,
    pub t_values: Vec<usize>,
    pub t_times_bias: Vec<f64>,
    /// `max |T·bias| / min |T·bias|` across `T`.
    pub ratio: f64,
    /// Whether the group used the near-zero criterion (`λ = 0`).
    pub near_zero: bool,
    pub pass: bool,
}

/// Checks that `T × bias` is roughly constant in `T`.
///
/// For `λ ≠ 0`, a group passes when every value lies within three combined
/// Monte Carlo standard errors of the group mean. For `λ = 0`, every value
/// must lie within three Monte Carlo standard errors of zero.
pub fn bias_constancy_check(report: &SimulationReport) -> Result<Vec<ConstancyDiagnostic>> {
    let mut groups: BTreeMap<(i64, ErrorDist, usize, i64), Vec<&CellResult>> = BTreeMap::new();
    for c in &report.cells {
        let k = c.key();
        groups
            .entry((k.lambda_milli, c.dist, c.n, k.tau_micro))
            .or_default()
            .push(c);
    }
    let mut out = Vec::new();
    for (_, mut cells) in groups {
        cells.retain(|c| c.t_times_bias.is_some());
        cells.sort_by_key(|c| c.t);
        if cells.len() < 3 {
            continue;
        }
        let values: Vec<f64> = cells.iter().map(|c| c.t_times_bias.unwrap()).collect();
        let ses: Vec<f64> = cells
            .iter()
            .map(|c| c.mc_std_error_of_bias.unwrap_or(0.0))
            .collect();
        let k = values.len() as f64;
        let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        let max = abs.iter().cloned().fold(f64::MIN, f64::max);
        let min = abs.iter().cloned().fold(f64::MAX, f64::min);
        let ratio = if min > 0.0 { max / min } else { f64::INFINITY };
        let near_zero = cells[0].lambda == 0.0;
        let pass = if near_zero {
            values.iter().zip(&ses).all(|(v, s)| v.abs() <= 3.0 * s)
        } else {
            let mean = values.iter().sum::<f64>() / k;
            let var_mean = ses.iter().map(|s| s * s).sum::<f64>() / (k * k);
            values
                .iter()
                .zip(&ses)
                .all(|(v, s)| (v - mean).abs() <= 3.0 * (s * s + var_mean).sqrt())
        };
        out.push(ConstancyDiagnostic {
            lambda: cells[0].lambda,
            dist: cells[0].dist,
            n: cells[0].n,
            tau: cells[0].tau,
            t_values: cells.iter().map(|c| c.t).collect(),
            t_times_bias: values,
            ratio,
            near_zero,
            pass,
        });
    }
    if out.is_empty() {
        return Err(Error::Config(
            "bias constancy needs at least three values of T at some (n, lambda, dist, tau)".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(lambda: f64, t: usize, v: f64, se: f64) -> CellResult {
        CellResult {
            lambda,
            dist: ErrorDist::Normal,
            n: 250,
            t,
            tau: 0.25,
            beta0: 1.0,
            replications: 2000,
            replications_used: 2000,
            failures: 0,
            failed: false,
            first_failure: None,
            mean_beta: None,
            t_times_bias: Some(v),
            sqrt_nt_times_se: None,
            mc_std_error_of_bias: Some(se),
            sqrt_nt_times_mean_reported_se: None,
            coverage: None,
            wald_rejection_rate: None,
        }
    }

    fn report(cells: Vec<CellResult>) -> SimulationReport {
        SimulationReport {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            build: build_id(),
            config: SimulationConfig::single(250, 25, 0.25, 1.0, ErrorDist::Normal),
            cells,
        }
    }

    #[test]
    fn constancy_ratio_on_published_values() {
        let r = report(vec![
            cell(1.0, 25, 1.106, 0.02),
            cell(1.0, 50, 1.127, 0.03),
            cell(1.0, 100, 1.161, 0.04),
            cell(1.0, 250, 1.351, 0.07),
        ]);
        let d = bias_constancy_check(&r).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0].ratio - 1.351 / 1.106).abs() < 1e-12);
        assert!(d[0].ratio <= 1.25);
        assert!(!d[0].near_zero);
    }

    #[test]
    fn constancy_near_zero_branch() {
        let r = report(vec![
            cell(0.0, 25, 0.001, 0.01),
            cell(0.0, 50, -0.01, 0.01),
            cell(0.0, 100, 0.02, 0.01),
        ]);
        let d = bias_constancy_check(&r).unwrap();
        assert!(d[0].near_zero && d[0].pass);
        let r = report(vec![
            cell(0.0, 25, 0.001, 0.01),
            cell(0.0, 50, 0.5, 0.01),
            cell(0.0, 100, 0.0, 0.01),
        ]);
        assert!(!bias_constancy_check(&r).unwrap()[0].pass);
    }

    #[test]
    fn constancy_needs_three_t() {
        let r = report(vec![cell(1.0, 25, 1.0, 0.1)]);
        assert!(bias_constancy_check(&r).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = SimulationConfig::single(5, 10, 0.5, 0.0, ErrorDist::Normal);
        assert!(c.validate().is_ok());
        c.t_grid = vec![3];
        assert!(c.validate().is_err());
        c.t_grid = vec![10];
        c.replications = 0;
        assert!(c.validate().is_err());
        c.replications = 1;
        c.taus = vec![1.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_replication_cell() {
        let mut c = SimulationConfig::single(4, 20, 0.5, 0.5, ErrorDist::Normal);
        c.replications = 1;
        let r = run_monte_carlo(&c).unwrap();
        let cell = &r.cells[0];
        assert_eq!(cell.replications_used, 1);
        assert!(cell.sqrt_nt_times_se.is_none());
        assert!(cell.mc_std_error_of_bias.is_none());
        let draws = run_replication(&c, 0, &c.data_cells()[0], 0);
        let b = draws[0].as_ref().unwrap().beta_hat;
        assert_eq!(cell.t_times_bias.unwrap(), 20.0 * (b - cell.beta0));
    }

    #[test]
    fn record_round_trip() {
        let mut c = SimulationConfig::single(3, 12, 0.5, 0.0, ErrorDist::T3);
        c.replications = 3;
        let r = run_monte_carlo(&c).unwrap();
        let mut buf = Vec::new();
        r.write_record(&mut buf).unwrap();
        let back = SimulationReport::read_record(&buf[..]).unwrap();
        assert_eq!(back, r);
        let bad = String::from_utf8(buf)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(
            SimulationReport::read_record(bad.as_bytes()),
            Err(Error::Version { .. })
        ));
    }
}
