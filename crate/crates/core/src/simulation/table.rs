//! Text tables for simulation cells and comparison with reference values.
//!
//! Layout: one table per `λ` and metric, rows `(n, T, n/T)`, column blocks
//! per error law and `τ`. Cells absent from the input print as `--`, cells
//! whose replication failure share exceeded the limit print as `fail`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use serde::Deserialize;

use crate::dist::ErrorDist;
use crate::error::{Error, Result};

use super::{CellKey, CellResult, SimulationReport};

const BUNDLED_REFERENCE: &str = include_str!("../../data/published.csv");
/// Relative tolerance applied to scaled standard errors in comparisons.
pub const SE_REL_TOL: f64 = 0.10;
/// Monte Carlo standard errors allowed between a simulated and a reference bias.
pub const BIAS_MC_SES: f64 = 3.0;

const COL: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bias,
    Se,
}

impl Metric {
    pub fn title(self) -> &'static str {
        match self {
            Metric::Bias => "T x bias",
            Metric::Se => "sqrt(nT) x SE",
        }
    }

    pub fn value(self, c: &CellResult) -> Option<f64> {
        match self {
            Metric::Bias => c.t_times_bias,
            Metric::Se => c.sqrt_nt_times_se,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ReferenceRow {
    lambda: f64,
    metric: Metric,
    n: usize,
    t: usize,
    dist: ErrorDist,
    tau: f64,
    value: f64,
}

/// Published reference values keyed by cell and metric.
#[derive(Debug, Clone, Default)]
pub struct Reference {
    values: BTreeMap<(CellKey, Metric), f64>,
}

impl Reference {
    /// Values shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_REFERENCE.as_bytes()).expect("bundled reference parses")
    }

    /// Reads `lambda,metric,n,t,dist,tau,value` rows.
    pub fn from_csv<R: Read>(source: R) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, row) in csv::Reader::from_reader(source).deserialize().enumerate() {
            let row: ReferenceRow =
                row.map_err(|e| Error::Input(format!("reference row {}: {e}", i + 2)))?;
            let key = CellKey::new(row.lambda, row.dist, row.n, row.t, row.tau);
            values.insert((key, row.metric), row.value);
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &CellKey, metric: Metric) -> Option<f64> {
        self.values.get(&(key.clone(), metric)).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Union of the cells of several reports; later reports win on overlap.
pub fn merge_reports(reports: &[SimulationReport]) -> Vec<CellResult> {
    let mut map: BTreeMap<CellKey, CellResult> = BTreeMap::new();
    for r in reports {
        for c in &r.cells {
            map.insert(c.key(), c.clone());
        }
    }
    map.into_values().collect()
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => {
            let s = format!("{x:.3}");
            if s == "-0.000" {
                "0.000".into()
            } else {
                s
            }
        }
        _ => "NA".into(),
    }
}

fn fmt_tau(tau_micro: i64) -> String {
    format!("t={:.2}", tau_micro as f64 / 1e6)
}

/// Renders one table per `λ` and metric.
pub fn render_tables(cells: &[CellResult]) -> String {
    let by_key: BTreeMap<CellKey, &CellResult> = cells.iter().map(|c| (c.key(), c)).collect();
    let lambdas: BTreeSet<i64> = by_key.keys().map(|k| k.lambda_milli).collect();
    let mut out = String::new();
    for lam in lambdas {
        let keys: Vec<&CellKey> = by_key.keys().filter(|k| k.lambda_milli == lam).collect();
        let dists: BTreeSet<ErrorDist> = keys.iter().map(|k| k.dist).collect();
        let taus: BTreeSet<i64> = keys.iter().map(|k| k.tau_micro).collect();
        let rows: BTreeSet<(usize, usize)> = keys.iter().map(|k| (k.n, k.t)).collect();
        for metric in [Metric::Bias, Metric::Se] {
            let _ = writeln!(out, "{}, lambda = {}", metric.title(), lam as f64 / 1e3);
            let block = taus.len() * (COL + 1);
            let mut head1 = format!("{:>5} {:>5} {:>7}", "", "", "");
            let mut head2 = format!("{:>5} {:>5} {:>7}", "n", "T", "n/T");
            for d in &dists {
                let _ = write!(head1, " |{:^block$}", d.display_name());
                head2.push_str(" |");
                for &tau in &taus {
                    let _ = write!(head2, " {:>COL$}", fmt_tau(tau));
                }
            }
            let rule = "-".repeat(head2.chars().count());
            let _ = writeln!(out, "{}", head1.trim_end());
            let _ = writeln!(out, "{head2}");
            let _ = writeln!(out, "{rule}");
            for &(n, t) in &rows {
                let _ = write!(out, "{:>5} {:>5} {:>7.2}", n, t, n as f64 / t as f64);
                for &d in &dists {
                    out.push_str(" |");
                    for &tau in &taus {
                        let key = CellKey {
                            lambda_milli: lam,
                            dist: d,
                            n,
                            t,
                            tau_micro: tau,
                        };
                        let text = match by_key.get(&key) {
                            None => "--".to_string(),
                            Some(c) if c.failed => "fail".to_string(),
                            Some(c) => fmt_value(metric.value(c)),
                        };
                        let _ = write!(out, " {text:>COL$}");
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
    }
    out
}

/// One row of [`compare_with_reference`].
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub key: CellKey,
    pub metric: Metric,
    pub simulated: Option<f64>,
    pub reference: f64,
    pub deviation: Option<f64>,
    pub tolerance: Option<f64>,
    pub within: Option<bool>,
}

/// Pairs cells with reference values. Bias must lie within three Monte
/// Carlo standard errors; scaled SEs within 10% relative.
pub fn compare_with_reference(cells: &[CellResult], reference: &Reference) -> Vec<Comparison> {
    let mut out = Vec::new();
    for c in cells {
        let key = c.key();
        for metric in [Metric::Bias, Metric::Se] {
            let Some(reference_value) = reference.get(&key, metric) else {
                continue;
            };
            let simulated = if c.failed { None } else { metric.value(c) };
            let deviation = simulated.map(|s| s - reference_value);
            let tolerance = match metric {
                Metric::Bias => c.mc_std_error_of_bias.map(|s| BIAS_MC_SES * s),
                Metric::Se => Some(SE_REL_TOL * reference_value.abs()),
            };
            let within = match (deviation, tolerance) {
                (Some(d), Some(t)) => Some(d.abs() <= t),
                _ => None,
            };
            out.push(Comparison {
                key: key.clone(),
                metric,
                simulated,
                reference: reference_value,
                deviation,
                tolerance,
                within,
            });
        }
    }
    out
}

pub fn render_comparison(rows: &[Comparison]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6} {:>8} {:>5} {:>5} {:>5} {:>6} {:>9} {:>9} {:>9} {:>9}  status",
        "lambda", "dist", "n", "T", "tau", "metric", "sim", "ref", "dev", "tol"
    );
    let mut outside = 0;
    for r in rows {
        let status = match r.within {
            Some(true) => "ok",
            Some(false) => {
                outside += 1;
                "OUTSIDE"
            }
            None => "n/a",
        };
        let metric = match r.metric {
            Metric::Bias => "bias",
            Metric::Se => "se",
        };
        let _ = writeln!(
            out,
            "{:>6} {:>8} {:>5} {:>5} {:>5.2} {:>6} {:>9} {:>9.3} {:>9} {:>9}  {status}",
            r.key.lambda(),
            r.key.dist.label(),
            r.key.n,
            r.key.t,
            r.key.tau(),
            metric,
            fmt_value(r.simulated),
            r.reference,
            fmt_value(r.deviation),
            fmt_value(r.tolerance),
        );
    }
    let _ = writeln!(
        out,
        "{outside} of {} compared values outside tolerance",
        rows.len()
    );
    out
}
