//! Balanced panel datasets and their on-disk formats.
//!
//! Input is long-format CSV with header `id,time,y,x1,...,xp`; rows may come
//! in any order. Estimates are written as versioned JSON records, one per
//! line, using shortest round-trip float formatting so reloading reproduces
//! every number bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows};
use crate::md::{EstimatorConfig, MDEstimate};
use crate::qr::DesignMatrix;

/// Balanced panel: `n` individuals observed over the same `T` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    ids: Vec<String>,
    regressor_names: Vec<String>,
    start_times: Vec<i64>,
    t: usize,
    p: usize,
    /// `y[i * T + t]`
    y: Vec<f64>,
    /// `x[(i * T + t) * p + j]`
    x: Vec<f64>,
}

impl PanelDataset {
    /// Builds a panel from individual-major arrays.
    pub fn new(ids: Vec<String>, t: usize, p: usize, y: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::Input("panel has no individuals".into()));
        }
        if t == 0 {
            return Err(Error::Input("panel has no periods".into()));
        }
        if p == 0 {
            return Err(Error::Input(
                "panel needs at least one regressor besides the intercept".into(),
            ));
        }
        if y.len() != n * t || x.len() != n * t * p {
            return Err(Error::Input(format!(
                "array sizes do not match n = {n}, T = {t}, p = {p}"
            )));
        }
        if let Some(pos) = y.iter().chain(&x).position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite value at flat position {pos}"
            )));
        }
        let mut seen = HashMap::new();
        for (i, id) in ids.iter().enumerate() {
            if let Some(prev) = seen.insert(id.as_str(), i) {
                return Err(Error::Input(format!(
                    "individual id `{id}` repeated at positions {prev} and {i}"
                )));
            }
        }
        let regressor_names = (1..=p).map(|j| format!("x{j}")).collect();
        Ok(Self {
            start_times: vec![1; n],
            ids,
            regressor_names,
            t,
            p,
            y,
            x,
        })
    }

    pub fn with_regressor_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(Error::Input(format!(
                "{} regressor names given for p = {}",
                names.len(),
                self.p
            )));
        }
        self.regressor_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn regressor_names(&self) -> &[String] {
        &self.regressor_names
    }

    pub fn response(&self, i: usize) -> &[f64] {
        &self.y[i * self.t..(i + 1) * self.t]
    }

    /// Row-major `T × p` regressors of individual `i`.
    pub fn regressors(&self, i: usize) -> &[f64] {
        &self.x[i * self.t * self.p..(i + 1) * self.t * self.p]
    }

    /// `Z_it' = (1, X_it')` stacked over `t`.
    pub fn design(&self, i: usize) -> Result<DesignMatrix> {
        DesignMatrix::with_intercept(self.t, self.p, self.regressors(i))
    }

    /// Eager full-rank check of every individual design.
    pub fn check_designs(&self) -> Result<()> {
        for i in 0..self.n() {
            self.design(i)?
                .check_full_rank()
                .map_err(|e| Error::Individual {
                    individual: self.ids[i].clone(),
                    source: Box::new(e),
                })?;
        }
        Ok(())
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Keeps only the listed individuals, in the given order.
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(keep.len());
        let mut y = Vec::with_capacity(keep.len() * self.t);
        let mut x = Vec::with_capacity(keep.len() * self.t * self.p);
        let mut starts = Vec::with_capacity(keep.len());
        for &i in keep {
            ids.push(self.ids[i].clone());
            y.extend_from_slice(self.response(i));
            x.extend_from_slice(self.regressors(i));
            starts.push(self.start_times[i]);
        }
        let mut out = Self::new(ids, self.t, self.p, y, x)?
            .with_regressor_names(self.regressor_names.clone())?;
        out.start_times = starts;
        Ok(out)
    }
}

/// Supported input layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelFormat {
    CsvLong,
}

/// Parses a long-format panel. Validation is total: any malformed input
/// yields an error and no dataset.
pub fn load_panel<R: Read>(source: R, format: PanelFormat) -> Result<PanelDataset> {
    match format {
        PanelFormat::CsvLong => load_csv_long(source),
    }
}

fn load_csv_long<R: Read>(source: R) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Input(format!("cannot read header: {e}")))?
        .clone();
    let names: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    let expected = ["id", "time", "y"];
    if names.len() < 3
        || !names
            .iter()
            .zip(expected)
            .all(|(h, e)| h.eq_ignore_ascii_case(e))
    {
        return Err(Error::Input(format!(
            "header must start with `id,time,y`, found `{}`",
            names.join(",")
        )));
    }
    let p = names.len() - 3;
    if p == 0 {
        return Err(Error::Input(
            "no regressor columns: the model needs at least one x".into(),
        ));
    }

    struct Obs {
        time: i64,
        y: f64,
        x: Vec<f64>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Obs>> = HashMap::new();
    let mut seen: HashMap<(String, i64), u64> = HashMap::new();

    for (idx, record) in reader.records().enumerate() {
        // header is line 1
        let line = idx as u64 + 2;
        let record = record.map_err(|e| Error::Input(format!("row {line}: {e}")))?;
        if record.len() != names.len() {
            return Err(Error::Input(format!(
                "row {line}: expected {} fields, found {}",
                names.len(),
                record.len()
            )));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(Error::Input(format!("row {line}: empty id")));
        }
        let time: i64 = record[1].parse().map_err(|_| {
            Error::Input(format!(
                "row {line}: time `{}` is not an integer",
                &record[1]
            ))
        })?;
        let parse = |col: usize| -> Result<f64> {
            let v: f64 = record[col].parse().map_err(|_| {
                Error::Input(format!(
                    "row {line}: column `{}` value `{}` is not numeric",
                    names[col], &record[col]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Input(format!(
                    "row {line}: column `{}` is not finite",
                    names[col]
                )));
            }
            Ok(v)
        };
        let y = parse(2)?;
        let x = (3..names.len()).map(parse).collect::<Result<Vec<_>>>()?;
        if let Some(first) = seen.insert((id.clone(), time), line) {
            return Err(Error::Input(format!(
                "duplicate observation for id `{id}` at time {time} (rows {first} and {line})"
            )));
        }
        let group = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        group.push(Obs { time, y, x });
    }
    if order.is_empty() {
        return Err(Error::Input("no data rows".into()));
    }

    let t = groups.values().map(Vec::len).max().unwrap_or(0);
    let mut counts: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for id in &order {
        counts.entry(groups[id].len()).or_default().push(id);
    }
    if counts.len() > 1 {
        let short: Vec<String> = order
            .iter()
            .filter(|id| groups[*id].len() != t)
            .map(|id| format!("{id} ({} of {t} periods)", groups[id].len()))
            .collect();
        return Err(Error::Unbalanced(format!(
            "individuals with missing periods: {}; only balanced panels are supported, \
             drop or complete these individuals",
            short.join(", ")
        )));
    }

    let mut ids = Vec::with_capacity(order.len());
    let mut starts = Vec::with_capacity(order.len());
    let mut y = Vec::with_capacity(order.len() * t);
    let mut x = Vec::with_capacity(order.len() * t * p);
    for id in order {
        let mut obs = groups.remove(&id).expect("grouped id");
        obs.sort_by_key(|o| o.time);
        let start = obs[0].time;
        if let Some(gap) = obs
            .iter()
            .enumerate()
            .find(|(k, o)| o.time != start + *k as i64)
        {
            return Err(Error::Unbalanced(format!(
                "individual {id} has non-consecutive time index {} (expected {})",
                gap.1.time,
                start + gap.0 as i64
            )));
        }
        for o in obs {
            y.push(o.y);
            x.extend(o.x);
        }
        ids.push(id);
        starts.push(start);
    }
    let mut panel =
        PanelDataset::new(ids, t, p, y, x)?.with_regressor_names(names[3..].to_vec())?;
    panel.start_times = starts;
    Ok(panel)
}

/// Writes the panel back in long CSV form with round-trip float formatting.
pub fn write_panel<W: Write>(panel: &PanelDataset, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["id".to_string(), "time".into(), "y".into()];
    header.extend(panel.regressor_names.iter().cloned());
    w.write_record(&header).map_err(csv_io)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..panel.n() {
        let xs = panel.regressors(i);
        for (t, y) in panel.response(i).iter().enumerate() {
            row.clear();
            row.push(panel.ids[i].clone());
            row.push((panel.start_times[i] + t as i64).to_string());
            row.push(y.to_string());
            row.extend(
                xs[t * panel.p..(t + 1) * panel.p]
                    .iter()
                    .map(f64::to_string),
            );
            w.write_record(&row).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Input(format!("{other:?}")),
    }
}

pub const ESTIMATE_FORMAT: &str = "panelq.estimate";
pub const ESTIMATE_VERSION: u32 = 1;

/// Self-describing serialisation of an [`MDEstimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub format: String,
    pub version: u32,
    pub tau: f64,
    pub mode: crate::covariance::CovarianceMode,
    pub n: usize,
    pub t: usize,
    pub p: usize,
    pub regressors: Vec<String>,
    pub beta_md: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub sigma_hat: Vec<Vec<f64>>,
    pub weight_sum: Vec<Vec<f64>>,
    pub d_t: f64,
    pub d_t_clamped: bool,
    pub m_t: usize,
    pub individuals: Vec<IndividualRecord>,
    pub dropped: Vec<DroppedRecord>,
    pub config: EstimatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub id: String,
    pub alpha_hat: f64,
    pub gamma: Vec<f64>,
    pub w_hat: Vec<Vec<f64>>,
    pub n_truncated_densities: usize,
    pub psd_repaired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub id: String,
    pub reason: String,
}

impl EstimateRecord {
    pub fn from_estimate(est: &MDEstimate) -> Self {
        Self {
            format: ESTIMATE_FORMAT.into(),
            version: ESTIMATE_VERSION,
            tau: est.tau,
            mode: est.mode,
            n: est.n,
            t: est.t,
            p: est.beta_md.len(),
            regressors: est.regressors.clone(),
            beta_md: est.beta_md.iter().cloned().collect(),
            std_errors: est.std_errors.clone(),
            sigma_hat: to_rows(&est.sigma_hat),
            weight_sum: to_rows(&est.weight_sum),
            d_t: est.d_t,
            d_t_clamped: est.d_t_clamped,
            m_t: est.m_t,
            individuals: est
                .per_individual
                .iter()
                .map(|ind| IndividualRecord {
                    id: ind.id.clone(),
                    alpha_hat: ind.gamma[0],
                    gamma: ind.gamma.clone(),
                    w_hat: to_rows(&ind.w_hat),
                    n_truncated_densities: ind.n_truncated_densities,
                    psd_repaired: ind.psd_repaired,
                })
                .collect(),
            dropped: est
                .dropped
                .iter()
                .map(|(id, reason)| DroppedRecord {
                    id: id.clone(),
                    reason: reason.clone(),
                })
                .collect(),
            config: est.config.clone(),
        }
    }

    pub fn sigma_matrix(&self) -> nalgebra::DMatrix<f64> {
        from_rows(&self.sigma_hat)
    }
}

/// Appends one JSON line for `est` to `sink` and returns the record written.
pub fn write_estimate<W: Write>(est: &MDEstimate, mut sink: W) -> Result<EstimateRecord> {
    let record = EstimateRecord::from_estimate(est);
    serde_json::to_writer(&mut sink, &record)?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(record)
}

/// Reads every record of a JSON-lines estimate file.
pub fn read_estimates<R: BufRead>(source: R) -> Result<Vec<EstimateRecord>> {
    let mut out = Vec::new();
    for line in source.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)?;
        check_header(&value, ESTIMATE_FORMAT, ESTIMATE_VERSION)?;
        out.push(serde_json::from_value(value)?);
    }
    Ok(out)
}

/// Verifies the `format` and `version` fields of a record.
pub(crate) fn check_header(value: &serde_json::Value, format: &str, version: u32) -> Result<()> {
    let found_format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if found_format != format {
        return Err(Error::Version {
            found: format!("format `{found_format}`"),
            expected: format!("format `{format}`"),
        });
    }
    let found = value.get("version").and_then(|v| v.as_u64());
    if found != Some(version as u64) {
        return Err(Error::Version {
            found: found.map_or("none".into(), |v| v.to_string()),
            expected: version.to_string(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = "id,time,y,x1\nA,1,1.0,0.5\nA,2,2.0,1.5\nA,3,3.5,2.0\n\
                         B,3,0.1,4.0\nB,1,0.3,1.0\nB,2,0.2,2.5\n";

    #[test]
    fn smoke_panel() {
        let p = load_panel(SMOKE.as_bytes(), PanelFormat::CsvLong).unwrap();
        assert_eq!((p.n(), p.t(), p.p()), (2, 3, 1));
        assert_eq!(p.ids(), &["A".to_string(), "B".to_string()]);
        // B sorted by time
        assert_eq!(p.response(1), &[0.3, 0.2, 0.1]);
        assert_eq!(p.regressors(1), &[1.0, 2.5, 4.0]);
    }

    #[test]
    fn missing_row_names_the_individual() {
        let text = "id,time,y,x1\nA,1,1,1\nA,2,2,2\nA,3,3,3\nB,1,1,1\nB,2,2,2\n";
        match load_panel(text.as_bytes(), PanelFormat::CsvLong) {
            Err(Error::Unbalanced(msg)) => {
                assert!(msg.contains("B (2 of 3"), "{msg}");
                assert!(!msg.contains("A ("));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_observation() {
        let text = "id,time,y,x1\nA,1,1,1\nA,1,2,2\n";
        let err = load_panel(text.as_bytes(), PanelFormat::CsvLong).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let text = "id,time,y,x1\nA,1,1,1\nA,2,oops,2\n";
        let err = load_panel(text.as_bytes(), PanelFormat::CsvLong).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn no_regressors() {
        let text = "id,time,y\nA,1,1\nA,2,2\n";
        assert!(load_panel(text.as_bytes(), PanelFormat::CsvLong).is_err());
    }

    #[test]
    fn bad_header_and_gaps() {
        assert!(load_panel("a,b,c,d\n".as_bytes(), PanelFormat::CsvLong).is_err());
        let text = "id,time,y,x1\nA,1,1,1\nA,3,2,2\nB,1,1,1\nB,2,2,2\n";
        assert!(matches!(
            load_panel(text.as_bytes(), PanelFormat::CsvLong),
            Err(Error::Unbalanced(_))
        ));
        assert!(load_panel("id,time,y,x1\n".as_bytes(), PanelFormat::CsvLong).is_err());
        let text = "id,time,y,x1\nA,1,inf,1\n";
        assert!(load_panel(text.as_bytes(), PanelFormat::CsvLong).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = load_panel(SMOKE.as_bytes(), PanelFormat::CsvLong).unwrap();
        let mut buf = Vec::new();
        write_panel(&p, &mut buf).unwrap();
        let back = load_panel(buf.as_slice(), PanelFormat::CsvLong).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let line = r#"{"format":"panelq.estimate","version":99}"#;
        assert!(matches!(
            read_estimates(line.as_bytes()),
            Err(Error::Version { .. })
        ));
    }
}
