//! Minimum-distance pooling of per-individual quantile regression slopes.
//!
//! ```text
//! β̂_MD = (Σ_i Ŵ_i)⁻¹ Σ_i Ŵ_i β̂_i,    Σ̂ = ((1/n) Σ_i Ŵ_i)⁻¹,
//! ```
//!
//! with `Ŵ_i` the slope block of the inverse sandwich. `√(nT)(β̂_MD − β₀)` is
//! asymptotically `N(0, Σ)`, so standard errors are `sqrt(Σ̂_jj / (nT))`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    clamp_bandwidth, default_lag, hall_sheather_bandwidth, sandwich_with, CovarianceMode,
    CrossingRule, SandwichOptions, WeightForm, DEFAULT_HS_ALPHA,
};
use crate::dist::{chi_square_sf, normal_quantile};
use crate::error::{check_tau, Error, Result};
use crate::linalg::{guarded_cholesky, spd_inverse, spd_solve};
use crate::panel::PanelDataset;
use crate::qr::{fit_qr, fit_qr_triple};

/// Estimator settings; echoed into every written record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub mode: CovarianceMode,
    /// Override for the quantile-spacing bandwidth `d_T`.
    pub d_t: Option<f64>,
    /// Override for the lag truncation `m_T` (dependent mode only).
    pub m_t: Option<usize>,
    pub hs_alpha: f64,
    pub crossing: CrossingRule,
    pub weight: WeightForm,
    /// Exclude individuals whose fit or sandwich fails instead of aborting.
    pub drop_failed: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: CovarianceMode::Iid,
            d_t: None,
            m_t: None,
            hs_alpha: DEFAULT_HS_ALPHA,
            crossing: CrossingRule::default(),
            weight: WeightForm::default(),
            drop_failed: false,
        }
    }
}

impl EstimatorConfig {
    pub fn with_mode(mode: CovarianceMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

/// Whether the per-individual stage fans out over the rayon pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Serial,
}

/// What the pooled estimate keeps from each individual.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualEstimate {
    pub id: String,
    /// `(α̂_i, β̂_i')'` at `τ`.
    pub gamma: Vec<f64>,
    pub w_hat: DMatrix<f64>,
    pub n_truncated_densities: usize,
    pub psd_repaired: bool,
}

impl IndividualEstimate {
    pub fn alpha_hat(&self) -> f64 {
        self.gamma[0]
    }

    pub fn beta_hat(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.gamma[1..])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MDEstimate {
    pub tau: f64,
    pub beta_md: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    /// Individuals entering the pooled estimate.
    pub n: usize,
    pub t: usize,
    pub mode: CovarianceMode,
    pub d_t: f64,
    pub d_t_clamped: bool,
    pub m_t: usize,
    /// `Σ_i Ŵ_i`.
    pub weight_sum: DMatrix<f64>,
    pub per_individual: Vec<IndividualEstimate>,
    /// Excluded individuals and why (only with `drop_failed`).
    pub dropped: Vec<(String, String)>,
    pub regressors: Vec<String>,
    pub config: EstimatorConfig,
}

impl MDEstimate {
    pub fn p(&self) -> usize {
        self.beta_md.len()
    }

    /// Total truncated density weights across individuals.
    pub fn n_truncated_densities(&self) -> usize {
        self.per_individual
            .iter()
            .map(|i| i.n_truncated_densities)
            .sum()
    }
}

fn resolve_bandwidths(
    panel: &PanelDataset,
    tau: f64,
    cfg: &EstimatorConfig,
) -> Result<(f64, bool, usize)> {
    let t = panel.t();
    let (d_t, clamped) = match cfg.d_t {
        Some(d) => clamp_bandwidth(tau, t, d)?,
        None => {
            let bw = hall_sheather_bandwidth(tau, t, cfg.hs_alpha)?;
            (bw.d_t, bw.clamped)
        }
    };
    let m_t = match cfg.mode {
        CovarianceMode::Iid => 0,
        CovarianceMode::Dependent => {
            let m = cfg.m_t.unwrap_or_else(|| default_lag(t));
            if m >= t {
                return Err(Error::Parameter(format!("m_T = {m} must be below T = {t}")));
            }
            m
        }
    };
    Ok((d_t, clamped, m_t))
}

/// Feasible estimator with the default parallel per-individual stage.
pub fn estimate_md(panel: &PanelDataset, tau: f64, cfg: &EstimatorConfig) -> Result<MDEstimate> {
    estimate_md_with(panel, tau, cfg, Execution::Parallel)
}

pub fn estimate_md_with(
    panel: &PanelDataset,
    tau: f64,
    cfg: &EstimatorConfig,
    exec: Execution,
) -> Result<MDEstimate> {
    check_tau(tau)?;
    let (n, t, p) = (panel.n(), panel.t(), panel.p());
    if t < p + 2 {
        return Err(Error::InsufficientData {
            rows: t,
            cols: p + 2,
        });
    }
    let (d_t, d_t_clamped, m_t) = resolve_bandwidths(panel, tau, cfg)?;
    let lags = match cfg.mode {
        CovarianceMode::Iid => None,
        CovarianceMode::Dependent => Some(m_t),
    };

    let one = |i: usize| -> Result<IndividualEstimate> {
        let design = panel.design(i)?;
        let y = panel.response(i);
        let fits = fit_qr_triple(&design, y, tau, d_t)?;
        let opts = SandwichOptions {
            lags,
            crossing: cfg.crossing,
            weight: cfg.weight,
        };
        let cov = sandwich_with(&design, y, &fits, tau, d_t, &opts)?;
        let [_, mid, _] = fits;
        Ok(IndividualEstimate {
            id: panel.ids()[i].clone(),
            gamma: mid.gamma,
            w_hat: cov.w_hat,
            n_truncated_densities: cov.n_truncated_densities,
            psd_repaired: cov.psd_repaired,
        })
    };
    let results: Vec<Result<IndividualEstimate>> = match exec {
        Execution::Parallel => (0..n).into_par_iter().map(one).collect(),
        Execution::Serial => (0..n).map(one).collect(),
    };

    let mut kept = Vec::with_capacity(n);
    let mut dropped = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(ind) => kept.push(ind),
            Err(e) => {
                let id = panel.ids()[i].clone();
                if cfg.drop_failed {
                    dropped.push((id, e.to_string()));
                } else {
                    return Err(attach_individual(e, id));
                }
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::Aggregation("every individual failed".into()));
    }
    let (beta_md, sigma_hat, weight_sum) = combine(&kept)?;
    let n_used = kept.len();
    let std_errors = standard_errors(&sigma_hat, n_used, t);
    Ok(MDEstimate {
        tau,
        beta_md,
        sigma_hat,
        std_errors,
        n: n_used,
        t,
        mode: cfg.mode,
        d_t,
        d_t_clamped,
        m_t,
        weight_sum,
        per_individual: kept,
        dropped,
        regressors: panel.regressor_names().to_vec(),
        config: cfg.clone(),
    })
}

fn attach_individual(e: Error, id: String) -> Error {
    match e {
        Error::SingularSandwich { detail, .. } => Error::SingularSandwich {
            individual: id,
            detail,
        },
        other => Error::Individual {
            individual: id,
            source: Box::new(other),
        },
    }
}

/// `(Σ W_i)⁻¹ Σ W_i β_i` and `((1/n) Σ W_i)⁻¹`, summed in index order.
fn combine(inds: &[IndividualEstimate]) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let p = inds[0].gamma.len() - 1;
    let mut weight_sum = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for ind in inds {
        if ind.w_hat.shape() != (p, p) {
            return Err(Error::Parameter(format!(
                "weight for {} is {:?}, expected {p}x{p}",
                ind.id,
                ind.w_hat.shape()
            )));
        }
        weight_sum += &ind.w_hat;
        rhs += &ind.w_hat * ind.beta_hat();
    }
    let beta = spd_solve(&weight_sum, &rhs)
        .map_err(|e| Error::Aggregation(format!("sum of weights: {e}")))?;
    let mean_weight = &weight_sum / inds.len() as f64;
    let sigma =
        spd_inverse(&mean_weight).map_err(|e| Error::Aggregation(format!("mean weight: {e}")))?;
    Ok((beta, sigma, weight_sum))
}

fn standard_errors(sigma: &DMatrix<f64>, n: usize, t: usize) -> Vec<f64> {
    let scale = (n * t) as f64;
    (0..sigma.nrows())
        .map(|j| (sigma[(j, j)].max(0.0) / scale).sqrt())
        .collect()
}

/// Pools with externally supplied weights (e.g. population `W_i`).
pub fn estimate_md_infeasible(
    panel: &PanelDataset,
    tau: f64,
    true_weights: &[DMatrix<f64>],
) -> Result<MDEstimate> {
    check_tau(tau)?;
    let (n, t, p) = (panel.n(), panel.t(), panel.p());
    if true_weights.len() != n {
        return Err(Error::Parameter(format!(
            "{} weight matrices supplied for {n} individuals",
            true_weights.len()
        )));
    }
    if let Some(bad) = true_weights.iter().position(|w| w.shape() != (p, p)) {
        return Err(Error::Parameter(format!(
            "weight {bad} has shape {:?}, expected {p}x{p}",
            true_weights[bad].shape()
        )));
    }
    let inds = (0..n)
        .map(|i| {
            let fit = fit_qr(&panel.design(i)?, panel.response(i), tau)
                .map_err(|e| attach_individual(e, panel.ids()[i].clone()))?;
            Ok(IndividualEstimate {
                id: panel.ids()[i].clone(),
                gamma: fit.gamma,
                w_hat: true_weights[i].clone(),
                n_truncated_densities: 0,
                psd_repaired: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (beta_md, sigma_hat, weight_sum) = combine(&inds)?;
    Ok(MDEstimate {
        tau,
        beta_md,
        std_errors: standard_errors(&sigma_hat, n, t),
        sigma_hat,
        n,
        t,
        mode: CovarianceMode::Iid,
        d_t: f64::NAN,
        d_t_clamped: false,
        m_t: 0,
        weight_sum,
        per_individual: inds,
        dropped: Vec::new(),
        regressors: panel.regressor_names().to_vec(),
        config: EstimatorConfig::default(),
    })
}

/// Re-pools existing per-individual slopes with replacement weights.
pub fn repool(est: &MDEstimate, weights: &[DMatrix<f64>]) -> Result<MDEstimate> {
    if weights.len() != est.per_individual.len() {
        return Err(Error::Parameter(
            "one weight per individual required".into(),
        ));
    }
    let inds: Vec<IndividualEstimate> = est
        .per_individual
        .iter()
        .zip(weights)
        .map(|(ind, w)| IndividualEstimate {
            w_hat: w.clone(),
            ..ind.clone()
        })
        .collect();
    let (beta_md, sigma_hat, weight_sum) = combine(&inds)?;
    Ok(MDEstimate {
        beta_md,
        std_errors: standard_errors(&sigma_hat, est.n, est.t),
        sigma_hat,
        weight_sum,
        per_individual: inds,
        ..est.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldTest {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
}

/// Tests `R β = r` with `nT (Rβ̂ − r)' [R Σ̂ R']⁻¹ (Rβ̂ − r) ~ χ²_q`.
pub fn wald_test(est: &MDEstimate, r_mat: &DMatrix<f64>, r_vec: &DVector<f64>) -> Result<WaldTest> {
    let (q, p) = r_mat.shape();
    if p != est.p() || r_vec.len() != q || q == 0 || q > p {
        return Err(Error::Parameter(format!(
            "restriction matrix is {q}x{p} with {} targets for p = {}",
            r_vec.len(),
            est.p()
        )));
    }
    let diff = r_mat * &est.beta_md - r_vec;
    let middle = r_mat * &est.sigma_hat * r_mat.transpose();
    let chol = guarded_cholesky(&middle)
        .map_err(|e| Error::Inference(format!("R Sigma R' is singular: {e}")))?;
    let statistic = (est.n * est.t) as f64 * diff.dot(&chol.solve(&diff));
    Ok(WaldTest {
        statistic,
        p_value: chi_square_sf(statistic, q),
        df: q,
    })
}

/// Two-sided normal interval for coefficient `j` (0-based).
pub fn confidence_interval(est: &MDEstimate, j: usize, level: f64) -> Result<(f64, f64)> {
    if j >= est.p() {
        return Err(Error::Parameter(format!(
            "coefficient index {j} out of range for p = {}",
            est.p()
        )));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Parameter(format!(
            "level must lie in (0, 1], got {level}"
        )));
    }
    let b = est.beta_md[j];
    let se = est.std_errors[j];
    if se == 0.0 {
        return Ok((b, b));
    }
    let z = normal_quantile((1.0 + level) / 2.0);
    Ok((b - z * se, b + z * se))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_panel(n: usize, t: usize, seed: u64) -> PanelDataset {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut x = Vec::new();
        for i in 0..n {
            for _ in 0..t {
                let xv: f64 = rng.random_range(0.0..10.0);
                let u: f64 = rng.random_range(-1.0..1.0);
                x.push(xv);
                y.push(i as f64 + 2.0 * xv + u);
            }
        }
        let ids = (0..n).map(|i| format!("i{i}")).collect();
        PanelDataset::new(ids, t, 1, y, x).unwrap()
    }

    #[test]
    fn single_individual_returns_its_slope() {
        let panel = toy_panel(1, 40, 1);
        let est = estimate_md(&panel, 0.5, &EstimatorConfig::default()).unwrap();
        let fit = fit_qr(&panel.design(0).unwrap(), panel.response(0), 0.5).unwrap();
        assert_eq!(est.beta_md[0], fit.gamma[1]);
    }

    #[test]
    fn identical_individuals() {
        let one = toy_panel(1, 30, 2);
        let ids = vec!["a".into(), "b".into(), "c".into()];
        let y = [one.y(), one.y(), one.y()].concat();
        let x = [one.x(), one.x(), one.x()].concat();
        let panel = PanelDataset::new(ids, 30, 1, y, x).unwrap();
        let est = estimate_md(&panel, 0.5, &EstimatorConfig::default()).unwrap();
        let w1 = &est.per_individual[0].w_hat;
        assert!((est.beta_md[0] - est.per_individual[0].gamma[1]).abs() < 1e-12);
        assert!((est.sigma_hat[(0, 0)] - 1.0 / w1[(0, 0)]).abs() < 1e-9 * est.sigma_hat[(0, 0)]);
    }

    #[test]
    fn identity_weights_give_unweighted_mean() {
        let panel = toy_panel(5, 30, 3);
        let eye = vec![DMatrix::identity(1, 1); 5];
        let est = estimate_md_infeasible(&panel, 0.5, &eye).unwrap();
        let mean = est.per_individual.iter().map(|i| i.gamma[1]).sum::<f64>() / 5.0;
        assert!((est.beta_md[0] - mean).abs() < 1e-12);
        assert!(estimate_md_infeasible(&panel, 0.5, &eye[..4]).is_err());
        let wrong = vec![DMatrix::identity(2, 2); 5];
        assert!(matches!(
            estimate_md_infeasible(&panel, 0.5, &wrong),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn feasible_weights_round_trip_through_infeasible() {
        let panel = toy_panel(6, 40, 4);
        let est = estimate_md(&panel, 0.25, &EstimatorConfig::default()).unwrap();
        let ws: Vec<_> = est.per_individual.iter().map(|i| i.w_hat.clone()).collect();
        let inf = estimate_md_infeasible(&panel, 0.25, &ws).unwrap();
        assert_eq!(inf.beta_md, est.beta_md);
        assert_eq!(inf.sigma_hat, est.sigma_hat);
    }

    #[test]
    fn wald_and_intervals() {
        let panel = toy_panel(8, 50, 5);
        let est = estimate_md(&panel, 0.5, &EstimatorConfig::default()).unwrap();
        let r = DMatrix::identity(1, 1);
        let at_estimate = wald_test(&est, &r, &est.beta_md.clone()).unwrap();
        assert_eq!(at_estimate.statistic, 0.0);
        assert_eq!(at_estimate.p_value, 1.0);
        let target = DVector::from_element(1, 2.0);
        let w = wald_test(&est, &r, &target).unwrap();
        let tstat = (est.beta_md[0] - 2.0) / est.std_errors[0];
        assert!((w.statistic - tstat * tstat).abs() < 1e-9 * w.statistic.max(1.0));
        assert_eq!(w.df, 1);

        let (lo, hi) = confidence_interval(&est, 0, 1.0).unwrap();
        assert!(lo.is_infinite() && hi.is_infinite());
        let (lo, hi) = confidence_interval(&est, 0, 0.95).unwrap();
        assert!((hi - lo - 2.0 * 1.959963984540054 * est.std_errors[0]).abs() < 1e-12);
        assert!(confidence_interval(&est, 1, 0.95).is_err());

        let mut degenerate = est.clone();
        degenerate.std_errors[0] = 0.0;
        let (lo, hi) = confidence_interval(&degenerate, 0, 0.95).unwrap();
        assert_eq!((lo, hi), (est.beta_md[0], est.beta_md[0]));
        assert!(wald_test(&est, &DMatrix::zeros(1, 1), &target).is_err());
    }

    #[test]
    fn rejects_too_short_panels() {
        let panel = toy_panel(2, 2, 6);
        assert!(matches!(
            estimate_md(&panel, 0.5, &EstimatorConfig::default()),
            Err(Error::InsufficientData { .. })
        ));
    }
}
