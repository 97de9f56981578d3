//! Per-individual covariance of the quantile-regression coefficients.
//!
//! The sandwich `V̂ = B̂⁻¹ Â B̂⁻¹` combines
//!
//! * `B̂ = (1/T) Σ_t f̂_t Z_t Z_t'` with difference-quotient density weights
//!   `f̂_t = 2d_T / Z_t'(γ̂(τ + d_T) − γ̂(τ − d_T))`, and
//! * `Â = τ(1 − τ)(1/T) Σ_t Z_t Z_t'` for independent observations, or the
//!   lag-augmented `Ã` (truncated at `m_T` lags with `(1 − j/T)` weights on
//!   the score cross products) for serially dependent ones.
//!
//! The weight block used for pooling is the trailing `p × p` block of `V̂⁻¹`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist::{normal_pdf, normal_quantile};
use crate::error::{check_tau, Error, Result};
use crate::linalg::{guarded_cholesky, project_psd, spd_inverse, symmetrize, trailing_block};
use crate::qr::{is_zero_residual, DesignMatrix, QuantileFit};

/// Significance level of the default Hall–Sheather rule.
pub const DEFAULT_HS_ALPHA: f64 = 0.05;

/// Relative floor on the density-weight denominator, as a fraction of `2d_T`.
pub const DENSITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    Iid,
    Dependent,
}

impl std::fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovarianceMode::Iid => "iid",
            CovarianceMode::Dependent => "dependent",
        })
    }
}

/// How a nonpositive quantile spacing `Z_t'(γ̂(τ+d) − γ̂(τ−d))` is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingRule {
    /// Clip the denominator at `DENSITY_FLOOR · 2d_T`; every weight stays
    /// strictly positive.
    Floor,
    /// Zero the weight of crossed observations and clip only positive
    /// spacings below the floor.
    #[default]
    Zero,
}

/// Which `p × p` matrix of the sandwich serves as the pooling weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightForm {
    /// Inverse of the slope block of `v_hat`, the inverse asymptotic
    /// variance of the slope estimate alone.
    #[default]
    ExtractThenInvert,
    /// Slope block of `v_hat⁻¹`.
    InvertThenExtract,
}

/// Pooling weight of a `(p+1) × (p+1)` sandwich `v` under `form`.
pub fn pooling_weight(v: &DMatrix<f64>, form: WeightForm) -> Result<DMatrix<f64>, String> {
    let p = v.ncols() - 1;
    match form {
        WeightForm::ExtractThenInvert => {
            spd_inverse(&trailing_block(v, p)).map_err(|e| format!("slope block of V: {e}"))
        }
        WeightForm::InvertThenExtract => {
            let v_inv = spd_inverse(v).map_err(|e| format!("V: {e}"))?;
            Ok(trailing_block(&v_inv, p))
        }
    }
}

/// Settings shared by both sandwich forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SandwichOptions {
    /// Lag truncation `m_T`; `None` selects the independent form.
    pub lags: Option<usize>,
    pub crossing: CrossingRule,
    pub weight: WeightForm,
}

/// Per-individual covariance bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub v_hat: DMatrix<f64>,
    /// Pooling weight selected by [`WeightForm`].
    pub w_hat: DMatrix<f64>,
    pub mode: CovarianceMode,
    pub d_t: f64,
    pub m_t: usize,
    pub n_truncated_densities: usize,
    /// Whether `a_hat` had negative eigenvalues zeroed.
    pub psd_repaired: bool,
}

/// Bandwidth chosen by [`hall_sheather_bandwidth`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub d_t: f64,
    /// Rule value before clamping.
    pub raw: f64,
    pub clamped: bool,
}

/// Unclamped Hall–Sheather rule
/// `T^{-1/3} z_{1−α/2}^{2/3} [1.5 φ(Φ⁻¹(τ))² / (2Φ⁻¹(τ)² + 1)]^{1/3}`.
pub fn hall_sheather_raw(tau: f64, t: usize, alpha: f64) -> f64 {
    let x0 = normal_quantile(tau);
    let f0 = normal_pdf(x0);
    let z = normal_quantile(1.0 - alpha / 2.0);
    (t as f64).powf(-1.0 / 3.0)
        * z.powf(2.0 / 3.0)
        * (1.5 * f0 * f0 / (2.0 * x0 * x0 + 1.0)).powf(1.0 / 3.0)
}

/// Hall–Sheather bandwidth, clamped so that `τ ± d_T` stays strictly inside
/// `(1/(2T), 1 − 1/(2T))`.
pub fn hall_sheather_bandwidth(tau: f64, t: usize, alpha: f64) -> Result<Bandwidth> {
    check_tau(tau)?;
    if t < 2 {
        return Err(Error::Parameter(format!("bandwidth needs T >= 2, got {t}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let raw = hall_sheather_raw(tau, t, alpha);
    clamp_bandwidth(tau, t, raw).map(|(d_t, clamped)| Bandwidth { d_t, raw, clamped })
}

/// Applies the clamping rule to any candidate bandwidth.
pub fn clamp_bandwidth(tau: f64, t: usize, d_t: f64) -> Result<(f64, bool)> {
    let edge = 0.5 / t as f64;
    let limit = (tau - edge).min(1.0 - edge - tau);
    if !(limit > 0.0) {
        return Err(Error::Bandwidth(format!(
            "no admissible bandwidth for tau = {tau} with T = {t}"
        )));
    }
    if !(d_t > 0.0) {
        return Err(Error::Bandwidth(format!(
            "bandwidth must be positive, got {d_t}"
        )));
    }
    if d_t < limit {
        Ok((d_t, false))
    } else {
        Ok((limit * (1.0 - 1e-6), true))
    }
}

/// Smallest `m` with `m⁵ ≥ T` (that is, `⌈T^{1/5}⌉`), clamped to `T − 1`.
pub fn default_lag(t: usize) -> usize {
    let mut m = 1usize;
    while (m as u128).pow(5) < t as u128 {
        m += 1;
    }
    m.min(t.saturating_sub(1))
}

/// Density weights and the number of clipped denominators.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityWeights {
    pub weights: Vec<f64>,
    pub n_truncated: usize,
}

/// `f̂_t = 2d_T / Z_t'(γ̂(τ+d_T) − γ̂(τ−d_T))` with every denominator clipped
/// at the floor, so all weights are strictly positive.
pub fn density_weights(
    design: &DesignMatrix,
    fit_minus: &QuantileFit,
    fit_plus: &QuantileFit,
    d_t: f64,
) -> DensityWeights {
    density_weights_with(design, fit_minus, fit_plus, d_t, CrossingRule::Floor)
}

pub fn density_weights_with(
    design: &DesignMatrix,
    fit_minus: &QuantileFit,
    fit_plus: &QuantileFit,
    d_t: f64,
    rule: CrossingRule,
) -> DensityWeights {
    let diff: Vec<f64> = fit_plus
        .gamma
        .iter()
        .zip(&fit_minus.gamma)
        .map(|(h, l)| h - l)
        .collect();
    let spacing = design.fitted(&diff);
    let floor = DENSITY_FLOOR * 2.0 * d_t;
    let mut n_truncated = 0;
    let weights = spacing
        .iter()
        .map(|&s| {
            if s > floor {
                2.0 * d_t / s
            } else {
                n_truncated += 1;
                match rule {
                    CrossingRule::Zero if s <= 0.0 => 0.0,
                    _ => 2.0 * d_t / floor,
                }
            }
        })
        .collect();
    DensityWeights {
        weights,
        n_truncated,
    }
}

/// Scores `ŵ_t = Z_t (τ − 1{Y_t ≤ Z_t'γ̂})`, one row per observation.
pub fn residual_scores(
    design: &DesignMatrix,
    response: &[f64],
    fit: &QuantileFit,
    tau: f64,
) -> DMatrix<f64> {
    let z = design.matrix();
    let residuals = design.residuals(response, &fit.gamma);
    DMatrix::from_fn(z.nrows(), z.ncols(), |t, j| {
        let below = residuals[t] <= 0.0 || is_zero_residual(residuals[t], response[t]);
        let psi = if below { tau - 1.0 } else { tau };
        z[(t, j)] * psi
    })
}

/// Hendricks–Koenker sandwich for independent observations.
pub fn sandwich_iid(
    design: &DesignMatrix,
    response: &[f64],
    fits: &[QuantileFit; 3],
    tau: f64,
    d_t: f64,
) -> Result<CovarianceEstimate> {
    sandwich_with(
        design,
        response,
        fits,
        tau,
        d_t,
        &SandwichOptions::default(),
    )
}

/// Lag-augmented sandwich for serially dependent observations.
pub fn sandwich_dependent(
    design: &DesignMatrix,
    response: &[f64],
    fits: &[QuantileFit; 3],
    tau: f64,
    d_t: f64,
    m_t: usize,
) -> Result<CovarianceEstimate> {
    sandwich_with(
        design,
        response,
        fits,
        tau,
        d_t,
        &SandwichOptions {
            lags: Some(m_t),
            ..SandwichOptions::default()
        },
    )
}

pub fn sandwich_with(
    design: &DesignMatrix,
    response: &[f64],
    fits: &[QuantileFit; 3],
    tau: f64,
    d_t: f64,
    opts: &SandwichOptions,
) -> Result<CovarianceEstimate> {
    let lags = opts.lags;
    check_tau(tau)?;
    let rows = design.rows();
    let k = design.cols();
    if response.len() != rows {
        return Err(Error::Parameter(
            "response length does not match design".into(),
        ));
    }
    if let Some(m) = lags {
        if m >= rows {
            return Err(Error::Parameter(format!(
                "lag truncation m_T = {m} must be at most T - 1 = {}",
                rows - 1
            )));
        }
    }
    let z = design.matrix();
    let density = density_weights_with(design, &fits[0], &fits[2], d_t, opts.crossing);

    let weighted = DMatrix::from_fn(rows, k, |t, j| z[(t, j)] * density.weights[t]);
    let b_hat = symmetrize(&(weighted.tr_mul(z) / rows as f64));
    let a_iid = design.gram_mean() * (tau * (1.0 - tau));

    let (a_hat, psd_repaired, mode, m_t) = match lags {
        None => (a_iid, false, CovarianceMode::Iid, 0),
        Some(0) => (a_iid, false, CovarianceMode::Dependent, 0),
        Some(m) => {
            let scores = residual_scores(design, response, &fits[1], tau);
            let mut lag_sum = DMatrix::zeros(k, k);
            for j in 1..=m {
                let head = scores.rows(0, rows - j);
                let tail = scores.rows(j, rows - j);
                let cross = head.tr_mul(&tail);
                let weight = (1.0 - j as f64 / rows as f64) / rows as f64;
                lag_sum += (&cross + cross.transpose()) * weight;
            }
            let raw = symmetrize(&(a_iid + lag_sum));
            let (a, repaired) = project_psd(&raw);
            (a, repaired, CovarianceMode::Dependent, m)
        }
    };

    let singular = |detail: String| Error::SingularSandwich {
        individual: String::new(),
        detail,
    };
    let b_inv = guarded_cholesky(&b_hat)
        .map_err(|e| singular(format!("B_hat: {e}")))?
        .inverse();
    let v_hat = symmetrize(&(&b_inv * &a_hat * &b_inv));
    let w_hat = pooling_weight(&v_hat, opts.weight).map_err(singular)?;

    Ok(CovarianceEstimate {
        a_hat,
        b_hat,
        v_hat,
        w_hat,
        mode,
        d_t,
        m_t,
        n_truncated_densities: density.n_truncated,
        psd_repaired,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qr::fit_qr_triple;
    use std::f64::consts::PI;

    #[test]
    fn hall_sheather_at_median_matches_closed_form() {
        for t in [50usize, 100, 1000] {
            let bw = hall_sheather_bandwidth(0.5, t, 0.05).unwrap();
            let expected = (t as f64).powf(-1.0 / 3.0)
                * 1.959963984540054f64.powf(2.0 / 3.0)
                * (1.5 / (2.0 * PI)).powf(1.0 / 3.0);
            assert!((bw.d_t - expected).abs() < 1e-12);
            assert!(!bw.clamped);
        }
        // independently evaluated: 0.1 * 1.566166 * 0.620351
        let bw = hall_sheather_bandwidth(0.5, 1000, 0.05).unwrap();
        assert!((bw.d_t - 0.097157).abs() < 1e-5);
    }

    #[test]
    fn hall_sheather_boundary() {
        assert!(matches!(
            hall_sheather_bandwidth(0.99, 10, 0.05),
            Err(Error::Bandwidth(_))
        ));
        let bw = hall_sheather_bandwidth(0.1, 10, 0.05).unwrap();
        assert!(bw.clamped);
        assert!(0.1 - bw.d_t > 0.05);
    }

    #[test]
    fn default_lag_rule() {
        assert_eq!(default_lag(32), 2);
        assert_eq!(default_lag(33), 3);
        assert_eq!(default_lag(100), 3);
        assert_eq!(default_lag(2), 1);
        assert_eq!(default_lag(100_000), 10);
    }

    #[test]
    fn density_weights_intercept_only() {
        let d = DesignMatrix::intercept_only(3).unwrap();
        let fits = fit_qr_triple(&d, &[1.0, 2.0, 3.0], 0.5, 0.25).unwrap();
        let dw = density_weights(&d, &fits[0], &fits[2], 0.25);
        assert_eq!(dw.n_truncated, 0);
        for w in dw.weights {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn density_weights_clip_on_identical_fits() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 3.0, 4.0];
        let d = DesignMatrix::with_intercept(4, 1, &x).unwrap();
        let fits = fit_qr_triple(&d, &y, 0.5, 0.2).unwrap();
        let dw = density_weights(&d, &fits[0], &fits[2], 0.2);
        assert_eq!(dw.n_truncated, 4);
        for w in &dw.weights {
            assert!((w - 1.0 / DENSITY_FLOOR).abs() < 1e-6);
        }
        let zeroed = density_weights_with(&d, &fits[0], &fits[2], 0.2, CrossingRule::Zero);
        assert!(zeroed.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn scalar_sandwich() {
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let d = DesignMatrix::intercept_only(y.len()).unwrap();
        let fits = fit_qr_triple(&d, &y, 0.5, 0.3).unwrap();
        let cov = sandwich_iid(&d, &y, &fits, 0.5, 0.3).unwrap();
        let fbar = density_weights(&d, &fits[0], &fits[2], 0.3).weights[0];
        assert!((cov.v_hat[(0, 0)] - 0.25 / (fbar * fbar)).abs() < 1e-12);
        assert_eq!(cov.w_hat.shape(), (0, 0));
        assert_eq!(cov.mode, CovarianceMode::Iid);
        assert_eq!(cov.m_t, 0);
    }

    #[test]
    fn weight_forms() {
        let x: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| 2.0 + v + (((i * 13) % 7) as f64 - 3.0) / 2.0)
            .collect();
        let d = DesignMatrix::with_intercept(30, 1, &x).unwrap();
        let fits = fit_qr_triple(&d, &y, 0.5, 0.2).unwrap();
        let opts = |weight| SandwichOptions {
            weight,
            ..SandwichOptions::default()
        };
        let marginal = sandwich_with(
            &d,
            &y,
            &fits,
            0.5,
            0.2,
            &opts(WeightForm::ExtractThenInvert),
        )
        .unwrap();
        let joint = sandwich_with(
            &d,
            &y,
            &fits,
            0.5,
            0.2,
            &opts(WeightForm::InvertThenExtract),
        )
        .unwrap();
        assert!((marginal.w_hat[(0, 0)] * marginal.v_hat[(1, 1)] - 1.0).abs() < 1e-12);
        let v_inv = marginal.v_hat.clone().try_inverse().unwrap();
        assert!((joint.w_hat[(0, 0)] - v_inv[(1, 1)]).abs() < 1e-9 * v_inv[(1, 1)]);
        assert!(joint.w_hat[(0, 0)] >= marginal.w_hat[(0, 0)]);
    }

    #[test]
    fn residual_score_signs() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [0.0, 3.0, 1.0, 5.0, 2.0];
        let d = DesignMatrix::with_intercept(5, 1, &x).unwrap();
        let fit = crate::qr::fit_qr(&d, &y, 0.3).unwrap();
        let w = residual_scores(&d, &y, &fit, 0.3);
        for t in 0..5 {
            let scale = if fit.residuals[t] > 1e-9 { 0.3 } else { -0.7 };
            assert!((w[(t, 1)] - scale * x[t]).abs() < 1e-12);
            assert!((w[(t, 0)] - scale).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_lags_reproduce_iid_bitwise() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 13) as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| 1.0 + 0.5 * v + (((i * 31) % 17) as f64 - 8.0) / 4.0)
            .collect();
        let d = DesignMatrix::with_intercept(40, 1, &x).unwrap();
        let fits = fit_qr_triple(&d, &y, 0.5, 0.2).unwrap();
        let iid = sandwich_iid(&d, &y, &fits, 0.5, 0.2).unwrap();
        let dep = sandwich_dependent(&d, &y, &fits, 0.5, 0.2, 0).unwrap();
        assert_eq!(iid.a_hat, dep.a_hat);
        assert_eq!(iid.v_hat, dep.v_hat);
        assert_eq!(iid.w_hat, dep.w_hat);
        assert_eq!(dep.mode, CovarianceMode::Dependent);
        assert!(sandwich_dependent(&d, &y, &fits, 0.5, 0.2, 40).is_err());
    }
}
