//! Single-equation linear quantile regression.
//!
//! The estimator minimises the mean check loss
//! `(1/T) Σ_t ρ_τ(y_t − z_t'γ)` with `ρ_τ(u) = (τ − 1{u ≤ 0})·u`.
//! [`fit_qr`] runs a Frisch–Newton primal-dual interior point method on the
//! bounded-variable dual LP and then crosses over to an optimal vertex with
//! an exact edge-descent simplex, so every returned fit interpolates at least
//! `p + 1` observations. [`qr_oracle`] is an independent brute-force solver
//! for small instances.

mod ipm;
mod oracle;
mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_tau, Error, Result};

pub use oracle::{qr_oracle, qr_oracle_with_cap, DEFAULT_ORACLE_CAP};

/// Relative threshold below which a residual counts as zero.
pub const ZERO_RESIDUAL_TOL: f64 = 1e-8;

/// Relative duality-gap tolerance for the interior point phase.
pub const DEFAULT_GAP_TOL: f64 = 1e-9;

/// `ρ_τ(u) = (τ − 1{u ≤ 0})·u`.
pub fn check_loss(u: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(rho(u, tau))
}

#[inline]
pub(crate) fn rho(u: f64, tau: f64) -> f64 {
    if u > 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

/// Mean check loss of a residual vector.
pub fn mean_check_loss(residuals: &[f64], tau: f64) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    residuals.iter().map(|&r| rho(r, tau)).sum::<f64>() / residuals.len() as f64
}

#[inline]
pub(crate) fn is_zero_residual(r: f64, y: f64) -> bool {
    r.abs() <= ZERO_RESIDUAL_TOL * (1.0 + y.abs())
}

/// Observations-by-coefficients design whose first column is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
}

impl DesignMatrix {
    /// Wraps a full design matrix, validating the intercept column, finiteness
    /// and `T ≥ p + 1`.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = values.shape();
        if cols == 0 {
            return Err(Error::Parameter("design needs an intercept column".into()));
        }
        if rows < cols {
            return Err(Error::InsufficientData { rows, cols });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("design has non-finite entries".into()));
        }
        if values.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::Parameter(
                "first design column must be identically 1".into(),
            ));
        }
        Ok(Self { values })
    }

    /// Builds `Z_t = (1, x_t')` from row-major regressors of shape `rows × p`.
    pub fn with_intercept(rows: usize, p: usize, x: &[f64]) -> Result<Self> {
        if x.len() != rows * p {
            return Err(Error::Parameter(format!(
                "regressor buffer has {} entries, expected {}",
                x.len(),
                rows * p
            )));
        }
        let values = DMatrix::from_fn(
            rows,
            p + 1,
            |t, j| if j == 0 { 1.0 } else { x[t * p + j - 1] },
        );
        Self::new(values)
    }

    /// Intercept-only design with `rows` observations.
    pub fn intercept_only(rows: usize) -> Result<Self> {
        Self::new(DMatrix::from_element(rows, 1, 1.0))
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// Number of slope regressors.
    pub fn p(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    pub fn fitted(&self, gamma: &[f64]) -> DVector<f64> {
        &self.values * DVector::from_column_slice(gamma)
    }

    pub fn residuals(&self, response: &[f64], gamma: &[f64]) -> Vec<f64> {
        let fitted = self.fitted(gamma);
        response
            .iter()
            .zip(fitted.iter())
            .map(|(y, f)| y - f)
            .collect()
    }

    /// `(1/T) Σ_t Z_t Z_t'`.
    pub fn gram_mean(&self) -> DMatrix<f64> {
        self.values.tr_mul(&self.values) / self.rows() as f64
    }

    /// Fails with a degenerate-design error unless the columns are linearly
    /// independent (smallest singular value above `1e-10` times the largest).
    pub fn check_full_rank(&self) -> Result<()> {
        let sv = self.values.clone().singular_values();
        let hi = sv.iter().cloned().fold(0.0, f64::max);
        let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(hi > 0.0) || lo <= 1e-10 * hi {
            return Err(Error::DegenerateDesign(format!(
                "design is rank deficient (singular values {lo:.3e} .. {hi:.3e})"
            )));
        }
        Ok(())
    }
}

/// One quantile-regression solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub tau: f64,
    /// `(α̂, β̂')'`.
    pub gamma: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Mean check loss at `gamma`.
    pub objective: f64,
    pub n_zero_residuals: usize,
    /// Indices of the interpolated observations when the fit is a vertex.
    pub basis: Vec<usize>,
    pub ipm_iterations: usize,
    /// False when the interior phase hit its iteration cap before the
    /// crossover took over.
    #[serde(default = "default_true")]
    pub ipm_converged: bool,
    pub simplex_pivots: usize,
}

fn default_true() -> bool {
    true
}

impl QuantileFit {
    pub(crate) fn from_gamma(
        design: &DesignMatrix,
        response: &[f64],
        tau: f64,
        gamma: Vec<f64>,
        basis: Vec<usize>,
    ) -> Self {
        let residuals = design.residuals(response, &gamma);
        let objective = mean_check_loss(&residuals, tau);
        let n_zero_residuals = residuals
            .iter()
            .zip(response)
            .filter(|(r, y)| is_zero_residual(**r, **y))
            .count();
        Self {
            tau,
            gamma,
            residuals,
            objective,
            n_zero_residuals,
            basis,
            ipm_iterations: 0,
            ipm_converged: true,
            simplex_pivots: 0,
        }
    }

    /// Intercept `α̂`.
    pub fn intercept(&self) -> f64 {
        self.gamma[0]
    }

    /// Slope block `β̂`.
    pub fn slopes(&self) -> &[f64] {
        &self.gamma[1..]
    }
}

/// Interior point settings.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub gap_tol: f64,
    /// Interior iterations before the crossover takes over from the
    /// current iterate.
    pub max_ipm_iterations: usize,
    /// Skip the interior point phase and start the simplex from the
    /// least-squares residuals. Used to cross-check the two phases.
    pub simplex_only: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: DEFAULT_GAP_TOL,
            max_ipm_iterations: 100,
            simplex_only: false,
        }
    }
}

fn validate_problem(design: &DesignMatrix, response: &[f64], tau: f64) -> Result<()> {
    check_tau(tau)?;
    if response.len() != design.rows() {
        return Err(Error::Parameter(format!(
            "response has {} entries but design has {} rows",
            response.len(),
            design.rows()
        )));
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("response has non-finite entries".into()));
    }
    Ok(())
}

/// Solves the quantile regression exactly and returns an optimal vertex.
pub fn fit_qr(design: &DesignMatrix, response: &[f64], tau: f64) -> Result<QuantileFit> {
    fit_qr_with(design, response, tau, &SolverOptions::default())
}

pub fn fit_qr_with(
    design: &DesignMatrix,
    response: &[f64],
    tau: f64,
    opts: &SolverOptions,
) -> Result<QuantileFit> {
    validate_problem(design, response, tau)?;
    design.check_full_rank()?;
    solve_validated(design, response, tau, opts)
}

fn solve_validated(
    design: &DesignMatrix,
    response: &[f64],
    tau: f64,
    opts: &SolverOptions,
) -> Result<QuantileFit> {
    // A stalled interior phase hands over its last iterate; a broken one
    // hands over nothing.
    let (start, iterations, converged) = if opts.simplex_only {
        (None, 0, true)
    } else {
        match ipm::solve(design, response, tau, opts) {
            Ok(sol) if sol.gamma.iter().all(|g| g.is_finite()) => {
                (Some(sol.gamma), sol.iterations, sol.converged)
            }
            Ok(sol) => (None, sol.iterations, false),
            Err(Error::Numerical { iterations, .. }) => (None, iterations, false),
            Err(e) => return Err(e),
        }
    };
    let vertex = simplex::crossover(design, response, tau, start.as_deref())?;
    let mut fit = QuantileFit::from_gamma(design, response, tau, vertex.gamma, vertex.basis);
    fit.ipm_iterations = iterations;
    fit.ipm_converged = converged;
    fit.simplex_pivots = vertex.pivots;
    Ok(fit)
}

/// Fits at `τ − d`, `τ` and `τ + d` on a design that is validated once.
pub fn fit_qr_triple(
    design: &DesignMatrix,
    response: &[f64],
    tau: f64,
    d_t: f64,
) -> Result<[QuantileFit; 3]> {
    validate_problem(design, response, tau)?;
    if !(d_t > 0.0) || d_t >= tau.min(1.0 - tau) {
        return Err(Error::Bandwidth(format!(
            "d_T = {d_t} must lie in (0, min(tau, 1 - tau)) for tau = {tau}"
        )));
    }
    design.check_full_rank()?;
    let opts = SolverOptions::default();
    let lo = solve_validated(design, response, tau - d_t, &opts)?;
    let mid = solve_validated(design, response, tau, &opts)?;
    let hi = solve_validated(design, response, tau + d_t, &opts)?;
    Ok([lo, mid, hi])
}

/// Outcome of [`verify_optimality`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityCertificate {
    pub optimal: bool,
    /// Most negative one-sided directional derivative found (scaled by `1/T`).
    pub worst_derivative: f64,
    /// Direction attaining `worst_derivative`.
    pub worst_direction: Vec<f64>,
    /// Dual weights of the zero-residual observations when they form a basis.
    pub dual_weights: Option<Vec<f64>>,
}

/// Subgradient optimality check for a fit on `design`.
///
/// Every coordinate direction `±e_j` is probed, plus the edge directions of
/// every basis that can be formed from the zero-residual observations (up to a
/// fixed budget). When exactly `p + 1` observations interpolate, their dual
/// weights `λ_t` solving `Σ_S λ_t z_t = −Σ_{r>0} τ z_t + Σ_{r<0} (1−τ) z_t`
/// are also reported and must lie in `[τ − 1, τ]`.
pub fn verify_optimality(design: &DesignMatrix, fit: &QuantileFit) -> OptimalityCertificate {
    let z = design.matrix();
    let (rows, k) = z.shape();
    let tau = fit.tau;
    let response: Vec<f64> = design
        .fitted(&fit.gamma)
        .iter()
        .zip(&fit.residuals)
        .map(|(f, r)| f + r)
        .collect();
    let zero: Vec<bool> = fit
        .residuals
        .iter()
        .zip(&response)
        .map(|(r, y)| is_zero_residual(*r, *y))
        .collect();

    let derivative = |d: &DVector<f64>| -> (f64, f64) {
        let moves = z * d;
        let mut total = 0.0;
        let mut scale = 0.0;
        for t in 0..rows {
            // residual changes by -moves[t] per unit step
            let delta = -moves[t];
            scale += delta.abs();
            let r = fit.residuals[t];
            total += if zero[t] {
                if delta > 0.0 {
                    tau * delta
                } else {
                    (tau - 1.0) * delta
                }
            } else if r > 0.0 {
                tau * delta
            } else {
                (tau - 1.0) * delta
            };
        }
        (total / rows as f64, scale / rows as f64)
    };

    let mut directions: Vec<DVector<f64>> = Vec::new();
    for j in 0..k {
        let mut e = DVector::zeros(k);
        e[j] = 1.0;
        directions.push(e.clone());
        directions.push(-e);
    }
    let zero_idx: Vec<usize> = (0..rows).filter(|&t| zero[t]).collect();
    let mut dual_weights: Option<Vec<f64>> = None;
    if zero_idx.len() >= k {
        const SUBSET_BUDGET: usize = 256;
        for subset in
            itertools::Itertools::combinations(zero_idx.iter().cloned(), k).take(SUBSET_BUDGET)
        {
            let sub = DMatrix::from_fn(k, k, |a, b| z[(subset[a], b)]);
            if let Some(inv) = sub.clone().try_inverse() {
                for c in 0..k {
                    let col = inv.column(c).into_owned();
                    directions.push(col.clone());
                    directions.push(-col);
                }
                if zero_idx.len() == k {
                    let mut g = DVector::zeros(k);
                    for t in 0..rows {
                        if zero[t] {
                            continue;
                        }
                        let w = if fit.residuals[t] > 0.0 {
                            tau
                        } else {
                            tau - 1.0
                        };
                        g += z.row(t).transpose() * w;
                    }
                    // Z_S' λ = −g
                    if let Some(lambda) = sub.transpose().lu().solve(&(-g)) {
                        dual_weights = Some(lambda.iter().cloned().collect());
                    }
                }
            }
        }
    }

    let mut worst = f64::INFINITY;
    let mut worst_dir = vec![0.0; k];
    let mut optimal = true;
    for d in &directions {
        let (value, scale) = derivative(d);
        if value < worst {
            worst = value;
            worst_dir = d.iter().cloned().collect();
        }
        if value < -1e-9 * scale.max(1e-300) {
            optimal = false;
        }
    }
    if let Some(lambda) = &dual_weights {
        let slack = 1e-9;
        if lambda
            .iter()
            .any(|&l| l < tau - 1.0 - slack || l > tau + slack)
        {
            optimal = false;
        }
    }
    OptimalityCertificate {
        optimal,
        worst_derivative: worst,
        worst_direction: worst_dir,
        dual_weights,
    }
}
