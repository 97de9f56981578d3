//! Brute-force quantile regression for small problems.
//!
//! Some optimal solution of the check-loss LP interpolates `p + 1`
//! observations, so enumerating every invertible `(p + 1)`-subset and keeping
//! the lowest objective is exact. Cost is `C(T, p + 1)` solves, hence the cap.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use super::{mean_check_loss, validate_problem, DesignMatrix, QuantileFit};
use crate::error::{Error, Result};

pub const DEFAULT_ORACLE_CAP: usize = 15;

pub fn qr_oracle(design: &DesignMatrix, response: &[f64], tau: f64) -> Result<QuantileFit> {
    qr_oracle_with_cap(design, response, tau, DEFAULT_ORACLE_CAP)
}

pub fn qr_oracle_with_cap(
    design: &DesignMatrix,
    response: &[f64],
    tau: f64,
    cap: usize,
) -> Result<QuantileFit> {
    validate_problem(design, response, tau)?;
    let rows = design.rows();
    if rows > cap {
        return Err(Error::OracleSize { rows, cap });
    }
    let z = design.matrix();
    let k = design.cols();
    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    for subset in (0..rows).combinations(k) {
        let sub = DMatrix::from_fn(k, k, |a, b| z[(subset[a], b)]);
        let rhs = DVector::from_fn(k, |a, _| response[subset[a]]);
        let lu = sub.lu();
        // singular or nearly so
        let det = lu.determinant();
        if det == 0.0 || !det.is_finite() {
            continue;
        }
        let Some(gamma) = lu.solve(&rhs) else {
            continue;
        };
        let gamma: Vec<f64> = gamma.iter().cloned().collect();
        let objective = mean_check_loss(&design.residuals(response, &gamma), tau);
        if best.as_ref().is_none_or(|(b, _, _)| objective < *b) {
            best = Some((objective, gamma, subset));
        }
    }
    let (_, gamma, basis) = best.ok_or_else(|| {
        Error::DegenerateDesign("every (p+1)-subset of observations is singular".into())
    })?;
    Ok(QuantileFit::from_gamma(design, response, tau, gamma, basis))
}
