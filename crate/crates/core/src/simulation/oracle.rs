//! Population sandwich matrices for the simulation design.
//!
//! With `Z = (1, x)'` and `x ~ U[lo, lo + 10]`, the conditional density of `y`
//! at its `τ`-quantile is `f_u(F⁻¹(τ)) / (1 + λx)`, so
//! `A = τ(1−τ) E[ZZ']` and `B = f_u(F⁻¹(τ)) E[ZZ' / (1 + λx)]`.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{pooling_weight, WeightForm};
use crate::dist::ErrorDist;
use crate::error::{check_tau, Error, Result};
use crate::linalg::spd_inverse;

use super::dgp::{check_scale_validity, fixed_effect, regressor_support};

/// Refinement stops once successive estimates differ by less than this.
pub const QUADRATURE_TOL: f64 = 1e-8;
const MAX_LEVELS: u32 = 24;

/// Population matrices for one individual.
#[derive(Debug, Clone)]
pub struct PopulationMatrices {
    pub alpha: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Pooling weight under the default [`WeightForm`].
    pub w: DMatrix<f64>,
}

/// Composite Simpson on `[lo, hi]` for a vector-valued integrand, doubling
/// the panel count until every component stabilises.
pub fn simpson_vector<F>(f: F, lo: f64, hi: f64, dim: usize) -> Result<DVector<f64>>
where
    F: Fn(f64) -> DVector<f64>,
{
    let ends = f(lo) + f(hi);
    let mut panels = 2usize;
    let h0 = (hi - lo) / 2.0;
    let mut odd = f(lo + h0);
    let mut even = DVector::zeros(dim);
    let mut prev = (&ends + &odd * 4.0) * (h0 / 3.0);
    for _ in 0..MAX_LEVELS {
        panels *= 2;
        let h = (hi - lo) / panels as f64;
        even += &odd;
        odd = DVector::zeros(dim);
        for k in (1..panels).step_by(2) {
            odd += f(lo + k as f64 * h);
        }
        let next = (&ends + &odd * 4.0 + &even * 2.0) * (h / 3.0);
        let change = (&next - &prev).amax();
        prev = next;
        if change < QUADRATURE_TOL {
            return Ok(prev);
        }
    }
    Err(Error::Numerical {
        iterations: MAX_LEVELS as usize,
        gap: f64::NAN,
        detail: "quadrature did not converge".into(),
    })
}

/// `(E[ZZ'], E[ZZ'/(1 + λx)])` for `x ~ U[lo, hi]`, returned as the moment
/// vectors `(E1, Ex, Ex², E1/s, Ex/s, Ex²/s)` with `s = 1 + λx`.
fn moments(lambda: f64, lo: f64, hi: f64) -> Result<DVector<f64>> {
    let width = hi - lo;
    let total = simpson_vector(
        |x| {
            let s = 1.0 + lambda * x;
            DVector::from_vec(vec![1.0, x, x * x, 1.0 / s, x / s, x * x / s])
        },
        lo,
        hi,
        6,
    )?;
    Ok(total / width)
}

fn gram(m0: f64, m1: f64, m2: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[m0, m1, m1, m2])
}

/// Population `A_i, B_i, V_i, W_i` for every individual `i = 1..n`.
pub fn population_oracle(
    lambda: f64,
    dist: ErrorDist,
    tau: f64,
    n: usize,
) -> Result<Vec<PopulationMatrices>> {
    check_tau(tau)?;
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    check_scale_validity(lambda, n)?;
    let density = dist.density_at_quantile(tau);
    (0..n)
        .map(|i| {
            let (lo, hi) = regressor_support(i, n);
            let m = moments(lambda, lo, hi)?;
            let a = gram(m[0], m[1], m[2]) * (tau * (1.0 - tau));
            let b = gram(m[3], m[4], m[5]) * density;
            let b_inv = spd_inverse(&b).map_err(Error::Config)?;
            let v = &b_inv * &a * &b_inv;
            Ok(PopulationMatrices {
                alpha: fixed_effect(i, n),
                w: pooling_weight(&v, WeightForm::default()).map_err(Error::Config)?,
                a,
                b,
                v,
            })
        })
        .collect()
}

/// Population weights `W_i` under `form`.
pub fn population_weights(
    lambda: f64,
    dist: ErrorDist,
    tau: f64,
    n: usize,
    form: WeightForm,
) -> Result<Vec<DMatrix<f64>>> {
    population_oracle(lambda, dist, tau, n)?
        .iter()
        .map(|m| pooling_weight(&m.v, form).map_err(Error::Config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn simpson_polynomial_exact() {
        let r = simpson_vector(|x| DVector::from_vec(vec![x * x * x, 1.0]), 0.0, 2.0, 2).unwrap();
        assert!((r[0] - 4.0).abs() < 1e-12);
        assert!((r[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn location_model_constant() {
        let pops = population_oracle(0.0, ErrorDist::Normal, 0.5, 4).unwrap();
        for m in &pops {
            let (lo, hi) = (0.3 * m.alpha, 0.3 * m.alpha + 10.0);
            let e1 = (lo + hi) / 2.0;
            let e2 = (hi.powi(3) - lo.powi(3)) / (3.0 * (hi - lo));
            let ezz = gram(1.0, e1, e2);
            let scaled = &m.v * &ezz;
            let factor = 0.25 * 2.0 * PI;
            assert!((scaled[(0, 0)] - factor).abs() < 1e-8);
            assert!((scaled[(1, 1)] - factor).abs() < 1e-8);
            assert!(scaled[(0, 1)].abs() < 1e-8);
        }
    }

    #[test]
    fn closed_form_scale_moments() {
        // ∫ 1/(1+x) dx over [lo, hi] is ln((1+hi)/(1+lo)).
        let (lo, hi) = regressor_support(2, 5);
        let m = moments(1.0, lo, hi).unwrap();
        let exact = ((1.0 + hi) / (1.0 + lo)).ln() / (hi - lo);
        assert!((m[3] - exact).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_scale() {
        assert!(population_oracle(-0.2, ErrorDist::Normal, 0.5, 3).is_err());
    }
}
