//! Frisch–Newton primal-dual interior point method.
//!
//! Works on the bounded dual of the quantile regression LP,
//!
//! ```text
//! min  −y'a   s.t.  Z'a = (1 − τ) Z'1,   0 ≤ a ≤ 1,
//! ```
//!
//! with Mehrotra predictor-corrector steps. The multipliers of the equality
//! constraints are `−γ`, so the regression coefficients come out of the
//! dual iterate.

use nalgebra::{DMatrix, DVector};

use super::{DesignMatrix, SolverOptions};
use crate::error::{Error, Result};

const STEP_DAMPING: f64 = 0.99995;

pub(super) struct IpmSolution {
    pub gamma: Vec<f64>,
    pub iterations: usize,
    /// Whether the duality gap reached the tolerance; otherwise `gamma` is
    /// the last finite iterate.
    pub converged: bool,
}

/// Largest step in `[0, 1e20]` keeping `v + step·dv` nonnegative.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(1e20, f64::min)
}

fn solve_normal(z: &DMatrix<f64>, q: &DVector<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    // Z' diag(q) Z
    let scaled = DMatrix::from_fn(z.nrows(), z.ncols(), |t, j| z[(t, j)] * q[t]);
    let normal = z.tr_mul(&scaled);
    normal.cholesky().map(|c| c.solve(rhs))
}

pub(super) fn solve(
    design: &DesignMatrix,
    response: &[f64],
    tau: f64,
    opts: &SolverOptions,
) -> Result<IpmSolution> {
    let z = design.matrix();
    let n = z.nrows();
    let c = -DVector::from_column_slice(response);
    let b = z.tr_mul(&DVector::from_element(n, 1.0 - tau));

    let mut x = DVector::from_element(n, 1.0 - tau);
    let mut s = DVector::from_element(n, tau);

    // Dual start: least squares fit of c on Z.
    let ztz = z.tr_mul(z);
    let mut y = ztz
        .cholesky()
        .map(|ch| ch.solve(&z.tr_mul(&c)))
        .ok_or_else(|| Error::DegenerateDesign("Z'Z is not positive definite".into()))?;
    let r = &c - z * &y;
    let spread = r.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let shift = 1e-2 * (1.0 + spread);
    let mut zv = r.map(|v| v.max(0.0) + shift);
    let mut w = r.map(|v| (-v).max(0.0) + shift);

    let gap_of = |x: &DVector<f64>, y: &DVector<f64>, w: &DVector<f64>| -> (f64, f64) {
        let primal = c.dot(x);
        let dual = b.dot(y) - w.sum();
        (primal - dual, primal.abs().max(dual.abs()))
    };

    let (mut gap, mut scale) = gap_of(&x, &y, &w);
    let mut iterations = 0;
    while gap > opts.gap_tol * (1.0 + scale) {
        if iterations >= opts.max_ipm_iterations {
            return Ok(IpmSolution {
                gamma: y.iter().map(|v| -v).collect(),
                iterations,
                converged: false,
            });
        }
        iterations += 1;

        let q = DVector::from_fn(n, |t, _| 1.0 / (zv[t] / x[t] + w[t] / s[t]));
        let rc = &zv - &w;

        // Affine (predictor) direction.
        let rhs = z.tr_mul(&q.component_mul(&rc));
        let dy = solve_normal(z, &q, &rhs).ok_or_else(|| Error::Numerical {
            iterations,
            gap,
            detail: "normal equations lost positive definiteness".into(),
        })?;
        let mut dx = q.component_mul(&(z * &dy - &rc));
        let mut ds = -&dx;
        let mut dz = DVector::from_fn(n, |t, _| -zv[t] * (1.0 + dx[t] / x[t]));
        let mut dw = DVector::from_fn(n, |t, _| -w[t] * (1.0 + ds[t] / s[t]));
        let mut dy = dy;

        let mut fp = (STEP_DAMPING * max_step(&x, &dx).min(max_step(&s, &ds))).min(1.0);
        let mut fd = (STEP_DAMPING * max_step(&zv, &dz).min(max_step(&w, &dw))).min(1.0);

        if fp.min(fd) < 1.0 {
            // Mehrotra corrector.
            let mu = zv.dot(&x) + w.dot(&s);
            let g = (&zv + &dz * fd).dot(&(&x + &dx * fp)) + (&w + &dw * fd).dot(&(&s + &ds * fp));
            let mu = mu * (g / mu).powi(3) / (2.0 * n as f64);
            let dxdz = dx.component_mul(&dz);
            let dsdw = ds.component_mul(&dw);
            let xi = DVector::from_fn(n, |t, _| {
                mu * (1.0 / x[t] - 1.0 / s[t]) - dxdz[t] / x[t] + dsdw[t] / s[t]
            });
            let rhs = z.tr_mul(&q.component_mul(&(&rc - &xi)));
            dy = solve_normal(z, &q, &rhs).ok_or_else(|| Error::Numerical {
                iterations,
                gap,
                detail: "normal equations lost positive definiteness".into(),
            })?;
            dx = q.component_mul(&(z * &dy + &xi - &rc));
            ds = -&dx;
            dz = DVector::from_fn(n, |t, _| (mu - zv[t] * dx[t] - dxdz[t]) / x[t] - zv[t]);
            dw = DVector::from_fn(n, |t, _| (mu - w[t] * ds[t] - dsdw[t]) / s[t] - w[t]);
            fp = (STEP_DAMPING * max_step(&x, &dx).min(max_step(&s, &ds))).min(1.0);
            fd = (STEP_DAMPING * max_step(&zv, &dz).min(max_step(&w, &dw))).min(1.0);
        }

        x += &dx * fp;
        s += &ds * fp;
        y += &dy * fd;
        zv += &dz * fd;
        w += &dw * fd;
        (gap, scale) = gap_of(&x, &y, &w);
        if !gap.is_finite() {
            return Err(Error::Numerical {
                iterations,
                gap,
                detail: "duality gap became non-finite".into(),
            });
        }
    }

    Ok(IpmSolution {
        gamma: y.iter().map(|v| -v).collect(),
        iterations,
        converged: true,
    })
}
