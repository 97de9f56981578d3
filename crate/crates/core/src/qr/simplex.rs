//! Crossover to an optimal vertex.
//!
//! A vertex of the quantile regression LP interpolates a basis `h` of
//! `p + 1` observations. From a vertex we probe the `2(p + 1)` edges obtained
//! by releasing one basic observation above or below the fit; an edge with a
//! negative directional derivative is followed with an exact weighted-median
//! line search to the breakpoint where the derivative turns nonnegative, and
//! the observation hit there enters the basis. Improving edges are picked by
//! lowest basic observation index and ties in the line search by lowest
//! observation index, so the vertex reached is deterministic.
//!
//! At a degenerate vertex some nonbasic observations also have zero
//! residual. Each of them carries a side (above or below the fit), which
//! fixes the reduced costs exactly as the basic slack of the primal LP
//! would; an edge that pushes such an observation across the fit takes a
//! zero-length step and swaps it into the basis.

use nalgebra::{DMatrix, DVector};

use super::DesignMatrix;
use crate::error::{Error, Result};

/// Internal threshold for treating a nonbasic residual as exactly zero.
const DEGENERACY_TOL: f64 = 1e-11;

pub(super) struct Vertex {
    pub gamma: Vec<f64>,
    pub basis: Vec<usize>,
    pub pivots: usize,
}

fn basis_matrix(z: &DMatrix<f64>, basis: &[usize]) -> DMatrix<f64> {
    let k = z.ncols();
    DMatrix::from_fn(k, k, |a, b| z[(basis[a], b)])
}

/// Greedy basis: observations ordered by `|residual|` (ties by index), each
/// accepted when it raises the rank of the rows collected so far.
fn initial_basis(z: &DMatrix<f64>, residuals: &[f64]) -> Option<Vec<usize>> {
    let (n, k) = z.shape();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        residuals[a]
            .abs()
            .partial_cmp(&residuals[b].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let col_scale: Vec<f64> = (0..k)
        .map(|j| {
            z.column(j)
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max)
                .max(1e-300)
        })
        .collect();
    // orthonormal rows accepted so far (Gram–Schmidt on column-scaled rows)
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut basis = Vec::with_capacity(k);
    for &t in &order {
        let mut v = DVector::from_fn(k, |j, _| z[(t, j)] / col_scale[j]);
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for u in &ortho {
                let proj = u.dot(&v);
                v -= u * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-7 * norm0 {
            ortho.push(v / norm);
            basis.push(t);
            if basis.len() == k {
                basis.sort_unstable();
                return Some(basis);
            }
        }
    }
    None
}

pub(super) fn crossover(
    design: &DesignMatrix,
    response: &[f64],
    tau: f64,
    start: Option<&[f64]>,
) -> Result<Vertex> {
    let z = design.matrix();
    let (n, k) = z.shape();
    let y = DVector::from_column_slice(response);

    let start_residuals: Vec<f64> = match start {
        Some(gamma) => design.residuals(response, gamma),
        None => {
            // least-squares start when no interior point is available
            let ls = z
                .clone()
                .svd(true, true)
                .solve(&y, 1e-12)
                .map_err(|e| Error::DegenerateDesign(e.to_string()))?;
            design.residuals(response, ls.as_slice())
        }
    };
    let mut basis = initial_basis(z, &start_residuals)
        .ok_or_else(|| Error::DegenerateDesign("no invertible basis of observations".into()))?;

    // +1: treated as above the fit, -1: below. Only read for zero residuals.
    let mut side: Vec<f64> = start_residuals
        .iter()
        .map(|r| if *r >= 0.0 { 1.0 } else { -1.0 })
        .collect();

    let max_pivots = 50 * n + 100;
    let mut pivots = 0;
    loop {
        let bmat = basis_matrix(z, &basis);
        let lu = bmat.lu();
        let binv = lu.try_inverse().ok_or_else(|| Error::Numerical {
            iterations: pivots,
            gap: f64::NAN,
            detail: "basis matrix became singular".into(),
        })?;
        let yb = DVector::from_fn(k, |a, _| response[basis[a]]);
        let gamma = &binv * yb;
        let residual = &y - z * &gamma;
        // a[(t, c)] = z_t' B^{-1} e_c: fitted value change at t when the basic
        // observation in slot c moves by one unit.
        let a = z * &binv;

        let mut is_basic = vec![false; n];
        for &h in &basis {
            is_basic[h] = true;
        }
        let zero: Vec<bool> = (0..n)
            .map(|t| {
                !is_basic[t] && residual[t].abs() <= DEGENERACY_TOL * (1.0 + response[t].abs())
            })
            .collect();
        for t in 0..n {
            if !is_basic[t] && !zero[t] {
                side[t] = residual[t].signum();
            }
        }

        // Reduced cost (scaled by T) of each edge. Direction d = s·B^{-1}e_c
        // moves residual t by -s·a[(t, c)].
        let mut slots: Vec<usize> = (0..k).collect();
        slots.sort_by_key(|&c| basis[c]);
        let mut entering = None;
        'edges: for &c in &slots {
            for s in [1.0, -1.0] {
                // the released basic observation ends up below (s = +1) or above the fit
                let mut slope = if s > 0.0 { 1.0 - tau } else { tau };
                let mut scale = 1.0;
                for t in 0..n {
                    if is_basic[t] {
                        continue;
                    }
                    let delta = -s * a[(t, c)];
                    scale += delta.abs();
                    slope += if side[t] > 0.0 {
                        tau * delta
                    } else {
                        (tau - 1.0) * delta
                    };
                }
                if slope < -1e-12 * scale {
                    entering = Some((c, s, slope));
                    break 'edges;
                }
            }
        }

        let Some((slot, s, mut slope)) = entering else {
            return Ok(Vertex {
                gamma: gamma.iter().cloned().collect(),
                basis,
                pivots,
            });
        };
        if pivots >= max_pivots {
            return Err(Error::Numerical {
                iterations: pivots,
                gap: slope,
                detail: "simplex crossover pivot limit reached".into(),
            });
        }

        // Breakpoints: nonbasic residuals moving toward zero, and zero
        // residuals pushed across the fit (step 0).
        let mut breaks: Vec<(f64, usize, f64)> = (0..n)
            .filter(|&t| !is_basic[t])
            .filter_map(|t| {
                let delta = -s * a[(t, slot)];
                if delta == 0.0 {
                    return None;
                }
                if zero[t] {
                    return (side[t] * delta < 0.0).then_some((0.0, t, delta.abs()));
                }
                let step = -residual[t] / delta;
                (step > 0.0).then_some((step, t, delta.abs()))
            })
            .collect();
        breaks.sort_by(|l, r| l.0.partial_cmp(&r.0).unwrap().then(l.1.cmp(&r.1)));
        let mut chosen = None;
        for &(_, t, weight) in &breaks {
            slope += weight;
            if slope >= 0.0 {
                chosen = Some(t);
                break;
            }
            side[t] = -side[t];
        }
        let Some(t_in) = chosen else {
            return Err(Error::Numerical {
                iterations: pivots,
                gap: slope,
                detail: "unbounded edge in crossover (design not full rank?)".into(),
            });
        };
        side[basis[slot]] = -s;
        basis[slot] = t_in;
        pivots += 1;
    }
}
