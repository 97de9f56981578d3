//! Location-scale-shift panel designs.
//!
//! `y_it = α_i + β x_it + (1 + λ x_it) u_it` with `α_i = i/n`,
//! `x_it = 0.3 α_i + v_it`, `v_it ~ U[0, 10]`. The conditional `τ`-quantile
//! slope is `β + λ F⁻¹(τ)` where `F` is the law of `u`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dist::ErrorDist;
use crate::error::{check_tau, Error, Result};
use crate::panel::PanelDataset;

/// Width of the support of `v_it`.
pub const REGRESSOR_SPREAD: f64 = 10.0;
/// Loading of the fixed effect in the regressor.
pub const EFFECT_LOADING: f64 = 0.3;

/// Serial dependence of the disturbances within an individual.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    #[default]
    None,
    /// Stationary AR(1) with unit marginal variance innovations.
    Ar1(f64),
}

/// `β + λ F⁻¹(τ)`.
pub fn true_beta(tau: f64, beta: f64, lambda: f64, dist: ErrorDist) -> Result<f64> {
    check_tau(tau)?;
    Ok(beta + lambda * dist.quantile(tau))
}

/// Fixed effect of individual `i` (0-based), `(i + 1)/n`.
pub fn fixed_effect(i: usize, n: usize) -> f64 {
    (i + 1) as f64 / n as f64
}

/// Support `[lo, hi]` of `x_it` for individual `i`.
pub fn regressor_support(i: usize, n: usize) -> (f64, f64) {
    let lo = EFFECT_LOADING * fixed_effect(i, n);
    (lo, lo + REGRESSOR_SPREAD)
}

/// Checks `1 + λx > 0` over the regressor support of every individual.
pub fn check_scale_validity(lambda: f64, n: usize) -> Result<()> {
    for i in [0, n.saturating_sub(1)] {
        let (lo, hi) = regressor_support(i, n);
        if 1.0 + lambda * lo <= 0.0 || 1.0 + lambda * hi <= 0.0 {
            return Err(Error::Config(format!(
                "lambda = {lambda} makes 1 + lambda*x nonpositive on [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

/// Design parameters for one generated panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub n: usize,
    pub t: usize,
    pub beta: f64,
    pub lambda: f64,
    pub dist: ErrorDist,
    pub dependence: Dependence,
    /// Multiplies every disturbance; zero gives noiseless data.
    pub error_scale: f64,
}

impl DgpSpec {
    pub fn new(n: usize, t: usize, lambda: f64, dist: ErrorDist) -> Self {
        Self {
            n,
            t,
            beta: 1.0,
            lambda,
            dist,
            dependence: Dependence::None,
            error_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::Config("n and T must be positive".into()));
        }
        check_scale_validity(self.lambda, self.n)?;
        if let Dependence::Ar1(rho) = self.dependence {
            if !(rho.abs() < 1.0) {
                return Err(Error::Config(format!(
                    "AR(1) coefficient {rho} is not stationary"
                )));
            }
            if self.dist != ErrorDist::Normal {
                return Err(Error::Config(
                    "AR(1) disturbances are only supported with normal errors, whose \
                     stationary marginal matches the quantiles used for the true slope"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

/// Generated panel with its population parameters.
#[derive(Debug, Clone)]
pub struct GeneratedPanel {
    pub panel: PanelDataset,
    pub alphas: Vec<f64>,
    /// Disturbances `u_it`, individual-major.
    pub errors: Vec<f64>,
    pub spec: DgpSpec,
}

impl GeneratedPanel {
    pub fn true_slope(&self, tau: f64) -> Result<f64> {
        true_beta(tau, self.spec.beta, self.spec.lambda, self.spec.dist)
    }
}

/// Draws one panel. Per individual: all `v_it` in time order, then the
/// disturbances in time order.
pub fn generate_panel<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<GeneratedPanel> {
    spec.validate()?;
    let DgpSpec { n, t, .. } = *spec;
    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(n * t);
    let mut errors = Vec::with_capacity(n * t);
    let mut alphas = Vec::with_capacity(n);
    for i in 0..n {
        let alpha = fixed_effect(i, n);
        alphas.push(alpha);
        let xs: Vec<f64> = (0..t)
            .map(|_| EFFECT_LOADING * alpha + rng.random_range(0.0..REGRESSOR_SPREAD))
            .collect();
        let us: Vec<f64> = match spec.dependence {
            Dependence::None => (0..t).map(|_| spec.dist.sample(rng)).collect(),
            Dependence::Ar1(rho) => {
                let innovation = (1.0 - rho * rho).sqrt();
                let mut prev = spec.dist.sample_standardized(rng);
                let mut out = Vec::with_capacity(t);
                out.push(prev);
                for _ in 1..t {
                    prev = rho * prev + innovation * spec.dist.sample_standardized(rng);
                    out.push(prev);
                }
                out
            }
        };
        for (xv, u) in xs.iter().zip(&us) {
            let u = u * spec.error_scale;
            x.push(*xv);
            y.push(alpha + spec.beta * xv + (1.0 + spec.lambda * xv) * u);
            errors.push(u);
        }
    }
    let ids = (1..=n).map(|i| i.to_string()).collect();
    Ok(GeneratedPanel {
        panel: PanelDataset::new(ids, t, 1, y, x)?,
        alphas,
        errors,
        spec: *spec,
    })
}

/// Independent ChaCha20 stream for `(seed, cell, replication)`.
///
/// The key comes from `seed`; the 64-bit stream id packs the cell index in
/// the high and the replication in the low 32 bits, so distinct pairs read
/// disjoint keystreams.
pub fn replication_rng(seed: u64, cell: u32, replication: u32) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 32) | replication as u64);
    rng
}
