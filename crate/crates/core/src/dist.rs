//! Error laws used by the simulation designs.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared as ChiSq, Continuous, ContinuousCDF, Normal, StudentsT};

use crate::error::Error;

/// Disturbance distribution, used unstandardised exactly as named.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    Normal,
    T3,
    Chi2_3,
}

impl ErrorDist {
    pub const ALL: [ErrorDist; 3] = [ErrorDist::Normal, ErrorDist::T3, ErrorDist::Chi2_3];

    pub fn quantile(self, p: f64) -> f64 {
        match self {
            ErrorDist::Normal => standard_normal().inverse_cdf(p),
            ErrorDist::T3 => t3().inverse_cdf(p),
            ErrorDist::Chi2_3 => chi2_3().inverse_cdf(p),
        }
    }

    pub fn cdf(self, x: f64) -> f64 {
        match self {
            ErrorDist::Normal => standard_normal().cdf(x),
            ErrorDist::T3 => t3().cdf(x),
            ErrorDist::Chi2_3 => chi2_3().cdf(x),
        }
    }

    pub fn pdf(self, x: f64) -> f64 {
        match self {
            ErrorDist::Normal => standard_normal().pdf(x),
            ErrorDist::T3 => t3().pdf(x),
            ErrorDist::Chi2_3 => chi2_3().pdf(x),
        }
    }

    /// Density at the `τ`-quantile, `f(F⁻¹(τ))`.
    pub fn density_at_quantile(self, tau: f64) -> f64 {
        self.pdf(self.quantile(tau))
    }

    pub fn mean(self) -> f64 {
        match self {
            ErrorDist::Normal | ErrorDist::T3 => 0.0,
            ErrorDist::Chi2_3 => 3.0,
        }
    }

    pub fn variance(self) -> f64 {
        match self {
            ErrorDist::Normal => 1.0,
            ErrorDist::T3 => 3.0,
            ErrorDist::Chi2_3 => 6.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            ErrorDist::Normal => StandardNormal.sample(rng),
            ErrorDist::T3 => StudentT::new(3.0).expect("valid dof").sample(rng),
            ErrorDist::Chi2_3 => ChiSquared::new(3.0).expect("valid dof").sample(rng),
        }
    }

    /// Draw centred and scaled to unit variance.
    pub fn sample_standardized<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        (self.sample(rng) - self.mean()) / self.variance().sqrt()
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorDist::Normal => "normal",
            ErrorDist::T3 => "t3",
            ErrorDist::Chi2_3 => "chi2_3",
        }
    }

    /// Column header used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ErrorDist::Normal => "Normal",
            ErrorDist::T3 => "t3",
            ErrorDist::Chi2_3 => "chi2(3)",
        }
    }
}

impl fmt::Display for ErrorDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ErrorDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "n" | "gaussian" => Ok(ErrorDist::Normal),
            "t3" | "t_3" => Ok(ErrorDist::T3),
            "chi2_3" | "chi2" | "chisq3" | "chi2(3)" => Ok(ErrorDist::Chi2_3),
            other => Err(Error::Config(format!(
                "unknown error distribution `{other}`"
            ))),
        }
    }
}

pub(crate) fn standard_normal() -> Normal {
    Normal::standard()
}

fn t3() -> StudentsT {
    StudentsT::new(0.0, 1.0, 3.0).expect("valid t parameters")
}

fn chi2_3() -> ChiSq {
    ChiSq::new(3.0).expect("valid chi-square parameters")
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

pub fn normal_pdf(x: f64) -> f64 {
    standard_normal().pdf(x)
}

/// Upper tail probability of a chi-square law with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSq::new(df as f64).expect("positive dof").sf(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    // Closed-form CDFs for odd degrees of freedom, inverted by bisection.
    fn t3_cdf(t: f64) -> f64 {
        let th = (t / 3f64.sqrt()).atan();
        0.5 + (th + th.sin() * th.cos()) / PI
    }

    fn chi2_3_cdf(x: f64) -> f64 {
        statrs::function::erf::erf((x / 2.0).sqrt()) - (2.0 * x / PI).sqrt() * (-x / 2.0).exp()
    }

    fn bisect(f: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantiles_match_closed_form_cdfs() {
        for &p in &[0.05, 0.25, 0.5, 0.75, 0.95] {
            let t = bisect(t3_cdf, p, -100.0, 100.0);
            assert!((ErrorDist::T3.quantile(p) - t).abs() < 1e-9, "t3 p={p}");
            let c = bisect(chi2_3_cdf, p, 0.0, 100.0);
            assert!(
                (ErrorDist::Chi2_3.quantile(p) - c).abs() < 1e-9,
                "chi2 p={p}"
            );
        }
        assert!(ErrorDist::Normal.quantile(0.5).abs() < 1e-15);
        assert!((ErrorDist::Normal.quantile(0.975) - 1.959963984540054).abs() < 1e-12);
    }

    #[test]
    fn chi2_quantile_matches_empirical() {
        let q = ErrorDist::Chi2_3.quantile(0.75);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let below = (0..n)
            .filter(|_| ErrorDist::Chi2_3.sample(&mut rng) <= q)
            .count() as f64
            / n as f64;
        // binomial sd ≈ 0.001
        assert!((below - 0.75).abs() < 0.005);
    }

    #[test]
    fn standardized_draws_have_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [ErrorDist::Normal, ErrorDist::Chi2_3] {
            let draws: Vec<f64> = (0..200_000)
                .map(|_| d.sample_standardized(&mut rng))
                .collect();
            let m = draws.iter().sum::<f64>() / draws.len() as f64;
            let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / draws.len() as f64;
            assert!(m.abs() < 0.01, "{d}: mean {m}");
            assert!((v - 1.0).abs() < 0.03, "{d}: var {v}");
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("Normal".parse::<ErrorDist>().unwrap(), ErrorDist::Normal);
        assert_eq!("chi2_3".parse::<ErrorDist>().unwrap(), ErrorDist::Chi2_3);
        assert!("cauchy".parse::<ErrorDist>().is_err());
    }
}
