//! Named experiment grids.
//!
//! Every preset uses `n, T ∈ {25, 50, 100, 250}`, `τ ∈ {0.25, 0.5, 0.75}`,
//! all three error laws and 2000 replications. `table1`, `table2` and
//! `table3` select `λ = 0, 0.5, 1`; `table4`..`table6` (alias
//! `table1_se`..`table3_se`) select the same designs. Bias and scaled
//! standard errors come from the same runs, so paired presets produce
//! identical records.

use crate::dist::ErrorDist;
use crate::error::{Error, Result};
use crate::md::EstimatorConfig;

use super::{Dependence, SimulationConfig};

pub const PRESET_GRID: [usize; 4] = [25, 50, 100, 250];
pub const PRESET_TAUS: [f64; 3] = [0.25, 0.5, 0.75];
pub const PRESET_REPLICATIONS: usize = 2000;
pub const DEFAULT_SEED: u64 = 20_240_601;

pub const PRESET_NAMES: [&str; 9] = [
    "table1",
    "table2",
    "table3",
    "table4",
    "table5",
    "table6",
    "table1_se",
    "table2_se",
    "table3_se",
];

/// `λ` of a preset name.
pub fn preset_lambda(name: &str) -> Result<f64> {
    match name.to_ascii_lowercase().as_str() {
        "table1" | "table4" | "table1_se" => Ok(0.0),
        "table2" | "table5" | "table2_se" => Ok(0.5),
        "table3" | "table6" | "table3_se" => Ok(1.0),
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (expected one of {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

pub fn preset(name: &str) -> Result<SimulationConfig> {
    Ok(SimulationConfig {
        n_grid: PRESET_GRID.to_vec(),
        t_grid: PRESET_GRID.to_vec(),
        taus: PRESET_TAUS.to_vec(),
        lambdas: vec![preset_lambda(name)?],
        error_dists: ErrorDist::ALL.to_vec(),
        beta: 1.0,
        replications: PRESET_REPLICATIONS,
        seed: DEFAULT_SEED,
        dependence: Dependence::None,
        estimator: EstimatorConfig::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_cover_grid() {
        for name in PRESET_NAMES {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(c.data_cells().len() * c.taus.len(), 16 * 9);
        }
        assert_eq!(preset("table6").unwrap(), preset("table3").unwrap());
        assert!(preset("table7").is_err());
    }
}
