//! Monte Carlo experiment runner for the `hetmean` estimators.
//!
//! A TOML [`config::ExperimentConfig`] names a meta-distribution, a sample
//! count profile, an `n` grid, a privacy budget and a set of estimators.
//! Trial `i` draws its population from stream `i` of the seed and every
//! estimator sees that same population, so comparisons are paired.

pub mod acceptance;
pub mod compare;
pub mod config;
pub mod output;
pub mod runner;

pub use compare::{compare_estimators, RatioRow};
pub use config::{EstimatorKind, ExperimentConfig, SweepParam};
pub use runner::{run_experiment, ExperimentResult, TrialSummary};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "HETMEAN_SEED";

/// Applies the seed override from the environment, if set.
pub fn apply_seed_override(cfg: &mut ExperimentConfig) -> anyhow::Result<()> {
    if let Ok(value) = std::env::var(SEED_ENV) {
        cfg.seed = value
            .trim()
            .parse()
            .map_err(|e| anyhow::anyhow!("{SEED_ENV}={value:?} is not a u64: {e}"))?;
    }
    Ok(())
}
