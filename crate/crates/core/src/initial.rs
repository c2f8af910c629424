//! Initial mean and variance estimates that seed the weighted estimators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::budget::PrivacyBudget;
use crate::error::{invalid, Error, Result};
use crate::mechanisms::{dp_histogram, sample_laplace, BinSpec, HistogramPath};
use crate::meta::MetaKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialMeanResult {
    /// Noisy mean clamped into `[0, 1]`.
    pub p_initial: f64,
    /// Noisy mean before clamping.
    pub p_initial_raw: f64,
    /// Accuracy radius computed from `p_initial` and public constants only.
    pub alpha: f64,
    pub group_size: usize,
    pub noise_scale: f64,
}

/// Accuracy radius of [`dp_mean_initial`] for a group of `m` users:
///
/// `2 max{ sqrt(12 p ln(4/b)/m + 36 ln(4/b)^2/m^2) + 6 ln(4/b)/m, ln(2/b)/(eps m) }`.
pub fn initial_mean_radius(p_hat: f64, m: usize, epsilon: f64, beta: f64) -> f64 {
    let m = m as f64;
    let l4 = (4.0 / beta).ln();
    let p = p_hat.clamp(0.0, 1.0);
    let sampling = (12.0 * p * l4 / m + 36.0 * l4 * l4 / (m * m)).sqrt() + 6.0 * l4 / m;
    let privacy = (2.0 / beta).ln() / (epsilon * m);
    2.0 * sampling.max(privacy)
}

/// Laplace-noised mean of one sample per user; `epsilon`-DP at user level.
pub fn dp_mean_initial<R: Rng + ?Sized>(
    single_samples: &[bool],
    epsilon: f64,
    beta: f64,
    rng: &mut R,
) -> Result<InitialMeanResult> {
    if single_samples.is_empty() {
        return Err(Error::Empty("initial mean"));
    }
    crate::mechanisms::check_epsilon(epsilon)?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("beta", format!("must lie in (0, 1), got {beta}")));
    }
    let m = single_samples.len();
    let ones = single_samples.iter().filter(|&&b| b).count();
    let noise_scale = 1.0 / (epsilon * m as f64);
    let raw = ones as f64 / m as f64 + sample_laplace(noise_scale, rng);
    let p_initial = raw.clamp(0.0, 1.0);
    Ok(InitialMeanResult {
        p_initial,
        p_initial_raw: raw,
        alpha: initial_mean_radius(p_initial, m, epsilon, beta),
        group_size: m,
        noise_scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialVarianceResult {
    /// Estimate of `Var(D(k_ref))`.
    pub sigma2_hat: f64,
    pub k_ref: u64,
    pub block_len: u64,
    pub pairs: usize,
    /// Winning dyadic bin `l`; `None` when the variance was supplied.
    pub bin: Option<i64>,
}

/// Bound on `E|X - mu|^3 / sigma^3` for the block-averaged inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentBound {
    /// `8 (3 sqrt(3) + gamma_D)` from the third-moment ratio of the family.
    FromFamily(MetaKind),
    Explicit(f64),
}

impl MomentBound {
    pub fn value(&self) -> f64 {
        match *self {
            MomentBound::FromFamily(kind) => 8.0 * (3.0 * 3f64.sqrt() + kind.third_moment_ratio()),
            MomentBound::Explicit(v) => v,
        }
    }
}

/// Block length of the variance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockLength {
    /// `ceil((600 gamma rho)^2)`, the length at which block means are within
    /// 1/300 of Gaussian in every bin.
    BerryEsseen,
    Fixed(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimatorConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Berry-Esseen constant.
    pub gamma: f64,
    pub moment: MomentBound,
    pub block_len: BlockLength,
    /// Constant `c` of the minimum sample size check.
    pub size_constant: f64,
    pub path: HistogramPath,
}

impl VarianceEstimatorConfig {
    pub fn new(moment: MomentBound) -> Self {
        Self {
            sigma_min: 1e-4,
            sigma_max: 0.5,
            gamma: 0.56,
            moment,
            block_len: BlockLength::BerryEsseen,
            size_constant: 4.0,
            path: HistogramPath::Stability,
        }
    }

    pub fn with_block_len(mut self, block_len: BlockLength) -> Self {
        self.block_len = block_len;
        self
    }

    pub fn phi(&self) -> u64 {
        match self.block_len {
            BlockLength::Fixed(phi) => phi.max(1),
            BlockLength::BerryEsseen => {
                let root = 600.0 * self.gamma * self.moment.value();
                // Relative slack keeps exact squares from rounding up a step.
                (root * root * (1.0 - 1e-12)).ceil() as u64
            }
        }
    }

    /// Smallest input count accepted for the given budget and `beta`.
    pub fn min_inputs(&self, budget: &PrivacyBudget, beta: f64) -> f64 {
        let eps = budget.epsilon();
        let pure = ((self.sigma_max / self.sigma_min).ln() / beta).ln().max(0.0) / eps;
        let approx = if budget.delta() > 0.0 {
            (1.0 / (budget.delta() * beta)).ln() / eps
        } else {
            f64::INFINITY
        };
        self.size_constant * self.phi() as f64 * pure.min(approx)
    }

    /// Exponent range `(j_min, j_max)` of the dyadic bins for block length `phi`.
    pub fn bin_range(&self, phi: u64) -> (i64, i64) {
        let root = (phi as f64).sqrt();
        let j_max = (self.sigma_max / root).log2().ceil() as i64 + 1;
        let j_min = (self.sigma_min / root).log2().floor() as i64 - 2;
        (j_min, j_max)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(invalid(
                "sigma bounds",
                format!("need 0 < sigma_min < sigma_max, got [{}, {}]", self.sigma_min, self.sigma_max),
            ));
        }
        if !(self.gamma > 0.0) || !(self.moment.value() > 0.0) || !(self.size_constant >= 0.0) {
            return Err(invalid("variance estimator", "constants must be positive"));
        }
        Ok(())
    }
}

/// Private standard-deviation estimate by a histogram of block differences,
/// returned as a variance.
///
/// Inputs are averaged in blocks of `phi`, consecutive block means are
/// differenced, and the dyadic bin holding the most `|Y_i|` selects
/// `sigma_hat = 2^{l+2} sqrt(phi)`. Inputs must each be the mean of exactly
/// `k` samples; `k` is recorded, not used.
pub fn dp_variance_initial<R: Rng + ?Sized>(
    inputs: &[f64],
    k: u64,
    budget: &PrivacyBudget,
    config: &VarianceEstimatorConfig,
    beta: f64,
    rng: &mut R,
) -> Result<InitialVarianceResult> {
    config.validate()?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("beta", format!("must lie in (0, 1), got {beta}")));
    }
    let n = inputs.len();
    let needed = config.min_inputs(budget, beta);
    if (n as f64) < needed {
        return Err(Error::NoVarianceEstimate(format!(
            "{n} inputs is below the minimum of {needed:.1}"
        )));
    }
    let phi = config.phi();
    let blocks: Vec<f64> = inputs
        .chunks_exact(phi as usize)
        .map(|c| c.iter().sum::<f64>() / phi as f64)
        .collect();
    let diffs: Vec<f64> = blocks.chunks_exact(2).map(|z| (z[1] - z[0]).abs()).collect();
    if diffs.is_empty() {
        return Err(Error::NoVarianceEstimate(format!(
            "{n} inputs do not fill two blocks of {phi}"
        )));
    }
    let (j_min, j_max) = config.bin_range(phi);
    let bins = BinSpec::Dyadic {
        min_exp: Some(j_min),
        max_exp: Some(j_max),
    };
    let release = dp_histogram(&diffs, &bins, config.path, budget, rng)?;
    let l = release
        .argmax
        .ok_or_else(|| Error::NoVarianceEstimate("no histogram bin survived suppression".into()))?;
    let sigma_hat = 2f64.powi(l as i32 + 2) * (phi as f64).sqrt();
    Ok(InitialVarianceResult {
        sigma2_hat: sigma_hat * sigma_hat,
        k_ref: k,
        block_len: phi,
        pairs: diffs.len(),
        bin: Some(l),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    #[test]
    fn noiseless_limit_of_the_mean() {
        let mut rng = RandomSource::new(0, 0).rng();
        let r = dp_mean_initial(&[true; 1000], 1e12, 0.05, &mut rng).unwrap();
        assert!((r.p_initial - 1.0).abs() < 1e-9);
        let l4 = (4.0f64 / 0.05).ln();
        let m = 1000.0;
        let expected = 2.0 * (6.0 * l4 + (12.0 * l4 * m + 36.0 * l4 * l4).sqrt()) / m;
        assert!((r.alpha - expected).abs() < 1e-9);
        assert!(dp_mean_initial(&[], 1.0, 0.05, &mut rng).is_err());
    }

    #[test]
    fn berry_esseen_block_length() {
        let cfg = VarianceEstimatorConfig::new(MomentBound::Explicit(2.0));
        assert_eq!(cfg.phi(), 451_584);
        assert_eq!(cfg.with_block_len(BlockLength::Fixed(3)).phi(), 3);
    }

    #[test]
    fn zero_spread_has_no_estimate() {
        let cfg = VarianceEstimatorConfig::new(MomentBound::Explicit(2.0)).with_block_len(BlockLength::Fixed(1));
        let budget = PrivacyBudget::new(1.0, 1e-6).unwrap();
        let mut rng = RandomSource::new(0, 0).rng();
        let r = dp_variance_initial(&[0.4; 2000], 10, &budget, &cfg, 0.05, &mut rng);
        assert!(matches!(r, Err(Error::NoVarianceEstimate(_))));
    }

    #[test]
    fn too_few_inputs_is_rejected() {
        let cfg = VarianceEstimatorConfig::new(MomentBound::Explicit(2.0));
        let budget = PrivacyBudget::new(1.0, 1e-6).unwrap();
        let mut rng = RandomSource::new(0, 0).rng();
        let r = dp_variance_initial(&[0.1, 0.9, 0.5, 0.2], 10, &budget, &cfg, 0.05, &mut rng);
        assert!(matches!(r, Err(Error::NoVarianceEstimate(_))));
    }
}
