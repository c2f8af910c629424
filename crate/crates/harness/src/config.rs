//! Experiment configuration, read from TOML.

use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use hetmean::{
    AlphaPolicy, BlockLength, LambdaCount, MetaDistribution, MomentBound, PrivacyBudget, VarianceEstimatorConfig,
    VarianceSource,
};
use hetmean::mechanisms::HistogramPath;
use hetmean::population::KProfile;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Nonprivate,
    IdealPrivate,
    PublicK,
    PrivateK,
    MedianBaseline,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Nonprivate,
        EstimatorKind::IdealPrivate,
        EstimatorKind::PublicK,
        EstimatorKind::PrivateK,
        EstimatorKind::MedianBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Nonprivate => "nonprivate",
            EstimatorKind::IdealPrivate => "ideal_private",
            EstimatorKind::PublicK => "public_k",
            EstimatorKind::PrivateK => "private_k",
            EstimatorKind::MedianBaseline => "median_baseline",
        }
    }

    /// RNG lane of this estimator; lane 0 generates the population.
    pub fn lane(self) -> u8 {
        self as u8 + 1
    }
}

/// Standard deviation of the meta-distribution, fixed or as a function of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpreadSpec {
    Value(f64),
    Rule(SpreadRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadRule {
    /// `1 / sqrt(n)`.
    InvSqrtN,
}

impl SpreadSpec {
    pub fn at(&self, n: usize) -> f64 {
        match *self {
            SpreadSpec::Value(s) => s,
            SpreadSpec::Rule(SpreadRule::InvSqrtN) => 1.0 / (n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaFamily {
    PointMass,
    TwoPoint,
    TruncatedGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaSpec {
    pub family: MetaFamily,
    pub p: f64,
    #[serde(default = "zero_spread")]
    pub sigma_p: SpreadSpec,
    /// Truncation point of the Gaussian, in untruncated standard deviations.
    #[serde(default)]
    pub w: Option<f64>,
}

fn zero_spread() -> SpreadSpec {
    SpreadSpec::Value(0.0)
}

impl MetaSpec {
    pub fn build(&self, n: usize) -> Result<MetaDistribution> {
        let sigma = self.sigma_p.at(n);
        let meta = match self.family {
            MetaFamily::PointMass => MetaDistribution::point_mass(self.p),
            MetaFamily::TwoPoint => MetaDistribution::two_point(self.p, sigma),
            MetaFamily::TruncatedGaussian => match self.w {
                Some(w) => MetaDistribution::truncated_gaussian_with(self.p, sigma, w),
                None => MetaDistribution::truncated_gaussian(self.p, sigma),
            },
        };
        meta.with_context(|| format!("invalid meta-distribution at n = {n}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Private block-histogram estimate.
    Estimate,
    /// The true spread, treated as public.
    Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockSpec {
    Fixed(u64),
    Rule(BlockRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRule {
    BerryEsseen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Fixed(f64),
    Rule(AlphaRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    FromInitial,
}

/// Estimator switches; defaults reproduce the algorithms as written except
/// for the variance estimator's block length, which defaults to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub alpha: AlphaSpec,
    pub lambda_count: LambdaCount,
    pub histogram_path: HistogramPath,
    pub variance: VarianceMode,
    pub block_len: BlockSpec,
    /// Constant of the variance estimator's minimum input count.
    pub size_constant: f64,
    pub top_size: Option<usize>,
    /// Public bound on the counts; defaults to the largest count.
    pub k_max: Option<u64>,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            alpha: AlphaSpec::Rule(AlphaRule::FromInitial),
            lambda_count: LambdaCount::MaxCount,
            histogram_path: HistogramPath::Stability,
            variance: VarianceMode::Estimate,
            block_len: BlockSpec::Fixed(1),
            size_constant: 4.0,
            top_size: None,
            k_max: None,
        }
    }
}

impl Toggles {
    pub fn alpha_policy(&self) -> AlphaPolicy {
        match self.alpha {
            AlphaSpec::Fixed(a) => AlphaPolicy::Fixed(a),
            AlphaSpec::Rule(AlphaRule::FromInitial) => AlphaPolicy::FromInitial,
        }
    }

    pub fn variance_source(&self, meta: &MetaDistribution) -> VarianceSource {
        match self.variance {
            VarianceMode::Known => VarianceSource::Known(meta.variance()),
            VarianceMode::Estimate => {
                let mut cfg = VarianceEstimatorConfig::new(MomentBound::FromFamily(meta.kind()));
                cfg.block_len = match self.block_len {
                    BlockSpec::Fixed(phi) => BlockLength::Fixed(phi),
                    BlockSpec::Rule(BlockRule::BerryEsseen) => BlockLength::BerryEsseen,
                };
                cfg.size_constant = self.size_constant;
                cfg.path = self.histogram_path;
                VarianceSource::Estimate(cfg)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
}

impl BudgetSpec {
    pub fn build(&self) -> Result<PrivacyBudget> {
        Ok(PrivacyBudget::new(self.epsilon, self.delta)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub trials: usize,
    pub n: Vec<usize>,
    pub beta: f64,
    pub budget: BudgetSpec,
    pub meta: MetaSpec,
    pub profile: KProfile,
    pub estimators: Vec<EstimatorKind>,
    /// Output prefix; `<output>.csv` and `<output>.json` are written.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Wall-clock runtimes make the CSV differ between runs, so they are
    /// recorded only on request.
    #[serde(default)]
    pub record_runtime: bool,
    #[serde(default)]
    pub toggles: Toggles,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.trials >= 1, "trials must be at least 1");
        ensure!(!self.n.is_empty(), "the n grid is empty");
        ensure!(!self.estimators.is_empty(), "no estimators configured");
        ensure!(self.beta > 0.0 && self.beta < 1.0, "beta must lie in (0, 1)");
        self.budget.build()?;
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        ensure!(seen.len() == self.estimators.len(), "an estimator is listed twice");
        for &n in &self.n {
            self.meta.build(n)?;
            self.profile.resolve(n)?;
        }
        if self.estimators.contains(&EstimatorKind::PrivateK) && self.budget.delta <= 0.0 {
            bail!("the private_k estimator needs delta > 0");
        }
        Ok(())
    }
}

/// Parameters that `sweep` can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    N,
    Epsilon,
    Delta,
    Beta,
    Trials,
}

impl std::str::FromStr for SweepParam {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "n" => SweepParam::N,
            "epsilon" => SweepParam::Epsilon,
            "delta" => SweepParam::Delta,
            "beta" => SweepParam::Beta,
            "trials" => SweepParam::Trials,
            other => bail!("unknown sweep parameter {other:?}; expected n, epsilon, delta, beta or trials"),
        })
    }
}

impl ExperimentConfig {
    /// One config per value; an `n` sweep is a single config over that grid.
    pub fn sweep(&self, param: SweepParam, values: &[f64]) -> Result<Vec<Self>> {
        ensure!(!values.is_empty(), "no sweep values");
        let as_count = |v: f64| -> Result<usize> {
            ensure!(v >= 1.0 && v.fract() == 0.0, "{v} is not a positive integer");
            Ok(v as usize)
        };
        let configs = if param == SweepParam::N {
            let mut cfg = self.clone();
            cfg.n = values.iter().map(|&v| as_count(v)).collect::<Result<_>>()?;
            vec![cfg]
        } else {
            values
                .iter()
                .map(|&v| {
                    let mut cfg = self.clone();
                    match param {
                        SweepParam::Epsilon => cfg.budget.epsilon = v,
                        SweepParam::Delta => cfg.budget.delta = v,
                        SweepParam::Beta => cfg.beta = v,
                        SweepParam::Trials => cfg.trials = as_count(v)?,
                        SweepParam::N => unreachable!(),
                    }
                    Ok(cfg)
                })
                .collect::<Result<_>>()?
        };
        for cfg in &configs {
            cfg.validate()?;
        }
        Ok(configs)
    }
}
