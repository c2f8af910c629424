//! Differentially private mean estimation for users holding different numbers
//! of Bernoulli samples.
//!
//! Each user `i` holds `k_i` samples from `Ber(p_i)` with `p_i` drawn from a
//! meta-distribution with mean `p`. The estimators weight per-user means by
//! their estimated inverse variance, cap the weights, clamp each user's mean to
//! a concentration interval and add noise calibrated to the resulting
//! sensitivity.

pub mod analysis;
pub mod budget;
pub mod concentration;
pub mod error;
pub mod estimators;
pub mod initial;
pub mod mechanisms;
pub mod meta;
pub mod population;
pub mod privk;
pub mod rng;
pub mod scalar;
pub mod weights;

pub use analysis::{
    constant_p_variance, kstar, kstar_objective, lower_bound_expression, median_truncation_baseline,
    weighted_laplace_variance, LowerBound, LowerBoundBranch, VariancePrediction,
};
pub use budget::PrivacyBudget;
pub use concentration::{
    f_bin, f_dk, f_meta, truncation_interval, ConcentrationQuery, Interval,
};
pub use error::{Error, Result};
pub use estimators::{
    default_top_size, estimate_ideal_private, estimate_nonprivate, estimate_public_k, AlphaPolicy,
    EstimateReport, Oracle, PtrStatus, PublicKConfig, VarianceSource, rounding_slack, WeightCap, WeightPlan,
};
pub use initial::{
    dp_mean_initial, dp_variance_initial, initial_mean_radius, BlockLength, InitialMeanResult,
    InitialVarianceResult, MomentBound, VarianceEstimatorConfig,
};
pub use meta::{MetaDistribution, MetaKind};
pub use population::{
    generate_population, variance_of_dk, Groups, KProfile, Population, Synthetic, Truth,
    UserRecord,
};
pub use privk::{
    certify_kappa, estimate_private_k, truncated_weighted_mean, KappaBound, LambdaCount,
    LocalSensitivityBound, PrivateKConfig, PtrCertificate, SensitivityEnvelope, TruncatedCoreParams,
};
pub use rng::{RandomSource, Stream};
pub use scalar::Scalar;
pub use weights::{
    capped_weight, ideal_weights, optimize_threshold, threshold_objective, ThresholdChoice,
    ThresholdObjective,
};

pub type Interval64 = Interval<f64>;
pub type Interval32 = Interval<f32>;
pub type VariancePrediction64 = VariancePrediction<f64>;
pub type ThresholdChoice64 = ThresholdChoice<f64>;
