//! Weighted mean estimators: non-private, ideal (oracle) and public-size
//! private.
//!
//! Every estimator returns an [`EstimateReport`]. Only `estimate` is a private
//! release; the other fields are diagnostics for simulation and testing.

use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{weighted_laplace_variance, VariancePrediction};
use crate::budget::PrivacyBudget;
use crate::concentration::{f_dk, truncation_interval, ConcentrationQuery, Interval};
use crate::error::{invalid, Error, Result};
use crate::initial::{
    dp_mean_initial, dp_variance_initial, InitialMeanResult, InitialVarianceResult, VarianceEstimatorConfig,
};
use crate::mechanisms::{laplace_mechanism, NeighbourRelation, SensitivityBound};
use crate::meta::MetaKind;
use crate::population::{variance_of_dk, Groups, Population};
use crate::privk::PtrCertificate;
use crate::weights::{ideal_weights, optimize_threshold};

/// Floor on per-user variance estimates, reached only when the initial mean
/// sits at 0 or 1.
pub const MIN_SIGMA2: f64 = 1e-12;

/// How the per-user weights are capped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightCap {
    None,
    /// `w_i ∝ min(1/sigma_i^2, T/sigma_i)`.
    Threshold(f64),
    /// Every user's sample count is cut to this value first.
    SampleCount(u64),
}

/// Weights, clamp intervals and sensitivity of one estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPlan {
    /// Indices into [`Population::users`] of the participating users.
    pub users: Range<usize>,
    /// Sum to one.
    pub weights: Vec<f64>,
    pub cap: WeightCap,
    /// Per-user variance used for the weights.
    pub sigma2: Vec<f64>,
    pub intervals: Vec<Interval<f64>>,
    /// `max_i w_i |b_i - a_i|` plus [`rounding_slack`] for the capped
    /// estimators.
    pub sensitivity: f64,
    pub noise_scale: f64,
}

impl WeightPlan {
    /// `sum_i w_i clamp(p_hat_i, a_i, b_i)` and the number of clamped users.
    /// `p_hats` holds the participating users only.
    pub fn statistic(&self, p_hats: &[f64]) -> (f64, usize) {
        let mut total = 0.0;
        let mut clamped = 0;
        for ((&w, iv), &x) in self.weights.iter().zip(&self.intervals).zip(p_hats) {
            let c = iv.clamp(x);
            if c != x {
                clamped += 1;
            }
            total += w * c;
        }
        (total, clamped)
    }

    fn widths(&self) -> Vec<f64> {
        self.intervals.iter().map(Interval::width).collect()
    }
}

/// Outcome of propose-test-release, when the estimator uses it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PtrStatus {
    NotApplicable,
    Released(PtrCertificate),
    /// The initial mean estimate was returned instead.
    Fallback(PtrCertificate),
}

impl PtrStatus {
    pub fn is_fallback(&self) -> bool {
        matches!(self, PtrStatus::Fallback(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    /// Pre-noise statistic. Unless `ptr` is a fallback,
    /// `estimate = statistic + noise`.
    pub statistic: f64,
    pub noise: f64,
    pub plan: WeightPlan,
    /// Participating users whose mean was moved by the clamp.
    pub clamped: usize,
    pub initial_mean: Option<InitialMeanResult>,
    pub initial_variance: Option<InitialVarianceResult>,
    pub ptr: PtrStatus,
    /// Total privacy cost; `None` for non-private estimators.
    pub budget: Option<PrivacyBudget>,
    pub prediction: Option<VariancePrediction<f64>>,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    pub fn clamp_rate(&self) -> f64 {
        self.clamped as f64 / self.plan.weights.len() as f64
    }
}

/// `(1/k) q (1 - q) + (1 - 1/k) s2` for an estimated mean `q` and spread `s2`,
/// floored at [`MIN_SIGMA2`].
pub fn estimated_user_variance(q: f64, s2: f64, k: u64) -> f64 {
    let inv_k = 1.0 / k as f64;
    (inv_k * q * (1.0 - q) + (1.0 - inv_k) * s2).max(MIN_SIGMA2)
}

/// Reference mean for the concentration bounds: `center` moved towards 1/2
/// by `alpha`, so the bound covers every mean within `alpha` of `center`.
pub fn shifted_reference(center: f64, alpha: f64) -> f64 {
    let c = center.clamp(0.0, 1.0);
    if c < 0.5 {
        (c + alpha).min(0.5)
    } else {
        (c - alpha).max(0.5)
    }
}

/// Evaluates `f` once per run of equal counts.
pub(crate) fn per_count<F>(ks: impl IntoIterator<Item = u64>, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(u64) -> Result<f64>,
{
    let mut out = Vec::new();
    let mut last: Option<(u64, f64)> = None;
    for k in ks {
        let v = match last {
            Some((lk, v)) if lk == k => v,
            _ => {
                let v = f(k)?;
                last = Some((k, v));
                v
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Bound on how far rounding can move the difference of two float
/// evaluations of `sum_i w_i x_i` over `n` terms with `sum_i w_i = 1` and
/// `x_i` in `[0, 1]`. Declared sensitivities include it, so they bound the
/// computed statistic and not just its exact value.
pub fn rounding_slack(n: usize) -> f64 {
    2.0 * (n as f64 + 2.0) * f64::EPSILON
}

/// Capped weights with the threshold minimising the predicted variance.
fn capped_plan(users: Range<usize>, sigma2: Vec<f64>, intervals: Vec<Interval<f64>>, epsilon: f64) -> Result<WeightPlan> {
    let sigmas: Vec<f64> = sigma2.iter().map(|s| s.sqrt()).collect();
    let widths: Vec<f64> = intervals.iter().map(Interval::width).collect();
    let threshold = optimize_threshold(&sigmas, &widths, epsilon)?;
    let weights = ideal_weights(&sigmas, threshold)?;
    let sensitivity =
        weights.iter().zip(&widths).fold(0.0f64, |m, (w, d)| m.max(w * d)) + rounding_slack(weights.len());
    Ok(WeightPlan {
        users,
        weights,
        cap: WeightCap::Threshold(threshold),
        sigma2,
        intervals,
        sensitivity,
        noise_scale: sensitivity / epsilon,
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(invalid("beta", format!("must lie in (0, 1), got {beta}")))
    }
}

/// Top-group size of the non-private estimator: `max(2, ceil(ln n))`.
pub fn nonprivate_top_size(n: usize) -> usize {
    ((n as f64).ln().ceil() as usize).max(2)
}

/// Inverse-variance weighted mean of the middle group.
///
/// The initial mean is the average of one sample from each user of the
/// bottom decile. The spread is the sample variance of the top-group means,
/// each cut to the smallest count in that group; this is half the average
/// squared pairwise difference.
pub fn estimate_nonprivate(pop: &Population) -> Result<EstimateReport> {
    let n = pop.n();
    if n < 20 {
        return Err(Error::InfeasibleGroups {
            n,
            reason: "the non-private estimator needs n >= 20".into(),
        });
    }
    let top = nonprivate_top_size(n);
    let groups = Groups::new(n, top)?;
    let users = pop.users();
    let bottom = &users[groups.bottom.clone()];
    let p0 = bottom.iter().filter(|u| u.samples()[0]).count() as f64 / bottom.len() as f64;
    let k_ref = users[top - 1].k();
    let top_means: Vec<f64> = users[groups.top.clone()].iter().map(|u| u.prefix_mean(k_ref)).collect();
    let mean_top = top_means.iter().sum::<f64>() / top as f64;
    let s2 = top_means.iter().map(|x| (x - mean_top).powi(2)).sum::<f64>() / (top - 1) as f64;

    let middle = &users[groups.middle.clone()];
    let sigma2: Vec<f64> = middle.iter().map(|u| estimated_user_variance(p0, s2, u.k())).collect();
    let raw: Vec<f64> = sigma2.iter().map(|s| 1.0 / s).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let sensitivity = weights.iter().fold(0.0f64, |m, &w| m.max(w));
    let plan = WeightPlan {
        users: groups.middle.clone(),
        weights,
        cap: WeightCap::None,
        sigma2,
        intervals: vec![Interval { lo: 0.0, hi: 1.0 }; middle.len()],
        sensitivity,
        noise_scale: 0.0,
    };
    let p_hats: Vec<f64> = middle.iter().map(|u| u.p_hat()).collect();
    let (statistic, clamped) = plan.statistic(&p_hats);
    Ok(EstimateReport {
        estimate: statistic,
        statistic,
        noise: 0.0,
        plan,
        clamped,
        initial_mean: Some(InitialMeanResult {
            p_initial: p0,
            p_initial_raw: p0,
            alpha: 0.0,
            group_size: bottom.len(),
            noise_scale: 0.0,
        }),
        initial_variance: Some(InitialVarianceResult {
            sigma2_hat: s2,
            k_ref,
            block_len: 1,
            pairs: top * (top - 1) / 2,
            bin: None,
        }),
        ptr: PtrStatus::NotApplicable,
        budget: None,
        prediction: None,
        warnings: Vec::new(),
    })
}

/// Parameters known only to an oracle: the true mean and spread of the
/// meta-distribution and its family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub p: f64,
    pub sigma_p2: f64,
    pub family: MetaKind,
}

/// The private estimator that knows `p` and `sigma_p^2`.
///
/// Uses every user, clamps each mean to `p ± f_dk(k_i)`, caps the weights at
/// the threshold minimising the predicted variance and adds
/// `Lap(max_i w_i |b_i - a_i| / eps)`. The report carries the closed-form
/// variance prediction at that threshold.
pub fn estimate_ideal_private<R: Rng + ?Sized>(
    pop: &Population,
    oracle: &Oracle,
    epsilon: f64,
    beta: f64,
    rng: &mut R,
) -> Result<EstimateReport> {
    check_beta(beta)?;
    let n = pop.n();
    let users = pop.users();
    let sigma2 = per_count(users.iter().map(|u| u.k()), |k| variance_of_dk(oracle.p, oracle.sigma_p2, k))?;
    let radii = per_count(users.iter().map(|u| u.k()), |k| {
        let q = ConcentrationQuery {
            k,
            n: n as u64,
            sigma_p2: oracle.sigma_p2,
            beta,
            p_ref: oracle.p,
        };
        f_dk(&q, oracle.family)
    })?;
    let intervals = radii.iter().map(|&f| truncation_interval(oracle.p, 0.0, f)).collect();
    let sigma2_floored = sigma2.iter().map(|s| s.max(MIN_SIGMA2)).collect();
    let plan = capped_plan(0..n, sigma2_floored, intervals, epsilon)?;
    let p_hats = pop.p_hats();
    let (statistic, clamped) = plan.statistic(&p_hats);
    let sensitivity = SensitivityBound::global(plan.sensitivity, NeighbourRelation::UserLevelPublicSize)?;
    let release = laplace_mechanism(statistic, &sensitivity, epsilon, rng)?;
    let threshold = match plan.cap {
        WeightCap::Threshold(t) => t,
        _ => unreachable!("capped plans carry a threshold"),
    };
    let prediction = weighted_laplace_variance(&plan.weights, &sigma2, &plan.widths(), epsilon, threshold);
    Ok(EstimateReport {
        estimate: release.value,
        statistic,
        noise: release.noise,
        plan,
        clamped,
        initial_mean: None,
        initial_variance: None,
        ptr: PtrStatus::NotApplicable,
        budget: Some(PrivacyBudget::pure(epsilon)?),
        prediction: Some(prediction),
        warnings: Vec::new(),
    })
}

/// Accuracy radius of the initial mean used to widen the clamp intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPolicy {
    /// The radius reported by the initial mean estimator.
    FromInitial,
    Fixed(f64),
}

/// Where the spread estimate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    /// Private estimate from the top group.
    Estimate(VarianceEstimatorConfig),
    /// A publicly known value; the top group is then unused.
    Known(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PublicKConfig {
    /// Size `L` of the top group; `None` picks [`default_top_size`].
    pub top_size: Option<usize>,
    pub family: MetaKind,
    pub alpha: AlphaPolicy,
    pub variance: VarianceSource,
}

impl PublicKConfig {
    pub fn new(family: MetaKind, variance: VarianceSource) -> Self {
        Self {
            top_size: None,
            family,
            alpha: AlphaPolicy::FromInitial,
            variance,
        }
    }
}

/// Default top-group size: at least `ln(n)/eps`, ten times the histogram
/// suppression threshold (so the modal bin survives), and the variance
/// estimator's minimum input count; capped at `3n/5`.
pub fn default_top_size(n: usize, budget: &PrivacyBudget, beta: f64, variance: &VarianceSource) -> usize {
    let VarianceSource::Estimate(cfg) = variance else {
        return 0;
    };
    let eps = budget.epsilon();
    let by_n = ((n as f64).ln() / eps).ceil();
    let by_threshold = if budget.delta() > 0.0 {
        (10.0 * crate::mechanisms::stability_threshold(budget)).ceil()
    } else {
        0.0
    };
    let by_estimator = cfg.min_inputs(budget, beta).ceil().max(2.0 * cfg.phi() as f64);
    let want = by_n.max(by_threshold).max(by_estimator) as usize;
    want.min(3 * n / 5)
}

/// Resolves `L` and checks that `k_1 / k_{n/2} <= (n/2 - L) / L`, returning a
/// warning when it does not hold.
pub(crate) fn top_size_and_ratio_warning(
    pop: &Population,
    top_size: usize,
) -> Option<String> {
    let n = pop.n();
    let half = n / 2;
    if top_size == 0 || half == 0 || top_size >= half {
        return None;
    }
    let ks = pop.users();
    let ratio = ks[0].k() as f64 / ks[half - 1].k() as f64;
    let allowed = (half - top_size) as f64 / top_size as f64;
    (ratio > allowed).then(|| format!("k_1/k_(n/2) = {ratio:.3} exceeds (n/2 - L)/L = {allowed:.3}"))
}

pub(crate) fn resolve_initial_variance<R: Rng + ?Sized>(
    inputs: impl FnOnce(u64) -> Vec<f64>,
    k_ref: u64,
    variance: &VarianceSource,
    budget: &PrivacyBudget,
    beta: f64,
    rng: &mut R,
) -> Result<InitialVarianceResult> {
    match variance {
        VarianceSource::Known(v) => {
            if !(*v >= 0.0) || !v.is_finite() {
                return Err(invalid("known variance", format!("must be finite and nonnegative, got {v}")));
            }
            Ok(InitialVarianceResult {
                sigma2_hat: *v,
                k_ref,
                block_len: 0,
                pairs: 0,
                bin: None,
            })
        }
        VarianceSource::Estimate(cfg) => dp_variance_initial(&inputs(k_ref), k_ref, budget, cfg, beta, rng),
    }
}

/// Private weighted mean for public sample counts; `(eps, delta)`-DP under
/// user-level neighbours that keep every `k_i`.
///
/// The bottom decile gives the initial mean, the top `L` users the spread,
/// and the middle group the final clamped and capped weighted mean. The three
/// groups are disjoint, so the budget is not split.
pub fn estimate_public_k<R: Rng + ?Sized>(
    pop: &Population,
    budget: &PrivacyBudget,
    beta: f64,
    config: &PublicKConfig,
    rng: &mut R,
) -> Result<EstimateReport> {
    check_beta(beta)?;
    let n = pop.n();
    let top = config
        .top_size
        .unwrap_or_else(|| default_top_size(n, budget, beta, &config.variance));
    if top == 0 && matches!(config.variance, VarianceSource::Estimate(_)) {
        return Err(Error::InfeasibleGroups {
            n,
            reason: "estimating the spread needs a nonempty top group".into(),
        });
    }
    let groups = Groups::new(n, top)?;
    let users = pop.users();
    let mut warnings: Vec<String> = top_size_and_ratio_warning(pop, top).into_iter().collect();

    let singles: Vec<bool> = users[groups.bottom.clone()].iter().map(|u| u.samples()[0]).collect();
    let initial_mean = dp_mean_initial(&singles, budget.epsilon(), beta, rng)?;
    let k_ref = if top > 0 { users[top - 1].k() } else { users[0].k() };
    let initial_variance = resolve_initial_variance(
        |k| users[groups.top.clone()].iter().map(|u| u.prefix_mean(k)).collect(),
        k_ref,
        &config.variance,
        budget,
        beta,
        rng,
    )?;
    let alpha = match config.alpha {
        AlphaPolicy::FromInitial => initial_mean.alpha,
        AlphaPolicy::Fixed(a) => a,
    };
    let p0 = initial_mean.p_initial;
    let s2 = initial_variance.sigma2_hat;
    let middle = &users[groups.middle.clone()];
    let p_ref = shifted_reference(p0, alpha);
    let sigma2: Vec<f64> = middle.iter().map(|u| estimated_user_variance(p0, s2, u.k())).collect();
    let radii = per_count(middle.iter().map(|u| u.k()), |k| {
        let q = ConcentrationQuery {
            k,
            n: n as u64,
            sigma_p2: s2,
            beta,
            p_ref,
        };
        f_dk(&q, config.family)
    })?;
    let intervals = radii.iter().map(|&f| truncation_interval(p0, alpha, f)).collect();
    let plan = capped_plan(groups.middle.clone(), sigma2, intervals, budget.epsilon())?;
    let p_hats: Vec<f64> = middle.iter().map(|u| u.p_hat()).collect();
    let (statistic, clamped) = plan.statistic(&p_hats);
    let sensitivity = SensitivityBound::global(plan.sensitivity, NeighbourRelation::UserLevelPublicSize)?;
    let release = laplace_mechanism(statistic, &sensitivity, budget.epsilon(), rng)?;
    if initial_mean.p_initial_raw != p0 {
        warnings.push(format!("initial mean {:.4} clamped into [0, 1]", initial_mean.p_initial_raw));
    }
    Ok(EstimateReport {
        estimate: release.value,
        statistic,
        noise: release.noise,
        plan,
        clamped,
        initial_mean: Some(initial_mean),
        initial_variance: Some(initial_variance),
        ptr: PtrStatus::NotApplicable,
        budget: Some(*budget),
        prediction: None,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::{BlockLength, MomentBound};
    use crate::meta::MetaDistribution;
    use crate::population::{generate_population, KProfile, UserRecord};
    use crate::rng::RandomSource;

    fn constant_population(n: usize, k: usize, bit: bool) -> Population {
        let users = (0..n).map(|_| UserRecord::new(vec![bit; k]).unwrap()).collect();
        Population::from_records(users).unwrap()
    }

    #[test]
    fn equal_means_give_that_mean() {
        let pop = constant_population(100, 5, true);
        let r = estimate_nonprivate(&pop).unwrap();
        assert!((r.estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_counts_give_uniform_weights() {
        let meta = MetaDistribution::point_mass(0.4).unwrap();
        let syn = generate_population(&meta, &KProfile::Constant(3), 200, RandomSource::new(1, 0)).unwrap();
        let r = estimate_nonprivate(&syn.population).unwrap();
        let m = r.plan.weights.len() as f64;
        assert!(r.plan.weights.iter().all(|w| (w - 1.0 / m).abs() < 1e-15));
        assert_eq!(r.plan.users, 6..180);
    }

    #[test]
    fn ideal_weights_come_from_the_optimised_threshold() {
        let meta = MetaDistribution::truncated_gaussian(0.5, 0.03).unwrap();
        let syn = generate_population(&meta, &KProfile::PowerLaw, 500, RandomSource::new(2, 0)).unwrap();
        let oracle = Oracle { p: 0.5, sigma_p2: 0.0009, family: meta.kind() };
        let mut rng = RandomSource::new(2, 0).lane(1).rng();
        let r = estimate_ideal_private(&syn.population, &oracle, 1.0, 0.05, &mut rng).unwrap();
        let WeightCap::Threshold(t) = r.plan.cap else { panic!("expected a threshold") };
        let sigmas: Vec<f64> = r.plan.sigma2.iter().map(|s| s.sqrt()).collect();
        assert_eq!(r.plan.weights, ideal_weights(&sigmas, t).unwrap());
        let total: f64 = r.plan.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(r.estimate, r.statistic + r.noise);
        let pred = r.prediction.unwrap();
        assert_eq!(pred.total, pred.nonprivate + pred.privacy);
    }

    #[test]
    fn public_k_degenerate_heterogeneity() {
        let meta = MetaDistribution::point_mass(0.3).unwrap();
        let syn = generate_population(&meta, &KProfile::Constant(20), 2000, RandomSource::new(3, 0)).unwrap();
        let mut cfg = PublicKConfig::new(MetaKind::PointMass, VarianceSource::Known(0.0));
        cfg.alpha = AlphaPolicy::Fixed(0.0);
        cfg.top_size = Some(0);
        let budget = PrivacyBudget::new(1e6, 1e-6).unwrap();
        let mut rng = RandomSource::new(3, 0).lane(1).rng();
        let r = estimate_public_k(&syn.population, &budget, 0.05, &cfg, &mut rng).unwrap();
        let middle = &syn.population.users()[r.plan.users.clone()];
        let plain = middle.iter().map(|u| u.p_hat()).sum::<f64>() / middle.len() as f64;
        assert!((r.estimate - plain).abs() < 1e-3, "{} vs {plain}", r.estimate);
    }

    #[test]
    fn public_k_runs_with_an_estimated_spread() {
        let meta = MetaDistribution::truncated_gaussian(0.5, 0.03).unwrap();
        let syn = generate_population(&meta, &KProfile::PowerLaw, 5000, RandomSource::new(4, 0)).unwrap();
        let vcfg = VarianceEstimatorConfig::new(MomentBound::FromFamily(meta.kind())).with_block_len(BlockLength::Fixed(1));
        let cfg = PublicKConfig::new(meta.kind(), VarianceSource::Estimate(vcfg));
        let budget = PrivacyBudget::new(1.0, 1e-6).unwrap();
        let mut rng = RandomSource::new(4, 0).lane(1).rng();
        let r = estimate_public_k(&syn.population, &budget, 0.05, &cfg, &mut rng).unwrap();
        assert!((r.estimate - 0.5).abs() < 0.05, "{}", r.estimate);
        assert_eq!(r.estimate, r.statistic + r.noise);
        let total: f64 = r.plan.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
