//! Private weighted mean when the sample counts themselves are private.
//!
//! Counts are capped at a private estimate `k_cap` of the `L`-th largest
//! count, the capped weighted mean is computed without noise, and its release
//! goes through propose-test-release with a proposed local sensitivity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::budget::PrivacyBudget;
use crate::concentration::{
    bernstein_radius, f_dk, f_dk_parts, truncation_interval, ConcentrationQuery, Interval, QUANTILE_GRID,
};
use crate::error::{invalid, Error, Result};
use crate::estimators::{
    estimated_user_variance, per_count, resolve_initial_variance, shifted_reference, top_size_and_ratio_warning,
    AlphaPolicy, EstimateReport, PtrStatus, VarianceSource, WeightCap, WeightPlan,
};
use crate::initial::dp_mean_initial;
use crate::mechanisms::{
    em_order_statistic, propose_test_release, sample_laplace, Distance, NeighbourRelation, PtrOutcome,
    SensitivityBound,
};
use crate::meta::MetaKind;
use crate::population::{Groups, Population};

/// Counts up to which the sensitivity envelope evaluates every radius
/// exactly; larger counts use a Bernstein bound.
const ENVELOPE_SCAN: u64 = 2048;

/// Public inputs of the capped weighted mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedCoreParams {
    pub k_cap: u64,
    /// Number of users the clamp intervals must cover simultaneously.
    pub group_size: usize,
    pub center: f64,
    pub sigma_p2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub family: MetaKind,
}

impl TruncatedCoreParams {
    fn validate(&self) -> Result<()> {
        if self.k_cap == 0 || self.group_size == 0 {
            return Err(invalid("k_cap, group_size", "must be at least 1"));
        }
        if !(self.alpha >= 0.0) || !(self.sigma_p2 >= 0.0) || !self.center.is_finite() {
            return Err(invalid("params", "alpha and sigma_p2 must be nonnegative and the center finite"));
        }
        Ok(())
    }

    fn query(&self, k: u64) -> ConcentrationQuery {
        ConcentrationQuery {
            k: k.clamp(1, self.k_cap),
            n: self.group_size as u64,
            sigma_p2: self.sigma_p2,
            beta: self.beta,
            p_ref: shifted_reference(self.center, self.alpha),
        }
    }

    fn center(&self) -> f64 {
        self.center.clamp(0.0, 1.0)
    }

    /// Variance estimate for a user holding `min(k, k_cap)` samples.
    pub fn capped_variance(&self, k: u64) -> f64 {
        estimated_user_variance(self.center(), self.sigma_p2, k.clamp(1, self.k_cap))
    }

    /// Unnormalised weight `v = 1 / capped_variance(k)`.
    pub fn weight(&self, k: u64) -> f64 {
        1.0 / self.capped_variance(k)
    }

    /// `alpha + f_dk(min(k, k_cap))`; every clamped value lies within this of
    /// the clamped center.
    pub fn radius(&self, k: u64) -> Result<f64> {
        Ok(self.alpha + f_dk(&self.query(k), self.family)?)
    }

    pub fn interval(&self, k: u64) -> Result<Interval<f64>> {
        Ok(truncation_interval(self.center(), self.alpha, self.radius(k)? - self.alpha))
    }
}

/// `sum_i v_i clamp(p_hat_i) / sum_i v_i` over `(p_hat_i, k_i)` records,
/// with counts capped at `k_cap`.
pub fn truncated_weighted_mean(records: &[(f64, u64)], params: &TruncatedCoreParams) -> Result<f64> {
    Ok(core_terms(records, params)?.mean(records))
}

struct CoreTerms {
    v: Vec<f64>,
    intervals: Vec<Interval<f64>>,
}

impl CoreTerms {
    fn mean(&self, records: &[(f64, u64)]) -> f64 {
        let total: f64 = self.v.iter().sum();
        let num: f64 = self
            .v
            .iter()
            .zip(&self.intervals)
            .zip(records)
            .map(|((v, iv), &(x, _))| v * iv.clamp(x))
            .sum();
        num / total
    }
}

fn core_terms(records: &[(f64, u64)], params: &TruncatedCoreParams) -> Result<CoreTerms> {
    params.validate()?;
    if records.is_empty() {
        return Err(Error::Empty("truncated weighted mean"));
    }
    let radii = per_count(records.iter().map(|r| r.1.clamp(1, params.k_cap)), |k| params.radius(k))?;
    let c = params.center();
    Ok(CoreTerms {
        v: records.iter().map(|r| params.weight(r.1)).collect(),
        intervals: radii
            .iter()
            .map(|&r| truncation_interval(c, params.alpha, r - params.alpha))
            .collect(),
    })
}

/// Worst-case per-user quantities over every count in `1..=k_cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEnvelope {
    pub v_min: f64,
    pub v_max: f64,
    /// Upper bound on `max_k v(k) radius(k)`.
    pub rho_max: f64,
    /// Upper bound on `max_k radius(k)`.
    pub radius_max: f64,
    /// Width of an interval containing every clamp interval.
    pub hull_width: f64,
}

impl SensitivityEnvelope {
    pub fn new(params: &TruncatedCoreParams) -> Result<Self> {
        params.validate()?;
        let (v1, vc) = (params.weight(1), params.weight(params.k_cap));
        let scan_to = params.k_cap.min(ENVELOPE_SCAN);
        let mut rho_max = 0.0f64;
        let mut radius_max = 0.0f64;
        for k in 1..=scan_to {
            let r = params.radius(k)?;
            radius_max = radius_max.max(r);
            rho_max = rho_max.max(params.weight(k) * r);
        }
        if params.k_cap > scan_to {
            // Bernstein's radius decreases in k and bounds the exact radius up
            // to the grid rounding; the weight is monotone in k.
            let q = params.query(scan_to + 1);
            let (spread, p_max) = f_dk_parts(&q, params.family)?;
            let tail = params.alpha
                + spread
                + bernstein_radius(scan_to + 1, p_max, q.beta / q.n as f64)
                + QUANTILE_GRID;
            radius_max = radius_max.max(tail);
            rho_max = rho_max.max(params.weight(scan_to + 1).max(vc) * tail);
        }
        let hull = truncation_interval(params.center(), 0.0, radius_max);
        Ok(Self {
            v_min: v1.min(vc),
            v_max: v1.max(vc),
            rho_max,
            radius_max,
            hull_width: hull.width(),
        })
    }
}

/// Certified neighbourhood radius for a proposed sensitivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaBound {
    /// Largest `kappa` with `bound(kappa) <= lambda`, or 0 if there is none.
    pub kappa: u64,
    /// `kappa` equals the group size, so no dataset of this size exceeds
    /// the proposal.
    pub unbounded: bool,
    /// `bound(0)`: the certified local sensitivity of the dataset itself.
    pub bound_at_zero: f64,
    pub bound_at_kappa: f64,
    pub envelope: SensitivityEnvelope,
}

/// Upper bound `B(kappa)` on the local sensitivity of the capped weighted
/// mean at every dataset differing from `records` in at most `kappa` users.
///
/// With `S` the smallest possible weight total after changing `kappa` users
/// and removing one more, and `Q` the largest possible `sum_j v_j radius_j`,
/// replacing one user moves the mean by at most
/// `2 min(rho_max / S + v_max min(radius_max, Q / S) / (S + v_max), v_max W / (S + v_max))`,
/// where `W` is the hull width. `B` is nondecreasing in `kappa`, and the
/// resulting certificate changes by at most 1 between neighbouring datasets.
pub struct LocalSensitivityBound {
    /// `bottom[r]` is the sum of the `r` smallest weights, accumulated from
    /// the smallest up so that no large weight is ever subtracted.
    bottom: Vec<f64>,
    weighted_radius: f64,
    envelope: SensitivityEnvelope,
}

impl LocalSensitivityBound {
    pub fn new(records: &[(f64, u64)], params: &TruncatedCoreParams) -> Result<Self> {
        let terms = core_terms(records, params)?;
        let envelope = SensitivityEnvelope::new(params)?;
        let c = params.center();
        let weighted_radius = terms
            .v
            .iter()
            .zip(&terms.intervals)
            .map(|(v, iv)| v * (c - iv.lo).max(iv.hi - c))
            .sum();
        let mut sorted = terms.v.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));
        let mut bottom = vec![0.0; sorted.len() + 1];
        for (i, v) in sorted.iter().enumerate() {
            bottom[i + 1] = bottom[i] + v;
        }
        Ok(Self {
            bottom,
            weighted_radius,
            envelope,
        })
    }

    pub fn group_size(&self) -> u64 {
        (self.bottom.len() - 1) as u64
    }

    pub fn envelope(&self) -> &SensitivityEnvelope {
        &self.envelope
    }

    pub fn at(&self, kappa: u64) -> f64 {
        let m = self.group_size();
        let e = &self.envelope;
        let kept = (m - (kappa + 1).min(m)) as usize;
        let s = self.bottom[kept] + kappa.min(m - 1) as f64 * e.v_min;
        let hull = 2.0 * e.v_max * e.hull_width / (s + e.v_max);
        if s <= 0.0 {
            return hull;
        }
        let q = (self.weighted_radius + kappa as f64 * e.rho_max) / s;
        let local = 2.0 * (e.rho_max / s + e.v_max * q.min(e.radius_max) / (s + e.v_max));
        local.min(hull)
    }
}

/// Largest `kappa` in `0..=m` whose bound stays at or below `lambda`.
pub fn certify_kappa(records: &[(f64, u64)], params: &TruncatedCoreParams, lambda: f64) -> Result<KappaBound> {
    if !(lambda > 0.0) {
        return Err(invalid("lambda", format!("must be positive, got {lambda}")));
    }
    let bound = LocalSensitivityBound::new(records, params)?;
    let m = bound.group_size();
    let bound_at_zero = bound.at(0);
    let kappa = if bound_at_zero > lambda {
        0
    } else {
        // Invariant: bound(lo) <= lambda; bound(hi + 1) > lambda or hi = m.
        let (mut lo, mut hi) = (0u64, m);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if bound.at(mid) <= lambda {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    };
    Ok(KappaBound {
        kappa,
        unbounded: kappa == m && bound_at_zero <= lambda,
        bound_at_zero,
        bound_at_kappa: bound.at(kappa),
        envelope: *bound.envelope(),
    })
}

/// Record of the propose-test-release step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtrCertificate {
    /// Proposed local sensitivity; infinite when the noisy normaliser was
    /// not positive.
    pub lambda: f64,
    pub n_hat: f64,
    pub sigma2_min: f64,
    pub k_cap: u64,
    pub kappa: Option<KappaBound>,
    pub noisy_distance: f64,
    pub threshold: f64,
}

/// Which count sets the concentration term of the proposed sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaCount {
    /// The public upper bound `k_max`.
    MaxCount,
    /// The private cap `k_cap`.
    EstimatedCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivateKConfig {
    /// Size `L` of the top group and the rank of the cap; `None` picks
    /// [`crate::estimators::default_top_size`].
    pub top_size: Option<usize>,
    /// Public upper bound on every `k_i`.
    pub k_max: u64,
    pub family: MetaKind,
    pub alpha: AlphaPolicy,
    pub variance: VarianceSource,
    pub lambda_count: LambdaCount,
}

impl PrivateKConfig {
    pub fn new(k_max: u64, family: MetaKind, variance: VarianceSource) -> Self {
        Self {
            top_size: None,
            k_max,
            family,
            alpha: AlphaPolicy::FromInitial,
            variance,
            lambda_count: LambdaCount::MaxCount,
        }
    }
}

/// Private weighted mean under neighbours that may change a user's sample
/// count; `(3 eps, 2 delta)`-DP.
///
/// Steps: initial mean from the bottom decile, private cap `k_cap` on the
/// counts by the exponential mechanism, spread from the top group cut to
/// `k_cap` samples, noisy normaliser
/// `N = sum_i v_i + Lap(v_max/eps) - ln(2/delta) v_max/eps`, proposed
/// sensitivity `12 f_dk(k) v_max / N`, and propose-test-release of the capped
/// weighted mean of the middle group. A failed test, or `N <= 0`, returns the
/// initial mean and reports a fallback.
pub fn estimate_private_k<R: Rng + ?Sized>(
    pop: &Population,
    budget: &PrivacyBudget,
    beta: f64,
    config: &PrivateKConfig,
    rng: &mut R,
) -> Result<EstimateReport> {
    if budget.delta() <= 0.0 {
        return Err(Error::DeltaRequired("the private-count estimator"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("beta", format!("must lie in (0, 1), got {beta}")));
    }
    let n = pop.n();
    let users = pop.users();
    if let Some(k) = users.iter().map(|u| u.k()).find(|&k| k > config.k_max) {
        return Err(Error::CountAboveBound { k, k_max: config.k_max });
    }
    let eps = budget.epsilon();
    let top = match config.top_size {
        Some(l) => l,
        None => crate::estimators::default_top_size(n, budget, beta, &config.variance).max(1),
    };
    if top == 0 {
        return Err(Error::InfeasibleGroups {
            n,
            reason: "the count cap needs a rank L >= 1".into(),
        });
    }
    let groups = Groups::new(n, top)?;
    let mut warnings: Vec<String> = top_size_and_ratio_warning(pop, top).into_iter().collect();
    let rank_floor = ((config.k_max as f64).ln() + (1.0 / beta).ln()) / (2.0 * eps);
    if (top as f64) < rank_floor {
        warnings.push(format!("L = {top} is below (ln k_max + ln(1/beta)) / (2 eps) = {rank_floor:.1}"));
    }

    let singles: Vec<bool> = users[groups.bottom.clone()].iter().map(|u| u.samples()[0]).collect();
    let initial_mean = dp_mean_initial(&singles, eps, beta, rng)?;
    let ks = pop.ks();
    let k_cap = em_order_statistic(&ks, top, config.k_max, eps, rng)?;
    let initial_variance = resolve_initial_variance(
        |k| users[groups.top.clone()].iter().map(|u| u.prefix_mean(k)).collect(),
        k_cap,
        &config.variance,
        budget,
        beta,
        rng,
    )?;
    let alpha = match config.alpha {
        AlphaPolicy::FromInitial => initial_mean.alpha,
        AlphaPolicy::Fixed(a) => a,
    };
    let middle = &users[groups.middle.clone()];
    let params = TruncatedCoreParams {
        k_cap,
        group_size: middle.len(),
        center: initial_mean.p_initial,
        sigma_p2: initial_variance.sigma2_hat,
        alpha,
        beta,
        family: config.family,
    };
    let records: Vec<(f64, u64)> = middle.iter().map(|u| (u.p_hat(), u.k())).collect();
    let terms = core_terms(&records, &params)?;
    let statistic = terms.mean(&records);
    let sigma2_min = params.capped_variance(k_cap);
    let v_max = 1.0 / sigma2_min;
    let v_total: f64 = terms.v.iter().sum();
    let n_hat = v_total + sample_laplace(v_max / eps, rng) - (2.0 / budget.delta()).ln() * v_max / eps;

    let lambda_k = match config.lambda_count {
        LambdaCount::MaxCount => config.k_max,
        LambdaCount::EstimatedCap => k_cap,
    };
    let f = f_dk(
        &ConcentrationQuery {
            k: lambda_k,
            n: middle.len() as u64,
            sigma_p2: params.sigma_p2,
            beta,
            p_ref: shifted_reference(params.center, alpha),
        },
        config.family,
    )?;
    let v_sum: f64 = terms.v.iter().sum();
    let plan = WeightPlan {
        users: groups.middle.clone(),
        weights: terms.v.iter().map(|v| v / v_sum).collect(),
        cap: WeightCap::SampleCount(k_cap),
        sigma2: terms.v.iter().map(|v| 1.0 / v).collect(),
        intervals: terms.intervals.clone(),
        sensitivity: f64::INFINITY,
        noise_scale: 0.0,
    };
    let clamped = records
        .iter()
        .zip(&terms.intervals)
        .filter(|(r, iv)| iv.clamp(r.0) != r.0)
        .count();
    let spent = PrivacyBudget::new(3.0 * eps, (2.0 * budget.delta()).min(1.0))?;
    let fallback = |plan: WeightPlan, certificate: PtrCertificate, warnings: Vec<String>| EstimateReport {
        estimate: initial_mean.p_initial,
        statistic,
        noise: 0.0,
        plan,
        clamped,
        initial_mean: Some(initial_mean),
        initial_variance: Some(initial_variance),
        ptr: PtrStatus::Fallback(certificate),
        budget: Some(spent),
        prediction: None,
        warnings,
    };

    if !(n_hat > 0.0) {
        let certificate = PtrCertificate {
            lambda: f64::INFINITY,
            n_hat,
            sigma2_min,
            k_cap,
            kappa: None,
            noisy_distance: f64::NAN,
            threshold: (1.0 / budget.delta()).ln() / eps,
        };
        return Ok(fallback(plan, certificate, warnings));
    }
    let lambda = 12.0 * f * v_max / n_hat;
    let mut plan = plan;
    plan.sensitivity = lambda;
    let kappa = if lambda > 0.0 { Some(certify_kappa(&records, &params, lambda)?) } else { None };
    let proposal = SensitivityBound::local_proposed(lambda, NeighbourRelation::UserLevelPrivateK)?;
    let distance = |_: &[(f64, u64)], _: f64| match &kappa {
        Some(b) if b.unbounded => Distance::Unbounded,
        Some(b) => Distance::Finite(b.kappa),
        None => Distance::Finite(0),
    };
    let outcome = propose_test_release(records.as_slice(), |_| statistic, &proposal, distance, budget, rng)?;
    match outcome {
        PtrOutcome::Fallback { noisy_distance, threshold } => {
            let certificate = PtrCertificate {
                lambda,
                n_hat,
                sigma2_min,
                k_cap,
                kappa,
                noisy_distance,
                threshold,
            };
            Ok(fallback(plan, certificate, warnings))
        }
        PtrOutcome::Released {
            value,
            noise,
            noise_scale,
            noisy_distance,
            threshold,
        } => {
            plan.noise_scale = noise_scale;
            Ok(EstimateReport {
                estimate: value,
                statistic,
                noise,
                plan,
                clamped,
                initial_mean: Some(initial_mean),
                initial_variance: Some(initial_variance),
                ptr: PtrStatus::Released(PtrCertificate {
                    lambda,
                    n_hat,
                    sigma2_min,
                    k_cap,
                    kappa,
                    noisy_distance,
                    threshold,
                }),
                budget: Some(spent),
                prediction: None,
                warnings,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k_cap: u64) -> TruncatedCoreParams {
        TruncatedCoreParams {
            k_cap,
            group_size: 6,
            center: 0.5,
            sigma_p2: 0.01,
            alpha: 0.05,
            beta: 0.1,
            family: MetaKind::TwoPoint,
        }
    }

    #[test]
    fn identical_records_give_their_clamped_value() {
        let p = params(4);
        let iv = p.interval(3).unwrap();
        let m = truncated_weighted_mean(&[(0.99, 3); 5], &p).unwrap();
        assert!((m - iv.clamp(0.99)).abs() < 1e-15);
    }

    #[test]
    fn unit_cap_gives_uniform_weights() {
        let p = params(1);
        let recs = [(0.1, 1), (0.5, 7), (0.7, 30)];
        let iv = p.interval(1).unwrap();
        let plain = recs.iter().map(|r| iv.clamp(r.0)).sum::<f64>() / 3.0;
        assert!((truncated_weighted_mean(&recs, &p).unwrap() - plain).abs() < 1e-15);
    }

    #[test]
    fn certificate_extremes() {
        let p = params(4);
        let recs = [(0.5, 4), (0.4, 2), (0.6, 3), (0.45, 1), (0.55, 4), (0.5, 2)];
        let b = certify_kappa(&recs, &p, 1e9).unwrap();
        assert_eq!(b.kappa, 6);
        assert!(b.unbounded);
        let tiny = certify_kappa(&recs, &p, b.bound_at_zero / 2.0).unwrap();
        assert_eq!(tiny.kappa, 0);
        assert!(!tiny.unbounded);
    }

    #[test]
    fn bound_is_nondecreasing() {
        let p = params(4);
        let recs = [(0.5, 4), (0.4, 2), (0.6, 3), (0.45, 1), (0.55, 4), (0.5, 2)];
        let b = LocalSensitivityBound::new(&recs, &p).unwrap();
        let values: Vec<f64> = (0..=6).map(|k| b.at(k)).collect();
        assert!(values.windows(2).all(|w| w[0] <= w[1]), "{values:?}");
    }
}
