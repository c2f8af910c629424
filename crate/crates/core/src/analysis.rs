//! Closed-form variance predictions, the effective sample cap `k*`, the
//! lower-bound expression and the median-truncation baseline.

use num_traits::{FromPrimitive, Num};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::budget::PrivacyBudget;
use crate::concentration::Interval;
use crate::error::{invalid, Error, Result};
use crate::estimators::{rounding_slack, EstimateReport, PtrStatus, WeightCap, WeightPlan};
use crate::mechanisms::{laplace_mechanism, NeighbourRelation, SensitivityBound};
use crate::population::Population;
use crate::scalar::Scalar;

/// Variance split into its sampling and privacy parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePrediction<T> {
    pub nonprivate: T,
    pub privacy: T,
    /// Always `nonprivate + privacy`.
    pub total: T,
    /// Weight cap `T` or sample cap `k` the prediction was evaluated at.
    pub parameter: T,
}

impl<T: Scalar> VariancePrediction<T> {
    pub fn new(nonprivate: T, privacy: T, parameter: T) -> Self {
        Self {
            nonprivate,
            privacy,
            total: nonprivate + privacy,
            parameter,
        }
    }
}

/// Variance of `sum_i w_i p_hat_i + Lap(max_i w_i width_i / eps)` with
/// `Var(Lap(b)) = 2 b^2`.
pub fn weighted_laplace_variance<T: Scalar>(
    weights: &[T],
    sigma2: &[T],
    widths: &[T],
    epsilon: T,
    parameter: T,
) -> VariancePrediction<T> {
    let nonprivate = weights.iter().zip(sigma2).map(|(&w, &s)| w * w * s).sum();
    let scale = weights
        .iter()
        .zip(widths)
        .fold(T::zero(), |m, (&w, &d)| m.max(w * d))
        / epsilon;
    VariancePrediction::new(nonprivate, T::lit(2.0) * scale * scale, parameter)
}

fn check_ks(ks: &[u64]) -> Result<()> {
    if ks.is_empty() {
        return Err(Error::Empty("sample counts"));
    }
    if ks.contains(&0) {
        return Err(invalid("k", "every user needs at least one sample"));
    }
    Ok(())
}

/// `[k / eps^2 + s] / s^2` where `s = sum_i min(k_i, k)`, in any numeric type.
///
/// `inv_eps2` is `1/eps^2`, passed directly so exact types need no square root.
pub fn kstar_objective<T>(ks: &[u64], inv_eps2: T, k: u64) -> T
where
    T: Num + FromPrimitive + Copy,
{
    let s: u64 = ks.iter().map(|&ki| ki.min(k)).sum();
    kstar_objective_from_sum(s, inv_eps2, k)
}

fn kstar_objective_from_sum<T>(s: u64, inv_eps2: T, k: u64) -> T
where
    T: Num + FromPrimitive + Copy,
{
    let s = T::from_u64(s).expect("sum of counts is representable");
    let k = T::from_u64(k).expect("count is representable");
    (k * inv_eps2 + s) / (s * s)
}

/// Counts sorted ascending with a cursor that tracks `sum_i min(k_i, k)` as
/// `k` increases by one.
struct CappedSum<'a> {
    sorted: &'a [u64],
    below: usize,
    sum_below: u64,
}

impl<'a> CappedSum<'a> {
    fn new(sorted: &'a [u64]) -> Self {
        Self {
            sorted,
            below: 0,
            sum_below: 0,
        }
    }

    /// Advances so that `below` counts users with `k_i < k`.
    fn advance(&mut self, k: u64) {
        while self.below < self.sorted.len() && self.sorted[self.below] < k {
            self.sum_below += self.sorted[self.below];
            self.below += 1;
        }
    }

    fn capped(&self, k: u64) -> u64 {
        self.sum_below + k * (self.sorted.len() - self.below) as u64
    }
}

/// Effective sample cap `argmin_k [k/eps^2 + sum_i min(k_i, k)] / (sum_i min(k_i, k))^2`
/// over `k` in `1..=max k_i`; ties go to the smallest `k`.
///
/// `epsilon` may be infinite.
pub fn kstar(ks: &[u64], epsilon: f64) -> Result<u64> {
    check_ks(ks)?;
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    let mut sorted = ks.to_vec();
    sorted.sort_unstable();
    let k_max = *sorted.last().expect("nonempty");
    let mut cursor = CappedSum::new(&sorted);
    let mut best = (1, f64::INFINITY);
    for k in 1..=k_max {
        cursor.advance(k);
        let value = kstar_objective_from_sum(cursor.capped(k), inv_eps2, k);
        if value < best.1 {
            best = (k, value);
        }
    }
    Ok(best.0)
}

/// Variance of the weighted estimator when every user shares the same `p`:
///
/// `min_k [p(1-p) sum_i min(k_i, k) + 6 p ln(2/beta) k / eps^2] / (sum_i min(k_i, sqrt(k_i k)))^2`,
/// evaluated at the minimising `k` in `1..=max k_i`.
pub fn constant_p_variance(ks: &[u64], p: f64, epsilon: f64, beta: f64) -> Result<VariancePrediction<f64>> {
    check_ks(ks)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("p", format!("must lie in (0, 1), got {p}")));
    }
    if !(epsilon > 0.0) || !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("epsilon, beta", "need epsilon > 0 and beta in (0, 1)"));
    }
    let mut sorted = ks.to_vec();
    sorted.sort_unstable();
    // suffix_root[j] = sum_{i >= j} sqrt(k_i) over the ascending order.
    let mut suffix_root = vec![0.0; sorted.len() + 1];
    for j in (0..sorted.len()).rev() {
        suffix_root[j] = suffix_root[j + 1] + (sorted[j] as f64).sqrt();
    }
    let privacy_coeff = 6.0 * p * (2.0 / beta).ln() / (epsilon * epsilon);
    let k_max = *sorted.last().expect("nonempty");
    let mut cursor = CappedSum::new(&sorted);
    let mut best: Option<VariancePrediction<f64>> = None;
    for k in 1..=k_max {
        cursor.advance(k);
        let capped = cursor.capped(k) as f64;
        // Users with k_i <= k keep k_i, the rest contribute sqrt(k_i k).
        let upto = sorted.partition_point(|&ki| ki <= k);
        let small: u64 = if upto == cursor.below {
            cursor.sum_below
        } else {
            cursor.sum_below + k * (upto - cursor.below) as u64
        };
        let denom = small as f64 + (k as f64).sqrt() * suffix_root[upto];
        let d2 = denom * denom;
        let candidate = VariancePrediction::new(p * (1.0 - p) * capped / d2, privacy_coeff * k as f64 / d2, k as f64);
        if best.is_none_or(|b| candidate.total < b.total) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("k_max >= 1"))
}

/// Which side of the lower bound is smaller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerBoundBranch {
    /// `[k*/eps^2 + sum min(k_i, k*)] / (sum min(k_i, sqrt(k_i k*)))^2`.
    CappedSamples,
    /// `sigma_p^2 / n`.
    MetaSpread,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    pub branch: LowerBoundBranch,
    pub k_star: u64,
}

/// Minimax variance floor, up to polylogarithmic factors, evaluated at
/// `k* = kstar(ks, epsilon)`. With `sigma_p2 = 0` the spread branch is
/// dropped.
pub fn lower_bound_expression(ks: &[u64], sigma_p2: f64, epsilon: f64, n: usize) -> Result<LowerBound> {
    let k_star = kstar(ks, epsilon)?;
    if n == 0 || !(sigma_p2 >= 0.0) {
        return Err(invalid("n, sigma_p2", "need n >= 1 and sigma_p2 >= 0"));
    }
    let kf = k_star as f64;
    let capped: u64 = ks.iter().map(|&k| k.min(k_star)).sum();
    let denom: f64 = ks.iter().map(|&k| (k as f64).min((k as f64 * kf).sqrt())).sum();
    let first = (kf / (epsilon * epsilon) + capped as f64) / (denom * denom);
    let second = sigma_p2 / n as f64;
    Ok(if sigma_p2 > 0.0 && second < first {
        LowerBound { value: second, branch: LowerBoundBranch::MetaSpread, k_star }
    } else {
        LowerBound { value: first, branch: LowerBoundBranch::CappedSamples, k_star }
    })
}

/// Uniform average over the `floor(n/2)` users with the most data, each cut
/// down to the median count `k_med` (the smallest count in that half), plus
/// Laplace noise for sensitivity `1 / floor(n/2)` plus the rounding slack.
pub fn median_truncation_baseline<R: Rng + ?Sized>(
    pop: &Population,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<EstimateReport> {
    let m = pop.n() / 2;
    if m == 0 {
        return Err(Error::InfeasibleGroups {
            n: pop.n(),
            reason: "the baseline needs at least two users".into(),
        });
    }
    let users = &pop.users()[..m];
    let k_med = users[m - 1].k();
    let weight = 1.0 / m as f64;
    let statistic = users.iter().map(|u| u.prefix_mean(k_med)).sum::<f64>() * weight;
    let sensitivity = SensitivityBound::global(weight + rounding_slack(m), NeighbourRelation::UserLevelPublicSize)?;
    let release = laplace_mechanism(statistic, &sensitivity, budget.epsilon(), rng)?;
    let sigma2 = vec![f64::NAN; m];
    Ok(EstimateReport {
        estimate: release.value,
        statistic,
        noise: release.noise,
        plan: WeightPlan {
            users: 0..m,
            weights: vec![weight; m],
            cap: WeightCap::SampleCount(k_med),
            sigma2,
            intervals: vec![Interval { lo: 0.0, hi: 1.0 }; m],
            sensitivity: sensitivity.value(),
            noise_scale: release.scale,
        },
        clamped: 0,
        initial_mean: None,
        initial_variance: None,
        ptr: PtrStatus::NotApplicable,
        budget: Some(PrivacyBudget::pure(budget.epsilon())?),
        prediction: None,
        warnings: Vec::new(),
    })
}
