//! Capped inverse-variance weights and the choice of the cap.
//!
//! User `i` with standard deviation `sigma_i` gets the unnormalised weight
//! `min(1/sigma_i^2, T/sigma_i)`. A large cap `T` recovers inverse-variance
//! weighting; a small cap flattens the weights and lowers the sensitivity.

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

fn check_sigmas<T: Scalar>(sigmas: &[T]) -> Result<()> {
    if sigmas.is_empty() {
        return Err(crate::error::Error::Empty("standard deviations"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s > T::zero() && s.is_finite())) {
        return Err(invalid("sigma", format!("must be positive and finite, got {s}")));
    }
    Ok(())
}

/// `min(1/sigma^2, threshold/sigma)`.
pub fn capped_weight<T: Scalar>(sigma: T, threshold: T) -> T {
    let u = sigma.recip();
    (u * u).min(threshold * u)
}

/// Normalised capped weights; they sum to one.
pub fn ideal_weights<T: Scalar>(sigmas: &[T], threshold: T) -> Result<Vec<T>> {
    check_sigmas(sigmas)?;
    if !(threshold > T::zero()) {
        return Err(invalid("threshold", format!("must be positive, got {threshold}")));
    }
    let raw: Vec<T> = sigmas.iter().map(|&s| capped_weight(s, threshold)).collect();
    let total: T = raw.iter().copied().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Predicted variance of the capped weighted mean plus its Laplace noise,
/// up to the factor 2 of the Laplace variance:
///
/// `J(T) = [sum_i min(1/sigma_i^2, T^2) + max_i min(1/sigma_i^4, T^2/sigma_i^2) width_i^2 / eps^2]
///         / (sum_i min(1/sigma_i^2, T/sigma_i))^2`.
///
/// Direct `O(n)` evaluation; [`ThresholdObjective`] evaluates in `O(log n)`.
pub fn threshold_objective<T: Scalar>(sigmas: &[T], widths: &[T], epsilon: T, threshold: T) -> T {
    let inv_eps2 = (epsilon * epsilon).recip();
    let mut var = T::zero();
    let mut priv_max = T::zero();
    let mut norm = T::zero();
    for (&s, &w) in sigmas.iter().zip(widths) {
        let u = s.recip();
        var = var + (u * u).min(threshold * threshold);
        let v = capped_weight(s, threshold);
        priv_max = priv_max.max(v * v * w * w);
        norm = norm + v;
    }
    (var + priv_max * inv_eps2) / (norm * norm)
}

/// Minimiser of the threshold objective and its value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice<T> {
    pub threshold: T,
    pub objective: T,
}

/// The threshold objective with prefix and suffix aggregates over users sorted
/// by `u = 1/sigma`.
///
/// Users with `u <= T` contribute `u^2` to the variance and normaliser and
/// `width^2 u^4` to the privacy maximum. Users with `u > T` contribute `T^2`,
/// `T u` and `T^2 width^2 u^2`.
#[derive(Debug, Clone)]
pub struct ThresholdObjective<T> {
    u: Vec<T>,
    /// `prefix_sq[j] = sum_{i<j} u_i^2`.
    prefix_sq: Vec<T>,
    /// `prefix_a[j] = max_{i<j} width_i^2 u_i^4`.
    prefix_a: Vec<T>,
    /// `suffix_u[j] = sum_{i>=j} u_i`.
    suffix_u: Vec<T>,
    /// `suffix_b[j] = max_{i>=j} width_i^2 u_i^2`.
    suffix_b: Vec<T>,
    inv_eps2: T,
}

struct Piece<T> {
    s: T,
    r: T,
    count: T,
    a: T,
    b: T,
}

impl<T: Scalar> ThresholdObjective<T> {
    /// `epsilon` may be infinite, which drops the privacy term.
    pub fn new(sigmas: &[T], widths: &[T], epsilon: T) -> Result<Self> {
        check_sigmas(sigmas)?;
        if sigmas.len() != widths.len() {
            return Err(crate::error::Error::ProfileLength {
                expected: sigmas.len(),
                got: widths.len(),
            });
        }
        if let Some(w) = widths.iter().find(|w| !(**w >= T::zero() && w.is_finite())) {
            return Err(invalid("width", format!("must be nonnegative and finite, got {w}")));
        }
        if !(epsilon > T::zero()) {
            return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
        }
        let mut users: Vec<(T, T)> = sigmas.iter().zip(widths).map(|(&s, &w)| (s.recip(), w)).collect();
        users.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite"));
        let n = users.len();
        let mut prefix_sq = vec![T::zero(); n + 1];
        let mut prefix_a = vec![T::zero(); n + 1];
        for (j, &(u, w)) in users.iter().enumerate() {
            prefix_sq[j + 1] = prefix_sq[j] + u * u;
            prefix_a[j + 1] = prefix_a[j].max(w * w * u * u * u * u);
        }
        let mut suffix_u = vec![T::zero(); n + 1];
        let mut suffix_b = vec![T::zero(); n + 1];
        for (j, &(u, w)) in users.iter().enumerate().rev() {
            suffix_u[j] = suffix_u[j + 1] + u;
            suffix_b[j] = suffix_b[j + 1].max(w * w * u * u);
        }
        Ok(Self {
            u: users.into_iter().map(|(u, _)| u).collect(),
            prefix_sq,
            prefix_a,
            suffix_u,
            suffix_b,
            inv_eps2: (epsilon * epsilon).recip(),
        })
    }

    /// Sorted breakpoints `1/sigma_i`.
    pub fn breakpoints(&self) -> &[T] {
        &self.u
    }

    fn piece(&self, below: usize) -> Piece<T> {
        Piece {
            s: self.prefix_sq[below],
            r: self.suffix_u[below],
            count: T::count((self.u.len() - below) as u64),
            a: self.prefix_a[below],
            b: self.suffix_b[below],
        }
    }

    fn eval_piece(&self, p: &Piece<T>, t: T) -> T {
        let num = p.s + p.count * t * t + p.a.max(t * t * p.b) * self.inv_eps2;
        let den = p.s + t * p.r;
        num / (den * den)
    }

    pub fn eval(&self, threshold: T) -> T {
        let below = self.u.partition_point(|&u| u <= threshold);
        self.eval_piece(&self.piece(below), threshold)
    }

    /// Exact minimiser over `T > 0`; ties go to the smaller threshold.
    ///
    /// `J` is constant below the smallest and above the largest breakpoint.
    /// Between breakpoints it is `(a + b T^2) / (S + R T)^2` on each side of
    /// the point where the privacy maximum switches, and each such piece has
    /// at most one stationary point, a minimum, at `T = R a / (b S)`.
    pub fn minimize(&self) -> ThresholdChoice<T> {
        let n = self.u.len();
        let mut candidates: Vec<T> = self.u.clone();
        let mut j = 0;
        while j < n {
            let below = self.u.partition_point(|&u| u <= self.u[j]);
            if below == n {
                break;
            }
            let (lo, hi) = (self.u[j], self.u[below]);
            let p = self.piece(below);
            let mut push_stationary = |a: T, b: T, from: T, to: T| {
                if b > T::zero() && p.s > T::zero() {
                    let t = p.r * a / (b * p.s);
                    if t > from && t < to {
                        candidates.push(t);
                    }
                }
            };
            let switch = if p.b > T::zero() { (p.a / p.b).sqrt() } else { T::infinity() };
            let split = switch.max(lo).min(hi);
            push_stationary(p.s + p.a * self.inv_eps2, p.count, lo, split);
            push_stationary(p.s, p.count + p.b * self.inv_eps2, split, hi);
            if split > lo && split < hi {
                candidates.push(split);
            }
            j = below;
        }
        candidates.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        let mut best = ThresholdChoice {
            threshold: candidates[0],
            objective: self.eval(candidates[0]),
        };
        for &t in &candidates[1..] {
            let value = self.eval(t);
            if value < best.objective {
                best = ThresholdChoice { threshold: t, objective: value };
            }
        }
        best
    }
}

/// Threshold minimising [`threshold_objective`].
pub fn optimize_threshold<T: Scalar>(sigmas: &[T], widths: &[T], epsilon: T) -> Result<T> {
    Ok(ThresholdObjective::new(sigmas, widths, epsilon)?.minimize().threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        let w = ideal_weights(&[1.0f64, 1.0, 1.0], 0.3).unwrap();
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let w = ideal_weights(&[1.0f64, 2f64.sqrt()], 1e9).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        let w = ideal_weights(&[0.1f64, 1.0], 2.0).unwrap();
        assert!((w[0] - 20.0 / 21.0).abs() < 1e-15 && (w[1] - 1.0 / 21.0).abs() < 1e-15);
        assert!(ideal_weights(&[0.0], 1.0).is_err());
        assert!(ideal_weights(&[1.0], 0.0).is_err());
    }

    #[test]
    fn fast_evaluation_matches_direct() {
        let sigmas = [0.3f64, 0.1, 0.7, 0.1, 0.25];
        let widths = [0.5, 0.2, 0.9, 0.4, 0.1];
        let obj = ThresholdObjective::new(&sigmas, &widths, 0.7).unwrap();
        for t in [0.5, 1.0, 1.4, 3.0, 4.0, 7.0, 10.0, 12.0] {
            let direct = threshold_objective(&sigmas, &widths, 0.7, t);
            assert!((obj.eval(t) - direct).abs() <= 1e-14 * direct, "T = {t}");
        }
    }

    #[test]
    fn without_privacy_the_cap_is_not_binding() {
        let sigmas = [0.3f64, 0.1, 0.7];
        let choice = ThresholdObjective::new(&sigmas, &[1.0; 3], f64::INFINITY).unwrap().minimize();
        assert!(choice.threshold >= 10.0 - 1e-12);
        let total: f64 = sigmas.iter().map(|s| 1.0 / (s * s)).sum();
        assert!((choice.objective - 1.0 / total).abs() < 1e-15);
    }

    #[test]
    fn single_user_takes_the_smallest_minimiser() {
        assert_eq!(optimize_threshold(&[0.5], &[0.2], 1.0).unwrap(), 2.0);
    }

    #[test]
    fn works_in_single_precision() {
        let t: f32 = optimize_threshold(&[0.3f32, 0.1, 0.7], &[0.5, 0.2, 0.9], 1.0).unwrap();
        let t64 = optimize_threshold(&[0.3f64, 0.1, 0.7], &[0.5, 0.2, 0.9], 1.0).unwrap();
        assert!((t as f64 - t64).abs() < 1e-4 * t64);
    }
}
