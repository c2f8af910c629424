//! Tail bounds used to size truncation intervals.
//!
//! `f_bin` bounds one user's binomial deviation, `f_meta` bounds the spread of
//! the per-user means, and `f_dk` composes the two into a bound on
//! `max_i |p_hat_i - p|` across a population.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::meta::MetaKind;
use crate::scalar::Scalar;

/// Largest `k` for which `f_bin` enumerates the exact binomial law.
pub const EXACT_BINOMIAL_MAX_K: u64 = 100_000;

/// Resolution of the exact quantile search.
pub const QUANTILE_GRID: f64 = 1e-6;

/// Inputs of [`f_dk`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationQuery {
    pub k: u64,
    /// Number of users the bound must hold for simultaneously.
    pub n: u64,
    pub sigma_p2: f64,
    pub beta: f64,
    /// Reference mean, true or estimated.
    pub p_ref: f64,
}

impl ConcentrationQuery {
    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 {
            return Err(invalid("k, n", "must be at least 1"));
        }
        check_beta(self.beta)?;
        check_unit("p_ref", self.p_ref)?;
        if !(self.sigma_p2 >= 0.0) || !self.sigma_p2.is_finite() {
            return Err(invalid("sigma_p2", format!("must be finite and nonnegative, got {}", self.sigma_p2)));
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(invalid("beta", format!("must lie in (0, 1), got {beta}")))
    }
}

fn check_unit(name: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(invalid(name, format!("must lie in [0, 1], got {x}")))
    }
}

/// Smallest `alpha` with `Pr(|x/k - p| > alpha) <= beta` for `x ~ Bin(k, p)`.
///
/// Exact for `k <= EXACT_BINOMIAL_MAX_K`, rounded up onto a `1e-6` grid;
/// Bernstein's inequality above that.
pub fn f_bin(k: u64, p: f64, beta: f64) -> Result<f64> {
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    check_unit("p", p)?;
    check_beta(beta)?;
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    if k <= EXACT_BINOMIAL_MAX_K {
        Ok(exact_binomial_radius(k, p, beta))
    } else {
        Ok(bernstein_radius(k, p, beta))
    }
}

/// `sqrt(2 p (1-p) ln(2/beta) / k) + ln(2/beta) / (3k)`.
pub fn bernstein_radius(k: u64, p: f64, beta: f64) -> f64 {
    let l = (2.0 / beta).ln();
    let k = k as f64;
    (2.0 * p * (1.0 - p) * l / k).sqrt() + l / (3.0 * k)
}

fn binomial_pmf(k: u64, p: f64) -> Vec<f64> {
    let kf = k as f64;
    let mode = ((kf + 1.0) * p).floor().min(kf) as usize;
    let ln_mode = ln_choose(k, mode as u64) + mode as f64 * p.ln() + (kf - mode as f64) * (1.0 - p).ln();
    let mut pmf = vec![0.0; k as usize + 1];
    pmf[mode] = ln_mode.exp();
    let odds = p / (1.0 - p);
    for x in mode..k as usize {
        pmf[x + 1] = pmf[x] * (kf - x as f64) / (x as f64 + 1.0) * odds;
    }
    for x in (1..=mode).rev() {
        pmf[x - 1] = pmf[x] * x as f64 / (kf - x as f64 + 1.0) / odds;
    }
    pmf
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let lg = |x: f64| libm::lgamma(x);
    lg(n as f64 + 1.0) - lg(k as f64 + 1.0) - lg((n - k) as f64 + 1.0)
}

fn exact_binomial_radius(k: u64, p: f64, beta: f64) -> f64 {
    let pmf = binomial_pmf(k, p);
    let kp = k as f64 * p;
    // Outcomes are consumed from the outside in, so distances are visited in
    // decreasing order. `d * k` is compared to keep symmetric pairs tied.
    let (mut lo, mut hi) = (0usize, k as usize);
    let mut outside = 0.0;
    loop {
        let left = kp - lo as f64;
        let right = hi as f64 - kp;
        let far = left.max(right);
        let mut mass = 0.0;
        if left >= right {
            mass += pmf[lo];
        }
        if right >= left && hi != lo {
            mass += pmf[hi];
        }
        if outside + mass > beta {
            return round_up_to_grid(far / k as f64);
        }
        outside += mass;
        if left >= right {
            lo += 1;
        }
        if right >= left {
            hi = hi.saturating_sub(1);
        }
        if lo > hi {
            // Only reachable through rounding in the accumulated mass.
            return 0.0;
        }
    }
}

fn round_up_to_grid(d: f64) -> f64 {
    let steps = (d / QUANTILE_GRID - 1e-6).ceil().max(0.0);
    steps * QUANTILE_GRID
}

/// Radius containing all `n` per-user means with probability `1 - beta`:
/// the sub-Gaussian bound `sqrt(2 sigma_p^2 ln(2n/beta))`, capped at the
/// family's support half-width.
pub fn f_meta(kind: MetaKind, n: u64, sigma_p2: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    if !(sigma_p2 >= 0.0) {
        return Err(invalid("sigma_p2", format!("must be nonnegative, got {sigma_p2}")));
    }
    if kind == MetaKind::PointMass {
        return Ok(0.0);
    }
    let sub_gaussian = (2.0 * sigma_p2 * (2.0 * n as f64 / beta).ln()).sqrt();
    Ok(sub_gaussian.min(kind.half_width(sigma_p2.sqrt())))
}

/// Bound on `max_i |p_hat_i - p|` for users holding `k` samples:
/// `f_meta(n, sigma_p^2, beta/2) + f_bin(k, p_max, beta/n)`.
///
/// `p_max` is the reference mean pushed towards 1/2 by the spread of the
/// per-user means; binomial spread grows towards 1/2 so this covers every
/// `p_i` in range. Means above 1/2 are handled by the reflection `x -> 1-x`.
pub fn f_dk(query: &ConcentrationQuery, kind: MetaKind) -> Result<f64> {
    let (spread, p_max) = f_dk_parts(query, kind)?;
    let binomial = f_bin(query.k, p_max, query.beta / query.n as f64)?;
    Ok(spread + binomial)
}

/// The spread term of [`f_dk`] and the mean at which its binomial term is
/// evaluated (with failure probability `beta / n`).
pub(crate) fn f_dk_parts(query: &ConcentrationQuery, kind: MetaKind) -> Result<(f64, f64)> {
    query.validate()?;
    let spread = f_meta(kind, query.n, query.sigma_p2, query.beta / 2.0)?;
    let near = query.p_ref.min(1.0 - query.p_ref);
    Ok((spread, (near + spread).min(0.5)))
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Interval<T> {
    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    pub fn clamp(&self, x: T) -> T {
        x.max(self.lo).min(self.hi)
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// `[max(0, c - alpha - f), min(1, c + alpha + f)]` with `c` clamped into `[0, 1]`.
pub fn truncation_interval<T: Scalar>(center: T, alpha: T, f_value: T) -> Interval<T> {
    let zero = T::zero();
    let one = T::one();
    let c = center.max(zero).min(one);
    let r = alpha.max(zero) + f_value.max(zero);
    Interval {
        lo: (c - r).max(zero),
        hi: (c + r).min(one),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_bin_examples() {
        assert_eq!(f_bin(1, 0.0, 0.3).unwrap(), 0.0);
        assert_eq!(f_bin(7, 1.0, 0.01).unwrap(), 0.0);
        assert!((f_bin(1, 0.5, 0.6).unwrap() - 0.5).abs() < 1e-12);
        let exact = f_bin(100, 0.5, 0.05).unwrap();
        assert!(exact <= bernstein_radius(100, 0.5, 0.05));
        assert!(f_bin(1, -0.1, 0.1).is_err());
        assert!(f_bin(1, 0.5, 0.0).is_err());
    }

    #[test]
    fn f_bin_uses_bernstein_for_large_k() {
        let k = EXACT_BINOMIAL_MAX_K + 1;
        assert_eq!(f_bin(k, 0.3, 0.01).unwrap(), bernstein_radius(k, 0.3, 0.01));
    }

    #[test]
    fn f_meta_examples() {
        assert_eq!(f_meta(MetaKind::PointMass, 10, 0.3, 0.1).unwrap(), 0.0);
        assert!((f_meta(MetaKind::TwoPoint, 1, 0.01, 1e-6).unwrap() - 0.1).abs() < 1e-15);
        let tg = MetaKind::TruncatedGaussian { w: 2.0 };
        let v = f_meta(tg, 1000, 0.0025, 0.01).unwrap();
        let expected = (2.0f64 * 0.0025 * 200_000f64.ln()).sqrt().min(tg.half_width(0.05));
        assert_eq!(v, expected);
    }

    #[test]
    fn f_dk_point_mass_is_binomial() {
        let q = ConcentrationQuery { k: 1, n: 1, sigma_p2: 0.0, beta: 0.5, p_ref: 0.5 };
        assert_eq!(f_dk(&q, MetaKind::PointMass).unwrap(), f_bin(1, 0.5, 0.5).unwrap());
        let at = |k| f_dk(&ConcentrationQuery { k, n: 10, sigma_p2: 0.0, beta: 0.1, p_ref: 0.5 }, MetaKind::PointMass).unwrap();
        assert!(at(400) < at(100));
    }

    #[test]
    fn f_dk_is_reflection_symmetric() {
        let kind = MetaKind::TruncatedGaussian { w: 2.0 };
        let q = |p_ref| ConcentrationQuery { k: 37, n: 200, sigma_p2: 0.001, beta: 0.05, p_ref };
        assert_eq!(f_dk(&q(0.2), kind).unwrap(), f_dk(&q(0.8), kind).unwrap());
    }

    #[test]
    fn truncation_interval_examples() {
        let i = truncation_interval(0.5f64, 0.0, 0.0);
        assert_eq!((i.lo, i.hi), (0.5, 0.5));
        let i = truncation_interval(0.1f64, 0.05, 0.2);
        assert_eq!(i.lo, 0.0);
        assert!((i.hi - 0.35).abs() < 1e-15);
        let i = truncation_interval(0.5f64, 0.01, 0.07);
        assert!((i.lo - 0.42).abs() < 1e-15 && (i.hi - 0.58).abs() < 1e-15);
        let i = truncation_interval(0.5f32, 0.01, 0.07);
        assert!((i.width() - 0.16).abs() < 1e-6);
    }
}
