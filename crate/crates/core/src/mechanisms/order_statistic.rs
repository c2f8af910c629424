use rand::Rng;
use serde::{Deserialize, Serialize};

use super::check_epsilon;
use crate::error::{invalid, Error, Result};

/// Integers `lo..=hi` sharing one utility `-distance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmInterval {
    pub lo: u64,
    pub hi: u64,
    /// Distance from the target rank to the ranks `k` can occupy.
    pub distance: u64,
    pub probability: f64,
}

/// Output distribution of [`em_order_statistic`], collapsed to intervals of
/// constant utility. Probabilities are normalised in log space.
///
/// `k` can occupy every rank in `[#{i : k_i > k}, #{i : k_i >= k}]`; the
/// utility is minus the distance from `rank` to that range. Both counts move
/// by at most one when one user changes, so the sensitivity is 1. Away from
/// tied values the range is the single rank `#{i : k_i >= k}`.
pub fn em_intervals(ks: &[u64], rank: usize, k_max: u64, epsilon: f64) -> Result<Vec<EmInterval>> {
    check_epsilon(epsilon)?;
    let n = ks.len();
    if n == 0 {
        return Err(Error::Empty("order statistic"));
    }
    if rank == 0 || rank > n {
        return Err(invalid("L", format!("must lie in 1..={n}, got {rank}")));
    }
    if let Some(&k) = ks.iter().find(|&&k| k > k_max || k == 0) {
        return Err(if k == 0 {
            invalid("k", "sample counts must be at least 1")
        } else {
            Error::CountAboveBound { k, k_max }
        });
    }
    let mut sorted = ks.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));

    let target = rank as u64;
    let dist = |below: u64, at_least: u64| {
        if target < below {
            below - target
        } else {
            target.saturating_sub(at_least)
        }
    };
    // Walk the distinct values from the top. On (next, v) every k has
    // `#{k_i >= k} = #{k_i > k} = i`; the value v itself spans [i - ties, i].
    let mut spans: Vec<(u64, u64, u64)> = Vec::new();
    if sorted[0] < k_max {
        spans.push((sorted[0] + 1, k_max, dist(0, 0)));
    }
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        let above = i as u64;
        while i < n && sorted[i] == v {
            i += 1;
        }
        let at_least = i as u64;
        spans.push((v, v, dist(above, at_least)));
        let next = if i < n { sorted[i] } else { 0 };
        if next + 1 < v {
            spans.push((next + 1, v - 1, dist(at_least, at_least)));
        }
    }

    let log_w: Vec<f64> = spans
        .iter()
        .map(|&(lo, hi, d)| ((hi - lo + 1) as f64).ln() - 0.5 * epsilon * d as f64)
        .collect();
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|w| (w - top).exp()).sum();
    let log_z = top + total.ln();
    Ok(spans
        .iter()
        .zip(&log_w)
        .map(|(&(lo, hi, distance), w)| EmInterval {
            lo,
            hi,
            distance,
            probability: (w - log_z).exp(),
        })
        .collect())
}

/// Exponential-mechanism estimate of the `rank`-th largest sample count.
///
/// Samples `k` in `1..=k_max` with probability proportional to
/// `exp(-(epsilon/2) d(k))`, where `d(k)` is the distance from `rank` to the
/// ranks `k` can occupy (see [`em_intervals`]).
pub fn em_order_statistic<R: Rng + ?Sized>(
    ks: &[u64],
    rank: usize,
    k_max: u64,
    epsilon: f64,
    rng: &mut R,
) -> Result<u64> {
    let intervals = em_intervals(ks, rank, k_max, epsilon)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let chosen = intervals
        .iter()
        .find(|iv| {
            acc += iv.probability;
            u < acc
        })
        .unwrap_or_else(|| intervals.last().expect("at least one interval"));
    Ok(rng.random_range(chosen.lo..=chosen.hi))
}

/// Whether `estimate` lies between the `(rank + t)`-th and `(rank - t)`-th
/// largest counts, with out-of-range positions leaving that side open.
pub fn within_order_bounds(sorted_desc: &[u64], rank: usize, t: usize, estimate: u64) -> bool {
    let n = sorted_desc.len();
    let upper_ok = rank <= t || estimate <= sorted_desc[rank - t - 1];
    let lower_ok = rank + t > n || estimate >= sorted_desc[rank + t - 1];
    upper_ok && lower_ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    #[test]
    fn intervals_cover_domain_once() {
        let iv = em_intervals(&[10, 8, 8, 4, 2], 3, 16, 1.0).unwrap();
        let covered: u64 = iv.iter().map(|i| i.hi - i.lo + 1).sum();
        assert_eq!(covered, 16);
        let spans: Vec<(u64, u64, u64)> = iv.iter().map(|i| (i.lo, i.hi, i.distance)).collect();
        assert_eq!(
            spans,
            vec![(11, 16, 3), (10, 10, 2), (9, 9, 2), (8, 8, 0), (5, 7, 0), (4, 4, 0), (3, 3, 1), (2, 2, 1), (1, 1, 2)]
        );
        let total: f64 = iv.iter().map(|i| i.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(em_intervals(&[3, 2], 0, 4, 1.0).is_err());
        assert!(em_intervals(&[3, 2], 3, 4, 1.0).is_err());
        assert!(matches!(em_intervals(&[5, 2], 1, 4, 1.0), Err(Error::CountAboveBound { k: 5, k_max: 4 })));
        assert!(em_intervals(&[3, 2], 1, 4, 0.0).is_err());
    }

    #[test]
    fn constant_profile_concentrates_below_the_value() {
        let ks = vec![20u64; 30];
        let mut rng = RandomSource::new(9, 0).rng();
        let hits = (0..2000)
            .filter(|_| em_order_statistic(&ks, 30, 40, 10.0, &mut rng).unwrap() <= 20)
            .count();
        assert!(hits >= 1980);
    }

    #[test]
    fn tied_counts_pick_the_tied_value() {
        let ks = vec![50u64; 1000];
        let mut rng = RandomSource::new(9, 1).rng();
        let hits = (0..500)
            .filter(|_| em_order_statistic(&ks, 100, 80, 1.0, &mut rng).unwrap() == 50)
            .count();
        assert_eq!(hits, 500);
    }

    #[test]
    fn order_bounds() {
        let ks = [10, 8, 6, 4, 2];
        assert!(within_order_bounds(&ks, 3, 2, 2));
        assert!(within_order_bounds(&ks, 3, 2, 10));
        assert!(!within_order_bounds(&ks, 3, 2, 11));
        assert!(!within_order_bounds(&ks, 3, 1, 3));
        assert!(within_order_bounds(&ks, 1, 0, 10));
        assert!(within_order_bounds(&ks, 5, 5, 1));
    }
}
