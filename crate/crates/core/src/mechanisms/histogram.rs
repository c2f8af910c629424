use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::laplace::sample_laplace;
use crate::budget::PrivacyBudget;
use crate::error::{invalid, Error, Result};

/// Bin layout of a histogram. Every bin is half-open on the left: `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BinSpec {
    /// Explicit disjoint bins, identified by their position in the list.
    Intervals(Vec<(f64, f64)>),
    /// Bins `(2^j, 2^{j+1}]` identified by `j`, optionally restricted to
    /// `min_exp..=max_exp`. Nonpositive values fall in no bin.
    Dyadic {
        min_exp: Option<i64>,
        max_exp: Option<i64>,
    },
}

impl BinSpec {
    fn validate(&self) -> Result<()> {
        match self {
            BinSpec::Intervals(bins) => {
                let mut sorted = bins.clone();
                sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                for (lo, hi) in &sorted {
                    if !(lo < hi) {
                        return Err(invalid("bins", format!("empty bin ({lo}, {hi}]")));
                    }
                }
                if sorted.windows(2).any(|w| w[1].0 < w[0].1) {
                    return Err(invalid("bins", "bins overlap"));
                }
                Ok(())
            }
            BinSpec::Dyadic { min_exp: Some(lo), max_exp: Some(hi) } if lo > hi => {
                Err(invalid("bins", format!("min_exp {lo} exceeds max_exp {hi}")))
            }
            BinSpec::Dyadic { .. } => Ok(()),
        }
    }

    fn locate(&self, x: f64) -> Option<i64> {
        match self {
            BinSpec::Intervals(bins) => bins
                .iter()
                .position(|&(lo, hi)| x > lo && x <= hi)
                .map(|i| i as i64),
            BinSpec::Dyadic { min_exp, max_exp } => {
                if !(x > 0.0) || !x.is_finite() {
                    return None;
                }
                let mut j = x.log2().ceil() as i64 - 1;
                // Correct for rounding in log2 near powers of two.
                while 2f64.powi(j as i32) >= x {
                    j -= 1;
                }
                while 2f64.powi(j as i32 + 1) < x {
                    j += 1;
                }
                let in_range = min_exp.is_none_or(|m| j >= m) && max_exp.is_none_or(|m| j <= m);
                in_range.then_some(j)
            }
        }
    }

    fn all_bins(&self) -> Option<Vec<i64>> {
        match self {
            BinSpec::Intervals(bins) => Some((0..bins.len() as i64).collect()),
            BinSpec::Dyadic { min_exp: Some(lo), max_exp: Some(hi) } => Some((*lo..=*hi).collect()),
            BinSpec::Dyadic { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramPath {
    /// Laplace noise on every bin; needs finitely many bins, ignores delta.
    Pure,
    /// Laplace noise on occupied bins only, with small counts suppressed.
    Stability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRelease {
    /// Released `(bin, noisy count)` pairs in bin order.
    pub counts: Vec<(i64, f64)>,
    pub argmax: Option<i64>,
    /// Number of input values; noisy frequencies are `count / n`.
    pub n: usize,
    /// Suppression threshold of the stability path.
    pub threshold: Option<f64>,
}

impl HistogramRelease {
    pub fn noisy_frequency(&self, bin: i64) -> f64 {
        self.counts
            .iter()
            .find(|(b, _)| *b == bin)
            .map_or(0.0, |(_, c)| c / self.n as f64)
    }
}

/// Suppression threshold `1 + 2 ln(2/delta) / epsilon` of the stability path.
pub fn stability_threshold(budget: &PrivacyBudget) -> f64 {
    1.0 + 2.0 * (2.0 / budget.delta()).ln() / budget.epsilon()
}

/// Differentially private histogram under replacement of one value.
///
/// Counts have L1 sensitivity 2, so every released count carries
/// `Lap(2/epsilon)` noise.
pub fn dp_histogram<R: Rng + ?Sized>(
    values: &[f64],
    bins: &BinSpec,
    path: HistogramPath,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<HistogramRelease> {
    if values.is_empty() {
        return Err(Error::Empty("histogram"));
    }
    bins.validate()?;
    let mut exact: BTreeMap<i64, u64> = BTreeMap::new();
    for &x in values {
        if let Some(b) = bins.locate(x) {
            *exact.entry(b).or_default() += 1;
        }
    }
    let scale = 2.0 / budget.epsilon();
    let (counts, threshold) = match path {
        HistogramPath::Pure => {
            let all = bins
                .all_bins()
                .ok_or_else(|| invalid("bins", "the pure path needs finitely many bins"))?;
            let counts = all
                .into_iter()
                .map(|b| {
                    let c = exact.get(&b).copied().unwrap_or(0) as f64;
                    (b, c + sample_laplace(scale, rng))
                })
                .collect::<Vec<_>>();
            (counts, None)
        }
        HistogramPath::Stability => {
            if budget.delta() <= 0.0 {
                return Err(Error::DeltaRequired("the stability histogram"));
            }
            let t = stability_threshold(budget);
            let counts = exact
                .into_iter()
                .map(|(b, c)| (b, c as f64 + sample_laplace(scale, rng)))
                .filter(|&(_, c)| c >= t)
                .collect::<Vec<_>>();
            (counts, Some(t))
        }
    };
    let argmax = counts
        .iter()
        .fold(None::<(i64, f64)>, |best, &(b, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((b, c)),
        })
        .map(|(b, _)| b);
    Ok(HistogramRelease {
        counts,
        argmax,
        n: values.len(),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn dyadic() -> BinSpec {
        BinSpec::Dyadic { min_exp: None, max_exp: None }
    }

    #[test]
    fn dyadic_bins_are_left_open() {
        let b = dyadic();
        assert_eq!(b.locate(1.0), Some(-1));
        assert_eq!(b.locate(1.5), Some(0));
        assert_eq!(b.locate(2.0), Some(0));
        assert_eq!(b.locate(0.25), Some(-3));
        assert_eq!(b.locate(0.0), None);
        let capped = BinSpec::Dyadic { min_exp: Some(-2), max_exp: Some(0) };
        assert_eq!(capped.locate(0.1), None);
        assert_eq!(capped.locate(3.0), None);
    }

    #[test]
    fn single_bin_wins_with_large_epsilon() {
        let mut rng = RandomSource::new(1, 0).rng();
        let budget = PrivacyBudget::new(1e6, 1e-6).unwrap();
        let r = dp_histogram(&[0.3; 50], &dyadic(), HistogramPath::Stability, &budget, &mut rng).unwrap();
        assert_eq!(r.argmax, Some(-2));
        let bins = BinSpec::Intervals(vec![(0.0, 0.5), (0.5, 1.0)]);
        let r = dp_histogram(&[0.7; 5], &bins, HistogramPath::Pure, &budget, &mut rng).unwrap();
        assert_eq!(r.argmax, Some(1));
        assert_eq!(r.counts.len(), 2);
    }

    #[test]
    fn rejects_bad_requests() {
        let mut rng = RandomSource::new(1, 0).rng();
        let pure = PrivacyBudget::pure(1.0).unwrap();
        assert!(matches!(
            dp_histogram(&[], &dyadic(), HistogramPath::Stability, &pure, &mut rng),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            dp_histogram(&[1.0], &dyadic(), HistogramPath::Stability, &pure, &mut rng),
            Err(Error::DeltaRequired(_))
        ));
        assert!(dp_histogram(&[1.0], &dyadic(), HistogramPath::Pure, &pure, &mut rng).is_err());
        let overlapping = BinSpec::Intervals(vec![(0.0, 0.6), (0.5, 1.0)]);
        assert!(dp_histogram(&[1.0], &overlapping, HistogramPath::Pure, &pure, &mut rng).is_err());
    }

    #[test]
    fn stability_path_suppresses_sparse_bins() {
        let mut rng = RandomSource::new(5, 0).rng();
        let budget = PrivacyBudget::new(1.0, 1e-6).unwrap();
        let mut values = vec![0.3; 200];
        values.push(5.0);
        let r = dp_histogram(&values, &dyadic(), HistogramPath::Stability, &budget, &mut rng).unwrap();
        assert_eq!(r.counts.len(), 1);
        assert_eq!(r.argmax, Some(-2));
        assert!((r.threshold.unwrap() - (1.0 + 2.0 * 2e6f64.ln())).abs() < 1e-12);
    }
}
