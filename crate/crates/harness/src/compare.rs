//! Paired variance ratios with bootstrap intervals.

use anyhow::{bail, ensure, Result};
use rand::Rng;
use serde::Serialize;

use hetmean::RandomSource;

use crate::config::{EstimatorKind, ExperimentConfig};
use crate::runner::{run_experiment, EstimateSeries};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// `Var(estimator) / Var(reference)` over the trials where both succeeded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub n: usize,
    pub estimator: EstimatorKind,
    pub reference: EstimatorKind,
    pub pairs: usize,
    pub ratio: f64,
    /// 2.5% and 97.5% bootstrap quantiles.
    pub ci_low: f64,
    pub ci_high: f64,
}

fn variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    let mean = sum / count as f64;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64
}

/// Variance ratio of paired series, resampling trial indices jointly.
pub fn paired_ratio(a: &EstimateSeries, b: &EstimateSeries, source: RandomSource) -> Result<RatioRow> {
    ensure!(
        a.estimates.len() == b.estimates.len(),
        "mismatched trial counts: {} vs {}",
        a.estimates.len(),
        b.estimates.len()
    );
    let pairs: Vec<(f64, f64)> = a
        .estimates
        .iter()
        .zip(&b.estimates)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect();
    if pairs.len() < 2 {
        bail!("fewer than two paired trials for {} vs {}", a.estimator.name(), b.estimator.name());
    }
    let ratio = variance(pairs.iter().map(|p| p.0)) / variance(pairs.iter().map(|p| p.1));
    let mut rng = source.rng();
    let mut boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let idx: Vec<usize> = (0..pairs.len()).map(|_| rng.random_range(0..pairs.len())).collect();
            variance(idx.iter().map(|&i| pairs[i].0)) / variance(idx.iter().map(|&i| pairs[i].1))
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let q = |f: f64| boot[((f * (BOOTSTRAP_RESAMPLES - 1) as f64).round()) as usize];
    Ok(RatioRow {
        n: a.n,
        estimator: a.estimator,
        reference: b.estimator,
        pairs: pairs.len(),
        ratio,
        ci_low: q(0.025),
        ci_high: q(0.975),
    })
}

/// Stream reserved for bootstrap resampling, disjoint from every trial.
fn bootstrap_source(seed: u64, n: usize) -> RandomSource {
    RandomSource::new(seed, u64::MAX - n as u64)
}

/// Ratios of every configured estimator against the first one listed.
pub fn ratios_from_series(seed: u64, series: &[EstimateSeries]) -> Result<Vec<RatioRow>> {
    let mut rows = Vec::new();
    let mut ns: Vec<usize> = series.iter().map(|s| s.n).collect();
    ns.dedup();
    for n in ns {
        let at_n: Vec<&EstimateSeries> = series.iter().filter(|s| s.n == n).collect();
        let reference = at_n[0];
        for s in &at_n[1..] {
            rows.push(paired_ratio(s, reference, bootstrap_source(seed, n))?);
        }
    }
    Ok(rows)
}

pub fn compare_estimators(cfg: &ExperimentConfig) -> Result<Vec<RatioRow>> {
    ensure!(cfg.estimators.len() >= 2, "comparison needs at least two estimators");
    let result = run_experiment(cfg)?;
    ratios_from_series(cfg.seed, &result.series)
}

pub fn ratio_table(rows: &[RatioRow]) -> String {
    let mut out = String::from("n,estimator,reference,pairs,ratio,ci_low,ci_high\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:e},{:e},{:e}\n",
            r.n,
            r.estimator.name(),
            r.reference.name(),
            r.pairs,
            r.ratio,
            r.ci_low,
            r.ci_high
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(kind: EstimatorKind, values: &[Option<f64>]) -> EstimateSeries {
        EstimateSeries {
            estimator: kind,
            n: 10,
            truth: 0.0,
            estimates: values.to_vec(),
        }
    }

    #[test]
    fn self_ratio_is_one() {
        let v: Vec<Option<f64>> = (0..50).map(|i| Some((i as f64 * 0.37).sin())).collect();
        let a = series(EstimatorKind::PublicK, &v);
        let r = paired_ratio(&a, &a, RandomSource::new(1, 0)).unwrap();
        assert_eq!((r.ratio, r.ci_low, r.ci_high), (1.0, 1.0, 1.0));
    }

    #[test]
    fn scaled_series_and_failures() {
        let a: Vec<Option<f64>> = (0..40).map(|i| Some(i as f64)).collect();
        let mut b: Vec<Option<f64>> = a.iter().map(|x| x.map(|v| 3.0 * v)).collect();
        b[5] = None;
        let r = paired_ratio(
            &series(EstimatorKind::PrivateK, &b),
            &series(EstimatorKind::PublicK, &a),
            RandomSource::new(1, 0),
        )
        .unwrap();
        assert_eq!(r.pairs, 39);
        assert!((r.ratio - 9.0).abs() < 1e-12);
        assert!(paired_ratio(
            &series(EstimatorKind::PrivateK, &b[..10]),
            &series(EstimatorKind::PublicK, &a),
            RandomSource::new(1, 0)
        )
        .is_err());
    }
}
