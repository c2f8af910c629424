//! Monte Carlo trials: one population per trial, shared by every estimator.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{Context, Result};
use hetmean::{
    estimate_ideal_private, estimate_nonprivate, estimate_private_k, estimate_public_k, generate_population,
    median_truncation_baseline, EstimateReport, MetaDistribution, Oracle, Population, PrivacyBudget,
    PrivateKConfig, PublicKConfig, RandomSource, Synthetic,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EstimatorKind, ExperimentConfig, Toggles};

/// Fixed inputs of every trial at one population size.
#[derive(Debug, Clone)]
pub struct Setting {
    pub n: usize,
    pub meta: MetaDistribution,
    pub budget: PrivacyBudget,
    pub beta: f64,
    pub toggles: Toggles,
}

impl Setting {
    pub fn from_config(cfg: &ExperimentConfig, n: usize) -> Result<Self> {
        Ok(Self {
            n,
            meta: cfg.meta.build(n)?,
            budget: cfg.budget.build()?,
            beta: cfg.beta,
            toggles: cfg.toggles,
        })
    }
}

/// Population of trial `trial`; lane 0 of stream `trial`.
pub fn trial_population(
    seed: u64,
    trial: usize,
    setting: &Setting,
    profile: &hetmean::KProfile,
) -> Result<Synthetic> {
    let source = RandomSource::new(seed, trial as u64);
    Ok(generate_population(&setting.meta, profile, setting.n, source)?)
}

/// Runs one estimator on `pop` with the generator of its lane.
pub fn run_estimator(
    kind: EstimatorKind,
    pop: &Population,
    setting: &Setting,
    source: RandomSource,
) -> hetmean::Result<EstimateReport> {
    let mut rng = source.lane(kind.lane()).rng();
    let meta = &setting.meta;
    let t = &setting.toggles;
    let eps = setting.budget.epsilon();
    match kind {
        EstimatorKind::Nonprivate => estimate_nonprivate(pop),
        EstimatorKind::IdealPrivate => {
            let oracle = Oracle {
                p: meta.mean(),
                sigma_p2: meta.variance(),
                family: meta.kind(),
            };
            estimate_ideal_private(pop, &oracle, eps, setting.beta, &mut rng)
        }
        EstimatorKind::PublicK => {
            let mut cfg = PublicKConfig::new(meta.kind(), t.variance_source(meta));
            cfg.top_size = t.top_size;
            cfg.alpha = t.alpha_policy();
            estimate_public_k(pop, &setting.budget, setting.beta, &cfg, &mut rng)
        }
        EstimatorKind::PrivateK => {
            let k_max = t.k_max.unwrap_or_else(|| pop.users()[0].k());
            let mut cfg = PrivateKConfig::new(k_max, meta.kind(), t.variance_source(meta));
            cfg.top_size = t.top_size;
            cfg.alpha = t.alpha_policy();
            cfg.lambda_count = t.lambda_count;
            estimate_private_k(pop, &setting.budget, setting.beta, &cfg, &mut rng)
        }
        EstimatorKind::MedianBaseline => median_truncation_baseline(pop, &setting.budget, &mut rng),
    }
}

/// What one estimator produced in one trial.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok {
        estimate: f64,
        clamp_rate: f64,
        fallback: bool,
        pred_var: Option<f64>,
        nanos: u128,
    },
    Failed(String),
}

impl Outcome {
    pub fn estimate(&self) -> Option<f64> {
        match self {
            Outcome::Ok { estimate, .. } => Some(*estimate),
            Outcome::Failed(_) => None,
        }
    }
}

/// All estimators on the population of one trial.
pub fn run_trial(
    seed: u64,
    trial: usize,
    setting: &Setting,
    profile: &hetmean::KProfile,
    estimators: &[EstimatorKind],
) -> Result<Vec<Outcome>> {
    let syn = trial_population(seed, trial, setting, profile)?;
    let source = RandomSource::new(seed, trial as u64);
    Ok(estimators
        .iter()
        .map(|&kind| {
            let start = Instant::now();
            let result = run_estimator(kind, &syn.population, setting, source);
            let nanos = start.elapsed().as_nanos();
            match result {
                Ok(r) => Outcome::Ok {
                    estimate: r.estimate,
                    clamp_rate: r.clamp_rate(),
                    fallback: r.ptr.is_fallback(),
                    pred_var: r.prediction.map(|p| p.total),
                    nanos,
                },
                Err(e) => Outcome::Failed(e.to_string()),
            }
        })
        .collect())
}

/// Aggregate over the trials of one estimator at one `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    /// Trials that produced an estimate.
    pub trials: usize,
    pub failures: usize,
    pub mean: f64,
    /// Empirical variance with divisor `trials`.
    pub var: f64,
    pub mse: f64,
    pub bias: f64,
    pub clamp_rate: f64,
    pub fallback_rate: f64,
    /// Mean of the closed-form predictions, NaN when the estimator has none.
    pub pred_var: f64,
    pub runtime_ms: f64,
}

/// Per-trial estimates of one estimator, aligned by trial index.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSeries {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub truth: f64,
    pub estimates: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summaries: Vec<TrialSummary>,
    pub series: Vec<EstimateSeries>,
    /// First few error messages per estimator.
    pub errors: BTreeMap<EstimatorKind, Vec<String>>,
}

const KEPT_ERRORS: usize = 3;

/// Reduces outcomes in trial order, so the result does not depend on how the
/// trials were scheduled.
pub fn summarize(
    kind: EstimatorKind,
    setting: &Setting,
    outcomes: &[&Outcome],
    record_runtime: bool,
) -> TrialSummary {
    let truth = setting.meta.mean();
    let ok: Vec<(f64, f64, bool, Option<f64>, u128)> = outcomes
        .iter()
        .filter_map(|o| match o {
            Outcome::Ok {
                estimate,
                clamp_rate,
                fallback,
                pred_var,
                nanos,
            } => Some((*estimate, *clamp_rate, *fallback, *pred_var, *nanos)),
            Outcome::Failed(_) => None,
        })
        .collect();
    let m = ok.len() as f64;
    let mean = ok.iter().map(|o| o.0).sum::<f64>() / m;
    let var = ok.iter().map(|o| (o.0 - mean).powi(2)).sum::<f64>() / m;
    let mse = ok.iter().map(|o| (o.0 - truth).powi(2)).sum::<f64>() / m;
    let preds: Vec<f64> = ok.iter().filter_map(|o| o.3).collect();
    let pred_var = if preds.is_empty() {
        f64::NAN
    } else {
        preds.iter().sum::<f64>() / preds.len() as f64
    };
    let runtime_ms = if record_runtime {
        ok.iter().map(|o| o.4).sum::<u128>() as f64 / 1e6
    } else {
        0.0
    };
    TrialSummary {
        estimator: kind,
        n: setting.n,
        epsilon: setting.budget.epsilon(),
        delta: setting.budget.delta(),
        beta: setting.beta,
        trials: ok.len(),
        failures: outcomes.len() - ok.len(),
        mean,
        var,
        mse,
        bias: mean - truth,
        clamp_rate: ok.iter().map(|o| o.1).sum::<f64>() / m,
        fallback_rate: ok.iter().filter(|o| o.2).count() as f64 / m,
        pred_var,
        runtime_ms,
    }
}

/// Runs every `(n, trial)` pair in parallel and reduces per estimator.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut summaries = Vec::new();
    let mut series = Vec::new();
    let mut errors: BTreeMap<EstimatorKind, Vec<String>> = BTreeMap::new();
    for &n in &cfg.n {
        let setting = Setting::from_config(cfg, n)?;
        let per_trial: Vec<Vec<Outcome>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| run_trial(cfg.seed, trial, &setting, &cfg.profile, &cfg.estimators))
            .collect::<Result<_>>()
            .with_context(|| format!("running trials at n = {n}"))?;
        for (j, &kind) in cfg.estimators.iter().enumerate() {
            let outcomes: Vec<&Outcome> = per_trial.iter().map(|t| &t[j]).collect();
            for o in &outcomes {
                if let Outcome::Failed(msg) = o {
                    let kept = errors.entry(kind).or_default();
                    if kept.len() < KEPT_ERRORS {
                        kept.push(format!("n = {n}: {msg}"));
                    }
                }
            }
            summaries.push(summarize(kind, &setting, &outcomes, cfg.record_runtime));
            series.push(EstimateSeries {
                estimator: kind,
                n,
                truth: setting.meta.mean(),
                estimates: outcomes.iter().map(|o| o.estimate()).collect(),
            });
        }
    }
    Ok(ExperimentResult {
        summaries,
        series,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(estimate: f64) -> Outcome {
        Outcome::Ok {
            estimate,
            clamp_rate: 0.0,
            fallback: false,
            pred_var: None,
            nanos: 0,
        }
    }

    #[test]
    fn summary_decomposes_mse() {
        let setting = Setting {
            n: 10,
            meta: MetaDistribution::point_mass(0.5).unwrap(),
            budget: PrivacyBudget::new(1.0, 0.0).unwrap(),
            beta: 0.05,
            toggles: Toggles::default(),
        };
        let outs = [outcome(0.4), outcome(0.7), Outcome::Failed("x".into()), outcome(0.55)];
        let refs: Vec<&Outcome> = outs.iter().collect();
        let s = summarize(EstimatorKind::PublicK, &setting, &refs, false);
        assert_eq!((s.trials, s.failures), (3, 1));
        assert!((s.mean - 0.55).abs() < 1e-15);
        assert!((s.mse - (s.var + s.bias * s.bias)).abs() <= 1e-10 * s.mse);
        assert!(s.pred_var.is_nan());
    }
}
