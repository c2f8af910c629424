//! Acceptance criteria. Each runs with a fixed seed and yields one pass/fail
//! line; the shared Monte Carlo runs are computed once per process.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use anyhow::{anyhow, ensure, Result};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use hetmean::mechanisms::{em_order_statistic, within_order_bounds};
use hetmean::{
    certify_kappa, default_top_size, dp_mean_initial, dp_variance_initial, lower_bound_expression,
    optimize_threshold, threshold_objective, truncated_weighted_mean, variance_of_dk, KProfile,
    LocalSensitivityBound, MetaDistribution, PtrStatus, RandomSource,
    TruncatedCoreParams, VarianceSource, WeightCap,
};

use crate::compare::paired_ratio;
use crate::config::{EstimatorKind, ExperimentConfig, VarianceMode};
use crate::runner::{run_estimator, run_experiment, trial_population, ExperimentResult, Setting, TrialSummary};

const SEED: u64 = 0x5eed_2024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Primary,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "primary" => Ok(Suite::Primary),
            other => Err(format!("unknown suite {other:?}; the only suite is \"primary\"")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    /// Measurements reported alongside the verdict.
    pub notes: Vec<String>,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2} {verdict}: {}: {}", self.id, self.title, self.detail)?;
        for note in &self.notes {
            write!(f, "\n    {note}")?;
        }
        Ok(())
    }
}

pub struct Criterion {
    pub id: u8,
    pub title: &'static str,
    check: fn() -> Result<(bool, String, Vec<String>)>,
}

impl Criterion {
    /// Runs the check; an error counts as a failure.
    pub fn run(&self) -> CriterionResult {
        let (passed, detail, notes) = (self.check)().unwrap_or_else(|e| (false, format!("error: {e:#}"), Vec::new()));
        CriterionResult {
            id: self.id,
            title: self.title,
            passed,
            detail,
            notes,
        }
    }
}

pub const CRITERIA: [Criterion; 11] = [
    Criterion { id: 1, title: "variance law of D(k)", check: dk_variance_law },
    Criterion { id: 2, title: "sensitivity soundness", check: sensitivity_soundness },
    Criterion { id: 3, title: "threshold optimality", check: threshold_optimality },
    Criterion { id: 4, title: "public-k variance within a constant of ideal", check: ideal_band },
    Criterion { id: 5, title: "heavy-tail scaling", check: heavy_tail_scaling },
    Criterion { id: 6, title: "power-law example scaling", check: power_law_scaling },
    Criterion { id: 7, title: "initial estimator guarantees", check: initial_guarantees },
    Criterion { id: 8, title: "order statistic accuracy", check: order_statistic_accuracy },
    Criterion { id: 9, title: "propose-test-release behaviour", check: ptr_behaviour },
    Criterion { id: 10, title: "unbiasedness", check: unbiasedness },
    Criterion { id: 11, title: "lower bound consistency", check: lower_bound_consistency },
];

pub fn criterion(id: u8) -> &'static Criterion {
    CRITERIA.iter().find(|c| c.id == id).expect("criterion ids run from 1 to 11")
}

pub struct Report {
    pub results: Vec<CriterionResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

/// Runs every criterion, printing each line as it completes.
pub fn run_suite(suite: Suite) -> Report {
    let Suite::Primary = suite;
    run_criteria(CRITERIA.iter())
}

/// Runs the listed criteria in the given order.
pub fn run_selected(suite: Suite, ids: &[u8]) -> Result<Report> {
    let Suite::Primary = suite;
    let chosen = ids
        .iter()
        .map(|&id| {
            CRITERIA
                .iter()
                .find(|c| c.id == id)
                .ok_or_else(|| anyhow!("no criterion {id}; ids run from 1 to {}", CRITERIA.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(run_criteria(chosen.into_iter()))
}

fn run_criteria<'a>(criteria: impl Iterator<Item = &'a Criterion>) -> Report {
    let results = criteria
        .map(|c| {
            let r = c.run();
            println!("{r}");
            r
        })
        .collect::<Vec<_>>();
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    Report { results }
}

/// Monte Carlo slack for a frequency over `trials` runs.
fn slack(beta: f64, trials: usize) -> f64 {
    3.0 * (beta / trials as f64).sqrt()
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

// Shared Monte Carlo runs.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bench {
    Ideal,
    HeavyTail,
    HeavyTailKnownSpread,
    PowerLaw,
    Benign,
}

impl Bench {
    fn config(self) -> Result<ExperimentConfig> {
        let text = match self {
            Bench::Ideal => include_str!("../configs/benchmark.toml"),
            Bench::HeavyTail | Bench::HeavyTailKnownSpread => include_str!("../configs/heavy_tail.toml"),
            Bench::PowerLaw => include_str!("../configs/example_power_law.toml"),
            Bench::Benign => include_str!("../configs/benign.toml"),
        };
        let mut cfg = ExperimentConfig::from_toml(text)?;
        if self == Bench::HeavyTailKnownSpread {
            cfg.name.push_str("_known_spread");
            cfg.toggles.variance = VarianceMode::Known;
            cfg.estimators = vec![EstimatorKind::PublicK];
        }
        Ok(cfg)
    }
}

type Cached = OnceLock<std::result::Result<(ExperimentConfig, ExperimentResult), String>>;

fn bench(which: Bench) -> Result<&'static (ExperimentConfig, ExperimentResult)> {
    static IDEAL: Cached = OnceLock::new();
    static HEAVY: Cached = OnceLock::new();
    static HEAVY_KNOWN: Cached = OnceLock::new();
    static POWER: Cached = OnceLock::new();
    static BENIGN: Cached = OnceLock::new();
    let cell = match which {
        Bench::Ideal => &IDEAL,
        Bench::HeavyTail => &HEAVY,
        Bench::HeavyTailKnownSpread => &HEAVY_KNOWN,
        Bench::PowerLaw => &POWER,
        Bench::Benign => &BENIGN,
    };
    cell.get_or_init(|| {
        let run = || -> Result<_> {
            let cfg = which.config()?;
            let result = run_experiment(&cfg)?;
            Ok((cfg, result))
        };
        run().map_err(|e| format!("{e:#}"))
    })
    .as_ref()
    .map_err(|e| anyhow!("{e}"))
}

fn summary(result: &ExperimentResult, kind: EstimatorKind, n: usize) -> Result<&TrialSummary> {
    let s = result
        .summaries
        .iter()
        .find(|s| s.estimator == kind && s.n == n)
        .ok_or_else(|| anyhow!("no summary for {} at n = {n}", kind.name()))?;
    ensure!(s.failures == 0, "{} failed in {} trials at n = {n}", kind.name(), s.failures);
    Ok(s)
}

fn series_summaries<'a>(cfg: &ExperimentConfig, result: &'a ExperimentResult, kind: EstimatorKind) -> Result<Vec<&'a TrialSummary>> {
    cfg.n.iter().map(|&n| summary(result, kind, n)).collect()
}

type Outcome = Result<(bool, String, Vec<String>)>;

// Criterion 1.

fn dk_variance_law() -> Outcome {
    const DRAWS: usize = 1_000_000;
    let metas = [
        MetaDistribution::point_mass(0.3)?,
        MetaDistribution::two_point(0.5, 0.2)?,
        MetaDistribution::two_point(0.7, 0.1)?,
        MetaDistribution::truncated_gaussian(0.5, 0.03)?,
        MetaDistribution::truncated_gaussian(0.2, 0.05)?,
    ];
    let combos: Vec<(MetaDistribution, u64)> =
        metas.iter().flat_map(|m| [1u64, 10, 100].map(|k| (*m, k))).collect();
    let z: Vec<f64> = combos
        .par_iter()
        .enumerate()
        .map(|(i, &(meta, k))| -> Result<f64> {
            let mut rng = RandomSource::new(SEED, i as u64).rng();
            let draws: Vec<f64> = (0..DRAWS)
                .map(|_| {
                    let q = meta.sample(&mut rng);
                    Binomial::new(k, q).expect("q lies in [0, 1]").sample(&mut rng) as f64 / k as f64
                })
                .collect();
            let n = DRAWS as f64;
            let mean = draws.iter().sum::<f64>() / n;
            let m2 = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let m4 = draws.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
            let unbiased = m2 * n / (n - 1.0);
            let se = ((m4 - m2 * m2) / n).sqrt();
            let expected = variance_of_dk(meta.mean(), meta.variance(), k)?;
            Ok((unbiased - expected) / se)
        })
        .collect::<Result<_>>()?;
    let within = z.iter().filter(|z| z.abs() <= 3.0).count();
    let worst = z.iter().fold(0.0f64, |a, z| a.max(z.abs()));
    Ok((
        within == combos.len(),
        format!("{within}/{} combinations within 3 standard errors at 10^6 draws, max |z| = {worst:.2}", combos.len()),
        Vec::new(),
    ))
}

// Criterion 2.

fn plan_inputs(pop: &hetmean::Population, plan: &hetmean::WeightPlan) -> Vec<f64> {
    pop.users()[plan.users.clone()]
        .iter()
        .map(|u| match plan.cap {
            WeightCap::SampleCount(k) => u.prefix_mean(k),
            _ => u.p_hat(),
        })
        .collect()
}

/// A replacement value for a user mean over `k` samples, extreme a third of the time.
fn random_mean<R: Rng>(k: u64, rng: &mut R) -> f64 {
    match rng.random_range(0..3) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0..=k) as f64 / k as f64,
    }
}

fn sensitivity_soundness() -> Outcome {
    const PAIRS: usize = 10_000;
    const INSTANCES: usize = 20;
    let cfg = ExperimentConfig::from_toml(include_str!("../configs/benchmark.toml"))?;
    let mut cfg = cfg;
    cfg.n = vec![2000];
    let setting = Setting::from_config(&cfg, 2000)?;
    let mut lines = Vec::new();
    let mut passed = true;

    for kind in [EstimatorKind::PublicK, EstimatorKind::IdealPrivate, EstimatorKind::MedianBaseline] {
        let mut worst = 0.0f64;
        let mut violations = 0;
        for inst in 0..INSTANCES {
            let syn = trial_population(SEED, inst, &setting, &cfg.profile)?;
            let report = run_estimator(kind, &syn.population, &setting, RandomSource::new(SEED, inst as u64))?;
            let plan = &report.plan;
            let inputs = plan_inputs(&syn.population, plan);
            let base = plan.statistic(&inputs).0;
            let mut rng = RandomSource::new(SEED, inst as u64).lane(200).rng();
            let users = &syn.population.users()[plan.users.clone()];
            for _ in 0..PAIRS / INSTANCES {
                let j = rng.random_range(0..inputs.len());
                let k = match plan.cap {
                    WeightCap::SampleCount(k) => k,
                    _ => users[j].k(),
                };
                let mut changed = inputs.clone();
                changed[j] = random_mean(k, &mut rng);
                let delta = (plan.statistic(&changed).0 - base).abs();
                worst = worst.max(delta / plan.sensitivity);
                if delta > plan.sensitivity {
                    violations += 1;
                }
            }
        }
        passed &= violations == 0;
        lines.push(format!(
            "{}: {violations} violations in {PAIRS} pairs, max change / declared = {worst:.3}",
            kind.name()
        ));
    }

    let (violations, worst, certified) = private_k_core_pairs(PAIRS)?;
    passed &= violations == 0;
    lines.push(format!(
        "private_k core: {violations} violations in {PAIRS} pairs within the certified radius \
         ({certified} instances certified), max change / lambda = {worst:.3}"
    ));
    Ok((passed, lines.join("; "), Vec::new()))
}

/// Neighbouring pairs `(D', D'')` where `D'` is within the certified distance
/// of a real dataset and `D''` replaces one record of `D'`, count included.
fn private_k_core_pairs(pairs: usize) -> Result<(usize, f64, usize)> {
    let mut violations = 0;
    let mut worst = 0.0f64;
    let mut instances = Vec::new();
    for (name, text) in [
        ("benign", include_str!("../configs/benign.toml")),
        ("benchmark", include_str!("../configs/benchmark.toml")),
    ] {
        let mut cfg = ExperimentConfig::from_toml(text)?;
        cfg.n = vec![2000];
        let setting = Setting::from_config(&cfg, 2000)?;
        for inst in 0..10 {
            let syn = trial_population(SEED, inst, &setting, &cfg.profile)?;
            let pop = &syn.population;
            let report = run_estimator(EstimatorKind::PrivateK, pop, &setting, RandomSource::new(SEED, inst as u64))?;
            let cert = match &report.ptr {
                PtrStatus::Released(c) | PtrStatus::Fallback(c) => c.clone(),
                PtrStatus::NotApplicable => return Err(anyhow!("{name}: private_k ran without a certificate")),
            };
            if !cert.lambda.is_finite() {
                continue;
            }
            let im = report.initial_mean.as_ref().expect("private_k reports its initial mean");
            let iv = report.initial_variance.as_ref().expect("private_k reports its initial variance");
            let params = TruncatedCoreParams {
                k_cap: cert.k_cap,
                group_size: report.plan.users.len(),
                center: im.p_initial,
                sigma_p2: iv.sigma2_hat,
                alpha: im.alpha,
                beta: setting.beta,
                family: setting.meta.kind(),
            };
            let records: Vec<(f64, u64)> = pop.users()[report.plan.users.clone()]
                .iter()
                .map(|u| (u.p_hat(), u.k()))
                .collect();
            let kappa = certify_kappa(&records, &params, cert.lambda)?.kappa;
            let k_max = pop.users()[0].k();
            instances.push((records, params, cert.lambda, kappa, k_max, inst));
        }
    }
    ensure!(!instances.is_empty(), "no instance produced a finite lambda");
    let per = pairs.div_ceil(instances.len());
    let mut done = 0;
    for (records, params, lambda, kappa, k_max, inst) in &instances {
        let mut rng = RandomSource::new(SEED, *inst as u64).lane(201).rng();
        let m = records.len();
        for _ in 0..per.min(pairs - done) {
            let mut near = records.clone();
            let changes = rng.random_range(0..=(*kappa as usize).min(m));
            for _ in 0..changes {
                let j = rng.random_range(0..m);
                let k = rng.random_range(1..=*k_max);
                near[j] = (random_mean(k, &mut rng), k);
            }
            let mut neighbour = near.clone();
            let j = rng.random_range(0..m);
            let k = rng.random_range(1..=*k_max);
            neighbour[j] = (random_mean(k, &mut rng), k);
            let delta = (truncated_weighted_mean(&near, params)? - truncated_weighted_mean(&neighbour, params)?).abs();
            worst = worst.max(delta / lambda);
            if delta > *lambda {
                violations += 1;
            }
            done += 1;
        }
    }
    Ok((violations, worst, instances.len()))
}

// Criterion 3.

fn threshold_optimality() -> Outcome {
    const INSTANCES: u64 = 100;
    const GRID: usize = 100_000;
    let rel: Vec<f64> = (0..INSTANCES)
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomSource::new(SEED, 3000 + i).rng();
            let n = rng.random_range(2..=200usize);
            let sigmas: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-3.0..0.0))).collect();
            let widths: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let eps = 10f64.powf(rng.random_range(-1.0..1.0));
            let t = optimize_threshold(&sigmas, &widths, eps).expect("valid instance");
            let best = threshold_objective(&sigmas, &widths, eps, t);
            let oracle = grid_minimum(&sigmas, &widths, eps, GRID);
            (best - oracle).abs() / oracle
        })
        .collect();
    let worst = rel.iter().fold(0.0f64, |a, &b| a.max(b));
    let ok = rel.iter().filter(|&&r| r <= 1e-9).count();
    Ok((
        ok == rel.len(),
        format!("{ok}/{INSTANCES} instances within 1e-9 of the dense-grid minimum, worst relative gap {worst:.2e}"),
        Vec::new(),
    ))
}

/// Minimum over a log-spaced grid spanning every breakpoint, refined by
/// golden-section search around the best grid point.
fn grid_minimum(sigmas: &[f64], widths: &[f64], eps: f64, points: usize) -> f64 {
    let j = |t: f64| threshold_objective(sigmas, widths, eps, t);
    let lo = sigmas.iter().map(|s| 1.0 / s).fold(f64::INFINITY, f64::min) * 0.5;
    let hi = sigmas.iter().map(|s| 1.0 / s).fold(0.0, f64::max) * 2.0;
    let step = (hi / lo).ln() / (points - 1) as f64;
    let at = |i: usize| lo * (step * i as f64).exp();
    let (best_i, best) = (0..points)
        .map(|i| (i, j(at(i))))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let (mut a, mut b) = (at(best_i.saturating_sub(1)), at((best_i + 1).min(points - 1)));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut best = best;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        let (jc, jd) = (j(c), j(d));
        best = best.min(jc).min(jd);
        if jc <= jd {
            b = d;
        } else {
            a = c;
        }
    }
    best
}

// Criterion 4.

fn ideal_band() -> Outcome {
    const CONSTANT: f64 = 3840.0;
    let (cfg, result) = bench(Bench::Ideal)?;
    let n = cfg.n[0];
    let find = |kind| {
        result
            .series
            .iter()
            .find(|s| s.estimator == kind && s.n == n)
            .ok_or_else(|| anyhow!("missing series"))
    };
    let row = paired_ratio(find(EstimatorKind::PublicK)?, find(EstimatorKind::IdealPrivate)?, RandomSource::new(SEED, 4))?;
    let ideal = summary(result, EstimatorKind::IdealPrivate, n)?;
    let public = summary(result, EstimatorKind::PublicK, n)?;
    let notes = vec![
        format!(
            "ideal_private empirical variance {:.3e} vs closed-form prediction {:.3e} (ratio {:.3})",
            ideal.var,
            ideal.pred_var,
            ideal.var / ideal.pred_var
        ),
        format!("public_k clamp rate {:.4}, ideal_private clamp rate {:.4}", public.clamp_rate, ideal.clamp_rate),
    ];
    Ok((
        row.ratio <= CONSTANT,
        format!(
            "Var(public_k)/Var(ideal_private) = {:.3} (95% bootstrap CI [{:.3}, {:.3}], {} paired trials) <= {CONSTANT}",
            row.ratio, row.ci_low, row.ci_high, row.pairs
        ),
        notes,
    ))
}

// Criterion 5.

fn slope_of(cfg: &ExperimentConfig, rows: &[&TrialSummary], value: impl Fn(&TrialSummary) -> f64) -> f64 {
    let x: Vec<f64> = cfg.n.iter().map(|&n| n as f64).collect();
    let y: Vec<f64> = rows.iter().map(|s| value(s)).collect();
    log_log_slope(&x, &y)
}

fn heavy_tail_scaling() -> Outcome {
    let (cfg, result) = bench(Bench::HeavyTail)?;
    let ours = series_summaries(cfg, result, EstimatorKind::PublicK)?;
    let base = series_summaries(cfg, result, EstimatorKind::MedianBaseline)?;
    let ideal = series_summaries(cfg, result, EstimatorKind::IdealPrivate)?;
    let s_ours = slope_of(cfg, &ours, |s| s.mse);
    let s_base = slope_of(cfg, &base, |s| s.mse);
    let s_ideal = slope_of(cfg, &ideal, |s| s.mse);
    let beats: Vec<bool> = ours.iter().zip(&base).map(|(o, b)| o.mse < b.mse).collect();
    let ok_ours = (s_ours + 1.5).abs() <= 0.15;
    let ok_base = (s_base + 1.0).abs() <= 0.15;
    let ok_beats = beats.iter().all(|&b| b);
    let mut notes: Vec<String> = cfg
        .n
        .iter()
        .zip(ours.iter().zip(&base).zip(&ideal))
        .map(|(n, ((o, b), i))| {
            format!("n = {n}: MSE public_k {:.3e}, median_baseline {:.3e}, ideal_private {:.3e}", o.mse, b.mse, i.mse)
        })
        .collect();
    notes.push(format!("ideal_private slope {s_ideal:.3}"));
    if let Ok((kcfg, kres)) = bench(Bench::HeavyTailKnownSpread) {
        let known = series_summaries(kcfg, kres, EstimatorKind::PublicK)?;
        notes.push(format!(
            "public_k with the spread known: slope {:.3}, MSE {}",
            slope_of(kcfg, &known, |s| s.mse),
            known.iter().map(|s| format!("{:.3e}", s.mse)).collect::<Vec<_>>().join(", ")
        ));
    }
    Ok((
        ok_ours && ok_base && ok_beats,
        format!(
            "public_k MSE slope {s_ours:.3} (target -1.5 +/- 0.15: {}), median_baseline slope {s_base:.3} \
             (target -1.0 +/- 0.15: {}), public_k below baseline at {}/{} sizes",
            if ok_ours { "ok" } else { "miss" },
            if ok_base { "ok" } else { "miss" },
            beats.iter().filter(|&&b| b).count(),
            beats.len()
        ),
        notes,
    ))
}

// Criterion 6.

fn power_law_scaling() -> Outcome {
    let (cfg, result) = bench(Bench::PowerLaw)?;
    let ours = series_summaries(cfg, result, EstimatorKind::PublicK)?;
    let ideal = series_summaries(cfg, result, EstimatorKind::IdealPrivate)?;
    let x: Vec<f64> = cfg.n.iter().map(|&n| n as f64 * (n as f64).ln()).collect();
    let sd = |rows: &[&TrialSummary]| rows.iter().map(|s| s.var.sqrt()).collect::<Vec<_>>();
    let slope = log_log_slope(&x, &sd(&ours));
    let notes = vec![
        format!(
            "public_k std dev {}",
            sd(&ours).iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ),
        format!("ideal_private slope {:.3}", log_log_slope(&x, &sd(&ideal))),
    ];
    Ok((
        (slope + 0.5).abs() <= 0.1,
        format!("slope of public_k std dev against n ln n = {slope:.3} (target -0.5 +/- 0.1)"),
        notes,
    ))
}

// Criterion 7.

fn initial_guarantees() -> Outcome {
    const MEAN_TRIALS: usize = 2000;
    const VAR_TRIALS: usize = 500;
    let cfg = ExperimentConfig::from_toml(include_str!("../configs/benchmark.toml"))?;
    let n = cfg.n[0];
    let setting = Setting::from_config(&cfg, n)?;
    let beta = setting.beta;
    let eps = setting.budget.epsilon();
    let p = setting.meta.mean();

    let covered = (0..MEAN_TRIALS)
        .into_par_iter()
        .map(|t| -> Result<bool> {
            let syn = trial_population(SEED, t, &setting, &cfg.profile)?;
            let users = syn.population.users();
            let singles: Vec<bool> = users[n - n / 10..].iter().map(|u| u.samples()[0]).collect();
            let mut rng = RandomSource::new(SEED, t as u64).lane(1).rng();
            let r = dp_mean_initial(&singles, eps, beta, &mut rng)?;
            Ok((r.p_initial - p).abs() <= r.alpha)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|&c| c)
        .count();
    let mean_rate = covered as f64 / MEAN_TRIALS as f64;
    let mean_need = 1.0 - beta - slack(beta, MEAN_TRIALS);

    let k = 100;
    let meta = MetaDistribution::truncated_gaussian(0.5, 0.05)?;
    let source = setting.toggles.variance_source(&meta);
    let VarianceSource::Estimate(var_cfg) = source else {
        return Err(anyhow!("the benchmark config must estimate the spread"));
    };
    let inputs_n = default_top_size(n, &setting.budget, beta, &source);
    let min_inputs = var_cfg.min_inputs(&setting.budget, beta);
    let truth = variance_of_dk(meta.mean(), meta.variance(), k)?;
    let ratios: Vec<Option<f64>> = (0..VAR_TRIALS)
        .into_par_iter()
        .map(|t| {
            let mut rng = RandomSource::new(SEED, 7000 + t as u64).rng();
            let inputs: Vec<f64> = (0..inputs_n)
                .map(|_| {
                    let q = meta.sample(&mut rng);
                    Binomial::new(k, q).expect("q lies in [0, 1]").sample(&mut rng) as f64 / k as f64
                })
                .collect();
            dp_variance_initial(&inputs, k, &setting.budget, &var_cfg, beta, &mut rng)
                .ok()
                .map(|r| r.sigma2_hat / truth)
        })
        .collect();
    let in_band = |lo: f64, hi: f64| ratios.iter().filter(|r| r.is_some_and(|r| (lo..=hi).contains(&r))).count();
    let var_hits = in_band(1.0, 8.0);
    let var_rate = var_hits as f64 / VAR_TRIALS as f64;
    let var_need = 1.0 - beta - slack(beta, VAR_TRIALS);
    let released: Vec<f64> = ratios.iter().flatten().copied().collect();
    let (lo, hi) = released
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    let notes = vec![
        format!(
            "variance estimate released in {}/{VAR_TRIALS} trials; estimate / Var(D(k)) ranged over [{lo:.2}, {hi:.2}]",
            released.len()
        ),
        format!(
            "standard-deviation band sigma <= sigma_hat <= 8 sigma held in {}/{VAR_TRIALS} trials",
            in_band(1.0, 64.0)
        ),
    ];
    Ok((
        mean_rate >= mean_need && var_rate >= var_need,
        format!(
            "initial mean within alpha in {mean_rate:.4} of {MEAN_TRIALS} trials (need {mean_need:.4}); \
             variance estimate in [Var, 8 Var] in {var_rate:.4} of {VAR_TRIALS} trials with {inputs_n} inputs \
             of D({k}) (need {var_need:.4}; minimum input count {min_inputs:.1})"
        ),
        notes,
    ))
}

// Criterion 8.

fn order_statistic_accuracy() -> Outcome {
    const TRIALS: usize = 2000;
    const N: usize = 1000;
    let eps = 1.0;
    let beta = 0.05;
    let mut rng = RandomSource::new(SEED, 8000).rng();
    let geometric: Vec<u64> = (0..N).map(|_| 1 + (-(rng.random::<f64>()).ln() * 20.0) as u64).collect();
    let uniform: Vec<u64> = (0..N).map(|_| rng.random_range(1..=500)).collect();
    let profiles = [
        ("constant", KProfile::Constant(50)),
        ("power_law", KProfile::PowerLaw),
        ("heavy_tail", KProfile::HeavyTail),
        ("geometric", KProfile::Explicit(geometric)),
        ("uniform", KProfile::Explicit(uniform)),
    ];
    let rank = N / 10;
    let need = 1.0 - beta - slack(beta, TRIALS);
    let mut passed = true;
    let mut parts = Vec::new();
    for (i, (name, profile)) in profiles.iter().enumerate() {
        let ks = profile.resolve(N)?;
        let k_max = ks[0];
        let t = (((k_max as f64).ln() + (1.0 / beta).ln()) / eps).floor() as usize;
        let hits = (0..TRIALS)
            .into_par_iter()
            .map(|trial| -> Result<bool> {
                let mut rng = RandomSource::new(SEED, ((8100 + i as u64) << 32) | trial as u64).rng();
                let est = em_order_statistic(&ks, rank, k_max, eps, &mut rng)?;
                Ok(within_order_bounds(&ks, rank, t, est))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|&h| h)
            .count();
        let rate = hits as f64 / TRIALS as f64;
        passed &= rate >= need;
        parts.push(format!("{name} {rate:.4}"));
    }
    Ok((
        passed,
        format!("rank error within (ln k_max + ln(1/beta))/eps: {} (need {need:.4})", parts.join(", ")),
        Vec::new(),
    ))
}

// Criterion 9.

fn ptr_behaviour() -> Outcome {
    let (cfg, result) = bench(Bench::Benign)?;
    let n = cfg.n[0];
    let s = summary(result, EstimatorKind::PrivateK, n)?;
    let limit = 4.0 * cfg.beta + slack(cfg.beta, cfg.trials);
    let find = |kind| {
        result
            .series
            .iter()
            .find(|s| s.estimator == kind && s.n == n)
            .ok_or_else(|| anyhow!("missing series"))
    };
    let ratio = paired_ratio(find(EstimatorKind::PrivateK)?, find(EstimatorKind::PublicK)?, RandomSource::new(SEED, 9))?;
    let enumeration = enumerate_small_certificates()?;
    let notes = vec![format!(
        "Var(private_k)/Var(public_k) = {:.2} (95% bootstrap CI [{:.2}, {:.2}]; comparison threshold 50)",
        ratio.ratio, ratio.ci_low, ratio.ci_high
    )];
    Ok((
        s.fallback_rate <= limit && enumeration.violations == 0,
        format!(
            "fallback rate {:.4} over {} trials (limit {limit:.4}); exhaustive check of {} small certified datasets \
             ({} neighbourhoods, {} skipped as too large): {} violations",
            s.fallback_rate, s.trials, enumeration.instances, enumeration.datasets, enumeration.skipped, enumeration.violations
        ),
        notes,
    ))
}

pub struct EnumerationOutcome {
    pub instances: usize,
    pub skipped: usize,
    /// Datasets `D'` whose local sensitivity was computed.
    pub datasets: usize,
    pub violations: usize,
}

const GRID_STEPS: u64 = 8;
const SMALL_K: u64 = 4;

/// Every record a user can hold on the test grid.
fn grid_records() -> Vec<(f64, u64)> {
    (1..=SMALL_K)
        .flat_map(|k| (0..=GRID_STEPS).map(move |j| (j as f64 / GRID_STEPS as f64, k)))
        .collect()
}

/// Weighted clamped mean from per-count weights and intervals.
fn small_mean(records: &[(f64, u64)], table: &[(f64, hetmean::Interval64)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &(x, k) in records {
        let (v, iv) = &table[k as usize - 1];
        num += v * iv.clamp(x);
        den += v;
    }
    num / den
}

/// Largest change from replacing one record with any grid record.
fn grid_local_sensitivity(records: &[(f64, u64)], table: &[(f64, hetmean::Interval64)], options: &[(f64, u64)]) -> f64 {
    let base = small_mean(records, table);
    let mut work = records.to_vec();
    let mut worst = 0.0f64;
    for i in 0..records.len() {
        for &o in options {
            work[i] = o;
            worst = worst.max((small_mean(&work, table) - base).abs());
        }
        work[i] = records[i];
    }
    worst
}

/// Visits every dataset reachable from `records` by replacing at most
/// `depth` records, each position changed at most once and in increasing
/// order of position.
fn visit_neighbourhood(
    records: &mut Vec<(f64, u64)>,
    from: usize,
    depth: u64,
    options: &[(f64, u64)],
    visit: &mut dyn FnMut(&[(f64, u64)]),
) {
    visit(records);
    if depth == 0 {
        return;
    }
    for i in from..records.len() {
        let keep = records[i];
        for &o in options {
            if o == keep {
                continue;
            }
            records[i] = o;
            visit_neighbourhood(records, i + 1, depth - 1, options, &mut |d| visit(d));
        }
        records[i] = keep;
    }
}

/// Certifies random small datasets on a grid and checks the local sensitivity
/// of every dataset inside the certified distance.
pub fn enumerate_small_certificates() -> Result<EnumerationOutcome> {
    const PER_SIZE: usize = 8;
    let options = grid_records();
    let family = MetaDistribution::truncated_gaussian(0.5, 0.03)?.kind();
    let mut out = EnumerationOutcome {
        instances: 0,
        skipped: 0,
        datasets: 0,
        violations: 0,
    };
    for m in 2..=6usize {
        let depth_limit: u64 = if m <= 3 { 3 } else { 2 };
        for inst in 0..PER_SIZE {
            let mut rng = RandomSource::new(SEED, 9000 + (m * PER_SIZE + inst) as u64).rng();
            let params = TruncatedCoreParams {
                k_cap: rng.random_range(1..=SMALL_K),
                group_size: m,
                center: rng.random_range(2..=6) as f64 / GRID_STEPS as f64,
                sigma_p2: [0.0, 0.001, 0.01][rng.random_range(0..3)],
                alpha: [0.0, 0.05, 0.2][rng.random_range(0..3)],
                beta: 0.05,
                family,
            };
            let mut records: Vec<(f64, u64)> = (0..m).map(|_| options[rng.random_range(0..options.len())]).collect();
            let bound = LocalSensitivityBound::new(&records, &params)?;
            let target = rng.random_range(0..=depth_limit.min(m as u64));
            let lambda = bound.at(target);
            let kappa = certify_kappa(&records, &params, lambda)?.kappa;
            if kappa > depth_limit {
                out.skipped += 1;
                continue;
            }
            let table: Vec<(f64, hetmean::Interval64)> = (1..=SMALL_K)
                .map(|k| Ok((params.weight(k), params.interval(k)?)))
                .collect::<Result<_>>()?;
            let direct = truncated_weighted_mean(&records, &params)?;
            ensure!(
                (small_mean(&records, &table) - direct).abs() <= 1e-12,
                "grid evaluation disagrees with the library mean"
            );
            out.instances += 1;
            let (mut datasets, mut violations) = (0usize, 0usize);
            visit_neighbourhood(&mut records, 0, kappa, &options, &mut |d| {
                datasets += 1;
                if grid_local_sensitivity(d, &table, &options) > lambda {
                    violations += 1;
                }
            });
            out.datasets += datasets;
            out.violations += violations;
        }
    }
    Ok(out)
}

// Criterion 10.

fn unbiasedness() -> Outcome {
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for which in [Bench::Ideal, Bench::HeavyTail, Bench::PowerLaw, Bench::Benign] {
        let (cfg, result) = bench(which)?;
        for s in &result.summaries {
            if s.trials == 0 {
                failures.push(format!("{} {} n = {}: no successful trials", cfg.name, s.estimator.name(), s.n));
                continue;
            }
            let se = (s.var / s.trials as f64).sqrt();
            let allowed = cfg.beta + 4.0 * se;
            checked += 1;
            worst = worst.max(s.bias.abs() / allowed);
            if s.bias.abs() > allowed {
                failures.push(format!("{} {} n = {}: bias {:.3e} > {allowed:.3e}", cfg.name, s.estimator.name(), s.n, s.bias));
            }
        }
    }
    Ok((
        failures.is_empty(),
        format!(
            "{}/{checked} (config, estimator, n) rows within beta + 4 standard errors, max |bias| / allowance = {worst:.3}",
            checked - failures.len()
        ),
        failures,
    ))
}

// Criterion 11.

fn lower_bound_consistency() -> Outcome {
    let (cfg, result) = bench(Bench::PowerLaw)?;
    let ours = series_summaries(cfg, result, EstimatorKind::PublicK)?;
    let eps = cfg.budget.epsilon;
    let mut worst = f64::INFINITY;
    let mut notes = Vec::new();
    for (&n, s) in cfg.n.iter().zip(&ours) {
        let ks = cfg.profile.resolve(n)?;
        let sigma = cfg.meta.sigma_p.at(n);
        let lb = lower_bound_expression(&ks, sigma * sigma, eps, n)?;
        let floor = lb.value / (10.0 * (n as f64).ln().powi(2));
        let ratio = s.mse / floor;
        worst = worst.min(ratio);
        notes.push(format!(
            "n = {n}: MSE {:.3e}, lower bound {:.3e} ({:?} branch, k* = {}), MSE / slackened bound {ratio:.1}",
            s.mse, lb.value, lb.branch, lb.k_star
        ));
    }
    Ok((
        worst >= 1.0,
        format!("smallest MSE / (lower bound / (10 ln^2 n)) over the grid = {worst:.2} (need >= 1)"),
        notes,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((log_log_slope(&x, &y) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn neighbourhood_sizes() {
        let options = grid_records();
        let mut records = vec![options[0], options[5], options[9]];
        let mut count = 0;
        visit_neighbourhood(&mut records, 0, 2, &options, &mut |_| count += 1);
        // 1 + 3 * 35 + 3 * 35^2.
        assert_eq!(count, 1 + 3 * 35 + 3 * 35 * 35);
    }
}
