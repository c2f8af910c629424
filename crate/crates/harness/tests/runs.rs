use std::process::Command;

use hetmean::RandomSource;
use hetmean_harness::output::{content_hash, write_outputs, CSV_HEADER};
use hetmean_harness::runner::{run_estimator, trial_population, Setting};
use hetmean_harness::{run_experiment, EstimatorKind, ExperimentConfig};

const QUICK: &str = include_str!("../configs/quick.toml");

fn quick(trials: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(QUICK).unwrap();
    cfg.trials = trials;
    cfg.output = None;
    cfg
}

#[test]
fn repeated_runs_write_identical_files() {
    let cfg = quick(3);
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let result = run_experiment(&cfg).unwrap();
        let (csv, json) = write_outputs(&dir.path().join(run), &cfg, &result).unwrap();
        files.push((std::fs::read(csv).unwrap(), std::fs::read(json).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    let csv = String::from_utf8(files[0].0.clone()).unwrap();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + cfg.estimators.len());
    let manifest: serde_json::Value = serde_json::from_slice(&files[0].1).unwrap();
    assert_eq!(manifest["csv_hash"], content_hash(csv.as_bytes()));
}

#[test]
fn estimators_see_the_same_population() {
    let cfg = quick(1);
    let setting = Setting::from_config(&cfg, cfg.n[0]).unwrap();
    for trial in 0..3 {
        let a = trial_population(cfg.seed, trial, &setting, &cfg.profile).unwrap();
        let hash = content_hash(a.population.to_text().as_bytes());
        for &kind in &EstimatorKind::ALL {
            // Estimators read the population but draw noise from their own lane.
            run_estimator(kind, &a.population, &setting, RandomSource::new(cfg.seed, trial as u64)).unwrap();
            assert_eq!(content_hash(a.population.to_text().as_bytes()), hash);
        }
        let b = trial_population(cfg.seed, trial, &setting, &cfg.profile).unwrap();
        assert_eq!(content_hash(b.population.to_text().as_bytes()), hash);
    }
    let other = trial_population(cfg.seed, 1, &setting, &cfg.profile).unwrap();
    let first = trial_population(cfg.seed, 0, &setting, &cfg.profile).unwrap();
    assert_ne!(other.population, first.population);
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("quick.toml");
    std::fs::write(&config, quick(2).to_toml().unwrap()).unwrap();
    let run = |seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hetmean"));
        cmd.arg("run").arg(&config).env_remove(hetmean_harness::SEED_ENV);
        if let Some(s) = seed {
            cmd.env(hetmean_harness::SEED_ENV, s);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let default = run(None);
    assert_eq!(run(Some("7")), default);
    assert_ne!(run(Some("8")), default);

    let bad = Command::new(env!("CARGO_BIN_EXE_hetmean"))
        .arg("run")
        .arg(&config)
        .env(hetmean_harness::SEED_ENV, "not-a-seed")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sweep_prints_one_header() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("quick.toml");
    std::fs::write(&config, quick(2).to_toml().unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hetmean"))
        .args(["sweep", config.to_str().unwrap(), "--param", "epsilon", "--values", "0.5,2"])
        .env_remove(hetmean_harness::SEED_ENV)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| *l == CSV_HEADER).count(), 1);
    assert_eq!(text.lines().count(), 1 + 2 * 5);
    assert!(text.lines().skip(1).any(|l| l.split(',').nth(2) == Some("0.5")));
    assert!(text.lines().skip(1).any(|l| l.split(',').nth(2) == Some("2")));
}
