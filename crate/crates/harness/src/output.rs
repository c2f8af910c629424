//! CSV rows and the JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::runner::{ExperimentResult, TrialSummary};

pub const CSV_HEADER: &str =
    "estimator,n,epsilon,delta,beta,trials,mean,var,mse,bias,clamp_rate,fallback_rate,pred_var,runtime_ms";

fn row(s: &TrialSummary) -> String {
    format!(
        "{},{},{},{},{},{},{:e},{:e},{:e},{:e},{},{},{:e},{}",
        s.estimator.name(),
        s.n,
        s.epsilon,
        s.delta,
        s.beta,
        s.trials,
        s.mean,
        s.var,
        s.mse,
        s.bias,
        s.clamp_rate,
        s.fallback_rate,
        s.pred_var,
        s.runtime_ms,
    )
}

pub fn to_csv(summaries: &[TrialSummary]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in summaries {
        out.push_str(&row(s));
        out.push('\n');
    }
    out
}

/// Hex SHA-256 over `"blob <len>\0"` followed by the content, the same
/// framing git uses for object ids.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub name: &'a str,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
    pub csv_hash: String,
    pub rows: usize,
    pub failures: Vec<FailureCount>,
}

#[derive(Debug, Serialize)]
pub struct FailureCount {
    pub estimator: &'static str,
    pub n: usize,
    pub failures: usize,
    pub examples: Vec<String>,
}

pub fn manifest_json(cfg: &ExperimentConfig, result: &ExperimentResult, csv: &str) -> Result<String> {
    let failures = result
        .summaries
        .iter()
        .filter(|s| s.failures > 0)
        .map(|s| FailureCount {
            estimator: s.estimator.name(),
            n: s.n,
            failures: s.failures,
            examples: result
                .errors
                .get(&s.estimator)
                .map(|v| v.iter().filter(|m| m.starts_with(&format!("n = {}:", s.n))).cloned().collect())
                .unwrap_or_default(),
        })
        .collect();
    let manifest = Manifest {
        name: &cfg.name,
        seed: cfg.seed,
        config: cfg,
        csv_hash: content_hash(csv.as_bytes()),
        rows: result.summaries.len(),
        failures,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    Ok(text)
}

/// Writes `<prefix>.csv` and `<prefix>.json` and returns both paths.
pub fn write_outputs(prefix: &Path, cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<(PathBuf, PathBuf)> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let csv = to_csv(&result.summaries);
    let csv_path = prefix.with_extension("csv");
    let json_path = prefix.with_extension("json");
    fs::write(&csv_path, &csv).with_context(|| format!("writing {}", csv_path.display()))?;
    fs::write(&json_path, manifest_json(cfg, result, &csv)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git_blob_framing() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }
}
