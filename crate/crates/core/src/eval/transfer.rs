use crate::env::{DomainRole, DomainSpec, EnvConfig};
use crate::error::{Error, IoContext, Result};
use crate::repr::ReprParams;
use crate::rl::{run_episodes, PolicyParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Per-episode track seeds derived from an evaluation seed.
pub fn episode_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..episodes).map(|_| rng.random()).collect()
}

fn paired_seeds(seeds: &[u64], episodes: usize) -> Vec<u64> {
    seeds.iter().flat_map(|&s| episode_seeds(s, episodes)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean: f64,
    pub scores: Vec<f64>,
    pub mean_steps: f64,
}

fn summarize(scores: Vec<f64>, steps: f64) -> EvalResult {
    let n = scores.len().max(1) as f64;
    EvalResult {
        mean: scores.iter().sum::<f64>() / n,
        scores,
        mean_steps: steps / n,
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Deterministic-mode evaluation; score is the undiscounted episode return.
pub fn evaluate(
    policy: &PolicyParams<f32>,
    encoder: &ReprParams<f32>,
    domain: &DomainSpec,
    config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    evaluate_on(policy, encoder, domain, config, &episode_seeds(seed, episodes))
}

pub fn evaluate_on(
    policy: &PolicyParams<f32>,
    encoder: &ReprParams<f32>,
    domain: &DomainSpec,
    config: &EnvConfig,
    track_seeds: &[u64],
) -> Result<EvalResult> {
    let results = run_episodes(policy, encoder, domain, config, track_seeds)?;
    let steps = results.iter().map(|r| r.steps as f64).sum();
    Ok(summarize(results.iter().map(|r| r.score).collect(), steps))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub domain: String,
    pub role: DomainRole,
    pub mean: f64,
    pub std: f64,
    /// Target mean over source mean.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub rows: Vec<TransferRow>,
    pub encoder_variant: String,
    pub policy_checkpoint: String,
    pub episodes_per_domain: usize,
}

fn single_source(domains: &[DomainSpec]) -> Result<usize> {
    let sources: Vec<usize> = domains
        .iter()
        .enumerate()
        .filter(|(_, d)| d.role == DomainRole::Source)
        .map(|(i, _)| i)
        .collect();
    match sources.as_slice() {
        [i] => Ok(*i),
        _ => Err(Error::Precondition(format!(
            "a domain set needs exactly one source domain, found {}",
            sources.len()
        ))),
    }
}

/// Evaluate every domain on the same track seeds and express each mean as a
/// ratio of the source mean. Each evaluation seed contributes `episodes`
/// track seeds.
pub fn transfer_report(
    policy: &PolicyParams<f32>,
    encoder: &ReprParams<f32>,
    domains: &[DomainSpec],
    config: &EnvConfig,
    episodes: usize,
    seeds: &[u64],
    policy_checkpoint: &str,
) -> Result<TransferReport> {
    let src = single_source(domains)?;
    if episodes == 0 || seeds.is_empty() {
        return Err(Error::Precondition("transfer evaluation needs at least one episode".into()));
    }
    let tracks = paired_seeds(seeds, episodes);
    let results = domains
        .iter()
        .map(|d| evaluate_on(policy, encoder, d, config, &tracks))
        .collect::<Result<Vec<_>>>()?;
    let source_mean = results[src].mean;
    let rows = domains
        .iter()
        .zip(&results)
        .enumerate()
        .map(|(i, (d, r))| TransferRow {
            domain: d.name.clone(),
            role: d.role,
            mean: r.mean,
            std: std_dev(&r.scores),
            ratio: if i == src { 1.0 } else { r.mean / source_mean },
        })
        .collect();
    Ok(TransferReport {
        rows,
        encoder_variant: encoder.variant.to_string(),
        policy_checkpoint: policy_checkpoint.to_string(),
        episodes_per_domain: tracks.len(),
    })
}

impl TransferReport {
    pub fn row(&self, name: &str) -> Option<&TransferRow> {
        self.rows.iter().find(|r| r.domain == name)
    }

    /// CSV with columns `domain,role,mean,std,ratio`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
        w.write_record(["domain", "role", "mean", "std", "ratio"])?;
        for r in &self.rows {
            w.write_record([
                r.domain.clone(),
                r.role.as_str().to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                r.ratio.to_string(),
            ])?;
        }
        w.flush().at(path)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<TransferRow>> {
        let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Csv(e),
        })?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Encoder `{}`, policy `{}`, {} episodes per domain.\n",
            self.encoder_variant, self.policy_checkpoint, self.episodes_per_domain
        );
        s.push_str("| domain | role | mean | std | ratio |\n|---|---|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} | {:.3} | {:.3} |",
                r.domain,
                r.role.as_str(),
                r.mean,
                r.std,
                r.ratio
            );
        }
        s
    }
}

/// One point of an adaptation curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationPoint {
    pub step: usize,
    pub domain: String,
    pub role: DomainRole,
    pub mean: f64,
    pub ratio: f64,
}

/// Score every checkpoint in every domain on shared track seeds.
pub fn adaptation_curve(
    checkpoints: &[(usize, &PolicyParams<f32>)],
    encoder: &ReprParams<f32>,
    domains: &[DomainSpec],
    config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<AdaptationPoint>> {
    if checkpoints.is_empty() {
        return Err(Error::Precondition("adaptation curve needs a checkpoint schedule".into()));
    }
    if checkpoints.len() < 2 {
        return Err(Error::Precondition("adaptation curve needs at least two checkpoints".into()));
    }
    let mut out = Vec::with_capacity(checkpoints.len() * domains.len());
    for &(step, policy) in checkpoints {
        let report = transfer_report(policy, encoder, domains, config, episodes, &[seed], "")?;
        out.extend(report.rows.into_iter().map(|r| AdaptationPoint {
            step,
            domain: r.domain,
            role: r.role,
            mean: r.mean,
            ratio: r.ratio,
        }));
    }
    Ok(out)
}

/// CSV with columns `step,domain,role,mean,ratio`.
pub fn write_adaptation_csv(path: &Path, points: &[AdaptationPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().at(path)?;
    Ok(())
}

pub fn read_adaptation_csv(path: &Path) -> Result<Vec<AdaptationPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Csv(e),
    })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
