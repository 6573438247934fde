use super::{ExperimentConfig, Stage};
use crate::data::{collect_random, load_dataset, random_states, save_dataset};
use crate::env::{render, road_mask, DomainRole, DomainSpec};
use crate::error::{Error, IoContext, Result};
use crate::eval::{
    adaptation_curve, paired_renders, probe_analysis, saliency_map, transfer_report, write_adaptation_csv,
    write_embeddings_csv, SaliencyConfig,
};
use crate::repr::{swap_reconstruct, train_repr, write_loss_history, ReprParams};
use crate::rl::{train_ppo, write_curve, PolicyParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub(super) const ENCODER_STEM: &str = "encoder";
pub(super) const FINAL_POLICY_STEM: &str = "policy_final";
const CHECKPOINTS_FILE: &str = "checkpoints.csv";

/// Domains whose observations are used for representation learning.
pub fn training_domains(domains: &[DomainSpec]) -> Vec<DomainSpec> {
    domains.iter().filter(|d| d.role != DomainRole::Unseen).cloned().collect()
}

fn source_domain(domains: &[DomainSpec]) -> Result<DomainSpec> {
    let mut it = domains.iter().filter(|d| d.role == DomainRole::Source);
    match (it.next(), it.next()) {
        (Some(d), None) => Ok(d.clone()),
        _ => Err(Error::Precondition("a domain set needs exactly one source domain".into())),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").at(path)
}

fn load_encoder(cfg: &ExperimentConfig) -> Result<ReprParams<f32>> {
    Ok(ReprParams::<f32>::load(&cfg.stage_dir(Stage::TrainRepr), ENCODER_STEM)?.0)
}

fn load_final_policy(cfg: &ExperimentConfig) -> Result<PolicyParams<f32>> {
    Ok(PolicyParams::<f32>::load(&cfg.stage_dir(Stage::TrainRl), FINAL_POLICY_STEM)?.0)
}

pub(super) fn collect(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    for (i, d) in training_domains(&cfg.domains()?).iter().enumerate() {
        let ds = collect_random(d, cfg.data.n_per_domain, cfg.data.seed.wrapping_add(i as u64), &cfg.env);
        save_dataset(&ds, &dir.join(&d.name))?;
    }
    Ok(())
}

pub(super) fn train_repr_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let src = cfg.stage_dir(Stage::Collect);
    let datasets = training_domains(&cfg.domains()?)
        .iter()
        .map(|d| {
            let p = src.join(&d.name);
            if !p.exists() {
                return Err(Error::MissingArtifact(p));
            }
            load_dataset(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = train_repr(&datasets, &cfg.repr)?;
    out.params
        .save(dir, ENCODER_STEM, cfg.repr.beta, cfg.repr.seed, cfg.repr.epochs)?;
    write_loss_history(&dir.join("losses.csv"), &out.history)
}

/// One row of `train-rl/checkpoints.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub step: usize,
    pub stem: String,
    pub eval_return: f64,
}

pub(super) fn train_rl_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let encoder = load_encoder(cfg)?;
    let source = source_domain(&cfg.domains()?)?;
    let out = train_ppo(&encoder, &source, &cfg.env, &cfg.rl)?;
    let mut w = csv::Writer::from_path(dir.join(CHECKPOINTS_FILE))?;
    for c in &out.checkpoints {
        let stem = format!("policy_step{:08}", c.step);
        c.policy.save(dir, &stem, c.step, cfg.rl.seed, Some(c.eval_return))?;
        w.serialize(CheckpointEntry {
            step: c.step,
            stem,
            eval_return: c.eval_return,
        })?;
    }
    w.flush().at(dir)?;
    let last = out.checkpoints.last().map(|c| (c.step, c.eval_return));
    out.policy.save(
        dir,
        FINAL_POLICY_STEM,
        last.map_or(cfg.rl.total_steps, |l| l.0),
        cfg.rl.seed,
        last.map(|l| l.1),
    )?;
    write_curve(&dir.join("curve.csv"), &out.curve)
}

/// Checkpoint schedule written by `train-rl`.
pub fn checkpoint_index(train_rl_dir: &Path) -> Result<Vec<CheckpointEntry>> {
    let path = train_rl_dir.join(CHECKPOINTS_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let mut r = csv::Reader::from_path(&path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub(super) fn eval_transfer(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let encoder = load_encoder(cfg)?;
    let policy = load_final_policy(cfg)?;
    let report = transfer_report(
        &policy,
        &encoder,
        &cfg.domains()?,
        &cfg.env,
        cfg.eval.episodes,
        &cfg.eval.seeds,
        FINAL_POLICY_STEM,
    )?;
    report.write_csv(&dir.join("transfer.csv"))?;
    write_json(&dir.join("transfer.json"), &report)?;
    fs::write(dir.join("transfer.md"), report.to_markdown()).at(dir)
}

pub(super) fn curve(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let encoder = load_encoder(cfg)?;
    let rl_dir = cfg.stage_dir(Stage::TrainRl);
    let policies = checkpoint_index(&rl_dir)?
        .into_iter()
        .map(|e| Ok((e.step, PolicyParams::<f32>::load(&rl_dir, &e.stem)?.0)))
        .collect::<Result<Vec<_>>>()?;
    let schedule: Vec<(usize, &PolicyParams<f32>)> = policies.iter().map(|(s, p)| (*s, p)).collect();
    let points = adaptation_curve(
        &schedule,
        &encoder,
        &cfg.domains()?,
        &cfg.env,
        cfg.eval.curve_episodes,
        cfg.eval.curve_seed,
    )?;
    write_adaptation_csv(&dir.join("adaptation.csv"), &points)
}

/// Per-frame road attention of a saliency map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyFrame {
    pub frame: usize,
    /// Share of saliency falling on road pixels.
    pub mass_fraction: f64,
    /// Share of the image covered by road.
    pub area_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencySummary {
    pub domain: String,
    pub frames: usize,
    /// Frames whose road mass fraction exceeds the road area fraction.
    pub road_dominant_fraction: f64,
    pub mean_mass_fraction: f64,
    pub mean_area_fraction: f64,
}

pub(super) fn saliency(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let encoder = load_encoder(cfg)?;
    let policy = load_final_policy(cfg)?;
    let source = source_domain(&cfg.domains()?)?;
    let states = random_states(cfg.eval.saliency_frames, cfg.eval.frame_seed, &cfg.env);
    let mut rows = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        let obs = render(s, &source, &cfg.env);
        let map = saliency_map(&policy, &encoder, &obs, s.speed / cfg.env.v_max, SaliencyConfig::default())?;
        let mask = road_mask(s, &cfg.env);
        if i < cfg.eval.saliency_panels {
            map.save_png(&dir.join(format!("frame{i:03}_map.png")))?;
            map.overlay(&obs).save_png(&dir.join(format!("frame{i:03}_overlay.png")))?;
        }
        rows.push(SaliencyFrame {
            frame: i,
            mass_fraction: map.mass_fraction(&mask),
            area_fraction: mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64,
        });
    }
    let mut w = csv::Writer::from_path(dir.join("saliency.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().at(dir)?;
    let n = rows.len().max(1) as f64;
    write_json(
        &dir.join("summary.json"),
        &SaliencySummary {
            domain: source.name,
            frames: rows.len(),
            road_dominant_fraction: rows.iter().filter(|r| r.mass_fraction > r.area_fraction).count() as f64 / n,
            mean_mass_fraction: rows.iter().map(|r| r.mass_fraction).sum::<f64>() / n,
            mean_area_fraction: rows.iter().map(|r| r.area_fraction).sum::<f64>() / n,
        },
    )
}

pub(super) fn probe(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let encoder = load_encoder(cfg)?;
    let domains = training_domains(&cfg.domains()?);
    let paired = paired_renders(&domains, cfg.eval.probe_states, cfg.eval.probe_seed, &cfg.env);
    let (report, rows) = probe_analysis(&encoder, &paired, cfg.eval.probe_seed)?;
    write_json(&dir.join("probe.json"), &report)?;
    write_embeddings_csv(&dir.join("embeddings.csv"), &rows)
}

#[derive(Serialize)]
struct SwapColumn {
    domain_a: String,
    domain_b: String,
    track_seed_a: u64,
    track_seed_b: u64,
}

/// Column `j` takes its specific code from a render under training domain `j`
/// and its general code from a different state under the next domain.
pub(super) fn demo_swap(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let encoder = load_encoder(cfg)?;
    let domains = training_domains(&cfg.domains()?);
    let n = cfg.eval.swap_pairs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.probe_seed ^ 0x5a9);
    let states = random_states(4 * n, rng.random(), &cfg.env);
    let (mut row_a, mut row_b, mut cols) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..n {
        let (da, db) = (&domains[j % domains.len()], &domains[(j + 1) % domains.len()]);
        let (sa, sb) = (&states[rng.random_range(0..states.len())], &states[rng.random_range(0..states.len())]);
        row_a.push(render(sa, da, &cfg.env));
        row_b.push(render(sb, db, &cfg.env));
        cols.push(SwapColumn {
            domain_a: da.name.clone(),
            domain_b: db.name.clone(),
            track_seed_a: sa.track_seed,
            track_seed_b: sb.track_seed,
        });
    }
    let grid = swap_reconstruct(&encoder, &row_a, &row_b)?;
    grid.grid.save_png(&dir.join("swap_grid.png"))?;
    write_json(&dir.join("swap_columns.json"), &cols)
}
