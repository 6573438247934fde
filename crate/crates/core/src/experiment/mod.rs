//! Config-driven pipeline: each stage reads its upstream artifacts from
//! `output_dir/run_name/<stage>/` and writes its own directory plus a
//! `run_manifest.json`.

mod report;
mod stages;

pub use report::{line_chart_svg, write_report, Series};
pub use stages::{checkpoint_index, training_domains, CheckpointEntry, SaliencyFrame, SaliencySummary};

use crate::checkpoint::sha256_hex;
use crate::env::{domain_set_from_json, make_domain_set, DomainSpec, EnvConfig};
use crate::error::{Error, IoContext, Result};
use crate::repr::ReprConfig;
use crate::rl::PpoConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_per_domain: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_per_domain: 5000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Episodes per evaluation seed and domain.
    pub episodes: usize,
    pub seeds: Vec<u64>,
    /// Episodes per domain at every adaptation-curve checkpoint.
    pub curve_episodes: usize,
    pub curve_seed: u64,
    pub saliency_frames: usize,
    /// Frames whose maps are written as PNG panels.
    pub saliency_panels: usize,
    pub frame_seed: u64,
    pub probe_states: usize,
    pub probe_seed: u64,
    pub swap_pairs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            seeds: vec![0],
            curve_episodes: 20,
            curve_seed: 1,
            saliency_frames: 50,
            saliency_panels: 4,
            frame_seed: 7,
            probe_states: 300,
            probe_seed: 999,
            swap_pairs: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run_name: String,
    /// Preset name, or a path to a JSON domain set.
    #[serde(default = "default_domain_set")]
    pub domain_set: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub repr: ReprConfig,
    #[serde(default)]
    pub rl: PpoConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_domain_set() -> String {
    "toyroad-mirror".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_name.trim().is_empty() {
            return Err(Error::Config("run_name must be nonempty".into()));
        }
        if self.run_name.contains(['/', '\\']) {
            return Err(Error::Config("run_name must not contain path separators".into()));
        }
        self.env.validate()?;
        self.repr.validate()?;
        self.rl.validate()?;
        if self.eval.episodes == 0 || self.eval.seeds.is_empty() {
            return Err(Error::Config("eval needs at least one episode and one seed".into()));
        }
        if self.eval.curve_episodes == 0 || self.eval.swap_pairs == 0 {
            return Err(Error::Config("eval.curve_episodes and eval.swap_pairs must be positive".into()));
        }
        let domains = self.domains()?;
        for d in &domains {
            d.validate(self.env.image_size)?;
        }
        Ok(())
    }

    /// Seeds the representation and the policy from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.repr.seed = seed;
        self.rl.seed = seed;
        self
    }

    pub fn domains(&self) -> Result<Vec<DomainSpec>> {
        if self.domain_set.ends_with(".json") {
            let path = Path::new(&self.domain_set);
            domain_set_from_json(&fs::read_to_string(path).at(path)?)
        } else {
            make_domain_set(&self.domain_set)
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_name)
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.run_dir().join(stage.as_str())
    }

    /// Hash of the whole config, `run_name` and `output_dir` excluded so a
    /// relocated rerun hashes the same.
    pub fn config_hash(&self) -> String {
        let v = serde_json::json!({
            "domain_set": self.domain_set,
            "env": self.env,
            "data": self.data,
            "repr": self.repr,
            "rl": self.rl,
            "eval": self.eval,
        });
        sha256_hex(v.to_string().as_bytes())
    }

    /// Hash of the config sections a stage (and its upstream) depends on.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let mut v = serde_json::json!({
            "domain_set": self.domain_set,
            "env": self.env,
            "data": self.data,
        });
        let depth = stage.depth();
        if depth >= 1 {
            v["repr"] = serde_json::to_value(&self.repr).expect("serializable");
        }
        if depth >= 2 {
            v["rl"] = serde_json::to_value(&self.rl).expect("serializable");
        }
        if depth >= 3 {
            v["eval"] = serde_json::to_value(&self.eval).expect("serializable");
        }
        sha256_hex(v.to_string().as_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Collect,
    TrainRepr,
    TrainRl,
    EvalTransfer,
    Curve,
    Saliency,
    Probe,
    DemoSwap,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Collect,
        Stage::TrainRepr,
        Stage::TrainRl,
        Stage::EvalTransfer,
        Stage::Curve,
        Stage::Saliency,
        Stage::Probe,
        Stage::DemoSwap,
        Stage::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Collect => "collect",
            Stage::TrainRepr => "train-repr",
            Stage::TrainRl => "train-rl",
            Stage::EvalTransfer => "eval-transfer",
            Stage::Curve => "curve",
            Stage::Saliency => "saliency",
            Stage::Probe => "probe",
            Stage::DemoSwap => "demo-swap",
            Stage::Report => "report",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(&self) -> &'static [Stage] {
        match self {
            Stage::Collect | Stage::Report => &[],
            Stage::TrainRepr => &[Stage::Collect],
            Stage::TrainRl => &[Stage::TrainRepr],
            Stage::EvalTransfer | Stage::Curve | Stage::Saliency => &[Stage::TrainRepr, Stage::TrainRl],
            Stage::Probe | Stage::DemoSwap => &[Stage::TrainRepr],
        }
    }

    // 0: data only, 1: + repr, 2: + rl, 3: + eval
    fn depth(&self) -> u8 {
        match self {
            Stage::Collect => 0,
            Stage::TrainRepr => 1,
            Stage::TrainRl => 2,
            Stage::Probe | Stage::DemoSwap => 1,
            _ => 3,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Written last into every stage directory. Holds everything needed to rerun
/// the stage and nothing time-dependent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_hash: String,
    pub stage_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Upstream stage name to the sha256 of its manifest file.
    pub upstream: BTreeMap<String, String>,
    /// Output file (relative path) to its sha256.
    pub outputs: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        serde_json::from_str(&fs::read_to_string(&path).at(&path)?).map_err(|e| Error::Manifest {
            path,
            reason: e.to_string(),
        })
    }
}

/// sha256 of a manifest file as written.
pub fn manifest_hash(dir: &Path) -> Result<String> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    Ok(sha256_hex(&fs::read(&path).at(&path)?))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files
        .into_iter()
        .map(|rel| {
            let p = dir.join(&rel);
            let key = rel.to_string_lossy().replace('\\', "/");
            Ok((key, sha256_hex(&fs::read(&p).at(&p)?)))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Proceed even if an upstream stage was produced under a different config.
    pub allow_mismatch: bool,
}

/// Check upstream manifests exist and were made under a compatible config.
fn check_upstream(cfg: &ExperimentConfig, stage: Stage, opts: RunOptions) -> Result<BTreeMap<String, String>> {
    let mut hashes = BTreeMap::new();
    for &up in stage.upstream() {
        let dir = cfg.stage_dir(up);
        let manifest = RunManifest::read(&dir)?;
        let expected = cfg.stage_hash(up);
        if manifest.stage_hash != expected {
            if !opts.allow_mismatch {
                return Err(Error::ConfigMismatch {
                    stage: up.as_str().to_string(),
                    upstream: manifest.stage_hash,
                    current: expected,
                });
            }
            log::warn!("{up}: artifacts were produced under a different config");
        }
        hashes.insert(up.as_str().to_string(), manifest_hash(&dir)?);
    }
    Ok(hashes)
}

fn stage_seeds(cfg: &ExperimentConfig, stage: Stage) -> BTreeMap<String, u64> {
    let mut s = BTreeMap::new();
    let depth = stage.depth();
    s.insert("data".to_string(), cfg.data.seed);
    if depth >= 1 {
        s.insert("repr".to_string(), cfg.repr.seed);
    }
    if depth >= 2 {
        s.insert("rl".to_string(), cfg.rl.seed);
    }
    if depth >= 3 {
        for (i, &e) in cfg.eval.seeds.iter().enumerate() {
            s.insert(format!("eval.{i}"), e);
        }
        s.insert("curve".to_string(), cfg.eval.curve_seed);
        s.insert("frame".to_string(), cfg.eval.frame_seed);
    }
    if matches!(stage, Stage::Probe | Stage::DemoSwap) {
        s.insert("probe".to_string(), cfg.eval.probe_seed);
    }
    s
}

/// Run one stage and return its output directory.
///
/// The stage directory is cleared first so stale files never leak into the
/// manifest. Upstream directories are only read.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage, opts: RunOptions) -> Result<PathBuf> {
    cfg.validate()?;
    let upstream = check_upstream(cfg, stage, opts)?;
    let dir = cfg.stage_dir(stage);
    if dir.exists() {
        fs::remove_dir_all(&dir).at(&dir)?;
    }
    fs::create_dir_all(&dir).at(&dir)?;
    log::info!("stage {stage} -> {}", dir.display());
    match stage {
        Stage::Collect => stages::collect(cfg, &dir)?,
        Stage::TrainRepr => stages::train_repr_stage(cfg, &dir)?,
        Stage::TrainRl => stages::train_rl_stage(cfg, &dir)?,
        Stage::EvalTransfer => stages::eval_transfer(cfg, &dir)?,
        Stage::Curve => stages::curve(cfg, &dir)?,
        Stage::Saliency => stages::saliency(cfg, &dir)?,
        Stage::Probe => stages::probe(cfg, &dir)?,
        Stage::DemoSwap => stages::demo_swap(cfg, &dir)?,
        Stage::Report => {
            let warnings = report::write_report(&cfg.run_dir(), &dir)?;
            for w in warnings {
                log::warn!("report: {w}");
            }
        }
    }
    let manifest = RunManifest {
        stage: stage.as_str().to_string(),
        config_hash: cfg.config_hash(),
        stage_hash: cfg.stage_hash(stage),
        seeds: stage_seeds(cfg, stage),
        upstream,
        outputs: hash_outputs(&dir)?,
        config: cfg.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).at(&path)?;
    Ok(dir)
}
