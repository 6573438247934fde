//! Random-policy observation datasets, one directory per domain.
//!
//! Layout: `manifest.json` plus `000000.png`, `000001.png`, ...

use crate::env::{self, CarState, DomainSpec, EnvConfig, Track};
use crate::error::{Error, IoContext, Result};
use crate::image::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const COLLECTION_POLICY: &str = "uniform-random(steer~U[-1,1], throttle~U[0,1])";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub domain_name: String,
    pub count: usize,
    pub image_size: usize,
    pub seed: u64,
    pub format_version: u32,
    pub collection_policy: String,
    pub domain: DomainSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain: DomainSpec,
    pub images: Vec<Image>,
    pub manifest: DatasetManifest,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// States visited by the uniform random controller, episode after episode,
/// until `n` states are logged. Each episode uses a fresh track seed drawn
/// from the collection PRNG; terminal states are included.
pub fn random_states(n: usize, seed: u64, config: &EnvConfig) -> Vec<CarState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(n);
    while states.len() < n {
        let track_seed: u64 = rng.random();
        let track = Track::new(track_seed, config.track_seed_components);
        let mut state = env::reset(track_seed, config);
        states.push(state);
        while states.len() < n {
            let action = env::random_action(&mut rng);
            let result = env::step_on(&track, &state, action, config)
                .expect("episode loop never steps a terminal state");
            states.push(result.next_state);
            if result.done {
                break;
            }
            state = result.next_state;
        }
    }
    states
}

/// Collect `n` random-policy observations rendered under `domain`.
pub fn collect_random(domain: &DomainSpec, n: usize, seed: u64, config: &EnvConfig) -> DomainDataset {
    let images = random_states(n, seed, config)
        .iter()
        .map(|s| env::render(s, domain, config))
        .collect();
    DomainDataset {
        domain: domain.clone(),
        images,
        manifest: DatasetManifest {
            domain_name: domain.name.clone(),
            count: n,
            image_size: config.image_size,
            seed,
            format_version: DATASET_FORMAT_VERSION,
            collection_policy: COLLECTION_POLICY.to_string(),
            domain: domain.clone(),
        },
    }
}

fn image_name(i: usize) -> String {
    format!("{i:06}.png")
}

pub fn save_dataset(ds: &DomainDataset, dir: &Path) -> Result<()> {
    if ds.manifest.count != ds.images.len() {
        return Err(Error::Precondition(format!(
            "manifest count {} does not match {} images",
            ds.manifest.count,
            ds.images.len()
        )));
    }
    fs::create_dir_all(dir).at(dir)?;
    for (i, img) in ds.images.iter().enumerate() {
        img.save_png(&dir.join(image_name(i)))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&ds.manifest)?).at(&path)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<DomainDataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    // check the version before the full schema so newer layouts get a clear error
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Manifest {
            path: path.clone(),
            reason: "missing format_version".into(),
        })?;
    if version != DATASET_FORMAT_VERSION as u64 {
        return Err(Error::FormatVersion {
            path,
            found: version as u32,
            supported: DATASET_FORMAT_VERSION,
        });
    }
    let manifest: DatasetManifest = serde_json::from_value(raw).map_err(|e| Error::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let found = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name();
            let name = name.to_string_lossy();
            name.len() == 10 && name.ends_with(".png") && name[..6].bytes().all(|b| b.is_ascii_digit())
        })
        .count();
    if found != manifest.count {
        return Err(Error::CountMismatch {
            path: dir.to_path_buf(),
            expected: manifest.count,
            found,
        });
    }
    let mut images = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let p = dir.join(image_name(i));
        if !p.exists() {
            return Err(Error::CountMismatch {
                path: dir.to_path_buf(),
                expected: manifest.count,
                found: i,
            });
        }
        let img = Image::load_png(&p)?;
        if img.width() != manifest.image_size || img.height() != manifest.image_size {
            return Err(Error::Shape(format!(
                "{}: {}x{} image in a dataset of size {}",
                p.display(),
                img.width(),
                img.height(),
                manifest.image_size
            )));
        }
        images.push(img);
    }
    Ok(DomainDataset {
        domain: manifest.domain.clone(),
        images,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::make_domain_set;

    fn small() -> (Vec<DomainSpec>, EnvConfig) {
        (make_domain_set("toyroad-mirror").unwrap(), EnvConfig::default())
    }

    #[test]
    fn empty_collection() {
        let (set, cfg) = small();
        let ds = collect_random(&set[0], 0, 1, &cfg);
        assert!(ds.is_empty());
        assert_eq!(ds.manifest.count, 0);
    }

    #[test]
    fn collection_is_seeded() {
        let (set, cfg) = small();
        let a = collect_random(&set[1], 50, 9, &cfg);
        let b = collect_random(&set[1], 50, 9, &cfg);
        assert_eq!(a, b);
        let c = collect_random(&set[1], 50, 10, &cfg);
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn count_and_shape() {
        let (set, cfg) = small();
        let ds = collect_random(&set[0], 1000, 3, &cfg);
        assert_eq!(ds.len(), 1000);
        let mut checked = 0;
        for img in &ds.images {
            assert_eq!((img.width(), img.height(), img.raw().len()), (64, 64, 64 * 64 * 3));
            checked += 1;
        }
        assert_eq!(checked, 1000);
    }

    #[test]
    fn visited_states_do_not_depend_on_domain() {
        let (set, cfg) = small();
        let states = random_states(300, 4, &cfg);
        // rendering the shared state log under each domain reproduces collection
        for d in &set[..2] {
            let ds = collect_random(d, 300, 4, &cfg);
            let rendered: Vec<_> = states.iter().map(|s| env::render(s, d, &cfg)).collect();
            assert_eq!(ds.images, rendered);
        }
        // several episodes, each starting at rest
        assert!(states.iter().filter(|s| s.step_count == 0).count() > 3);
    }

    #[test]
    fn save_load_roundtrip() {
        let (set, cfg) = small();
        let ds = collect_random(&set[4], 25, 2, &cfg);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert!(dir.path().join("000024.png").exists());
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn missing_file_is_count_mismatch() {
        let (set, cfg) = small();
        let ds = collect_random(&set[0], 10, 2, &cfg);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join("000009.png")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::CountMismatch { expected, found, .. }) => assert_eq!((expected, found), (10, 9)),
            other => panic!("expected count mismatch, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_and_missing_manifest() {
        let (set, cfg) = small();
        let ds = collect_random(&set[0], 3, 2, &cfg);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        fs::write(&p, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::FormatVersion { found: 99, .. })));
        fs::write(&p, "{ not json").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Manifest { .. })));
        fs::remove_file(&p).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Manifest { .. })));
    }
}
