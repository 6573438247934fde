//! Linear domain probes and paired-distance statistics on encoder outputs.

use crate::data::random_states;
use crate::env::{render, DomainSpec, EnvConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Adam, AdamConfig};
use crate::repr::ReprParams;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MIN_PAIRED_STATES: usize = 200;

/// One domain's renders of a shared state sequence.
#[derive(Clone, Debug)]
pub struct PairedDomain {
    pub name: String,
    pub images: Vec<Image>,
}

/// Render the same random-policy state log under every domain.
pub fn paired_renders(domains: &[DomainSpec], n_states: usize, seed: u64, config: &EnvConfig) -> Vec<PairedDomain> {
    let states = random_states(n_states, seed, config);
    domains
        .iter()
        .map(|d| PairedDomain {
            name: d.name.clone(),
            images: states.iter().map(|s| render(s, d, config)).collect(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub domains: Vec<String>,
    pub n_states: usize,
    /// Held-out accuracy of a domain classifier on the specific code
    /// (absent for single-code encoders).
    pub accuracy_specific: Option<f64>,
    pub accuracy_general: f64,
    pub chance: f64,
    /// Mean distance between general means of one state under two domains.
    pub paired_distance: f64,
    /// Mean distance between general means of two states in one domain.
    pub within_distance: f64,
    pub distance_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub domain: String,
    pub state_index: usize,
    pub kind: &'static str,
    pub values: Vec<f32>,
}

/// Multinomial logistic regression trained by full-batch Adam on
/// standardised features; returns accuracy on the test rows.
pub fn logistic_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    classes: usize,
) -> f64 {
    let d = train_x.first().map_or(0, |r| r.len());
    if test_x.is_empty() {
        return 0.0;
    }
    let n = train_x.len() as f64;
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for r in train_x {
        for k in 0..d {
            mean[k] += r[k] / n;
        }
    }
    for r in train_x {
        for k in 0..d {
            sd[k] += (r[k] - mean[k]).powi(2) / n;
        }
    }
    let sd: Vec<f64> = sd.iter().map(|v| v.sqrt().max(1e-8)).collect();
    let standardize = |r: &Vec<f64>| -> Vec<f64> { (0..d).map(|k| (r[k] - mean[k]) / sd[k]).collect() };
    let xs: Vec<Vec<f64>> = train_x.iter().map(standardize).collect();
    let ts: Vec<Vec<f64>> = test_x.iter().map(standardize).collect();

    // weights [classes, d + 1], bias last
    let width = d + 1;
    let mut w = vec![0.0f64; classes * width];
    let mut adam = Adam::new(AdamConfig::with_lr(0.05), &[w.len()]);
    let l2 = 1e-4;
    let logits = |w: &[f64], x: &[f64]| -> Vec<f64> {
        (0..classes)
            .map(|c| {
                let row = &w[c * width..(c + 1) * width];
                row[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[d]
            })
            .collect()
    };
    for _ in 0..1500 {
        let mut g = vec![0.0; w.len()];
        for (x, &y) in xs.iter().zip(train_y) {
            let z = logits(&w, x);
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..classes {
                let p = e[c] / s - if c == y { 1.0 } else { 0.0 };
                for k in 0..d {
                    g[c * width + k] += p * x[k] / n;
                }
                g[c * width + d] += p / n;
            }
        }
        for (gi, wi) in g.iter_mut().zip(&w) {
            *gi += l2 * wi;
        }
        let mut slot = vec![std::mem::take(&mut w)];
        adam.step(slot.iter_mut().collect(), &[&g]);
        w = slot.pop().unwrap();
    }
    let correct = ts
        .iter()
        .zip(test_y)
        .filter(|(x, &y)| {
            let z = logits(&w, x);
            let best = (0..classes).max_by(|&a, &b| z[a].total_cmp(&z[b])).unwrap();
            best == y
        })
        .count();
    correct as f64 / ts.len() as f64
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}

/// Domain probes and paired distances over renders of one state sequence.
///
/// States are split in half by a seeded shuffle; probes train on every
/// domain's renders of the first half and are scored on the second.
pub fn probe_analysis(
    encoder: &ReprParams<f32>,
    paired: &[PairedDomain],
    seed: u64,
) -> Result<(ProbeReport, Vec<EmbeddingRow>)> {
    if paired.len() < 2 {
        return Err(Error::Precondition("probe analysis needs at least two domains".into()));
    }
    let n = paired[0].images.len();
    if paired.iter().any(|p| p.images.len() != n) {
        return Err(Error::Precondition("probe inputs are not paired: domain sizes differ".into()));
    }
    if n < MIN_PAIRED_STATES {
        return Err(Error::Precondition(format!(
            "probe analysis needs at least {MIN_PAIRED_STATES} paired states, got {n}"
        )));
    }
    let (dg, ds) = (encoder.dim_general, encoder.dim_specific);
    let mut general: Vec<Vec<f32>> = Vec::with_capacity(paired.len());
    let mut specific: Vec<Vec<f32>> = Vec::with_capacity(paired.len());
    for p in paired {
        let mut g = Vec::with_capacity(n * dg);
        let mut s = Vec::with_capacity(n * ds);
        for chunk in p.images.chunks(64) {
            let e = encoder.encode(chunk)?;
            g.extend(e.mu.into_data());
            s.extend(e.specific.into_data());
        }
        general.push(g);
        specific.push(s);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, test_idx) = order.split_at(n / 2);
    let classes = paired.len();
    let probe = |codes: &[Vec<f32>], w: usize| -> f64 {
        let gather = |idx: &[usize]| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (d, c) in codes.iter().enumerate() {
                for &i in idx {
                    x.push(c[i * w..(i + 1) * w].iter().map(|&v| v as f64).collect());
                    y.push(d);
                }
            }
            (x, y)
        };
        let (tx, ty) = gather(train_idx);
        let (vx, vy) = gather(test_idx);
        logistic_probe(&tx, &ty, &vx, &vy, classes)
    };
    let accuracy_general = probe(&general, dg);
    let accuracy_specific = (ds > 0).then(|| probe(&specific, ds));

    fn row(c: &[f32], i: usize, dg: usize) -> &[f32] {
        &c[i * dg..(i + 1) * dg]
    }
    let (mut paired_sum, mut paired_n) = (0.0, 0usize);
    for i in 0..n {
        for a in 0..classes {
            for b in a + 1..classes {
                paired_sum += dist(row(&general[a], i, dg), row(&general[b], i, dg));
                paired_n += 1;
            }
        }
    }
    let (mut within_sum, mut within_n) = (0.0, 0usize);
    for c in &general {
        for i in 0..n {
            for j in i + 1..n {
                within_sum += dist(row(c, i, dg), row(c, j, dg));
                within_n += 1;
            }
        }
    }
    let paired_distance = paired_sum / paired_n as f64;
    let within_distance = within_sum / within_n as f64;

    let mut rows = Vec::with_capacity(2 * classes * n);
    for (d, p) in paired.iter().enumerate() {
        for i in 0..n {
            rows.push(EmbeddingRow {
                domain: p.name.clone(),
                state_index: i,
                kind: "general",
                values: general[d][i * dg..(i + 1) * dg].to_vec(),
            });
            if ds > 0 {
                rows.push(EmbeddingRow {
                    domain: p.name.clone(),
                    state_index: i,
                    kind: "specific",
                    values: specific[d][i * ds..(i + 1) * ds].to_vec(),
                });
            }
        }
    }
    let report = ProbeReport {
        domains: paired.iter().map(|p| p.name.clone()).collect(),
        n_states: n,
        accuracy_specific,
        accuracy_general,
        chance: 1.0 / classes as f64,
        paired_distance,
        within_distance,
        distance_ratio: paired_distance / within_distance,
    };
    Ok((report, rows))
}

/// CSV `domain,state_index,embedding_kind,v0..vK`; shorter rows leave the
/// trailing value cells empty.
pub fn write_embeddings_csv(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let width = rows.iter().map(|r| r.values.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    let mut header = vec!["domain".to_string(), "state_index".into(), "embedding_kind".into()];
    header.extend((0..width).map(|k| format!("v{k}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.domain.clone(), r.state_index.to_string(), r.kind.to_string()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        rec.resize(3 + width, String::new());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}
