//! Acceptance suite: eight criteria, one PASS/FAIL line each.
//!
//! Runs with a custom harness so the verdict lines are never captured.
//! `LUSR_ACCEPTANCE_SCALE=full` switches the training-heavy criteria (3 to 7)
//! to the desk-scale budget (5000 images per domain, 50 encoder epochs,
//! 300k policy steps); the default is a reduced budget that fits a single
//! core in well under two hours. `tiny` only exercises the code paths.

use lusr_core::data::{collect_random, load_dataset, random_states, save_dataset, DomainDataset};
use lusr_core::env::{make_domain_set, pixel_classes, render, road_mask, DomainRole, DomainSpec, EnvConfig, PixelClass};
use lusr_core::eval::{adaptation_curve, paired_renders, probe_analysis, saliency_map, transfer_report, SaliencyConfig};
use lusr_core::experiment::{run_stage, ExperimentConfig, RunOptions, Stage};
use lusr_core::image::Image;
use lusr_core::nn::Tensor;
use lusr_core::repr::{
    derangement_within_groups, forward_loss, forward_loss_grad, kl_divergence, reverse_loss, reverse_loss_grad,
    swap_reconstruct, train_repr, ReprConfig, ReprGrads, ReprParams, Variant,
};
use lusr_core::rl::{
    compute_gae, ppo_loss, ppo_loss_grad, squashed_log_prob, train_ppo, PolicyParams, PpoBatch, PpoConfig,
    PpoOutcome,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

struct Scale {
    name: &'static str,
    n_per_domain: usize,
    repr_epochs: usize,
    repr_lr: f64,
    ppo_steps: usize,
    seeds: [u64; 3],
    transfer_episodes: usize,
    curve_episodes: usize,
    probe_states: usize,
}

fn scale() -> Scale {
    match std::env::var("LUSR_ACCEPTANCE_SCALE").as_deref() {
        Ok("full") => Scale {
            name: "full",
            n_per_domain: 5000,
            repr_epochs: 50,
            repr_lr: 1e-4,
            ppo_steps: 300_000,
            seeds: [0, 1, 2],
            transfer_episodes: 50,
            curve_episodes: 20,
            probe_states: 300,
        },
        Ok("tiny") => Scale {
            name: "tiny",
            n_per_domain: 200,
            repr_epochs: 1,
            repr_lr: 1e-3,
            ppo_steps: 4096,
            seeds: [0, 1, 2],
            transfer_episodes: 4,
            curve_episodes: 2,
            probe_states: 200,
        },
        _ => Scale {
            name: "reduced",
            n_per_domain: 2000,
            repr_epochs: 20,
            repr_lr: 1e-3,
            ppo_steps: 100_000,
            seeds: [0, 1, 2],
            transfer_episodes: 50,
            curve_episodes: 20,
            probe_states: 300,
        },
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn run_criterion(label: &str, f: impl FnOnce() -> Verdict) -> bool {
    let t = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    println!(
        "[{}] {label} ({:.1}s): {}",
        if v.pass { "PASS" } else { "FAIL" },
        t.elapsed().as_secs_f64(),
        v.detail
    );
    v.pass
}

fn normal(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor<f64> {
    let len = dims.iter().product();
    Tensor::new(dims, (0..len).map(|_| rng.sample(StandardNormal)).collect())
}

fn mini_ccvae(rng: &mut ChaCha8Rng) -> ReprParams<f64> {
    ReprParams::build(Variant::Ccvae, 2, 1, 8, &[3, 4], rng).unwrap()
}

fn uniform_images(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Tensor<f64> {
    Tensor::new(
        vec![3, n, size, size],
        (0..3 * n * size * size).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
}

// ---------------------------------------------------------------- criterion 1

/// KL(N(m, e^lv) || N(0, 1)) by composite Simpson quadrature.
fn kl_quadrature(m: f64, lv: f64) -> f64 {
    let sd = (0.5 * lv).exp();
    let (a, b, steps) = (m - 12.0 * sd, m + 12.0 * sd, 20_000usize);
    let h = (b - a) / steps as f64;
    let f = |z: f64| {
        let log_q = -0.5 * ((z - m) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let log_p = -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
        log_q.exp() * (log_q - log_p)
    };
    let mut s = f(a) + f(b);
    for i in 1..steps {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn criterion_1() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;

    let mut kl_worst: f64 = 0.0;
    for &(m, lv) in &[(1.0, 0.0), (-0.7, 1.2), (2.0, -2.5), (0.0, 0.0), (0.3, -0.4), (-1.5, 0.6)] {
        let closed = kl_divergence(&Tensor::new(vec![1, 1], vec![m]), &Tensor::new(vec![1, 1], vec![lv]));
        kl_worst = kl_worst.max((closed - kl_quadrature(m, lv)).abs());
    }
    ok &= kl_worst <= 1e-4;
    notes.push(format!("KL vs quadrature max err {kl_worst:.2e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = mini_ccvae(&mut rng);
    let mut rev_max: f64 = 0.0;
    for _ in 0..5 {
        let prior = normal(&mut rng, vec![4, 2]);
        let s = normal(&mut rng, vec![4, 1]);
        rev_max = rev_max.max(reverse_loss(&p, &prior, &s, &s).unwrap().abs());
    }
    ok &= rev_max == 0.0;
    notes.push(format!("reverse(z,z) max {rev_max}"));

    // identical images inside each domain group make the swap a no-op
    let base = uniform_images(&mut rng, 2, 8);
    let hw = 64;
    let groups = [0usize, 0, 0, 1, 1];
    let mut data = vec![0.0; 3 * groups.len() * hw];
    for c in 0..3 {
        for (i, &g) in groups.iter().enumerate() {
            let src = (c * 2 + g) * hw;
            data[(c * groups.len() + i) * hw..][..hw].copy_from_slice(&base.data()[src..src + hw]);
        }
    }
    let images = Tensor::new(vec![3, groups.len(), 8, 8], data);
    let noise = normal(&mut rng, vec![groups.len(), 2]);
    let swap = derangement_within_groups(&groups, &mut rng).unwrap();
    let identity: Vec<usize> = (0..groups.len()).collect();
    let swapped = forward_loss(&p, &images, &noise, &swap, 1.0).unwrap().0;
    let plain = forward_loss(&p, &images, &noise, &identity, 1.0).unwrap().0;
    let fdiff = (swapped - plain).abs();
    ok &= fdiff <= 1e-6;
    notes.push(format!("swap vs no-swap {fdiff:.1e}"));

    let mut gae_worst: f64 = 0.0;
    for trial in 0..20 {
        let n = 5 + trial * 3;
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bootstrap = rng.random_range(-2.0..2.0);
        let gamma = rng.random_range(0.8..1.0);
        let (adv, _) = compute_gae(&rewards, &values, &vec![false; n], bootstrap, gamma, 1.0);
        for t in 0..n {
            let mut g = gamma.powi((n - t) as i32) * bootstrap;
            for (k, r) in rewards.iter().enumerate().skip(t) {
                g += gamma.powi((k - t) as i32) * r;
            }
            gae_worst = gae_worst.max((adv[t] - (g - values[t])).abs());
        }
    }
    ok &= gae_worst <= 1e-6;
    notes.push(format!("GAE(1) vs Monte Carlo {gae_worst:.1e}"));

    // PPO clip branches: (ratio, advantage, expected policy part)
    let mut prng = ChaCha8Rng::seed_from_u64(12);
    let policy = PolicyParams::<f64>::new(&mut prng, 3, 5, -0.2);
    let x = Tensor::new(vec![1, 3], vec![0.3, -0.1, 0.5]);
    let mean = policy.mean(&x).unwrap();
    let raw = [0.4, -0.3];
    let lp = squashed_log_prob(
        raw,
        [mean.data()[0], mean.data()[1]],
        [policy.log_std[0], policy.log_std[1]],
    );
    let mut clip_ok = true;
    for &(ratio, adv, expected, exact) in &[
        (2.0f64, 1.0, -1.2, true),
        (2.0, -1.0, 2.0, false),
        (0.5, 1.0, -0.5, false),
        (0.5, -1.0, 0.8, true),
        (1.0, 0.7, -0.7, false),
    ] {
        let batch = PpoBatch {
            inputs: x.clone(),
            raw: vec![raw],
            old_log_prob: vec![lp - ratio.ln()],
            advantages: vec![adv],
            returns: vec![0.0],
        };
        let got = ppo_loss(&policy, &batch, &PpoConfig::default()).unwrap().policy;
        let good = if exact { got == expected } else { (got - expected).abs() <= 1e-12 };
        if !good {
            notes.push(format!("clip case r={ratio} A={adv}: got {got}, want {expected}"));
        }
        clip_ok &= good;
    }
    ok &= clip_ok;
    notes.push(format!("clip hand cases {}", if clip_ok { "ok" } else { "wrong" }));
    verdict(ok, notes.join("; "))
}

// ---------------------------------------------------------------- criterion 2

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn set_repr_param(p: &mut ReprParams<f64>, slot: usize, idx: usize, v: f64) {
    let n_enc = p.encoder.params().count();
    if slot < n_enc {
        p.encoder.params_mut().nth(slot).unwrap()[idx] = v;
    } else {
        p.decoder.params_mut().nth(slot - n_enc).unwrap()[idx] = v;
    }
}

/// Central differences over every coordinate. A coordinate whose one-sided
/// slopes disagree sits on a ReLU or L1 kink, where the loss has no derivative;
/// those are counted and skipped.
fn central_fd(
    n_groups: usize,
    group_len: &dyn Fn(usize) -> usize,
    analytic: &dyn Fn(usize, usize) -> f64,
    eval_at: &mut dyn FnMut(usize, usize, f64) -> f64,
    eps: f64,
) -> (f64, usize, usize) {
    let (mut worst, mut kinks, mut checked) = (0.0f64, 0, 0);
    for slot in 0..n_groups {
        for idx in 0..group_len(slot) {
            let a = analytic(slot, idx);
            let l0 = eval_at(slot, idx, 0.0);
            let lp = eval_at(slot, idx, eps);
            let lm = eval_at(slot, idx, -eps);
            let (right, left) = ((lp - l0) / eps, (l0 - lm) / eps);
            if rel_err(right, left) > 1e-2 && (right - left).abs() > 1e-6 {
                kinks += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * eps);
            checked += 1;
            if fd.abs() < 1e-7 && a.abs() < 1e-7 {
                continue;
            }
            worst = worst.max(rel_err(fd, a));
        }
    }
    (worst, kinks, checked)
}

fn repr_fd(p: &mut ReprParams<f64>, grads: &ReprGrads<f64>, f: &dyn Fn(&ReprParams<f64>) -> f64) -> (f64, usize, usize) {
    let groups: Vec<Vec<f64>> = grads.groups().iter().map(|g| g.to_vec()).collect();
    central_fd(
        groups.len(),
        &|s| groups[s].len(),
        &|s, i| groups[s][i],
        &mut |s, i, d| {
            let orig = p.param_groups()[s][i];
            set_repr_param(p, s, i, orig + d);
            let l = f(p);
            set_repr_param(p, s, i, orig);
            l
        },
        1e-5,
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut p = mini_ccvae(&mut rng);
    let images = uniform_images(&mut rng, 4, 8);
    let noise = normal(&mut rng, vec![4, 2]);
    let swap = derangement_within_groups(&[0, 0, 1, 1], &mut rng).unwrap();
    let (_, g) = forward_loss_grad(&p, &images, &noise, &swap, 1.0).unwrap();
    let fwd = repr_fd(&mut p, &g, &|q| forward_loss(q, &images, &noise, &swap, 1.0).unwrap().0);

    let prior = normal(&mut rng, vec![3, 2]);
    let s1 = normal(&mut rng, vec![3, 1]);
    let s2 = normal(&mut rng, vec![3, 1]);
    let (_, g, _, _) = reverse_loss_grad(&p, &prior, &s1, &s2).unwrap();
    let rev = repr_fd(&mut p, &g, &|q| reverse_loss(q, &prior, &s1, &s2).unwrap());

    let mut prng = ChaCha8Rng::seed_from_u64(22);
    let mut pol = PolicyParams::<f64>::new(&mut prng, 4, 6, -0.3);
    for v in pol.actor.params_mut().last().unwrap().iter_mut() {
        *v *= 50.0;
    }
    let n = 12;
    let inputs = normal(&mut prng, vec![n, 4]);
    let acts = pol.act(&inputs, &(0..2 * n).map(|_| prng.sample(StandardNormal)).collect::<Vec<f64>>()).unwrap();
    let batch = PpoBatch {
        inputs,
        raw: acts.iter().map(|a| a.raw).collect(),
        // perturbed old log-probs so both clip branches occur
        old_log_prob: acts.iter().map(|a| a.log_prob + prng.random_range(-0.5..0.5)).collect(),
        advantages: (0..n).map(|_| prng.sample(StandardNormal)).collect(),
        returns: (0..n).map(|_| prng.sample(StandardNormal)).collect(),
    };
    let cfg = PpoConfig::default();
    let (_, pg) = ppo_loss_grad(&pol, &batch, &cfg).unwrap();
    let flat: Vec<Vec<f64>> = pg.groups().iter().map(|g| g.to_vec()).collect();
    let ppo = central_fd(
        flat.len(),
        &|s| flat[s].len(),
        &|s, i| flat[s][i],
        &mut |s, i, d| {
            let orig = pol.param_groups()[s][i];
            pol.param_groups_mut()[s][i] = orig + d;
            let l = ppo_loss(&pol, &batch, &cfg).unwrap().total;
            pol.param_groups_mut()[s][i] = orig;
            l
        },
        1e-6,
    );
    let ok = [fwd, rev, ppo].iter().all(|r| r.0 <= 1e-3 && r.1 * 20 <= r.1 + r.2);
    let show = |name: &str, r: (f64, usize, usize)| {
        format!("{name} {:.2e} over {} coords ({} on kinks skipped)", r.0, r.2, r.1)
    };
    verdict(
        ok,
        format!(
            "max relative error (limit 1e-3): {}; {}; {}",
            show("forward", fwd),
            show("reverse", rev),
            show("ppo", ppo)
        ),
    )
}

// ------------------------------------------------------------ shared training

struct Lab {
    env: EnvConfig,
    domains: Vec<DomainSpec>,
    train_domains: Vec<DomainSpec>,
    ccvae: ReprParams<f32>,
    vae: ReprParams<f32>,
    /// One PPO run per seed and encoder.
    lusr_runs: Vec<PpoOutcome>,
    vae_runs: Vec<PpoOutcome>,
    /// Encoder hashes before and after all policy training.
    hash_before: [String; 2],
}

fn repr_config(s: &Scale, variant: Variant) -> ReprConfig {
    ReprConfig {
        variant,
        dim_specific: if variant == Variant::Ccvae { 8 } else { 0 },
        epochs: s.repr_epochs,
        lr: s.repr_lr,
        seed: 0,
        ..ReprConfig::default()
    }
}

fn build_lab(s: &Scale) -> Lab {
    let env = EnvConfig::default();
    let domains = make_domain_set("toyroad-mirror").unwrap();
    let train_domains: Vec<DomainSpec> = domains.iter().filter(|d| d.role != DomainRole::Unseen).cloned().collect();
    let t = Instant::now();
    let datasets: Vec<DomainDataset> = train_domains
        .iter()
        .enumerate()
        .map(|(i, d)| collect_random(d, s.n_per_domain, 100 + i as u64, &env))
        .collect();
    let ccvae = train_repr(&datasets, &repr_config(s, Variant::Ccvae)).unwrap().params;
    println!("  trained ccvae encoder in {:.0}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let vae = train_repr(&datasets, &repr_config(s, Variant::Vae)).unwrap().params;
    println!("  trained vae encoder in {:.0}s", t.elapsed().as_secs_f64());
    drop(datasets);
    let hash_before = [ccvae.hash(), vae.hash()];
    let source = domains.iter().find(|d| d.role == DomainRole::Source).unwrap().clone();
    let mut lusr_runs = Vec::new();
    let mut vae_runs = Vec::new();
    for &seed in &s.seeds {
        let cfg = PpoConfig {
            total_steps: s.ppo_steps,
            seed,
            ..PpoConfig::default()
        };
        let t = Instant::now();
        lusr_runs.push(train_ppo(&ccvae, &source, &env, &cfg).unwrap());
        vae_runs.push(train_ppo(&vae, &source, &env, &cfg).unwrap());
        println!("  trained policies for seed {seed} in {:.0}s", t.elapsed().as_secs_f64());
    }
    Lab {
        env,
        domains,
        train_domains,
        ccvae,
        vae,
        lusr_runs,
        vae_runs,
        hash_before,
    }
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3(lab: &Lab, s: &Scale) -> Verdict {
    let paired = paired_renders(&lab.train_domains, s.probe_states, 4242, &lab.env);
    let (r, _) = probe_analysis(&lab.ccvae, &paired, 4242).unwrap();
    let spec = r.accuracy_specific.unwrap_or(0.0);
    let ok = spec >= 0.90 && r.accuracy_general <= r.chance + 0.15 && r.distance_ratio < 0.5;
    verdict(
        ok,
        format!(
            "{} domains x {} states: specific-code accuracy {spec:.3} (>= 0.90), general-code accuracy {:.3} \
             (<= {:.3}), paired/within distance {:.3}/{:.3} = {:.3} (< 0.5)",
            r.domains.len(),
            r.n_states,
            r.accuracy_general,
            r.chance + 0.15,
            r.paired_distance,
            r.within_distance,
            r.distance_ratio
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn dist2(a: [u8; 3], b: [u8; 3]) -> f64 {
    (0..3).map(|i| (a[i] as f64 - b[i] as f64).powi(2)).sum()
}

fn mean_color(img: &Image, mask: &[bool]) -> Option<[u8; 3]> {
    let mut acc = [0.0; 3];
    let mut n = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let c = img.get(i / img.width(), i % img.width());
            for k in 0..3 {
                acc[k] += c[k] as f64;
            }
            n += 1.0;
        }
    }
    (n > 0.0).then(|| acc.map(|v| (v / n).round() as u8))
}

fn blob_disk(d: &DomainSpec, size: usize) -> Vec<bool> {
    (0..size * size)
        .map(|i| d.blob.as_ref().is_some_and(|b| b.covers(i / size, i % size)))
        .collect()
}

/// Nearest colour among `palette` for every pixel.
fn nearest(img: &Image, palette: &[(PixelClass, [u8; 3])]) -> Vec<PixelClass> {
    (0..img.width() * img.height())
        .map(|i| {
            let c = img.get(i / img.width(), i % img.width());
            palette
                .iter()
                .min_by(|x, y| dist2(c, x.1).total_cmp(&dist2(c, y.1)))
                .unwrap()
                .0
        })
        .collect()
}

fn palette(d: &DomainSpec) -> Vec<(PixelClass, [u8; 3])> {
    let mut p = vec![
        (PixelClass::Background, d.background_rgb),
        (PixelClass::Road, d.road_rgb),
        (PixelClass::Car, d.car_rgb),
    ];
    if let Some(b) = &d.blob {
        p.push((PixelClass::Blob, b.rgb));
    }
    p
}

fn criterion_4(lab: &Lab) -> Verdict {
    let env = &lab.env;
    let size = env.image_size;
    let doms = &lab.train_domains;
    let states = random_states(2000, 77, env);
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let cols = 2 * doms.len() * (doms.len() - 1);
    let (mut row_a, mut row_b, mut pairs) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..cols {
        let a = j % doms.len();
        let b = (a + 1 + (j / doms.len()) % (doms.len() - 1)) % doms.len();
        let (sa, sb) = (states[rng.random_range(0..states.len())], states[rng.random_range(0..states.len())]);
        row_a.push(render(&sa, &doms[a], env));
        row_b.push(render(&sb, &doms[b], env));
        pairs.push((a, b));
    }
    let grid = swap_reconstruct(&lab.ccvae, &row_a, &row_b).unwrap();
    let (mut palette_ok, mut blob_ok, mut iou_ok) = (0, 0, 0);
    let mut ious = Vec::new();
    for (j, &(a, b)) in pairs.iter().enumerate() {
        let (da, db) = (&doms[a], &doms[b]);
        let out = &grid.swapped[j];
        let classes_b = pixel_classes(&row_b[j], db);
        let (disk_a, disk_b) = (blob_disk(da, size), blob_disk(db, size));
        let free: Vec<bool> = (0..size * size).map(|i| !disk_a[i] && !disk_b[i]).collect();

        // palette: background and road regions of row_b's geometry, coloured like row_a
        let region = |cls: PixelClass| -> Vec<bool> {
            (0..size * size).map(|i| free[i] && classes_b[i] == Some(cls)).collect()
        };
        let mut pal = true;
        for (cls, ca, cb) in [
            (PixelClass::Background, da.background_rgb, db.background_rgb),
            (PixelClass::Road, da.road_rgb, db.road_rgb),
        ] {
            if ca == cb {
                continue;
            }
            match mean_color(out, &region(cls)) {
                Some(m) => pal &= dist2(m, ca) < dist2(m, cb),
                None => pal = false,
            }
        }
        palette_ok += pal as usize;

        // blob present iff row_a's domain has one
        let labels = nearest(out, &palette(da));
        let blob = match &da.blob {
            Some(_) => {
                let inside = disk_a.iter().filter(|&&m| m).count();
                let hits = (0..size * size).filter(|&i| disk_a[i] && labels[i] == PixelClass::Blob).count();
                hits * 2 >= inside
            }
            None => match &db.blob {
                Some(bb) => {
                    let mut pal_b = palette(da);
                    pal_b.push((PixelClass::Blob, bb.rgb));
                    let lb = nearest(out, &pal_b);
                    let inside = disk_b.iter().filter(|&&m| m).count();
                    let hits = (0..size * size).filter(|&i| disk_b[i] && lb[i] == PixelClass::Blob).count();
                    hits * 5 <= inside
                }
                None => true,
            },
        };
        blob_ok += blob as usize;

        // road geometry from row_b
        let road = |c: Option<PixelClass>| matches!(c, Some(PixelClass::Road) | Some(PixelClass::Car));
        let (mut inter, mut union) = (0usize, 0usize);
        for i in 0..size * size {
            if !free[i] {
                continue;
            }
            let (x, y) = (road(Some(labels[i])), road(classes_b[i]));
            inter += (x && y) as usize;
            union += (x || y) as usize;
        }
        let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        ious.push(iou);
        iou_ok += (iou >= 0.7) as usize;
    }
    let min_iou = ious.iter().cloned().fold(f64::INFINITY, f64::min);
    let ok = palette_ok == cols && blob_ok == cols && iou_ok == cols;
    verdict(
        ok,
        format!(
            "{cols} swap pairs: palette follows row_a in {palette_ok}, blob presence correct in {blob_ok}, \
             road IoU >= 0.7 in {iou_ok} (min {min_iou:.3})"
        ),
    )
}

// ------------------------------------------------------------- criteria 5, 6

fn source_index(domains: &[DomainSpec]) -> usize {
    domains.iter().position(|d| d.role == DomainRole::Source).unwrap()
}

/// Per seed: the source-domain mean score and the ratio for every domain.
fn transfer_ratios(lab: &Lab, s: &Scale, encoder: &ReprParams<f32>, runs: &[PpoOutcome]) -> Vec<(f64, Vec<f64>)> {
    runs.iter()
        .zip(&s.seeds)
        .map(|(run, &seed)| {
            let rep =
                transfer_report(&run.policy, encoder, &lab.domains, &lab.env, s.transfer_episodes, &[1000 + seed], "final")
                    .unwrap();
            let source = rep.rows.iter().find(|r| r.role == DomainRole::Source).unwrap().mean;
            (source, rep.rows.iter().map(|r| r.ratio).collect())
        })
        .collect()
}

fn seed_mean(per_seed: &[(f64, Vec<f64>)], domain: usize) -> f64 {
    per_seed.iter().map(|r| r.1[domain]).sum::<f64>() / per_seed.len() as f64
}

fn criterion_5(lab: &Lab, s: &Scale) -> Verdict {
    let lusr = transfer_ratios(lab, s, &lab.ccvae, &lab.lusr_runs);
    let vae = transfer_ratios(lab, s, &lab.vae, &lab.vae_runs);
    let name = |i: usize| lab.domains[i].name.as_str();
    let seen: Vec<usize> = (0..lab.domains.len()).filter(|&i| lab.domains[i].role == DomainRole::Seen).collect();
    let palette_only: Vec<usize> = seen.iter().copied().filter(|&i| lab.domains[i].blob.is_none()).collect();
    let unseen_palette = (0..lab.domains.len())
        .find(|&i| lab.domains[i].role == DomainRole::Unseen && lab.domains[i].blob.is_none())
        .unwrap();

    let a = palette_only.iter().map(|&i| seed_mean(&lusr, i)).sum::<f64>() / palette_only.len() as f64;
    let b_pairs: Vec<(f64, f64)> = seen.iter().map(|&i| (seed_mean(&lusr, i), seed_mean(&vae, i))).collect();
    let b = b_pairs.iter().all(|(l, v)| l > v);
    let c = seed_mean(&lusr, unseen_palette);
    let table: Vec<String> = (0..lab.domains.len())
        .filter(|&i| i != source_index(&lab.domains))
        .map(|i| format!("{} {:.2}/{:.2}", name(i), seed_mean(&lusr, i), seed_mean(&vae, i)))
        .collect();
    let sources: Vec<String> = lusr.iter().zip(&vae).map(|(l, v)| format!("{:.1}/{:.1}", l.0, v.0)).collect();
    // a ratio is only meaningful against a policy that scores above zero at home
    let learned = lusr.iter().chain(&vae).all(|r| r.0 > 0.0);
    let ok = learned && a >= 0.8 && b && c >= 0.7;
    verdict(
        ok,
        format!(
            "(a) palette-only seen ratio {a:.3} (>= 0.8) {}; (b) LUSR > VAE on every seen target {}; \
             (c) unseen palette ratio {c:.3} (>= 0.7) {}; all source scores positive {learned}; \
             ratios LUSR/VAE: {}; source scores LUSR/VAE per seed: {}",
            a >= 0.8,
            b,
            c >= 0.7,
            table.join(", "),
            sources.join(", ")
        ),
    )
}

/// Mean target ratio at the 50% and final checkpoints of one run, and the
/// lower of the two source scores.
fn mid_final_ratio(lab: &Lab, s: &Scale, encoder: &ReprParams<f32>, run: &PpoOutcome, seed: u64) -> (f64, f64, f64) {
    let last = run.checkpoints.last().unwrap();
    let half = last.step / 2;
    let mid = run
        .checkpoints
        .iter()
        .min_by_key(|c| c.step.abs_diff(half))
        .unwrap();
    let points = adaptation_curve(
        &[(mid.step, &mid.policy), (last.step, &last.policy)],
        encoder,
        &lab.domains,
        &lab.env,
        s.curve_episodes,
        2000 + seed,
    )
    .unwrap();
    let mean_at = |step: usize| {
        let v: Vec<f64> = points
            .iter()
            .filter(|p| p.step == step && p.role != DomainRole::Source)
            .map(|p| p.ratio)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let source_min = points
        .iter()
        .filter(|p| p.role == DomainRole::Source)
        .map(|p| p.mean)
        .fold(f64::INFINITY, f64::min);
    (mean_at(mid.step), mean_at(last.step), source_min)
}

fn criterion_6(lab: &Lab, s: &Scale) -> Verdict {
    let mut lusr_mid = 0.0;
    let mut lusr_final = 0.0;
    let mut vae_worse = 0;
    let mut notes = Vec::new();
    let mut learned = true;
    for (i, &seed) in s.seeds.iter().enumerate() {
        let (lm, lf, ls) = mid_final_ratio(lab, s, &lab.ccvae, &lab.lusr_runs[i], seed);
        let (vm, vf, vs) = mid_final_ratio(lab, s, &lab.vae, &lab.vae_runs[i], seed);
        learned &= ls > 0.0 && vs > 0.0;
        lusr_mid += lm / s.seeds.len() as f64;
        lusr_final += lf / s.seeds.len() as f64;
        if vm - vf > lm - lf {
            vae_worse += 1;
        }
        notes.push(format!(
            "seed {seed}: LUSR {lm:.2}->{lf:.2}, VAE {vm:.2}->{vf:.2}, lowest source score {:.1}",
            ls.min(vs)
        ));
    }
    let stable = lusr_final >= lusr_mid - 0.15;
    let ok = learned && stable && vae_worse >= 2;
    verdict(
        ok,
        format!(
            "LUSR mean target ratio {lusr_mid:.3} -> {lusr_final:.3} (drop <= 0.15: {stable}); VAE drops more in \
             {vae_worse}/3 seeds; all source scores positive {learned}; {}",
            notes.join("; ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7(lab: &Lab) -> Verdict {
    let env = &lab.env;
    let source = &lab.domains[source_index(&lab.domains)];
    let states = random_states(50, 31, env);

    let mut constant = lab.lusr_runs[0].policy.clone();
    for p in constant.actor.params_mut() {
        p.iter_mut().for_each(|v| *v = 0.0);
    }
    let obs = render(&states[10], source, env);
    let zero = saliency_map(&constant, &lab.ccvae, &obs, 0.4, SaliencyConfig::default()).unwrap();
    let zero_ok = zero.values.iter().all(|&v| v == 0.0);

    let policy = &lab.lusr_runs[0].policy;
    let mut dominant = 0;
    let mut mass = 0.0;
    let mut area = 0.0;
    for st in &states {
        let obs = render(st, source, env);
        let map = saliency_map(policy, &lab.ccvae, &obs, st.speed / env.v_max, SaliencyConfig::default()).unwrap();
        let mask = road_mask(st, env);
        let m = map.mass_fraction(&mask);
        let a = mask.iter().filter(|&&x| x).count() as f64 / mask.len() as f64;
        dominant += (m > a) as usize;
        mass += m / states.len() as f64;
        area += a / states.len() as f64;
    }
    let frac = dominant as f64 / states.len() as f64;
    verdict(
        zero_ok && frac >= 0.8,
        format!(
            "constant policy saliency all zero: {zero_ok}; road mass > road area on {dominant}/{} frames ({frac:.2}, \
             need 0.80); mean mass {mass:.3} vs mean area {area:.3}",
            states.len()
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&workspace_root().join("configs/smoke.toml")).unwrap();
    cfg.run_name = "determinism".into();
    cfg.output_dir = out.to_path_buf();
    cfg.data.n_per_domain = 60;
    cfg.repr.epochs = 1;
    cfg.repr.channels = vec![8, 8, 16, 16];
    cfg.rl.total_steps = 2048;
    cfg.eval.episodes = 3;
    cfg
}

fn criterion_8(lab: Option<&Lab>) -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    let tmp = tempfile::tempdir().unwrap();

    // bit-identical metric CSVs from two runs of one config
    let stages = [Stage::Collect, Stage::TrainRepr, Stage::TrainRl, Stage::EvalTransfer];
    let mut csvs = Vec::new();
    for k in 0..2 {
        let cfg = tiny_config(&tmp.path().join(format!("det{k}")));
        for st in stages {
            run_stage(&cfg, st, RunOptions::default()).unwrap();
        }
        let run = cfg.run_dir();
        csvs.push(
            ["train-repr/losses.csv", "train-rl/curve.csv", "eval-transfer/transfer.csv"]
                .map(|f| std::fs::read(run.join(f)).unwrap()),
        );
    }
    let same = csvs[0] == csvs[1];
    ok &= same;
    notes.push(format!("rerun metric CSVs identical: {same}"));

    // dataset round trip
    let env = EnvConfig::default();
    let d = &make_domain_set("toyroad-mirror").unwrap()[4];
    let ds = collect_random(d, 50, 5, &env);
    let dir = tmp.path().join("ds");
    save_dataset(&ds, &dir).unwrap();
    let rt = load_dataset(&dir).unwrap() == ds;
    ok &= rt;
    notes.push(format!("dataset round trip exact: {rt}"));

    // smoke pipeline under the time limit, encoder untouched by policy training
    let mut cfg = ExperimentConfig::load(&workspace_root().join("configs/smoke.toml")).unwrap();
    cfg.output_dir = tmp.path().join("smoke");
    let t = Instant::now();
    for st in [Stage::Collect, Stage::TrainRepr] {
        run_stage(&cfg, st, RunOptions::default()).unwrap();
    }
    let enc_dir = cfg.stage_dir(Stage::TrainRepr);
    let blob_hash = |p: &Path| lusr_core::checkpoint::sha256_hex(&std::fs::read(p.join("encoder.bin")).unwrap());
    let before = blob_hash(&enc_dir);
    for st in [Stage::TrainRl, Stage::EvalTransfer] {
        run_stage(&cfg, st, RunOptions::default()).unwrap();
    }
    let secs = t.elapsed().as_secs_f64();
    let frozen_file = blob_hash(&enc_dir) == before;
    let frozen_mem = lab.map_or(true, |l| [l.ccvae.hash(), l.vae.hash()] == l.hash_before);
    ok &= frozen_file && frozen_mem && secs <= 600.0;
    notes.push(format!(
        "encoder hash unchanged by policy training: {}; smoke pipeline {secs:.0}s (<= 600)",
        frozen_file && frozen_mem
    ));
    verdict(ok, notes.join("; "))
}

fn main() {
    // cargo passes harness flags such as --list; this suite only runs in full
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let s = scale();
    // LUSR_ACCEPTANCE_ONLY=1,2,8 runs a subset while iterating
    let only: Option<Vec<String>> = std::env::var("LUSR_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|x| x.trim().to_string()).collect());
    let wanted = |n: &str| only.as_ref().map_or(true, |o| o.iter().any(|x| x == n));
    println!("acceptance suite, {} scale", s.name);
    let mut results = Vec::new();
    if wanted("1") {
        results.push(run_criterion("1 loss oracles", criterion_1));
    }
    if wanted("2") {
        results.push(run_criterion("2 gradient checks", criterion_2));
    }
    let needs_lab = ["3", "4", "5", "6", "7"].iter().any(|n| wanted(n));
    let lab = if needs_lab {
        let t = Instant::now();
        let lab = catch_unwind(AssertUnwindSafe(|| build_lab(&s))).ok();
        println!("  shared training finished in {:.0}s", t.elapsed().as_secs_f64());
        lab
    } else {
        None
    };
    match &lab {
        _ if !needs_lab => {}
        Some(lab) => {
            let lab_criteria: [(&str, &str, Box<dyn Fn() -> Verdict + '_>); 5] = [
                ("3", "3 disentanglement probes", Box::new(|| criterion_3(lab, &s))),
                ("4", "4 swap reconstruction", Box::new(|| criterion_4(lab))),
                ("5", "5 headline transfer", Box::new(|| criterion_5(lab, &s))),
                ("6", "6 adaptation during training", Box::new(|| criterion_6(lab, &s))),
                ("7", "7 saliency on the road", Box::new(|| criterion_7(lab))),
            ];
            for (n, label, f) in lab_criteria {
                if wanted(n) {
                    results.push(run_criterion(label, f));
                }
            }
        }
        None => {
            for label in ["3", "4", "5", "6", "7"].into_iter().filter(|n| wanted(n)) {
                results.push(run_criterion(label, || verdict(false, "shared training failed")));
            }
        }
    }
    if wanted("8") {
        results.push(run_criterion("8 determinism and plumbing", || criterion_8(lab.as_ref())));
    }
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
