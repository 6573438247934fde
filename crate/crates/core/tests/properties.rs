use lusr_core::data::{collect_random, load_dataset, save_dataset};
use lusr_core::env::{
    make_domain_set, pixel_classes, render, reset, road_mask, step, Action, CarState, DomainRole, EnvConfig,
};
use lusr_core::eval::{transfer_report, SaliencyConfig};
use lusr_core::nn::Tensor;
use lusr_core::repr::{kl_divergence, reverse_loss, ReprConfig, ReprParams, Variant};
use lusr_core::rl::{compute_gae, ppo_loss, PolicyParams, PpoBatch, PpoConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn drive(seed: u64, actions: &[(f64, f64)], cfg: &EnvConfig) -> Vec<(CarState, f64, bool)> {
    let mut s = reset(seed, cfg);
    let mut out = Vec::new();
    for &(st, th) in actions {
        let r = step(&s, Action::new(st, th), cfg).unwrap();
        out.push((r.next_state, r.reward, r.done));
        if r.done {
            break;
        }
        s = r.next_state;
    }
    out
}

fn actions() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.5f64..1.5, -0.5f64..1.5), 1..120)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rewards_and_speed_stay_in_bounds(seed in any::<u64>(), acts in actions()) {
        let cfg = EnvConfig::default();
        for (s, r, _) in drive(seed, &acts, &cfg) {
            prop_assert!(s.speed >= 0.0 && s.speed <= cfg.v_max);
            prop_assert!(s.step_count <= cfg.max_steps);
            prop_assert!(r >= -cfg.step_penalty - cfg.offroad_penalty - 1e-12);
            prop_assert!(r <= cfg.v_max * cfg.dt - cfg.step_penalty + 1e-12);
        }
    }

    #[test]
    fn trajectories_and_renders_are_deterministic(seed in any::<u64>(), acts in actions()) {
        let cfg = EnvConfig::default();
        let a = drive(seed, &acts, &cfg);
        let b = drive(seed, &acts, &cfg);
        prop_assert_eq!(&a, &b);
        let domains = make_domain_set("toyroad-mirror").unwrap();
        let last = a.last().unwrap().0;
        for d in &domains {
            prop_assert_eq!(render(&last, d, &cfg), render(&last, d, &cfg));
        }
    }

    #[test]
    fn palette_only_domains_share_masks(seed in any::<u64>(), acts in actions()) {
        let cfg = EnvConfig::default();
        let domains = make_domain_set("toyroad-mirror").unwrap();
        let plain: Vec<_> = domains.iter().filter(|d| d.blob.is_none()).collect();
        let s = drive(seed, &acts, &cfg).last().unwrap().0;
        let reference = pixel_classes(&render(&s, plain[0], &cfg), plain[0]);
        prop_assert!(reference.iter().all(|c| c.is_some()));
        for d in &plain[1..] {
            prop_assert_eq!(&pixel_classes(&render(&s, d, &cfg), d), &reference);
        }
    }

    #[test]
    fn road_mask_matches_rendered_road(seed in any::<u64>(), acts in actions()) {
        use lusr_core::env::PixelClass;
        let cfg = EnvConfig::default();
        let d = &make_domain_set("toyroad-mirror").unwrap()[0];
        let s = drive(seed, &acts, &cfg).last().unwrap().0;
        let classes = pixel_classes(&render(&s, d, &cfg), d);
        let mask = road_mask(&s, &cfg);
        for (c, m) in classes.iter().zip(&mask) {
            match c {
                Some(PixelClass::Road) => prop_assert!(*m),
                Some(PixelClass::Background) => prop_assert!(!*m),
                _ => {}
            }
        }
    }

    #[test]
    fn gae_lambda_one_is_monte_carlo(
        rewards in prop::collection::vec(-5.0f64..5.0, 1..40),
        seed in any::<u64>(),
        gamma in 0.5f64..1.0,
        bootstrap in -3.0f64..3.0,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = rewards.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones = vec![false; rewards.len()];
        let (adv, ret) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, 1.0);
        let n = rewards.len();
        for t in 0..n {
            let mut g = gamma.powi((n - t) as i32) * bootstrap;
            for k in t..n {
                g += gamma.powi((k - t) as i32) * rewards[k];
            }
            prop_assert!((adv[t] - (g - values[t])).abs() <= 1e-6);
            prop_assert!((ret[t] - g).abs() <= 1e-6);
        }
    }

    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-4.0f64..4.0, 6), lv in prop::collection::vec(-4.0f64..4.0, 6)) {
        let kl = kl_divergence(&Tensor::new(vec![2, 3], mu), &Tensor::new(vec![2, 3], lv));
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn reverse_loss_vanishes_on_identical_codes(z in prop::collection::vec(-3.0f64..3.0, 6), s in prop::collection::vec(-3.0f64..3.0, 3)) {
        let params = tiny_ccvae();
        let prior = Tensor::new(vec![3, 2], z);
        let spec = Tensor::new(vec![3, 1], s);
        prop_assert_eq!(reverse_loss(&params, &prior, &spec, &spec).unwrap(), 0.0);
    }
}

fn tiny_ccvae() -> ReprParams<f64> {
    ReprParams::<f64>::new(
        &ReprConfig {
            variant: Variant::Ccvae,
            dim_general: 2,
            dim_specific: 1,
            channels: vec![3, 4],
            ..ReprConfig::default()
        },
        8,
    )
    .unwrap()
}

#[test]
fn zero_advantage_gives_zero_policy_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let policy = PolicyParams::<f64>::new(&mut rng, 3, 5, -0.5);
    let batch = PpoBatch {
        inputs: Tensor::new(vec![4, 3], (0..12).map(|i| i as f64 * 0.1).collect()),
        raw: vec![[0.1, -0.2]; 4],
        old_log_prob: vec![-1.0, -2.0, 0.5, -0.3],
        advantages: vec![0.0; 4],
        returns: vec![1.0; 4],
    };
    let parts = ppo_loss(&policy, &batch, &PpoConfig::default()).unwrap();
    assert_eq!(parts.policy, 0.0);
}

#[test]
fn dataset_roundtrip_is_bit_exact() {
    let cfg = EnvConfig::default();
    let d = &make_domain_set("toyroad-mirror").unwrap()[3];
    let ds = collect_random(d, 25, 11, &cfg);
    let tmp = tempfile::tempdir().unwrap();
    save_dataset(&ds, tmp.path()).unwrap();
    assert_eq!(load_dataset(tmp.path()).unwrap(), ds);
}

#[test]
fn source_only_domain_set_has_unit_ratios() {
    let cfg = EnvConfig {
        max_steps: 40,
        ..EnvConfig::default()
    };
    let set = make_domain_set("toyroad-mirror").unwrap();
    let src = set[0].clone();
    let clones: Vec<_> = set
        .iter()
        .map(|d| {
            let mut c = src.clone();
            c.name = d.name.clone();
            c.role = d.role;
            c
        })
        .collect();
    let enc = ReprParams::<f32>::new(
        &ReprConfig {
            variant: Variant::Vae,
            dim_general: 4,
            dim_specific: 0,
            channels: vec![4, 4, 4],
            ..ReprConfig::default()
        },
        64,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let policy = PolicyParams::<f32>::new(&mut rng, 5, 8, 0.0);
    let report = transfer_report(&policy, &enc, &clones, &cfg, 3, &[1, 2], "p").unwrap();
    assert_eq!(report.rows.len(), 7);
    assert!(report.rows.iter().all(|r| r.ratio == 1.0));
    assert_eq!(report.rows.iter().filter(|r| r.role == DomainRole::Source).count(), 1);
    assert_eq!(report.episodes_per_domain, 6);
}

#[test]
fn saliency_is_nonnegative_for_random_policies() {
    let cfg = EnvConfig::default();
    let d = &make_domain_set("toyroad-mirror").unwrap()[4];
    let enc = ReprParams::<f32>::new(
        &ReprConfig {
            dim_general: 4,
            dim_specific: 2,
            channels: vec![4, 4, 4],
            ..ReprConfig::default()
        },
        64,
    )
    .unwrap();
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = PolicyParams::<f32>::new(&mut rng, 5, 8, 0.0);
        let obs = render(&reset(seed, &cfg), d, &cfg);
        let map = lusr_core::eval::saliency_map(&policy, &enc, &obs, 0.3, SaliencyConfig::default()).unwrap();
        assert!(map.values.iter().all(|&v| v >= 0.0 && v.is_finite()));
    }
}
