use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sleepnet::bspower::SmState;
use sleepnet::drl::{clip_ratio, compute_gae};
use sleepnet::env::{reward, reward_branch, EnvConfig, NetworkEnv, RewardBranch, RewardParams, RisMode, Scheme};
use sleepnet::harness::{self, selftest, ExperimentConfig};
use sleepnet::netmodel::RisConfig;

fn rollout(seed: u64, action_seed: u64, steps: usize) -> (Vec<Vec<f64>>, Vec<i64>, Vec<f64>) {
    let cfg = EnvConfig { scheme: Scheme::PSZR, ..EnvConfig::default() };
    let mut env = NetworkEnv::new(Arc::new(cfg), RisMode::Fixed(RisConfig::zeros(128, 3)), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
    let (mut feats, mut energy, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..steps {
        let a = selftest::random_legal_action(&env, &mut rng);
        let out = env.step(&a).unwrap();
        feats.push(env.observe(&out.next).unwrap());
        energy.push(out.info.energy.0);
        rewards.push(out.reward);
    }
    (feats, energy, rewards)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exactly_one_reward_branch(power in 0.0..30.0f64, pending in 0u64..3, delay in 0.0..30.0f64) {
        let params = RewardParams::default();
        let r = reward(power, pending, delay, &params, 4.5);
        let b = reward_branch(power, pending, delay, params.d_max, 4.5);
        let want = match b {
            RewardBranch::EmptyHighPower => params.l1,
            RewardBranch::EmptyLowPower => params.l2,
            RewardBranch::LateDelivery => params.l3,
            RewardBranch::OnTime => params.l4,
        };
        prop_assert_eq!(r, want);
        prop_assert_eq!(pending == 0, matches!(b, RewardBranch::EmptyHighPower | RewardBranch::EmptyLowPower));
    }

    #[test]
    fn clip_ratio_stays_in_band(h in 0.0..5.0f64, eps in 0.01..0.9f64) {
        let c = clip_ratio(h, eps);
        prop_assert!(c >= 1.0 - eps && c <= 1.0 + eps);
        if (1.0 - eps..=1.0 + eps).contains(&h) {
            prop_assert_eq!(c, h);
        }
    }

    #[test]
    fn gae_with_unit_lambda_and_zero_values_is_discounted_return(
        r in prop::collection::vec(-5.0..5.0f64, 1..40),
        gamma in 0.5..0.999f64,
    ) {
        let n = r.len();
        let zeros = vec![0.0; n];
        let mut dones = vec![false; n];
        dones[n - 1] = true;
        let a = compute_gae(&r, &zeros, &zeros, &dones, gamma, 1.0);
        for t in 0..n {
            let g: f64 = (t..n).map(|k| gamma.powi((k - t) as i32) * r[k]).sum();
            prop_assert!((a[t] - g).abs() <= 1e-9 * g.abs().max(1.0));
        }
    }

    #[test]
    fn config_round_trip(
        packet in 0.001..1.0f64,
        gap in 1.0..100.0f64,
        duration in 1u64..10_000,
        seeds in prop::collection::vec(any::<u64>(), 1..5),
        depth in 2usize..5,
    ) {
        let mut cfg = ExperimentConfig { duration, seeds, ..ExperimentConfig::default() };
        cfg.traffic.packet_size = packet;
        cfg.traffic.mean_interarrival = gap;
        cfg.sim.max_sleep_depth = SmState::from_index(depth).unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn trajectories_are_deterministic(seed in any::<u64>(), action_seed in any::<u64>()) {
        let a = rollout(seed, action_seed, 60);
        let b = rollout(seed, action_seed, 60);
        let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.0), bits(&b.0));
        prop_assert_eq!(a.1, b.1);
        prop_assert_eq!(a.2, b.2);
    }

    #[test]
    fn rewards_come_from_the_coefficients(seed in any::<u64>()) {
        let p = RewardParams::default();
        let (_, energy, rewards) = rollout(seed, seed ^ 1, 200);
        prop_assert!(energy.iter().all(|&e| e >= 0));
        prop_assert!(rewards.iter().all(|r| [p.l1, p.l2, p.l3, p.l4].contains(r)));
    }
}

#[test]
fn result_rows_are_monotone_and_match_the_summary() {
    let cfg = ExperimentConfig { scheme: Scheme::AA, duration: 450, seeds: vec![1, 2], ..ExperimentConfig::default() };
    let models = BTreeMap::from([(0, harness::untrained(Scheme::AA, 0).unwrap())]);
    let (rows, summaries) = harness::run_scheme(&cfg, &models).unwrap();
    for s in &summaries {
        let mine: Vec<_> = rows.iter().filter(|r| r.seed == s.seed).collect();
        assert_eq!(mine.len(), 450);
        assert!(mine.windows(2).all(|w| w[1].cumulative_energy_j >= w[0].cumulative_energy_j));
        assert_eq!(mine.last().unwrap().cumulative_energy_j, s.energy_j());
    }
}

#[test]
fn results_csv_round_trips() {
    let cfg = ExperimentConfig { scheme: Scheme::AA, duration: 25, seeds: vec![3], ..ExperimentConfig::default() };
    let models = BTreeMap::from([(0, harness::untrained(Scheme::AA, 0).unwrap())]);
    let (rows, _) = harness::run_scheme(&cfg, &models).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    harness::write_results_csv(&path, &cfg.hash(), &rows).unwrap();
    assert_eq!(harness::read_results_csv(&path).unwrap(), rows);
}
