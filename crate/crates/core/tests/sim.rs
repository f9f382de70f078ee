use std::collections::HashSet;

use greenlaunch::sim::{
    encode_observation, qos_violation_time, Action, DatacenterState, Job, Lifecycle, SimConfig, StepResult, Workload,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_action(rng: &mut ChaCha8Rng, slots: usize) -> Action {
    Action::decode(rng.random_range(0..slots + 2), slots).unwrap()
}

/// Runs `steps` random actions, checking per-step invariants, and returns the rewards.
fn fuzz(cfg: &SimConfig, seed: u64, action_seed: u64, steps: usize) -> (Vec<f64>, DatacenterState) {
    let mut cfg = cfg.clone();
    cfg.episode_len = steps;
    let mut env = DatacenterState::reset(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
    let slots = cfg.ready_pool_size;
    let (mut rewards, mut completed) = (Vec::new(), 0.0);
    let mut seen_finished = HashSet::new();
    while !env.is_done() {
        let StepResult { reward, info, .. } = env.step(random_action(&mut rng, slots)).unwrap();
        rewards.push(reward);
        completed += info.completed_value;
        for row in 0..cfg.horizon {
            assert!(env.occupancy_at(row) <= env.available_at(row), "row {row} over capacity at t={}", env.clock());
        }
        assert!(env.ready_pool().len() <= slots);
        for j in env.wait_pool() {
            assert_eq!(j.lifecycle, Lifecycle::Waiting);
        }
        for j in env.ready_pool() {
            assert!(matches!(j.lifecycle, Lifecycle::Ready | Lifecycle::Suspended));
        }
        for j in env.running() {
            assert_eq!(j.lifecycle, Lifecycle::Running);
        }
        for j in env.live_jobs() {
            assert!(j.remaining_work > 0 && j.remaining_work <= j.duration);
        }
        for id in &env.ledger().finished_ids[seen_finished.len()..] {
            assert!(seen_finished.insert(*id), "job {id} finished twice");
        }
        assert!((reward - (info.completed_value - info.penalty)).abs() < 1e-9);
    }
    let ledger = env.ledger();
    assert!((completed - ledger.finished_value).abs() <= 1e-9 * completed.max(1.0));
    assert_eq!(ledger.finished_ids.len(), ledger.finished_jobs);
    (rewards, env)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_play_keeps_invariants(seed in any::<u64>(), action_seed in any::<u64>(), r in 5usize..40) {
        fuzz(&SimConfig::with_resources(r), seed, action_seed, 300);
    }

    #[test]
    fn identical_inputs_give_identical_episodes(seed in any::<u64>(), action_seed in any::<u64>()) {
        let cfg = SimConfig::with_resources(10);
        let (ra, a) = fuzz(&cfg, seed, action_seed, 200);
        let (rb, b) = fuzz(&cfg, seed, action_seed, 200);
        prop_assert_eq!(ra, rb);
        prop_assert!(a == b);
    }

    #[test]
    fn observations_stay_bounded(seed in any::<u64>(), action_seed in any::<u64>()) {
        let mut cfg = SimConfig::with_resources(10);
        cfg.episode_len = 150;
        let mut env = DatacenterState::reset(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
        while !env.is_done() {
            let obs = encode_observation(&env);
            prop_assert!(obs.is_finite_and_bounded());
            prop_assert_eq!(obs.image.len(), cfg.horizon * cfg.r_max);
            let width = obs.jobs.len() / cfg.ready_pool_size;
            for slot in env.ready_pool().len()..cfg.ready_pool_size {
                prop_assert!(obs.jobs[slot * width..(slot + 1) * width].iter().all(|v| *v == 0.0));
            }
            env.step(random_action(&mut rng, cfg.ready_pool_size)).unwrap();
        }
    }

    /// With no action and no power-forced suspension, the image moves up one row.
    #[test]
    fn horizon_shifts_by_one_row(seed in any::<u64>(), warmup in 5usize..60) {
        let cfg = SimConfig::with_resources(10);
        let mut env = DatacenterState::reset(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..warmup {
            env.step(random_action(&mut rng, cfg.ready_pool_size)).unwrap();
        }
        let before = env.resource_image();
        let step = env.step(Action::NoOp).unwrap();
        prop_assume!(step.info.power_suspensions == 0);
        let after = env.resource_image();
        let cols = cfg.r_max;
        prop_assert_eq!(&before[cols..], &after[..after.len() - cols]);
    }

    #[test]
    fn violation_time_matches_rational_oracle(eft in 0u64..1_000_000, percent in 1u64..=100) {
        let qos = percent as f64 / 100.0;
        prop_assert_eq!(qos_violation_time(eft, qos).unwrap(), (eft * 100).div_ceil(percent));
    }
}

#[test]
fn different_seeds_give_different_arrivals() {
    let cfg = SimConfig::with_resources(10);
    let run = |seed| {
        let mut s = DatacenterState::reset(&cfg, seed).unwrap();
        for _ in 0..20 {
            s.step(Action::NoOp).unwrap();
        }
        s
    };
    let (a, b) = (run(7), run(8));
    assert!(a.ledger().arrived_jobs > 0);
    let jobs = |s: &DatacenterState| s.live_jobs().map(|j| (j.value, j.duration, j.resource_req)).collect::<Vec<_>>();
    assert_ne!(jobs(&a), jobs(&b));
    assert_eq!(a, run(7));
}

#[test]
fn offered_load_matches_target() {
    let cfg = SimConfig::with_resources(10);
    let capacity = 8.5;
    let workload = Workload::calibrated(&cfg, capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut next_id, steps) = (0, 10_000u64);
    let offered: f64 = (0..steps)
        .flat_map(|t| workload.generate_arrivals(&mut rng, &cfg, t, &mut next_id))
        .map(|j| (j.resource_req * j.duration) as f64)
        .sum();
    let load = offered / (steps as f64 * capacity);
    assert!((load / cfg.lambda_load - 1.0).abs() < 0.05, "offered load {load}");
}

#[test]
fn zero_load_never_arrives() {
    let cfg = SimConfig {
        lambda_load: 0.0,
        episode_len: 500,
        ..SimConfig::with_resources(10)
    };
    let mut env = DatacenterState::reset(&cfg, 1).unwrap();
    while !env.is_done() {
        env.step(Action::NoOp).unwrap();
    }
    assert_eq!(env.ledger().arrived_jobs, 0);
}

#[test]
fn generated_jobs_satisfy_the_violation_formula() {
    let cfg = SimConfig::with_resources(20);
    let workload = Workload::calibrated(&cfg, 15.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut next_id = 0;
    let mut jobs: Vec<Job> = Vec::new();
    let mut t = 0;
    while jobs.len() < 1000 {
        jobs.extend(workload.generate_arrivals(&mut rng, &cfg, t, &mut next_id));
        t += 1;
    }
    for j in &jobs[..1000] {
        // Configured QoS levels are whole percentages.
        let percent = (j.qos * 100.0).round() as u64;
        assert_eq!(percent as f64 / 100.0, j.qos);
        assert_eq!(j.expected_finish_time, j.arrival_time + j.duration as u64);
        assert_eq!(j.qos_violation_time, (j.expected_finish_time * 100).div_ceil(percent));
    }
}
