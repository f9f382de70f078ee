//! Rollout evaluation through the worker pool against the same work in a plain loop.
//! With `--no-default-features` both arms run sequentially, which measures the pool overhead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use greenlaunch::eval::{eval_seeds, rollout_values};
use greenlaunch::heuristics::HeuristicKind;
use greenlaunch::par;
use greenlaunch::policy::Policy;
use greenlaunch::sim::{encode_observation, DatacenterState, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEPS: usize = 500;

fn sequential_values(policy: &HeuristicKind, cfg: &SimConfig, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let (env_seed, policy_seed) = eval_seeds(0, i);
            let mut env = DatacenterState::reset(cfg, env_seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(policy_seed);
            while !env.is_done() {
                let obs = encode_observation(&env);
                env.step(policy.act(&env, &obs, &mut rng)).unwrap();
            }
            env.ledger().finished_value
        })
        .collect()
}

fn rollouts(c: &mut Criterion) {
    let cfg = SimConfig {
        episode_len: STEPS,
        ..SimConfig::with_resources(20)
    };
    let policy = HeuristicKind::Qos;
    let mut group = c.benchmark_group(format!("qos_rollouts_{STEPS}_steps"));
    group.sample_size(10);
    for n in [4, 16] {
        assert_eq!(rollout_values(&policy, &cfg, n, STEPS, 0).unwrap(), sequential_values(&policy, &cfg, n));
        let label = if par::is_parallel() { "pool" } else { "pool_disabled" };
        group.bench_with_input(BenchmarkId::new(label, n), &n, |b, &n| b.iter(|| rollout_values(&policy, &cfg, n, STEPS, 0).unwrap()));
        group.bench_with_input(BenchmarkId::new("loop", n), &n, |b, &n| b.iter(|| sequential_values(&policy, &cfg, n)));
    }
    group.finish();
}

criterion_group!(benches, rollouts);
criterion_main!(benches);
