use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, DatasetError, Transition};
use crate::par;
use crate::policy::Policy;
use crate::sim::{encode_observation, DatacenterState, ObservationShape, SimConfig};

/// Seeds for rollout `i` of a collection seeded with `seed`: (environment, policy).
pub fn rollout_seeds(seed: u64, i: usize) -> (u64, u64) {
    (par::derive_seed(seed, 2 * i as u64), par::derive_seed(seed, 2 * i as u64 + 1))
}

/// Runs `n_rollouts` independent episodes of `steps_per_rollout` steps under `policy` and
/// records every transition, tagged with the policy name. Rollouts run in parallel; the
/// result depends only on the arguments.
pub fn collect_rollouts<P: Policy + ?Sized>(
    policy: &P,
    config: &SimConfig,
    n_rollouts: usize,
    steps_per_rollout: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    let mut cfg = config.clone();
    cfg.episode_len = steps_per_rollout.max(1);
    cfg.resolve_power()?;
    cfg.validate()?;
    let cfg = Arc::new(cfg);
    let tag: Arc<str> = Arc::from(policy.name());
    let chunks = par::map_indices(n_rollouts, |i| -> Result<Vec<Transition>, DatasetError> {
        let (env_seed, policy_seed) = rollout_seeds(seed, i);
        let mut env = DatacenterState::reset_shared(cfg.clone(), env_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(policy_seed);
        let slots = cfg.ready_pool_size;
        let mut obs = encode_observation(&env);
        let mut out = Vec::with_capacity(steps_per_rollout);
        for _ in 0..steps_per_rollout {
            let action = policy.act(&env, &obs, &mut rng);
            let result = env.step(action)?;
            let next_obs = encode_observation(&env);
            out.push(Transition {
                obs,
                action: action.encode(slots),
                reward: result.reward,
                next_obs: next_obs.clone(),
                done: false,
                behavior_tag: tag.clone(),
            });
            obs = next_obs;
        }
        Ok(out)
    });
    let mut dataset = Dataset::new(ObservationShape::of(&cfg), Some(config.config_hash()));
    for chunk in chunks {
        dataset.transitions.extend(chunk?);
    }
    Ok(dataset)
}
