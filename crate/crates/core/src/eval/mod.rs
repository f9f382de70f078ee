//! Policy evaluation, action agreement, and the experiment runner.

mod experiment;
mod plot;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::heuristics::HeuristicKind;
use crate::par;
use crate::policy::Policy;
use crate::sim::{encode_observation, DatacenterState, SimConfig, SimError};

pub use experiment::{
    generate_mixed_dataset, run_experiment, steps_to_reach, AgentEntry, AgentKind, CellFailure, DataSettings, DatasetRecipe, EvalSettings, ExperimentError,
    ExperimentId, ExperimentOutcome, ExperimentSpec, ResultRow, CURVES_HEADER, RESULTS_HEADER,
};
pub use plot::{bar_chart_svg, line_chart_svg, Series};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean total job value per rollout.
    pub mean: f64,
    pub per_rollout: Vec<f64>,
    /// Half-width of the normal-approximation 95% interval of the mean.
    pub ci95: f64,
    /// Agreement with each reference heuristic, when measured.
    pub agreement: BTreeMap<String, f64>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
}

/// `(mean, 95% half-width)` using the sample standard deviation.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

fn episode_config(config: &SimConfig, steps: usize) -> Result<Arc<SimConfig>, SimError> {
    let mut cfg = config.clone();
    cfg.episode_len = steps.max(1);
    cfg.resolve_power()?;
    cfg.validate()?;
    Ok(Arc::new(cfg))
}

/// Seeds of evaluation rollout `i`: (environment, policy). Kept apart from the data
/// collection seeds so evaluation never replays a training episode.
pub fn eval_seeds(seed: u64, i: usize) -> (u64, u64) {
    let base = par::derive_seed(seed, u64::MAX / 3);
    (par::derive_seed(base, 2 * i as u64), par::derive_seed(base, 2 * i as u64 + 1))
}

/// Total job value per rollout for `policy`, rollouts run in parallel.
pub fn rollout_values<P: Policy + ?Sized>(policy: &P, config: &SimConfig, n_rollouts: usize, steps: usize, seed: u64) -> Result<Vec<f64>, SimError> {
    let cfg = episode_config(config, steps)?;
    par::map_indices(n_rollouts, |i| {
        let (env_seed, policy_seed) = eval_seeds(seed, i);
        let mut env = DatacenterState::reset_shared(cfg.clone(), env_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(policy_seed);
        let mut completed = 0.0;
        while !env.is_done() {
            let obs = encode_observation(&env);
            let action = policy.act(&env, &obs, &mut rng);
            completed += env.step(action)?.info.completed_value;
        }
        debug_assert!((completed - env.ledger().finished_value).abs() <= 1e-9 * completed.abs().max(1.0));
        Ok(env.ledger().finished_value)
    })
    .into_iter()
    .collect()
}

pub fn evaluate<P: Policy + ?Sized>(policy: &P, config: &SimConfig, n_rollouts: usize, steps: usize, seed: u64) -> Result<EvalReport, SimError> {
    let per_rollout = rollout_values(policy, config, n_rollouts, steps, seed)?;
    let (mean, ci95) = mean_ci(&per_rollout);
    Ok(EvalReport {
        mean,
        per_rollout,
        ci95,
        agreement: BTreeMap::new(),
        config_hash: config.config_hash(),
        seeds: (0..n_rollouts).map(|i| eval_seeds(seed, i).0).collect(),
        version: VERSION.to_string(),
    })
}

/// Fraction of steps, on rollouts driven by `heuristic`, where `policy` would have chosen the
/// same action.
pub fn action_agreement<P: Policy + ?Sized>(
    policy: &P,
    heuristic: HeuristicKind,
    config: &SimConfig,
    n_rollouts: usize,
    steps: usize,
    seed: u64,
) -> Result<f64, SimError> {
    let cfg = episode_config(config, steps)?;
    let slots = cfg.ready_pool_size;
    let counts = par::map_indices(n_rollouts, |i| -> Result<(usize, usize), SimError> {
        let (env_seed, policy_seed) = eval_seeds(seed, i);
        let mut env = DatacenterState::reset_shared(cfg.clone(), env_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(policy_seed);
        let (mut same, mut total) = (0, 0);
        while !env.is_done() {
            let obs = encode_observation(&env);
            let reference = heuristic.select_action(&env);
            let guess = policy.act(&env, &obs, &mut rng);
            same += (guess.encode(slots) == reference.encode(slots)) as usize;
            total += 1;
            env.step(reference)?;
        }
        Ok((same, total))
    });
    let (mut same, mut total) = (0, 0);
    for c in counts {
        let (s, t) = c?;
        same += s;
        total += t;
    }
    Ok(if total == 0 { 0.0 } else { same as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_of_known_sample() {
        let (m, h) = mean_ci(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((h - 1.96 * sd / 2.0).abs() < 1e-12);
        assert_eq!(mean_ci(&[7.0]), (7.0, 0.0));
    }
}
