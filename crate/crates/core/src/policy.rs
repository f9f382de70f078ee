//! The interface every controller exposes to rollouts, plus the trivial reference policies.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::heuristics::HeuristicKind;
use crate::sim::{Action, DatacenterState, Observation};

/// Something that picks an action each step. `obs` is the encoded form of `state`; learned
/// policies read only `obs`, heuristics only `state`.
pub trait Policy: Sync {
    fn name(&self) -> String;

    fn act(&self, state: &DatacenterState, obs: &Observation, rng: &mut ChaCha8Rng) -> Action;
}

impl Policy for HeuristicKind {
    fn name(&self) -> String {
        HeuristicKind::name(*self).to_string()
    }

    fn act(&self, state: &DatacenterState, _obs: &Observation, _rng: &mut ChaCha8Rng) -> Action {
        self.select_action(state)
    }
}

/// Uniform over all `n + 2` encoded actions, valid or not.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn act(&self, state: &DatacenterState, _obs: &Observation, rng: &mut ChaCha8Rng) -> Action {
        let slots = state.config().ready_pool_size;
        Action::decode(rng.random_range(0..slots + 2), slots).expect("in range")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoOpPolicy;

impl Policy for NoOpPolicy {
    fn name(&self) -> String {
        "noop".into()
    }

    fn act(&self, _state: &DatacenterState, _obs: &Observation, _rng: &mut ChaCha8Rng) -> Action {
        Action::NoOp
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn name(&self) -> String {
        (**self).name()
    }

    fn act(&self, state: &DatacenterState, obs: &Observation, rng: &mut ChaCha8Rng) -> Action {
        (**self).act(state, obs, rng)
    }
}
