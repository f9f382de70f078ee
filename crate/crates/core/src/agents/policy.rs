use std::sync::Arc;

use ndarray::s;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::losses::{sample_categorical, softmax};
use super::model::{argmax, observation_matrices, ActorCritic};
use super::AgentError;
use crate::nn::{Encoder, Network, Real};
use crate::policy::Policy;
use crate::sim::{Action, DatacenterState, Observation, ObservationShape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionMode {
    Sample,
    Greedy,
    /// Uniform over all actions with probability epsilon, greedy otherwise.
    EpsilonGreedy(f64),
}

/// The acting half of an agent: encoder plus actor head, without critics or optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet<T> {
    pub shape: ObservationShape,
    pub encoder: Encoder<T>,
    pub actor: Network<T>,
}

impl<T: Real> PolicyNet<T> {
    pub fn from_model(model: &ActorCritic<T>) -> Self {
        Self {
            shape: model.shape,
            encoder: model.nets.encoder.clone(),
            actor: model.nets.actor.clone(),
        }
    }

    pub fn logits(&self, obs: &Observation) -> Result<Vec<f64>, AgentError> {
        let (image, jobs) = observation_matrices::<T>(&[obs]);
        let z = self.encoder.forward(image.view(), jobs.view())?;
        let l = self.actor.forward(z.view())?;
        Ok(l.slice(s![0, ..]).iter().map(|v| v.as_f64()).collect())
    }

    pub fn probs(&self, obs: &Observation) -> Result<Vec<f64>, AgentError> {
        let l = ndarray::Array2::from_shape_vec((1, self.shape.n_actions()), self.logits(obs)?).expect("one row");
        Ok(softmax(l.view()).into_raw_vec_and_offset().0)
    }
}

/// Picks an encoded action from actor logits.
pub fn select_action(logits: &[f64], mode: ActionMode, rng: &mut ChaCha8Rng) -> usize {
    match mode {
        ActionMode::Greedy => argmax(logits.iter().copied()),
        ActionMode::Sample => {
            let l = ndarray::ArrayView2::from_shape((1, logits.len()), logits).expect("one row");
            sample_categorical(softmax(l).row(0), rng)
        }
        ActionMode::EpsilonGreedy(eps) => {
            if eps > 0.0 && rng.random::<f64>() < eps {
                rng.random_range(0..logits.len())
            } else {
                argmax(logits.iter().copied())
            }
        }
    }
}

/// A trained policy usable wherever a [`Policy`] is expected.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub name: String,
    pub net: Arc<PolicyNet<f32>>,
    pub mode: ActionMode,
}

impl LearnedPolicy {
    pub fn new(name: impl Into<String>, model: &ActorCritic<f32>, mode: ActionMode) -> Self {
        Self {
            name: name.into(),
            net: Arc::new(PolicyNet::from_model(model)),
            mode,
        }
    }

    pub fn action_index(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<usize, AgentError> {
        Ok(select_action(&self.net.logits(obs)?, self.mode, rng))
    }
}

impl Policy for LearnedPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn act(&self, _state: &DatacenterState, obs: &Observation, rng: &mut ChaCha8Rng) -> Action {
        let idx = self.action_index(obs, rng).expect("observation matches the policy shape");
        Action::decode(idx, self.net.shape.slots).expect("actor emits n + 2 logits")
    }
}
