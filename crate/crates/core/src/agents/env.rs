use std::sync::Arc;

use super::AgentError;
use crate::par::derive_seed;
use crate::sim::{encode_observation, Action, DatacenterState, Observation, ObservationShape, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    pub reward: f64,
    /// The episode reached a true terminal state; nothing follows it.
    pub terminal: bool,
    /// The episode was cut off by a time limit; the next state still has value.
    pub truncated: bool,
}

/// An episodic environment with encoded observations and integer actions.
pub trait Env {
    fn shape(&self) -> ObservationShape;

    fn observe(&self) -> Observation;

    fn step(&mut self, action: usize) -> Result<EnvStep, AgentError>;

    /// Starts a new episode.
    fn reset(&mut self) -> Result<(), AgentError>;
}

/// The datacenter simulator behind the [`Env`] interface. Episode `i` uses a seed derived
/// from the base seed, so a sequence of episodes is reproducible.
#[derive(Debug, Clone)]
pub struct SimEnv {
    config: Arc<SimConfig>,
    seed: u64,
    episode: u64,
    state: DatacenterState,
}

impl SimEnv {
    pub fn new(config: &SimConfig, seed: u64) -> Result<Self, AgentError> {
        let mut cfg = config.clone();
        cfg.resolve_power()?;
        cfg.validate()?;
        let config = Arc::new(cfg);
        let state = DatacenterState::reset_shared(config.clone(), derive_seed(seed, 0))?;
        Ok(Self {
            config,
            seed,
            episode: 0,
            state,
        })
    }

    pub fn state(&self) -> &DatacenterState {
        &self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }
}

impl Env for SimEnv {
    fn shape(&self) -> ObservationShape {
        ObservationShape::of(&self.config)
    }

    fn observe(&self) -> Observation {
        encode_observation(&self.state)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, AgentError> {
        let a = Action::decode(action, self.config.ready_pool_size)?;
        let r = self.state.step(a)?;
        Ok(EnvStep {
            reward: r.reward,
            terminal: false,
            truncated: r.done,
        })
    }

    fn reset(&mut self) -> Result<(), AgentError> {
        self.episode += 1;
        self.state = DatacenterState::reset_shared(self.config.clone(), derive_seed(self.seed, self.episode))?;
        Ok(())
    }
}
