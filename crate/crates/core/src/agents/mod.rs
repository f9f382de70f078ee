//! Learning agents: behavior cloning, filtered offline actor-critic, online max-entropy
//! actor-critic, and offline pretraining followed by online fine-tuning.

mod env;
mod losses;
mod model;
mod policy;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use env::{Env, EnvStep, SimEnv};
pub use losses::{
    bellman_targets, ensemble_min, estimate_advantage, log_softmax, max_entropy_policy_loss, sample_categorical, softmax,
    weighted_nll, AdvantageMode, Filter,
};
pub use model::{
    argmax, observation_matrices, ActorCritic, ActorObjective, Batch, CheckpointMeta, Nets, TargetNets, UpdateStats,
    CHECKPOINT_KIND,
};
pub use policy::{select_action, ActionMode, LearnedPolicy, PolicyNet};
pub use train::{train, train_offline, train_online, EvalPoint, Telemetry, TelemetryRow, TrainHooks, WarmStart, TELEMETRY_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Container(#[from] crate::container::ContainerError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("evaluation hook failed: {0}")]
    Eval(String),
}

/// Which training regime to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Bc,
    Offline,
    Online,
    OfflineOnline,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Bc, Algo::Offline, Algo::Online, Algo::OfflineOnline];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Bc => "bc",
            Algo::Offline => "offline",
            Algo::Online => "online",
            Algo::OfflineOnline => "offline-online",
        }
    }

    pub fn needs_dataset(self) -> bool {
        !matches!(self, Algo::Online)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("offline_online") && *a == Algo::OfflineOnline))
            .ok_or_else(|| format!("unknown algorithm {s:?} (expected bc, offline, online or offline-online)"))
    }
}

/// Linear exploration schedule for online training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    /// Fraction of the online steps over which epsilon decays.
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.1,
        }
    }
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        Self {
            start: eps,
            end: eps,
            decay_fraction: 0.0,
        }
    }

    pub fn at(&self, step: usize, total_steps: usize) -> f64 {
        let decay = (self.decay_fraction * total_steps as f64).round();
        if decay <= 0.0 || step as f64 >= decay {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / decay
    }
}

/// Which parts of an offline-pretrained agent carry into online training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmStartFlags {
    pub preload_buffer: bool,
    pub init_weights: bool,
}

impl Default for WarmStartFlags {
    fn default() -> Self {
        Self {
            preload_buffer: true,
            init_weights: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Sampled actions for the advantage baseline; 0 selects the exact expectation.
    pub advantage_samples: usize,
    pub filter: Filter,
    pub ensemble: usize,
    pub tau: f64,
    pub entropy_coeff: f64,
    pub epsilon: EpsilonSchedule,
    pub offline_steps: usize,
    pub online_steps: usize,
    /// Offline steps before fine-tuning in the offline-online regime.
    pub pretrain_steps: usize,
    /// Online steps after pretraining in the offline-online regime.
    pub finetune_steps: usize,
    /// Whether offline training fits the critic. Behavior cloning turns this off.
    pub train_critic: bool,
    pub buffer_capacity: usize,
    /// Online updates start once the buffer holds this many transitions.
    pub learning_starts: usize,
    pub warm_start: WarmStartFlags,
    /// Evaluation cadence in training steps; 0 disables periodic evaluation.
    pub eval_every: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 1e-3,
            batch_size: 64,
            advantage_samples: 4,
            filter: Filter::Binary,
            ensemble: 2,
            tau: 0.005,
            entropy_coeff: 0.01,
            epsilon: EpsilonSchedule::default(),
            offline_steps: 50_000,
            online_steps: 200_000,
            pretrain_steps: 5_000,
            finetune_steps: 100_000,
            train_critic: true,
            buffer_capacity: crate::dataset::DEFAULT_CAPACITY,
            learning_starts: 1_000,
            warm_start: WarmStartFlags::default(),
            eval_every: 0,
            log_every: 100,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl AgentConfig {
    /// Step budgets of the original large-scale runs.
    pub fn paper_scale() -> Self {
        Self {
            offline_steps: 500_000,
            online_steps: 1_000_000,
            pretrain_steps: 50_000,
            finetune_steps: 1_000_000,
            ..Self::default()
        }
    }

    /// Defaults adjusted for `algo`: behavior cloning uses the uniform filter and no critic.
    pub fn for_algo(mut self, algo: Algo) -> Self {
        if algo == Algo::Bc {
            self.filter = Filter::Uniform;
            self.train_critic = false;
        }
        self
    }

    pub fn advantage_mode(&self) -> AdvantageMode {
        if self.advantage_samples == 0 {
            AdvantageMode::Exact
        } else {
            AdvantageMode::Sampled(self.advantage_samples)
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.ensemble < 2 {
            return bad(format!("the critic ensemble needs at least 2 members, got {}", self.ensemble));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.entropy_coeff >= 0.0) {
            return bad(format!("entropy_coeff must be non-negative, got {}", self.entropy_coeff));
        }
        let e = &self.epsilon;
        if ![e.start, e.end].iter().all(|v| (0.0..=1.0).contains(v)) || !(0.0..=1.0).contains(&e.decay_fraction) {
            return bad(format!("epsilon schedule out of range: {e:?}"));
        }
        if let Filter::Exp { beta, w_max } = self.filter {
            if !(beta > 0.0 && w_max > 0.0) {
                return bad(format!("exp filter needs positive beta and w_max, got {beta}, {w_max}"));
            }
        }
        if !self.train_critic && self.filter.needs_critic() {
            return bad(format!("the {} filter needs a trained critic", self.filter.name()));
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be positive".into());
        }
        Ok(())
    }
}
