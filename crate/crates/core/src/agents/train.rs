use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::{Env, SimEnv};
use super::model::{ActorCritic, ActorObjective, Batch, CheckpointMeta, UpdateStats};
use super::{AgentConfig, AgentError, Algo};
use crate::dataset::{Dataset, ReplayBuffer, Transition};
use crate::par::derive_seed;
use crate::sim::SimConfig;

pub const TELEMETRY_HEADER: &str = "step,actor_loss,critic_loss,eval_value,agreement,epsilon";

/// Result of a periodic evaluation during training.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalPoint {
    pub eval_value: Option<f64>,
    pub agreement: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub step: usize,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub eval_value: Option<f64>,
    pub agreement: Option<f64>,
    pub epsilon: Option<f64>,
}

impl TelemetryRow {
    pub fn to_csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.step,
            f(self.actor_loss),
            f(self.critic_loss),
            f(self.eval_value),
            f(self.agreement),
            f(self.epsilon)
        )
    }
}

/// Training telemetry, kept in memory and optionally appended to a CSV file as it arrives.
#[derive(Debug, Default)]
pub struct Telemetry {
    rows: Vec<TelemetryRow>,
    file: Option<BufWriter<File>>,
}

impl Telemetry {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> Result<Self, AgentError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "{TELEMETRY_HEADER}")?;
        Ok(Self {
            rows: Vec::new(),
            file: Some(file),
        })
    }

    pub fn push(&mut self, row: TelemetryRow) -> Result<(), AgentError> {
        if let Some(f) = &mut self.file {
            writeln!(f, "{}", row.to_csv_line())?;
            f.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[TelemetryRow] {
        &self.rows
    }
}

pub type Evaluator<'a> = dyn FnMut(usize, &ActorCritic<f32>) -> Result<EvalPoint, AgentError> + 'a;

/// Optional side channels of a training run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub telemetry: Option<&'a mut Telemetry>,
    /// Called at step 0, every `eval_every` steps and after the last step.
    pub evaluator: Option<&'a mut Evaluator<'a>>,
    /// Directory for periodic checkpoints (`step_<n>.ckpt`).
    pub checkpoint_dir: Option<PathBuf>,
    pub meta: CheckpointMeta,
}

/// Inputs carried over from offline pretraining into online training.
#[derive(Debug, Default)]
pub struct WarmStart<'a> {
    pub model: Option<ActorCritic<f32>>,
    pub dataset: Option<&'a Dataset>,
}

/// Running loss averages between telemetry rows.
#[derive(Default)]
struct LossWindow {
    actor: (f64, usize),
    critic: (f64, usize),
}

impl LossWindow {
    fn add(&mut self, s: &UpdateStats) {
        if let Some(a) = s.actor_loss {
            self.actor.0 += a;
            self.actor.1 += 1;
        }
        if let Some(c) = s.critic_loss {
            self.critic.0 += c;
            self.critic.1 += 1;
        }
    }

    fn take(&mut self) -> (Option<f64>, Option<f64>) {
        let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        let out = (mean(self.actor), mean(self.critic));
        *self = Self::default();
        out
    }
}

/// Shared bookkeeping for both training loops: telemetry rows, evaluation and checkpoints.
struct Progress<'h, 'a> {
    hooks: &'h mut TrainHooks<'a>,
    cfg: &'h AgentConfig,
    window: LossWindow,
    /// Added to local step numbers so a two-phase run reports one monotone step axis.
    offset: usize,
}

impl Progress<'_, '_> {
    fn due(every: usize, step: usize) -> bool {
        every > 0 && step % every == 0
    }

    /// Called with the number of completed steps `done` (0 before the first step).
    fn after(&mut self, done: usize, total: usize, model: &ActorCritic<f32>, epsilon: Option<f64>) -> Result<(), AgentError> {
        let last = done == total;
        let eval_now = self.hooks.evaluator.is_some() && (done == 0 || last || Self::due(self.cfg.eval_every, done));
        let log_now = done > 0 && (last || Self::due(self.cfg.log_every, done));
        let step = done + self.offset;
        if Self::due(self.cfg.checkpoint_every, done) && done > 0 {
            if let Some(dir) = &self.hooks.checkpoint_dir {
                model.save(&dir.join(format!("step_{step}.ckpt")), &self.hooks.meta)?;
            }
        }
        if !eval_now && !log_now {
            return Ok(());
        }
        let point = match (&mut self.hooks.evaluator, eval_now) {
            (Some(f), true) => f(step, model)?,
            _ => EvalPoint::default(),
        };
        let (actor_loss, critic_loss) = if log_now { self.window.take() } else { (None, None) };
        if let Some(t) = &mut self.hooks.telemetry {
            t.push(TelemetryRow {
                step,
                actor_loss,
                critic_loss,
                eval_value: point.eval_value,
                agreement: point.agreement,
                epsilon,
            })?;
        }
        Ok(())
    }
}

/// Offline training on a fixed dataset. There is no environment parameter: offline
/// training cannot interact with the simulator.
pub fn train_offline(dataset: &Dataset, cfg: &AgentConfig, hooks: &mut TrainHooks) -> Result<ActorCritic<f32>, AgentError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(AgentError::EmptyDataset);
    }
    let mut model = ActorCritic::new(dataset.shape, cfg.ensemble, cfg.lr, cfg.seed)?;
    offline_phase(&mut model, dataset, cfg, cfg.offline_steps, hooks, 0)?;
    Ok(model)
}

fn offline_phase(
    model: &mut ActorCritic<f32>,
    dataset: &Dataset,
    cfg: &AgentConfig,
    steps: usize,
    hooks: &mut TrainHooks,
    offset: usize,
) -> Result<(), AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 101));
    let objective = ActorObjective::Weighted {
        filter: cfg.filter,
        advantage: cfg.advantage_mode(),
    };
    let mut progress = Progress {
        hooks,
        cfg,
        window: LossWindow::default(),
        offset,
    };
    progress.after(0, steps, model, None)?;
    let n = dataset.len();
    for step in 1..=steps {
        let picks: Vec<&Transition> = (0..cfg.batch_size).map(|_| &dataset.transitions[rng.random_range(0..n)]).collect();
        let batch = Batch::from_transitions(dataset.shape, &picks);
        let stats = model.update(&batch, objective, cfg.train_critic, cfg.gamma, cfg.tau, &mut rng)?;
        if stats.mean_weight == Some(0.0) {
            log::debug!("step {step}: every filter weight in the batch is zero");
        }
        progress.window.add(&stats);
        progress.after(step, steps, model, None)?;
    }
    Ok(())
}

/// Online training with epsilon-greedy exploration around the greedy actor action and one
/// gradient step per environment step. A warm start can supply pretrained weights and
/// transitions to preload into the replay buffer; `cfg.warm_start` selects which are used.
pub fn train_online<E: Env>(env: &mut E, cfg: &AgentConfig, warm: WarmStart, hooks: &mut TrainHooks) -> Result<ActorCritic<f32>, AgentError> {
    cfg.validate()?;
    let shape = env.shape();
    let mut model = match warm.model {
        Some(mut m) if cfg.warm_start.init_weights => {
            if m.shape != shape {
                return Err(AgentError::Config("pretrained model does not match the environment".into()));
            }
            m.reset_optimizer();
            m
        }
        _ => ActorCritic::new(shape, cfg.ensemble, cfg.lr, cfg.seed)?,
    };
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    if let Some(d) = warm.dataset.filter(|_| cfg.warm_start.preload_buffer) {
        if d.shape != shape {
            return Err(AgentError::Config("warm-start dataset does not match the environment".into()));
        }
        buffer.extend(d.transitions.iter().cloned());
    }
    online_phase(&mut model, env, &mut buffer, cfg, cfg.online_steps, hooks, 0)?;
    Ok(model)
}

fn online_phase<E: Env>(
    model: &mut ActorCritic<f32>,
    env: &mut E,
    buffer: &mut ReplayBuffer,
    cfg: &AgentConfig,
    steps: usize,
    hooks: &mut TrainHooks,
    offset: usize,
) -> Result<(), AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 202));
    let objective = ActorObjective::MaxEntropy { alpha: cfg.entropy_coeff };
    let n_actions = env.shape().n_actions();
    let tag: std::sync::Arc<str> = std::sync::Arc::from("online");
    let mut progress = Progress {
        hooks,
        cfg,
        window: LossWindow::default(),
        offset,
    };
    progress.after(0, steps, model, Some(cfg.epsilon.at(0, steps)))?;
    let mut obs = env.observe();
    for step in 1..=steps {
        let eps = cfg.epsilon.at(step - 1, steps);
        let action = if eps > 0.0 && rng.random::<f64>() < eps {
            rng.random_range(0..n_actions)
        } else {
            model.greedy(&obs)?
        };
        let out = env.step(action)?;
        let next_obs = env.observe();
        buffer.push(Transition {
            obs,
            action,
            reward: out.reward,
            next_obs: next_obs.clone(),
            done: out.terminal,
            behavior_tag: tag.clone(),
        });
        obs = if out.terminal || out.truncated {
            env.reset()?;
            env.observe()
        } else {
            next_obs
        };
        if buffer.len() >= cfg.learning_starts.max(1) {
            let picks = buffer.sample_batch(cfg.batch_size, &mut rng)?;
            let batch = Batch::from_transitions(model.shape, &picks);
            let stats = model.update(&batch, objective, true, cfg.gamma, cfg.tau, &mut rng)?;
            progress.window.add(&stats);
        }
        progress.after(step, steps, model, Some(eps))?;
    }
    Ok(())
}

/// Runs one training regime end to end. `dataset` is required by every regime except
/// online; `sim` is required by the online ones.
pub fn train(
    algo: Algo,
    cfg: &AgentConfig,
    dataset: Option<&Dataset>,
    sim: Option<&SimConfig>,
    hooks: &mut TrainHooks,
) -> Result<ActorCritic<f32>, AgentError> {
    let need_data = || dataset.ok_or_else(|| AgentError::Config(format!("{algo} training needs a dataset")));
    let need_sim = || sim.ok_or_else(|| AgentError::Config(format!("{algo} training needs a simulator config")));
    match algo {
        Algo::Bc => train_offline(need_data()?, &cfg.clone().for_algo(Algo::Bc), hooks),
        Algo::Offline => train_offline(need_data()?, cfg, hooks),
        Algo::Online => {
            let mut env = SimEnv::new(need_sim()?, derive_seed(cfg.seed, 303))?;
            train_online(&mut env, cfg, WarmStart::default(), hooks)
        }
        Algo::OfflineOnline => {
            cfg.validate()?;
            let data = need_data()?;
            let mut env = SimEnv::new(need_sim()?, derive_seed(cfg.seed, 303))?;
            if data.is_empty() {
                return Err(AgentError::EmptyDataset);
            }
            if data.shape != env.shape() {
                return Err(AgentError::Config("dataset does not match the simulator config".into()));
            }
            let mut model = ActorCritic::new(data.shape, cfg.ensemble, cfg.lr, cfg.seed)?;
            offline_phase(&mut model, data, cfg, cfg.pretrain_steps, hooks, 0)?;
            let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
            if cfg.warm_start.preload_buffer {
                buffer.extend(data.transitions.iter().cloned());
            }
            if cfg.warm_start.init_weights {
                model.reset_optimizer();
            } else {
                model = ActorCritic::new(data.shape, cfg.ensemble, cfg.lr, derive_seed(cfg.seed, 404))?;
            }
            online_phase(&mut model, &mut env, &mut buffer, cfg, cfg.finetune_steps, hooks, cfg.pretrain_steps)?;
            Ok(model)
        }
    }
}
