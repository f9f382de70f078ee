use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{
    bellman_targets, ensemble_min, estimate_advantage, max_entropy_policy_loss, softmax, weighted_nll, AdvantageMode, Filter,
};
use super::{AgentConfig, AgentError};
use crate::container::{read_container, write_container, ContainerError, Loaded, RecordReader, RecordWriter};
use crate::dataset::Transition;
use crate::nn::{
    polyak_update, Encoder, EncoderSpec, LayerSpec, Network, NnError, Optimizer, Parameterized, PopArt, PopArtStats, Real,
};
use crate::sim::{Observation, ObservationShape};

pub const CHECKPOINT_KIND: &str = "checkpoint";

/// A sampled minibatch laid out as matrices.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub image: Array2<T>,
    pub jobs: Array2<T>,
    pub next_image: Array2<T>,
    pub next_jobs: Array2<T>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl<T: Real> Batch<T> {
    pub fn from_transitions(shape: ObservationShape, ts: &[&Transition]) -> Self {
        let (il, jl) = (shape.image_len(), shape.jobs_len());
        let b = ts.len();
        let fill = |len: usize, get: &dyn Fn(&Transition) -> &[f32]| {
            let mut m = Array2::zeros((b, len));
            for (mut row, t) in m.rows_mut().into_iter().zip(ts) {
                for (dst, &src) in row.iter_mut().zip(get(t)) {
                    *dst = T::cast(src as f64);
                }
            }
            m
        };
        Self {
            image: fill(il, &|t| &t.obs.image),
            jobs: fill(jl, &|t| &t.obs.jobs),
            next_image: fill(il, &|t| &t.next_obs.image),
            next_jobs: fill(jl, &|t| &t.next_obs.jobs),
            actions: ts.iter().map(|t| t.action).collect(),
            rewards: ts.iter().map(|t| t.reward).collect(),
            dones: ts.iter().map(|t| t.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Converts observations into a pair of input matrices.
pub fn observation_matrices<T: Real>(obs: &[&Observation]) -> (Array2<T>, Array2<T>) {
    let il = obs.first().map_or(0, |o| o.image.len());
    let jl = obs.first().map_or(0, |o| o.jobs.len());
    let image = Array2::from_shape_fn((obs.len(), il), |(i, j)| T::cast(obs[i].image[j] as f64));
    let jobs = Array2::from_shape_fn((obs.len(), jl), |(i, j)| T::cast(obs[i].jobs[j] as f64));
    (image, jobs)
}

/// The trainable networks: shared encoder, actor head and critic heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Nets<T> {
    pub encoder: Encoder<T>,
    pub actor: Network<T>,
    pub critics: Vec<Network<T>>,
}

impl<T: Real> Parameterized<T> for Nets<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut v = self.encoder.blocks();
        v.extend(self.actor.blocks());
        for c in &self.critics {
            v.extend(c.blocks());
        }
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.encoder.blocks_mut();
        v.extend(self.actor.blocks_mut());
        for c in &mut self.critics {
            v.extend(c.blocks_mut());
        }
        v
    }

    fn block_names(&self) -> Vec<String> {
        let mut v = self.encoder.block_names();
        v.extend(self.actor.block_names());
        for c in &self.critics {
            v.extend(c.block_names());
        }
        v
    }
}

/// Lagged copies used for bootstrapping.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNets<T> {
    pub encoder: Encoder<T>,
    pub critics: Vec<Network<T>>,
}

impl<T: Real> Parameterized<T> for TargetNets<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut v = self.encoder.blocks();
        for c in &self.critics {
            v.extend(c.blocks());
        }
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.encoder.blocks_mut();
        for c in &mut self.critics {
            v.extend(c.blocks_mut());
        }
        v
    }

    fn block_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.encoder.block_names().into_iter().map(|n| format!("target.{n}")).collect();
        for c in &self.critics {
            v.extend(c.block_names().into_iter().map(|n| format!("target.{n}")));
        }
        v
    }
}

/// What one update step optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActorObjective {
    None,
    /// Filtered imitation of the batch actions.
    Weighted { filter: Filter, advantage: AdvantageMode },
    /// Expected-Q maximization with an entropy bonus.
    MaxEntropy { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    /// Mean filter weight in the batch (weighted objective only).
    pub mean_weight: Option<f64>,
}

/// Encoder, actor, critic ensemble, target copies, PopArt statistics and optimizer state.
#[derive(Debug, Clone)]
pub struct ActorCritic<T> {
    pub shape: ObservationShape,
    pub nets: Nets<T>,
    pub targets: TargetNets<T>,
    pub popart: PopArt,
    optimizer: Optimizer<T>,
    steps: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    shape: ObservationShape,
    encoder: EncoderSpec,
    actor: Vec<LayerSpec>,
    critics: Vec<Vec<LayerSpec>>,
    popart: PopArtStats,
    popart_beta: f64,
    popart_sigma_min: f64,
    lr: f64,
    steps: u64,
    config_hash: Option<String>,
    agent: Option<AgentConfig>,
    blocks: Vec<(String, usize)>,
}

/// Metadata stored alongside checkpoint weights.
#[derive(Debug, Clone, Default)]
pub struct CheckpointMeta {
    pub config_hash: Option<String>,
    pub agent: Option<AgentConfig>,
}

impl<T: Real> ActorCritic<T> {
    /// Fresh networks for observations of `shape`. Each critic gets its own RNG stream so
    /// ensemble members start independent.
    pub fn new(shape: ObservationShape, ensemble: usize, lr: f64, seed: u64) -> Result<Self, AgentError> {
        if ensemble == 0 {
            return Err(AgentError::Config("ensemble size must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = EncoderSpec::standard(shape.rows, shape.cols, shape.jobs_len());
        let d = spec.state_dim();
        let n = shape.n_actions();
        let encoder = Encoder::new(spec, &mut rng)?;
        let actor = Network::mlp("actor", &[d, n], crate::nn::Activation::Identity, 0.01, &mut rng)?;
        let mut critics = Vec::with_capacity(ensemble);
        for e in 0..ensemble {
            let mut crng = ChaCha8Rng::seed_from_u64(seed);
            crng.set_stream(e as u64 + 1);
            critics.push(Network::mlp(format!("critic{e}"), &[d, n], crate::nn::Activation::Identity, 1.0, &mut crng)?);
        }
        let nets = Nets { encoder, actor, critics };
        let targets = TargetNets {
            encoder: nets.encoder.clone(),
            critics: nets.critics.clone(),
        };
        Ok(Self {
            shape,
            nets,
            targets,
            popart: PopArt::default(),
            optimizer: Optimizer::adam(lr),
            steps: 0,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.shape.n_actions()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.optimizer.lr = lr;
    }

    /// Fresh optimizer state, keeping the weights. Used when a pretrained model starts a new
    /// training phase.
    pub fn reset_optimizer(&mut self) {
        self.optimizer = Optimizer::adam(self.optimizer.lr);
    }

    pub fn logits(&self, image: ArrayView2<T>, jobs: ArrayView2<T>) -> Result<Array2<T>, AgentError> {
        let z = self.nets.encoder.forward(image, jobs)?;
        Ok(self.nets.actor.forward(z.view())?)
    }

    pub fn probs(&self, image: ArrayView2<T>, jobs: ArrayView2<T>) -> Result<Array2<f64>, AgentError> {
        Ok(softmax(self.logits(image, jobs)?.view()).mapv(|v| v.as_f64()))
    }

    /// Unnormalized Q-vectors of each online critic.
    pub fn q_values(&self, image: ArrayView2<T>, jobs: ArrayView2<T>) -> Result<Vec<Array2<f64>>, AgentError> {
        let z = self.nets.encoder.forward(image, jobs)?;
        self.nets
            .critics
            .iter()
            .map(|c| Ok(c.forward(z.view())?.mapv(|q| self.popart.denormalize(q.as_f64()))))
            .collect()
    }

    /// Unnormalized bootstrap targets for a batch, using target critics and the current actor.
    pub fn bellman_targets(&self, batch: &Batch<T>, gamma: f64) -> Result<Vec<f64>, AgentError> {
        let next_probs = self.probs(batch.next_image.view(), batch.next_jobs.view())?;
        let z = self.targets.encoder.forward(batch.next_image.view(), batch.next_jobs.view())?;
        let qs: Vec<Array2<f64>> = self
            .targets
            .critics
            .iter()
            .map(|c| Ok(c.forward(z.view())?.mapv(|q| self.popart.denormalize(q.as_f64()))))
            .collect::<Result<_, NnError>>()?;
        let q_next = ensemble_min(&qs);
        Ok(bellman_targets(&batch.rewards, &batch.dones, gamma, next_probs.view(), q_next.view()))
    }

    /// One gradient step on the chosen objectives, followed by a Polyak update of the targets
    /// when the critic was trained.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch<T>,
        actor: ActorObjective,
        train_critic: bool,
        gamma: f64,
        tau: f64,
        rng: &mut R,
    ) -> Result<UpdateStats, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::Config("empty batch".into()));
        }
        let mut stats = UpdateStats::default();
        let normalized_targets = if train_critic {
            let y = self.bellman_targets(batch, gamma)?;
            let heads = self.nets.critics.iter_mut().chain(self.targets.critics.iter_mut());
            self.popart.update_and_rescale(&y, heads);
            Some(y.iter().map(|&v| self.popart.normalize(v)).collect::<Vec<f64>>())
        } else {
            None
        };

        let b = batch.len();
        let (z, enc_cache) = self.nets.encoder.forward_cached(batch.image.view(), batch.jobs.view())?;
        let mut grads = self.nets.zero_grads();
        let n_enc = self.nets.encoder.blocks().len();
        let n_actor = self.nets.actor.blocks().len();
        let (enc_grads, rest) = grads.split_at_mut(n_enc);
        let (actor_grads, critic_grads) = rest.split_at_mut(n_actor);
        let mut dz = Array2::<T>::zeros(z.dim());

        let mut critic_out = Vec::with_capacity(self.nets.critics.len());
        for c in &self.nets.critics {
            critic_out.push(c.forward_cached(z.view())?);
        }

        if let Some(y) = &normalized_targets {
            let mut loss = 0.0;
            let mut off = 0;
            for (c, (q, cache)) in self.nets.critics.iter().zip(&critic_out) {
                let mut dq = Array2::<T>::zeros(q.dim());
                for i in 0..b {
                    let diff = q[(i, batch.actions[i])].as_f64() - y[i];
                    loss += diff * diff / b as f64;
                    dq[(i, batch.actions[i])] = T::cast(2.0 * diff / b as f64);
                }
                let nb = c.blocks().len();
                dz += &c.backward(cache, &dq, &mut critic_grads[off..off + nb])?;
                off += nb;
            }
            stats.critic_loss = Some(loss / self.nets.critics.len() as f64);
        }

        let actor_fwd = match actor {
            ActorObjective::None => None,
            _ => Some(self.nets.actor.forward_cached(z.view())?),
        };
        let dlogits = match (actor, &actor_fwd) {
            (ActorObjective::Weighted { filter, advantage }, Some((logits, _))) => {
                let weights: Vec<f64> = if filter.needs_critic() {
                    let q = self.min_normalized(&critic_out);
                    let probs = softmax(logits.view()).mapv(|v| v.as_f64());
                    (0..b)
                        .map(|i| filter.weight(estimate_advantage(q.row(i), probs.row(i), batch.actions[i], advantage, rng)))
                        .collect()
                } else {
                    vec![1.0; b]
                };
                let (loss, g) = weighted_nll(logits.view(), &batch.actions, &weights);
                stats.actor_loss = Some(loss);
                stats.mean_weight = Some(weights.iter().sum::<f64>() / b as f64);
                Some(g)
            }
            (ActorObjective::MaxEntropy { alpha }, Some((logits, _))) => {
                let q = self.min_normalized(&critic_out);
                let (loss, g) = max_entropy_policy_loss(logits.view(), q.view(), alpha);
                stats.actor_loss = Some(loss);
                Some(g)
            }
            _ => None,
        };
        if let (Some(g), Some((_, cache))) = (dlogits, &actor_fwd) {
            dz += &self.nets.actor.backward(cache, &g, actor_grads)?;
        }

        self.nets.encoder.backward(&enc_cache, &dz, enc_grads)?;
        self.optimizer.step(&mut self.nets, &grads)?;
        if train_critic {
            polyak_update(&mut self.targets.encoder, &self.nets.encoder, tau)?;
            for (t, o) in self.targets.critics.iter_mut().zip(&self.nets.critics) {
                polyak_update(t, o, tau)?;
            }
        }
        self.steps += 1;
        Ok(stats)
    }

    /// Elementwise ensemble minimum of normalized critic outputs. Normalization is a positive
    /// affine map, so this is the normalized form of the unnormalized minimum.
    fn min_normalized(&self, critic_out: &[(Array2<T>, crate::nn::NetworkCache<T>)]) -> Array2<f64> {
        let qs: Vec<Array2<f64>> = critic_out.iter().map(|(q, _)| q.mapv(|v| v.as_f64())).collect();
        ensemble_min(&qs)
    }

    /// Greedy action for a single observation.
    pub fn greedy(&self, obs: &Observation) -> Result<usize, AgentError> {
        let (image, jobs) = observation_matrices::<T>(&[obs]);
        let logits = self.logits(image.view(), jobs.view())?;
        Ok(argmax(logits.slice(s![0, ..]).iter().map(|v| v.as_f64())))
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<(), AgentError> {
        let names = self.nets.block_names().into_iter().chain(self.targets.block_names());
        let blocks: Vec<&[T]> = self.nets.blocks().into_iter().chain(self.targets.blocks()).collect();
        let header = CheckpointHeader {
            shape: self.shape,
            encoder: self.nets.encoder.spec().clone(),
            actor: self.nets.actor.specs(),
            critics: self.nets.critics.iter().map(|c| c.specs()).collect(),
            popart: self.popart.stats,
            popart_beta: self.popart.beta,
            popart_sigma_min: self.popart.sigma_min,
            lr: self.optimizer.lr,
            steps: self.steps,
            config_hash: meta.config_hash.clone(),
            agent: meta.agent.clone(),
            blocks: names.zip(&blocks).map(|(n, b)| (n, b.len())).collect(),
        };
        let records: Vec<Vec<u8>> = blocks
            .iter()
            .map(|b| {
                let mut w = RecordWriter::default();
                for v in b.iter() {
                    w.f64(v.as_f64());
                }
                w.0
            })
            .collect();
        write_container(path, CHECKPOINT_KIND, &header, &records)?;
        Ok(())
    }

    /// Loads a checkpoint, checking it against `expected_shape` when given. A config-hash
    /// mismatch is returned as a warning.
    pub fn load(path: &Path, expected_shape: Option<ObservationShape>, expected_hash: Option<&str>) -> Result<Loaded<(Self, CheckpointMeta)>, AgentError> {
        let (header, records): (CheckpointHeader, _) = read_container(path, CHECKPOINT_KIND)?;
        if let Some(s) = expected_shape {
            if s != header.shape {
                return Err(ContainerError::Shape(format!("checkpoint is for observations {:?}, expected {s:?}", header.shape)).into());
            }
        }
        let mut warnings = Vec::new();
        if let Some(h) = expected_hash {
            if header.config_hash.as_deref() != Some(h) {
                let msg = format!(
                    "checkpoint {} was trained with config hash {}, expected {h}",
                    path.display(),
                    header.config_hash.as_deref().unwrap_or("<none>")
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        let mut model = Self::new(header.shape, header.critics.len(), header.lr, 0)?;
        if model.nets.encoder.spec() != &header.encoder
            || model.nets.actor.specs() != header.actor
            || model.nets.critics.iter().map(|c| c.specs()).collect::<Vec<_>>() != header.critics
        {
            return Err(ContainerError::Shape("checkpoint architecture differs from this build's".into()).into());
        }
        let n_online = model.nets.blocks().len();
        let expected: usize = n_online + model.targets.blocks().len();
        if records.len() != expected || header.blocks.len() != expected {
            return Err(ContainerError::Truncated(format!("parameter blocks (expected {expected}, found {})", records.len())).into());
        }
        let mut all = model.nets.blocks_mut();
        all.extend(model.targets.blocks_mut());
        for (i, (dst, rec)) in all.into_iter().zip(&records).enumerate() {
            if header.blocks[i].1 != dst.len() {
                return Err(ContainerError::Shape(format!("block {} has {} values, expected {}", header.blocks[i].0, header.blocks[i].1, dst.len())).into());
            }
            let mut r = RecordReader::new(rec, header.blocks[i].0.clone());
            for (d, v) in dst.iter_mut().zip(r.f64s(header.blocks[i].1)?) {
                *d = T::cast(v);
            }
            r.finish()?;
        }
        model.popart = PopArt {
            stats: header.popart,
            beta: header.popart_beta,
            sigma_min: header.popart_sigma_min,
        };
        model.steps = header.steps;
        Ok(Loaded {
            value: (
                model,
                CheckpointMeta {
                    config_hash: header.config_hash,
                    agent: header.agent,
                },
            ),
            warnings,
        })
    }
}

/// Index of the largest value; the first wins ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
