//! Transition records, the replay buffer, heuristic rollout collection, dataset mixing and the
//! on-disk dataset format.

mod buffer;
mod rollout;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{read_container, write_container, ContainerError, Loaded, RecordReader, RecordWriter};
use crate::sim::{Observation, ObservationShape};

pub use buffer::{ReplayBuffer, DEFAULT_CAPACITY};
pub use rollout::{collect_rollouts, rollout_seeds};

pub const DATASET_KIND: &str = "dataset";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("cannot sample from an empty buffer")]
    EmptyBuffer,
    #[error("mixing fractions must be non-negative and sum to 1, got sum {0}")]
    Fractions(f64),
    #[error("part {index} ({tag}) has {available} transitions but {requested} were requested")]
    InsufficientData {
        index: usize,
        tag: String,
        available: usize,
        requested: usize,
    },
    #[error("datasets have different observation shapes: {0:?} vs {1:?}")]
    ShapeMismatch(ObservationShape, ObservationShape),
    #[error("transition {index}: {reason}")]
    InvalidTransition { index: usize, reason: String },
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    /// Encoded action, `0..=n+1`.
    pub action: usize,
    pub reward: f64,
    pub next_obs: Observation,
    /// True termination only. Time-limit truncation is stored as `false`.
    pub done: bool,
    pub behavior_tag: Arc<str>,
}

/// An ordered collection of transitions sharing one observation shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: ObservationShape,
    /// Hash of the simulator config that produced the data, when known and unique.
    pub config_hash: Option<String>,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetHeader {
    schema_version: u32,
    config_hash: Option<String>,
    shape: ObservationShape,
    count: usize,
    tags: Vec<String>,
}

impl Dataset {
    pub fn new(shape: ObservationShape, config_hash: Option<String>) -> Self {
        Self {
            shape,
            config_hash,
            transitions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Number of transitions per behavior tag.
    pub fn tag_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.transitions {
            *counts.entry(t.behavior_tag.to_string()).or_insert(0) += 1;
        }
        counts
    }

    /// Checks action range, reward finiteness and observation sizes.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let n_actions = self.shape.n_actions();
        for (index, t) in self.transitions.iter().enumerate() {
            let bad = |reason: String| DatasetError::InvalidTransition { index, reason };
            if t.action >= n_actions {
                return Err(bad(format!("action {} outside 0..{n_actions}", t.action)));
            }
            if !t.reward.is_finite() {
                return Err(bad(format!("reward {} is not finite", t.reward)));
            }
            for o in [&t.obs, &t.next_obs] {
                if o.image.len() != self.shape.image_len() || o.jobs.len() != self.shape.jobs_len() {
                    return Err(bad("observation does not match the dataset shape".into()));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut tags: Vec<Arc<str>> = Vec::new();
        let mut records = Vec::with_capacity(self.len());
        for t in &self.transitions {
            let tag = match tags.iter().position(|x| *x == t.behavior_tag) {
                Some(i) => i,
                None => {
                    tags.push(t.behavior_tag.clone());
                    tags.len() - 1
                }
            };
            let mut w = RecordWriter::default();
            w.u32(t.action as u32)
                .f64(t.reward)
                .u8(t.done as u8)
                .u16(tag as u16)
                .f32s(&t.obs.image)
                .f32s(&t.obs.jobs)
                .f32s(&t.next_obs.image)
                .f32s(&t.next_obs.jobs);
            records.push(w.0);
        }
        let header = DatasetHeader {
            schema_version: crate::sim::SCHEMA_VERSION,
            config_hash: self.config_hash.clone(),
            shape: self.shape,
            count: self.len(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
        };
        write_container(path, DATASET_KIND, &header, &records)?;
        Ok(())
    }

    /// Loads a dataset. A config-hash mismatch against `expected_hash` is reported as a
    /// warning, not an error.
    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Loaded<Dataset>, DatasetError> {
        let (header, records): (DatasetHeader, _) = read_container(path, DATASET_KIND)?;
        let mut warnings = Vec::new();
        if header.schema_version != crate::sim::SCHEMA_VERSION {
            return Err(ContainerError::Version {
                found: header.schema_version,
                supported: crate::sim::SCHEMA_VERSION,
            }
            .into());
        }
        if let Some(expected) = expected_hash {
            if header.config_hash.as_deref() != Some(expected) {
                let msg = format!(
                    "dataset {} was generated with config hash {}, expected {expected}",
                    path.display(),
                    header.config_hash.as_deref().unwrap_or("<none>")
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        if records.len() != header.count {
            return Err(ContainerError::Truncated(format!(
                "transitions (header declares {}, file holds {})",
                header.count,
                records.len()
            ))
            .into());
        }
        let tags: Vec<Arc<str>> = header.tags.iter().map(|t| Arc::from(t.as_str())).collect();
        let (il, jl) = (header.shape.image_len(), header.shape.jobs_len());
        let mut transitions: Vec<Transition> = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let mut r = RecordReader::new(rec, format!("transition {i}"));
            let action = r.u32()? as usize;
            let reward = r.f64()?;
            let done = r.u8()? != 0;
            let tag = r.u16()? as usize;
            let obs = Observation {
                image: r.f32s(il)?.into(),
                jobs: r.f32s(jl)?.into(),
            };
            let next_obs = Observation {
                image: r.f32s(il)?.into(),
                jobs: r.f32s(jl)?.into(),
            };
            r.finish()?;
            let behavior_tag = tags
                .get(tag)
                .cloned()
                .ok_or_else(|| ContainerError::Header(format!("transition {i} refers to unknown tag {tag}")))?;
            // Consecutive transitions share the observation buffer, as they did in memory.
            let obs = match transitions.last() {
                Some(prev) if prev.next_obs == obs => prev.next_obs.clone(),
                _ => obs,
            };
            transitions.push(Transition {
                obs,
                action,
                reward,
                next_obs,
                done,
                behavior_tag,
            });
        }
        let value = Dataset {
            shape: header.shape,
            config_hash: header.config_hash,
            transitions,
        };
        value.validate()?;
        Ok(Loaded { value, warnings })
    }
}

/// Splits `total` by `fractions` using floor plus largest remainder; ties go to the earlier
/// part.
pub fn apportion(fractions: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Builds a dataset of exactly `total` transitions drawn from `parts` in the given fractions.
/// Each part is subsampled without replacement, then the result is shuffled.
pub fn mix_datasets(parts: &[(&Dataset, f64)], total: usize, seed: u64) -> Result<Dataset, DatasetError> {
    let sum: f64 = parts.iter().map(|p| p.1).sum();
    if parts.is_empty() || (sum - 1.0).abs() > 1e-9 || parts.iter().any(|p| !(p.1 >= 0.0)) {
        return Err(DatasetError::Fractions(sum));
    }
    let shape = parts[0].0.shape;
    for (d, _) in parts {
        if d.shape != shape {
            return Err(DatasetError::ShapeMismatch(shape, d.shape));
        }
    }
    let fractions: Vec<f64> = parts.iter().map(|p| p.1).collect();
    let counts = apportion(&fractions, total);
    for (index, ((d, _), &requested)) in parts.iter().zip(&counts).enumerate() {
        if d.len() < requested {
            let tags: Vec<String> = d.tag_counts().into_keys().collect();
            return Err(DatasetError::InsufficientData {
                index,
                tag: if tags.is_empty() { "empty".into() } else { tags.join("+") },
                available: d.len(),
                requested,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(total);
    for ((d, _), &n) in parts.iter().zip(&counts) {
        let mut picked = index::sample(&mut rng, d.len(), n).into_vec();
        picked.sort_unstable();
        transitions.extend(picked.into_iter().map(|i| d.transitions[i].clone()));
    }
    transitions.shuffle(&mut rng);
    let hashes: Vec<&Option<String>> = parts.iter().map(|p| &p.0.config_hash).collect();
    let config_hash = if hashes.windows(2).all(|w| w[0] == w[1]) {
        hashes[0].clone()
    } else {
        None
    };
    Ok(Dataset {
        shape,
        config_hash,
        transitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(apportion(&[0.25; 4], 100_000), vec![25_000; 4]);
        assert_eq!(apportion(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
        assert_eq!(apportion(&[0.1, 0.9], 7), vec![1, 6]);
        assert_eq!(apportion(&[1.0], 0), vec![0]);
    }
}
