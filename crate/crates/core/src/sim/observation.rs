use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::env::DatacenterState;

/// Per-slot metadata width: value, qos, resource_req, remaining duration, time to violation.
pub const JOB_FEATURES: usize = 5;

/// Occupied image cells are lifted to `OCCUPIED_FLOOR + (1 - OCCUPIED_FLOOR) * value` so that
/// even the cheapest occupant stays separable from a free cell.
pub const OCCUPIED_FLOOR: f64 = 0.2;

/// Fixed tensor shapes of an encoded observation for one config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservationShape {
    pub rows: usize,
    pub cols: usize,
    pub slots: usize,
}

impl ObservationShape {
    pub fn of(config: &SimConfig) -> Self {
        Self {
            rows: config.horizon,
            cols: config.r_max,
            slots: config.ready_pool_size,
        }
    }

    pub fn image_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn jobs_len(&self) -> usize {
        self.slots * JOB_FEATURES
    }

    pub fn n_actions(&self) -> usize {
        self.slots + 2
    }
}

/// Network input: scaled resource image plus the flattened ready-pool metadata array.
///
/// Buffers are reference counted so consecutive transitions can share them.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub image: Arc<[f32]>,
    pub jobs: Arc<[f32]>,
}

impl Observation {
    pub fn zeros(shape: ObservationShape) -> Self {
        Self {
            image: vec![0.0; shape.image_len()].into(),
            jobs: vec![0.0; shape.jobs_len()].into(),
        }
    }

    pub fn is_finite_and_bounded(&self) -> bool {
        self.image
            .iter()
            .chain(self.jobs.iter())
            .all(|v| v.is_finite() && (-1.0..=1.0).contains(v))
    }
}

pub fn encode_observation(state: &DatacenterState) -> Observation {
    let config = state.config();
    let image: Vec<f32> = state
        .resource_image()
        .into_iter()
        .map(|c| {
            if c > 0.0 {
                (OCCUPIED_FLOOR + (1.0 - OCCUPIED_FLOOR) * c) as f32
            } else {
                c as f32
            }
        })
        .collect();

    let max_req = config.max_resource_req() as f64;
    let max_duration = config.max_duration() as f64;
    let ttv_scale = max_duration / config.min_qos();
    let clock = state.clock() as f64;
    let mut jobs = vec![0.0f32; config.ready_pool_size * JOB_FEATURES];
    for (slot, job) in state.ready_pool().iter().enumerate() {
        let ttv = (job.qos_violation_time as f64 - clock) / ttv_scale;
        let features = [
            config.normalized_value(job.value),
            job.qos,
            (job.resource_req as f64 / max_req).min(1.0),
            (job.remaining_work as f64 / max_duration).min(1.0),
            ttv.clamp(-1.0, 1.0),
        ];
        for (dst, f) in jobs[slot * JOB_FEATURES..].iter_mut().zip(features) {
            *dst = f as f32;
        }
    }
    Observation {
        image: image.into(),
        jobs: jobs.into(),
    }
}
