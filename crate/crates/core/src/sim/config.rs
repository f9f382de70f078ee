use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::power::PowerTrace;
use super::SimError;

/// Version stamped into every config file and checked on load.
pub const SCHEMA_VERSION: u32 = 1;

/// Static description of one simulated datacenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Resource units when fully powered.
    pub r_max: usize,
    /// Ready-pool size `n`; the action space has `n + 2` entries.
    pub ready_pool_size: usize,
    /// Number of image rows (future timesteps) visible to the scheduler.
    pub horizon: usize,
    /// Offered load as a fraction of mean available capacity.
    pub lambda_load: f64,
    pub episode_len: usize,
    pub seed: u64,
    pub qos_penalty_coeff: f64,
    pub jobs: JobDistribution,
    pub power: PowerModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            r_max: 10,
            ready_pool_size: 10,
            horizon: 10,
            lambda_load: 1.2,
            episode_len: 2_000,
            seed: 0,
            qos_penalty_coeff: 0.1,
            jobs: JobDistribution::default(),
            power: PowerModel::default(),
        }
    }
}

/// Synthetic workload parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobDistribution {
    /// Probability that a job is drawn from the short-duration mode.
    pub short_fraction: f64,
    pub short_duration: (u32, u32),
    pub long_duration: (u32, u32),
    /// Upper bound of the uniform resource demand; `None` means `max(1, r_max / 5)`.
    pub max_resource_req: Option<u32>,
    /// Job value is `duration * resource_req * uniform(lo, hi)`.
    pub value_multiplier: (f64, f64),
    pub qos_levels: Vec<f64>,
}

impl Default for JobDistribution {
    fn default() -> Self {
        Self {
            short_fraction: 0.8,
            short_duration: (1, 3),
            long_duration: (10, 15),
            max_resource_req: None,
            value_multiplier: (0.5, 2.0),
            qos_levels: vec![0.25, 0.5, 0.75, 1.0],
        }
    }
}

/// Where the per-timestep count of powered resources comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PowerModel {
    /// `clamp(round(r_max * (base + amplitude * sin(2 pi t / day_len) + N(0, noise_std))), min_fraction * r_max, r_max)`
    Synthetic {
        day_len: usize,
        base: f64,
        amplitude: f64,
        noise_std: f64,
        min_fraction: f64,
    },
    /// Trace read from a `timestep,available_resources` CSV; wraps around when exhausted.
    File {
        path: PathBuf,
        #[serde(skip)]
        trace: Option<Arc<PowerTrace>>,
    },
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel::Synthetic {
            day_len: 240,
            base: 0.7,
            amplitude: 0.3,
            noise_std: 0.05,
            min_fraction: 0.5,
        }
    }
}

impl PartialEq for PowerModel {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                PowerModel::Synthetic {
                    day_len: a0,
                    base: a1,
                    amplitude: a2,
                    noise_std: a3,
                    min_fraction: a4,
                },
                PowerModel::Synthetic {
                    day_len: b0,
                    base: b1,
                    amplitude: b2,
                    noise_std: b3,
                    min_fraction: b4,
                },
            ) => a0 == b0 && a1 == b1 && a2 == b2 && a3 == b3 && a4 == b4,
            (PowerModel::File { path: a, .. }, PowerModel::File { path: b, .. }) => a == b,
            _ => false,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    schema_version: u32,
    sim: SimConfig,
}

impl SimConfig {
    /// Config for `r_max` resources with every other field at its default.
    pub fn with_resources(r_max: usize) -> Self {
        Self {
            r_max,
            ..Self::default()
        }
    }

    pub fn n_actions(&self) -> usize {
        self.ready_pool_size + 2
    }

    pub fn max_resource_req(&self) -> u32 {
        self.jobs
            .max_resource_req
            .unwrap_or_else(|| (self.r_max as u32 / 5).max(1))
    }

    pub fn max_duration(&self) -> u32 {
        self.jobs.short_duration.1.max(self.jobs.long_duration.1)
    }

    /// Largest value the workload can produce; used to normalize values into `[0, 1]`.
    pub fn max_job_value(&self) -> f64 {
        self.max_duration() as f64 * self.max_resource_req() as f64 * self.jobs.value_multiplier.1
    }

    /// Job value mapped to `[0, 1]` on a log scale, so short cheap jobs stay distinguishable
    /// next to the largest possible job.
    pub fn normalized_value(&self, value: f64) -> f64 {
        (value.max(0.0).ln_1p() / self.max_job_value().ln_1p()).min(1.0)
    }

    pub fn min_qos(&self) -> f64 {
        self.jobs.qos_levels.iter().cloned().fold(1.0, f64::min)
    }

    /// Expected `resource_req * duration` of one generated job.
    pub fn mean_job_work(&self) -> f64 {
        let mean_uniform = |(lo, hi): (u32, u32)| (lo as f64 + hi as f64) / 2.0;
        let d = &self.jobs;
        let mean_duration = d.short_fraction * mean_uniform(d.short_duration)
            + (1.0 - d.short_fraction) * mean_uniform(d.long_duration);
        let mean_req = (1.0 + self.max_resource_req() as f64) / 2.0;
        mean_duration * mean_req
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.r_max == 0 || self.ready_pool_size == 0 || self.horizon == 0 || self.episode_len == 0 {
            return bad("r_max, ready_pool_size, horizon and episode_len must be positive".into());
        }
        if !self.lambda_load.is_finite() || self.lambda_load < 0.0 {
            return bad(format!("lambda_load must be finite and non-negative, got {}", self.lambda_load));
        }
        if !self.qos_penalty_coeff.is_finite() || self.qos_penalty_coeff < 0.0 {
            return bad("qos_penalty_coeff must be finite and non-negative".into());
        }
        let d = &self.jobs;
        if !(0.0..=1.0).contains(&d.short_fraction) {
            return bad("short_fraction must lie in [0, 1]".into());
        }
        for (name, (lo, hi)) in [("short_duration", d.short_duration), ("long_duration", d.long_duration)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} must be a non-empty range of positive steps"));
            }
        }
        if self.max_resource_req() as usize > self.r_max {
            return bad("max_resource_req exceeds r_max".into());
        }
        let (vlo, vhi) = d.value_multiplier;
        if !(vlo > 0.0 && vlo <= vhi && vhi.is_finite()) {
            return bad("value_multiplier must be a positive range".into());
        }
        if d.qos_levels.is_empty() || d.qos_levels.iter().any(|q| !(*q > 0.0 && *q <= 1.0)) {
            return bad("qos_levels must be non-empty and lie in (0, 1]".into());
        }
        match &self.power {
            PowerModel::Synthetic {
                day_len,
                noise_std,
                min_fraction,
                ..
            } => {
                if *day_len == 0 || !(*noise_std >= 0.0) || !(0.0..=1.0).contains(min_fraction) {
                    return bad("synthetic power model parameters out of range".into());
                }
            }
            PowerModel::File { trace: Some(t), .. } => t.check_bounds(self.r_max)?,
            PowerModel::File { .. } => {}
        }
        Ok(())
    }

    /// Loads the power trace file (if any) so that resets do no IO.
    pub fn resolve_power(&mut self) -> Result<(), SimError> {
        if let PowerModel::File { path, trace } = &mut self.power {
            if trace.is_none() {
                let t = PowerTrace::from_csv_path(path)?;
                t.check_bounds(self.r_max)?;
                *trace = Some(Arc::new(t));
            }
        }
        Ok(())
    }

    /// Stable hash of everything except the seed, used to tag datasets and checkpoints.
    pub fn config_hash(&self) -> String {
        let mut canon = self.clone();
        canon.seed = 0;
        let json = serde_json::to_vec(&canon).expect("config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(SimError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let cfg = file.sim;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative power-trace paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(path.to_path_buf(), e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let PowerModel::File { path: trace, .. } = &mut cfg.power {
            if trace.is_relative() {
                if let Some(dir) = path.parent() {
                    *trace = dir.join(&*trace);
                }
            }
        }
        cfg.resolve_power()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ConfigFile {
            schema_version: SCHEMA_VERSION,
            sim: self.clone(),
        };
        toml::to_string_pretty(&file).expect("config serializes")
    }
}
