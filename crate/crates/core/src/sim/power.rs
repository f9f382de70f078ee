use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    Synthetic,
    File,
}

/// Powered-on resource units per timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    available: Vec<u32>,
    pub source: TraceSource,
}

impl PowerTrace {
    pub fn new(available: Vec<u32>, source: TraceSource) -> Result<Self, SimError> {
        if available.is_empty() {
            return Err(SimError::Config("power trace is empty".into()));
        }
        Ok(Self { available, source })
    }

    /// Sinusoidal day cycle plus gaussian noise, clamped to `[min_fraction * r_max, r_max]`.
    #[allow(clippy::too_many_arguments)]
    pub fn synthetic<R: Rng + ?Sized>(
        rng: &mut R,
        len: usize,
        r_max: usize,
        day_len: usize,
        base: f64,
        amplitude: f64,
        noise_std: f64,
        min_fraction: f64,
    ) -> Self {
        let noise = Normal::new(0.0, noise_std).expect("noise_std validated");
        let r_min = (min_fraction * r_max as f64).floor() as i64;
        let available = (0..len.max(1))
            .map(|t| {
                let phase = 2.0 * std::f64::consts::PI * t as f64 / day_len as f64;
                let frac = base + amplitude * phase.sin() + noise.sample(rng);
                ((r_max as f64 * frac).round() as i64).clamp(r_min, r_max as i64) as u32
            })
            .collect();
        Self {
            available,
            source: TraceSource::Synthetic,
        }
    }

    /// Parses `timestep,available_resources` rows (header optional, rows sorted by timestep).
    pub fn from_csv<R: Read>(mut reader: R) -> Result<Self, SimError> {
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|e| SimError::Trace(e.to_string()))?;
        let mut available = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let (Some(ts), Some(av), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(SimError::Trace(format!("line {}: expected two fields", lineno + 1)));
            };
            let Ok(ts) = ts.parse::<usize>() else {
                if lineno == 0 && available.is_empty() {
                    continue; // header
                }
                return Err(SimError::Trace(format!("line {}: bad timestep {ts:?}", lineno + 1)));
            };
            if ts != available.len() {
                return Err(SimError::Trace(format!(
                    "line {}: expected timestep {}, found {ts}",
                    lineno + 1,
                    available.len()
                )));
            }
            let av = av
                .parse::<u32>()
                .map_err(|_| SimError::Trace(format!("line {}: bad resource count {av:?}", lineno + 1)))?;
            available.push(av);
        }
        Self::new(available, TraceSource::File)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, SimError> {
        let file = std::fs::File::open(path).map_err(|e| SimError::Io(path.to_path_buf(), e))?;
        Self::from_csv(file)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestep,available_resources\n");
        for (t, a) in self.available.iter().enumerate() {
            out.push_str(&format!("{t},{a}\n"));
        }
        out
    }

    pub fn check_bounds(&self, r_max: usize) -> Result<(), SimError> {
        match self.available.iter().position(|&a| a as usize > r_max) {
            Some(t) => Err(SimError::Trace(format!(
                "timestep {t}: {} available resources exceeds r_max {r_max}",
                self.available[t]
            ))),
            None => Ok(()),
        }
    }

    /// Availability at `t`; traces repeat when `t` runs past their end.
    pub fn at(&self, t: u64) -> u32 {
        self.available[(t % self.available.len() as u64) as usize]
    }

    pub fn len(&self) -> usize {
        self.available.len()
    }

    pub fn is_empty(&self) -> bool {
        self.available.is_empty()
    }

    pub fn mean_over(&self, steps: usize) -> f64 {
        let steps = steps.max(1);
        (0..steps as u64).map(|t| self.at(t) as f64).sum::<f64>() / steps as f64
    }
}
