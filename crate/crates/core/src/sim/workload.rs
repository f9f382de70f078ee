use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::config::SimConfig;
use super::job::Job;

/// Poisson job source calibrated to an offered load.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    /// Mean arrivals per timestep.
    pub rate: f64,
    poisson: Option<Poisson<f64>>,
}

impl Workload {
    /// Chooses the arrival rate so that expected offered work per step
    /// (`resource_req * duration` summed over arrivals) equals
    /// `lambda_load * mean_capacity`.
    pub fn calibrated(config: &SimConfig, mean_capacity: f64) -> Self {
        let rate = config.lambda_load * mean_capacity / config.mean_job_work();
        Self::with_rate(rate)
    }

    pub fn with_rate(rate: f64) -> Self {
        let poisson = if rate > 0.0 { Poisson::new(rate).ok() } else { None };
        Self { rate, poisson }
    }

    /// Draws the jobs arriving at timestep `t`, numbering them from `*next_id`.
    pub fn generate_arrivals<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        config: &SimConfig,
        t: u64,
        next_id: &mut u64,
    ) -> Vec<Job> {
        let Some(poisson) = &self.poisson else {
            return Vec::new();
        };
        let count = poisson.sample(rng) as usize;
        (0..count)
            .map(|_| {
                let job = draw_job(rng, config, *next_id, t);
                *next_id += 1;
                job
            })
            .collect()
    }
}

fn draw_job<R: Rng + ?Sized>(rng: &mut R, config: &SimConfig, id: u64, t: u64) -> Job {
    let d = &config.jobs;
    let (lo, hi) = if rng.random::<f64>() < d.short_fraction {
        d.short_duration
    } else {
        d.long_duration
    };
    let duration = rng.random_range(lo..=hi);
    let resource_req = rng.random_range(1..=config.max_resource_req());
    let (vlo, vhi) = d.value_multiplier;
    let multiplier = if vhi > vlo { rng.random_range(vlo..vhi) } else { vlo };
    let value = duration as f64 * resource_req as f64 * multiplier;
    let qos = d.qos_levels[rng.random_range(0..d.qos_levels.len())];
    Job::new(id, value, qos, resource_req, duration, t).expect("qos levels validated")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stream(seed: u64, cfg: &SimConfig, steps: u64) -> Vec<Job> {
        let w = Workload::calibrated(cfg, 7.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut id = 0;
        (0..steps)
            .flat_map(|t| w.generate_arrivals(&mut rng, cfg, t, &mut id))
            .collect()
    }

    #[test]
    fn zero_load_never_arrives() {
        let cfg = SimConfig {
            lambda_load: 0.0,
            ..Default::default()
        };
        assert!(stream(1, &cfg, 1_000).is_empty());
    }

    #[test]
    fn same_seed_same_stream_different_seed_differs() {
        let cfg = SimConfig::default();
        assert_eq!(stream(5, &cfg, 200), stream(5, &cfg, 200));
        assert_ne!(stream(5, &cfg, 200), stream(6, &cfg, 200));
    }

    #[test]
    fn jobs_follow_configured_distribution() {
        let cfg = SimConfig::default();
        let jobs = stream(2, &cfg, 2_000);
        for j in &jobs {
            assert!((1..=3).contains(&j.duration) || (10..=15).contains(&j.duration));
            assert!((1..=2).contains(&j.resource_req));
            let density = j.value / (j.duration * j.resource_req) as f64;
            assert!((0.5..2.0).contains(&density));
            assert!(cfg.jobs.qos_levels.contains(&j.qos));
        }
        let short = jobs.iter().filter(|j| j.duration <= 3).count() as f64 / jobs.len() as f64;
        assert!((short - 0.8).abs() < 0.03, "short fraction {short}");
    }
}
