use serde::{Deserialize, Serialize};

use super::{Network, Real};

/// Running first and second moments of value targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopArtStats {
    pub mu: f64,
    pub nu: f64,
    pub count: u64,
}

/// Adaptive target normalization that keeps a head's unnormalized outputs fixed while the
/// statistics move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopArt {
    pub stats: PopArtStats,
    /// EMA rate once warmed up.
    pub beta: f64,
    pub sigma_min: f64,
}

impl Default for PopArt {
    fn default() -> Self {
        Self::new(3e-4, 1e-4)
    }
}

impl PopArt {
    pub fn new(beta: f64, sigma_min: f64) -> Self {
        Self {
            stats: PopArtStats {
                mu: 0.0,
                nu: 1.0,
                count: 0,
            },
            beta,
            sigma_min,
        }
    }

    pub fn mu(&self) -> f64 {
        self.stats.mu
    }

    pub fn sigma(&self) -> f64 {
        (self.stats.nu - self.stats.mu * self.stats.mu)
            .max(self.sigma_min * self.sigma_min)
            .sqrt()
    }

    /// Folds a batch of targets into the moments. The step size is bias-corrected
    /// (`beta / (1 - (1 - beta)^t)`), so the first batch sets the moments outright.
    /// Returns the `(mu, sigma)` in force before the update.
    pub fn update(&mut self, targets: &[f64]) -> (f64, f64) {
        let before = (self.mu(), self.sigma());
        if targets.is_empty() {
            return before;
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let mean_sq = targets.iter().map(|y| y * y).sum::<f64>() / n;
        self.stats.count += 1;
        let rate = self.beta / (1.0 - (1.0 - self.beta).powf(self.stats.count as f64));
        let rate = rate.min(1.0);
        self.stats.mu += rate * (mean - self.stats.mu);
        self.stats.nu += rate * (mean_sq - self.stats.nu);
        before
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mu()) / self.sigma()
    }

    pub fn denormalize(&self, y_hat: f64) -> f64 {
        y_hat * self.sigma() + self.mu()
    }

    /// Rescales the last dense layer of `head` so that
    /// `sigma_new * head_new(x) + mu_new == sigma_old * head_old(x) + mu_old` for every `x`.
    pub fn rescale_head<T: Real>(head: &mut Network<T>, old: (f64, f64), new: (f64, f64)) {
        let (mu_old, sigma_old) = old;
        let (mu_new, sigma_new) = new;
        let dense = head.last_dense_mut().expect("critic head ends in a dense layer");
        let scale = T::cast(sigma_old / sigma_new);
        dense.weight.mapv_inplace(|w| w * scale);
        let shift = T::cast((mu_old - mu_new) / sigma_new);
        dense.bias.mapv_inplace(|b| b * scale + shift);
    }

    /// Updates the statistics with `targets` and rescales every head in `heads` to preserve
    /// its unnormalized output.
    pub fn update_and_rescale<'a, T: Real + 'a>(
        &mut self,
        targets: &[f64],
        heads: impl IntoIterator<Item = &'a mut Network<T>>,
    ) {
        let old = self.update(targets);
        let new = (self.mu(), self.sigma());
        if old != new {
            for head in heads {
                Self::rescale_head(head, old, new);
            }
        }
    }
}
