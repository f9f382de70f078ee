//! Actor and critic objectives over discrete action spaces, written against plain logit and
//! Q matrices (one row per batch element) so they can be checked in isolation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::Real;

/// Per-sample weight on the imitation term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Filter {
    /// Every sample counts equally: behavior cloning.
    Uniform,
    /// Keep samples whose advantage is strictly positive.
    Binary,
    /// `min(exp(A / beta), w_max)`.
    Exp { beta: f64, w_max: f64 },
}

impl Default for Filter {
    fn default() -> Self {
        Filter::Binary
    }
}

impl Filter {
    pub fn exp_default() -> Self {
        Filter::Exp { beta: 1.0, w_max: 20.0 }
    }

    pub fn weight(self, advantage: f64) -> f64 {
        match self {
            Filter::Uniform => 1.0,
            Filter::Binary => {
                if advantage > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Filter::Exp { beta, w_max } => (advantage / beta).exp().min(w_max),
        }
    }

    pub fn needs_critic(self) -> bool {
        !matches!(self, Filter::Uniform)
    }

    pub fn name(self) -> &'static str {
        match self {
            Filter::Uniform => "uniform",
            Filter::Binary => "binary",
            Filter::Exp { .. } => "exp",
        }
    }
}

/// How the policy baseline `E_{a~pi}[Q(s, a)]` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// Dot product of `pi` and the Q-vector.
    Exact,
    /// Mean of `Q(s, a_j)` over `k` sampled actions.
    Sampled(usize),
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Real>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    out
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Row-wise log-softmax, computed in log space so it stays finite for finite logits.
pub fn log_softmax<T: Real>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Samples an index from a probability row by inverse CDF.
pub fn sample_categorical<T: Real, R: Rng + ?Sized>(probs: ArrayView1<T>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the total a hair under 1.
    probs.iter().rposition(|p| *p > T::zero()).unwrap_or(probs.len() - 1)
}

/// `Q(s, a) - baseline(s)` for one state.
pub fn estimate_advantage<R: Rng + ?Sized>(q: ArrayView1<f64>, probs: ArrayView1<f64>, action: usize, mode: AdvantageMode, rng: &mut R) -> f64 {
    let baseline = match mode {
        AdvantageMode::Exact => q.dot(&probs),
        AdvantageMode::Sampled(k) => {
            let k = k.max(1);
            (0..k).map(|_| q[sample_categorical(probs, rng)]).sum::<f64>() / k as f64
        }
    };
    q[action] - baseline
}

/// Weighted negative log-likelihood `-(1/B) sum_i w_i log pi(a_i | s_i)` and its gradient with
/// respect to the logits, `(pi_i - onehot(a_i)) * w_i / B`. A unit weight leaves the
/// cross-entropy gradient bit for bit unchanged.
pub fn weighted_nll<T: Real>(logits: ArrayView2<T>, actions: &[usize], weights: &[f64]) -> (f64, Array2<T>) {
    let b = logits.nrows();
    assert_eq!(actions.len(), b);
    assert_eq!(weights.len(), b);
    let logp = log_softmax(logits);
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        let (w, bt) = (T::cast(weights[i]), T::cast(b as f64));
        loss -= weights[i] * logp[(i, actions[i])].as_f64();
        row[actions[i]] -= T::one();
        row.mapv_inplace(|g| g * w / bt);
    }
    (loss / b as f64, grad)
}

/// Maximum-entropy policy loss `(1/B) sum_i sum_a pi(a|s_i) (alpha log pi(a|s_i) - Q(s_i, a))`
/// with `Q` held fixed, and its logit gradient `pi_j (g_j - L_i) / B` where
/// `g_j = alpha log pi_j - Q_j` and `L_i = sum_a pi_a g_a`.
pub fn max_entropy_policy_loss<T: Real>(logits: ArrayView2<T>, q: ArrayView2<f64>, alpha: f64) -> (f64, Array2<T>) {
    let b = logits.nrows();
    assert_eq!(q.dim(), logits.dim());
    let probs = softmax(logits);
    let logp = log_softmax(logits);
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for i in 0..b {
        let g: Array1<f64> = (0..logits.ncols()).map(|a| alpha * logp[(i, a)].as_f64() - q[(i, a)]).collect();
        let p: Array1<f64> = probs.row(i).mapv(|v| v.as_f64());
        let li = p.dot(&g);
        total += li;
        for a in 0..logits.ncols() {
            grad[(i, a)] = T::cast(p[a] * (g[a] - li) / b as f64);
        }
    }
    (total / b as f64, grad)
}

/// Elementwise minimum over ensemble members.
pub fn ensemble_min(members: &[Array2<f64>]) -> Array2<f64> {
    let mut out = members[0].clone();
    for m in &members[1..] {
        out.zip_mut_with(m, |a, &b| *a = a.min(b));
    }
    out
}

/// Bootstrapped targets `r + gamma (1 - done) sum_a pi(a|s') Q'(s', a)`.
pub fn bellman_targets(rewards: &[f64], dones: &[bool], gamma: f64, next_probs: ArrayView2<f64>, next_q: ArrayView2<f64>) -> Vec<f64> {
    let v = (&next_probs * &next_q).sum_axis(Axis(1));
    rewards
        .iter()
        .zip(dones)
        .zip(v.iter())
        .map(|((&r, &d), &v)| if d { r } else { r + gamma * v })
        .collect()
}
