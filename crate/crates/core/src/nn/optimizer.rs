use serde::{Deserialize, Serialize};

use super::{NnError, Parameterized, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain `param -= lr * grad`.
    Sgd,
    /// Bias-corrected adaptive moments.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradient-descent state for one parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::default(), lr)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one descent step. Gradients are checked first; on a non-finite entry nothing
    /// is modified and the offending block is named.
    pub fn step<P: Parameterized<T> + ?Sized>(&mut self, params: &mut P, grads: &[Vec<T>]) -> Result<(), NnError> {
        let names = params.block_names();
        let mut blocks = params.blocks_mut();
        if blocks.len() != grads.len() {
            return Err(NnError::shape("optimizer block count", blocks.len(), grads.len()));
        }
        for (i, (b, g)) in blocks.iter().zip(grads).enumerate() {
            if b.len() != g.len() {
                return Err(NnError::shape(format!("optimizer block {}", names[i]), b.len(), g.len()));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NnError::NonFiniteGradient(names[i].clone()));
            }
        }
        self.step += 1;
        let lr = T::cast(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (b, g) in blocks.iter_mut().zip(grads) {
                    for (p, d) in b.iter_mut().zip(g) {
                        *p -= lr * *d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
                    self.v = self.m.clone();
                }
                let t = self.step as i32;
                let c1 = T::cast(1.0 / (1.0 - beta1.powi(t)));
                let c2 = T::cast(1.0 / (1.0 - beta2.powi(t)));
                let (b1, b2, eps) = (T::cast(beta1), T::cast(beta2), T::cast(eps));
                let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
                for ((b, g), (m, v)) in blocks.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
                    for (((p, &d), mi), vi) in b.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + one_b1 * d;
                        *vi = b2 * *vi + one_b2 * d * d;
                        let m_hat = *mi * c1;
                        let v_hat = *vi * c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
