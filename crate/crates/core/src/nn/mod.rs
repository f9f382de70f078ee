//! Small fixed-architecture neural networks with hand-written backpropagation.
//!
//! Everything is generic over [`Real`] so gradient checks can run in `f64` while training
//! runs in `f32`. A network instance belongs to one training thread; clones are cheap enough
//! to hand read-only snapshots to evaluation workers.

mod encoder;
mod layers;
mod network;
mod optimizer;
mod popart;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

pub use encoder::{Encoder, EncoderCache, EncoderSpec};
pub use layers::{Activation, Conv2d, Dense, Layer, LayerSpec};
pub use network::{polyak_update, Network, NetworkCache, Parameterized};
pub use optimizer::{Optimizer, OptimizerKind};
pub use popart::{PopArt, PopArtStats};

/// Floating-point element type of a network.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    fn cast(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn cast(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn cast(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },
    #[error("non-finite gradient in parameter block {0}")]
    NonFiniteGradient(String),
    #[error("invalid network specification: {0}")]
    Spec(String),
    #[error("tau must lie in (0, 1], got {0}")]
    Tau(f64),
}

impl NnError {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Display, got: impl Display) -> Self {
        NnError::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
