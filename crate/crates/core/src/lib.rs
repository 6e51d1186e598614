//! Operational neural networks with generative neurons.
//!
//! The engine covers three layer families behind one network type:
//!
//! - generative (Self-ONN) layers whose nodal operator is a per-kernel-element
//!   Maclaurin polynomial with trainable coefficients,
//! - fixed-operator ONN layers (`sin`, `exp`, `chirp` nodals, `median` pool),
//! - plain convolutional layers (sum pool, `mul` nodal, `Q = 1`).
//!
//! Back-propagation is written out by hand in [`backprop`]; [`gradcheck`]
//! verifies it against central finite differences. Training is fixed-rate SGD
//! ([`trainer`]) and [`tasks`] provides the desk-scale datasets and metrics.

pub mod backprop;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod operators;
pub mod real;
pub mod tasks;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use network::{
    ForwardCache, KernelStack, LayerSpec, Network, NetworkSpec, Path, Sampling,
};
pub use operators::{Activation, Nodal, OperatorSet, Pool};
pub use real::Real;
pub use tensor::{FeatureMap, Kernel2D};
