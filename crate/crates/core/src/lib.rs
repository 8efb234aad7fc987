//! Training engine for deep spiking neural networks.
//!
//! The crate builds networks of explicitly iterative leaky integrate-and-fire
//! neurons, normalizes their activity with per-location auxiliary neurons,
//! and trains them with backpropagation through both the layer stack and the
//! simulation window, using a rectangular surrogate in place of the spike
//! step derivative. Everything runs on a small dense-tensor kernel set with
//! a selectable 32/64-bit precision mode.

pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod network;
pub mod neunorm;
pub mod neuron;
pub mod optim;
pub mod stbp;
pub mod tensor;

pub use network::{Network, NetworkSpec};
pub use tensor::{Scalar, Tensor, TensorError};
