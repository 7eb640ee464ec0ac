//! Minimal fully-convolutional network engine: valid 2-D convolutions with
//! ReLU or linear activation, inverted dropout, exact backpropagation and
//! Adam.
//!
//! Tensors are `H x W x C`, channels last. Convolution weights are stored as
//! a `(kh * kw * cin) x cout` matrix whose row index is
//! `(ky * kw + kx) * cin + ci`, which is also the checkpoint layout.

mod adam;
pub mod checkpoint;
mod gemm;
mod layer;
mod network;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layer::{Activation, ConvGrad, ConvLayer};
pub use network::{ForwardCache, Gradients, Layer, LayerSummary, Network, NetworkBuilder};
pub use tensor::Tensor;
