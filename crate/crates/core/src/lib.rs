//! Steered Mixture-of-Experts (SMoE) image modelling.
//!
//! Blocks of a grayscale image are represented as softmax-gated mixtures of
//! constant experts with Gaussian, optionally steered, gates. Parameters come
//! either from per-block gradient descent ([`optim`]) or from a single
//! forward pass of a trained encoder network ([`encoder`]). Overlapping
//! windows can be fused into one image with [`sliding`].

pub mod encoder;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod model;
pub mod modelfile;
pub mod optim;
pub mod pipeline;
pub mod sliding;

pub use error::{Result, SmoeError};
pub use grid::ImageGrid;
pub use model::{BlockModel, KernelKind, SteeredKernel, Steering};
