//! Neural random features.
//!
//! Randomly initialized networks with a single output unit are treated as
//! feature extractors: `n` independently drawn networks map an input `x` to
//! `phi_n(x) = [f_1(x), ..., f_n(x)] / sqrt(n)`, and the inner product of two
//! embeddings is a Monte-Carlo estimate of the prior kernel
//! `E_theta[f_theta(x) f_theta(x')]`.
//!
//! The crate is organized bottom-up:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`rng`], [`init`] | splittable streams and weight initializers |
//! | [`tensor`], [`activation`], [`layers`], [`arch`], [`network`] | forward-only inference |
//! | [`features`] | embeddings, kernel estimates, Gram matrices, closed-form kernels |
//! | [`probe`] | multinomial logistic regression on features |
//! | [`datasets`] | CIFAR / MNIST loaders, synthetic blobs, preprocessing |
//! | [`harness`] | experiment configs, ablation runner, caches, reports |
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the 32-bit type used by the file formats and the CLI.

pub mod activation;
pub mod arch;
pub mod datasets;
mod error;
pub mod features;
pub mod harness;
pub mod init;
pub mod layers;
pub mod network;
pub mod numfmt;
pub mod probe;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use activation::ActivationKind;
pub use arch::{make_architecture, ArchOverrides, ArchitectureSpec, Preset};
pub use error::{Error, Result};
pub use features::{
    analytic_kernel, estimate_kernel, estimate_kernel_pairs, extract_features, gram, FeatureManifest, FeatureMatrix,
    KernelEstimate, KernelOracle,
};
pub use init::{init_tensor, Fan, InitKind, InitScheme};
pub use layers::{apply_layer, Layer, LayerSpec, Padding};
pub use network::{build_network, NetworkInstance};
pub use rng::{derive_stream, RngStream};
pub use scalar::{Accumulation, Scalar};
pub use tensor::{Matrix, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = NetworkInstance<f32>;
pub type Network64 = NetworkInstance<f64>;
pub type Features32 = FeatureMatrix<f32>;
pub type Features64 = FeatureMatrix<f64>;
