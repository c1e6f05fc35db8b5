//! Unsupervised multi-coil cine MRI reconstruction at desk scale.
//!
//! The library covers the full path from synthetic cine data to trained
//! reconstruction networks and classical baselines:
//!
//! - [`tensor`], [`autodiff`], [`fft`]: a minimal differentiable tensor core
//!   (real/complex tensors, conv2d, ReLU, unitary FFT, reverse-mode
//!   gradients).
//! - [`encoding`]: the multi-coil forward model — sampling masks, simulated
//!   coil sensitivities, the encoding operator and its adjoint.
//! - [`pipeline`]: unsupervised data preparation — time-interleaved
//!   acquisition merged into fully encoded reference k-space, then
//!   retrospectively undersampled into training pairs.
//! - [`network`]: per-coil unrolled reconstruction stacks with k-space
//!   data-consistency layers, plus a learned coil-combination network.
//! - [`training`]: MSE loss, Adam, exponential LR decay, Xavier init,
//!   checkpointing.
//! - [`metrics`]: PSNR, SSIM, histogram second moment, y-t profiles,
//!   error maps.
//! - [`baselines`]: zero-filled reconstruction and a low-rank plus sparse
//!   solver.

pub mod autodiff;
pub mod baselines;
pub mod encoding;
pub mod error;
pub mod fft;
pub mod io;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{ComplexTensor, RealTensor};
