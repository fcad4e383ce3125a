//! Numeric substrate for the tracker: dense tensors, a reverse-mode tape,
//! convolution, FFT, group normalization and activation kernels, and the
//! `GWT1` parameter checkpoint format.

pub mod activation;
pub mod checkpoint;
pub mod conv;
mod error;
pub mod fft;
pub mod gradcheck;
pub mod norm;
mod scalar;
pub mod tape;
mod tensor;

pub use activation::{global_avg_pool, leaky_relu, max_pool, sigmoid, sigmoid_scalar, softmax, DEFAULT_LEAKY_SLOPE};
pub use checkpoint::{CheckpointError, ParamStore};
pub use conv::conv2d;
pub use error::{Result, TensorError};
pub use fft::{fft2, ifft2, ComplexTensor, Fft2Plan};
pub use norm::{group_norm, DEFAULT_GN_EPS};
pub use scalar::{gemm, MatRef, Scalar};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
pub use rustfft::num_complex::Complex;
