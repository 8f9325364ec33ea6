//! Tensor kernels, resampling, structural re-parameterization and quality metrics
//! for tiny real-time super-resolution networks.

pub mod activation;
pub mod backend;
pub mod conv;
pub mod error;
pub mod filters;
pub mod metrics;
pub mod reparam;
pub mod resample;
pub mod shuffle;
pub mod tensor;

pub use activation::ActivationKind;
pub use backend::{Backend, Eager};
pub use conv::{conv2d, ConvGeometry, ConvParams};
pub use error::{Error, Result};
pub use filters::FixedKernel;
pub use tensor::{Shape, Tensor};
