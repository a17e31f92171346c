//! Distilling-with-residual network (DRN) for single-image super-resolution.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: rank-4 tensors and differentiable kernels with explicit
//!   backward functions.
//! * [`model`]: residual-distilling units, blocks and groups assembled into
//!   the full network, parameter storage, initialization and checkpoints.
//! * [`training`]: L1 loss, Adam, aligned patch sampling, the training loop
//!   and a finite-difference gradient checker.
//! * [`imaging`]: PNG I/O, bicubic resampling, luma conversion.
//! * [`metrics`]: PSNR, SSIM, dataset evaluation and self-ensemble inference.

pub mod imaging;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use imaging::{ImageError, ImageF32, ImageU8, Plane};
pub use metrics::{EvalResult, Upscaler};
pub use model::{Drn, DrnConfig, ModelError, ParamStore};
pub use tensor::{ConvSpec, Scalar, Shape, Tensor, TensorError};
pub use training::{TrainConfig, TrainError};
