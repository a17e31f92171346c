//! Benchmark inputs shared by the criterion targets.

use drn_core::{Shape, Tensor};

/// Deterministic input with values spread over `[-0.5, 0.5)`.
pub fn ramp(shape: Shape) -> Tensor<f32> {
    Tensor::from_fn(shape, |n, c, y, x| {
        ((n * 31 + c * 17 + y * 7 + x * 3) % 97) as f32 / 97.0 - 0.5
    })
    .expect("benchmark shapes are nonzero")
}
