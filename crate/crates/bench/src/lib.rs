//! Inputs shared by the benchmarks in `benches/`.

use senet_core::{Dims, Tensor};

/// Deterministic values in [-1, 1) without pulling in an RNG.
pub fn filled(dims: Dims) -> Tensor {
    let data = (0..dims.numel())
        .map(|i| ((i.wrapping_mul(2_654_435_761) % 1000) as f64) / 500.0 - 1.0)
        .collect();
    Tensor::from_vec(dims, data).expect("length matches dims")
}
