//! Fixtures shared by the benchmarks.

use tinycd::data::{collate, generate_sample, Split, SyntheticSpec};
use tinycd::{Shape, Tensor};

/// A tensor filled with a smooth deterministic pattern in `[-1, 1]`.
pub fn filled(shape: [usize; 4], requires_grad: bool) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i as f32) * 0.618).sin()).collect();
    let shape = Shape::from(shape);
    if requires_grad {
        Tensor::parameter(shape, data).unwrap()
    } else {
        Tensor::from_vec(shape, data).unwrap()
    }
}

/// `n` synthetic pairs of side `size`, collated into reference, comparison and label.
pub fn batch(n: usize, size: usize) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>) {
    let spec = SyntheticSpec { count: n, size, ..SyntheticSpec::default() };
    let samples: Vec<_> = (0..n).map(|i| generate_sample(&spec, Split::Train, i).pair).collect();
    let refs: Vec<_> = samples.iter().collect();
    collate(&refs).unwrap()
}
