//! Seeded inputs shared by the benchmarks.

use polypnet::nn::Conv2d;
use polypnet::zoo::build;
use polypnet::{ModelSpec, Network, Rng, Tensor};

/// Uniform `[0, 1)` tensor from a fixed seed.
pub fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::random_uniform(shape, 0.0, 1.0, &mut Rng::new(seed)).expect("non-empty shape")
}

/// A 3x3 same-padded convolution with Glorot weights.
pub fn conv(in_channels: usize, filters: usize) -> Conv2d {
    Conv2d::init(in_channels, filters, (3, 3), 1, 1, &mut Rng::new(1)).expect("valid geometry")
}

/// The 4-block simple CNN at the given widths on 64x64 RGB input.
pub fn simple_cnn(base_width: usize, head_width: usize) -> Network {
    let spec = ModelSpec {
        base_width,
        head_width,
        ..ModelSpec::simple(4, &[0.3, 0.3])
    };
    build(&spec, 0).expect("valid spec")
}

/// A batch of `n` images with alternating labels.
pub fn batch(n: usize) -> (Tensor, Tensor) {
    let labels = (0..n).map(|i| (i % 2) as f64).collect();
    (random(&[n, 3, 64, 64], 2), Tensor::new(&[n, 1], labels).expect("matching length"))
}
