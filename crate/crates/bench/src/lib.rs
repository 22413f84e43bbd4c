//! Fixed-seed inputs shared by the benchmarks and their smoke tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgcn_core::graph::{ModuleKind, SkeletonTopology};
use sgcn_core::net::{FinalizedArchitecture, NetConfig, Network, NetworkMode};
use sgcn_core::Tensor;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Input and weight of a temporal convolution at desk-scale block size.
pub fn conv_case(batch: usize) -> (Tensor, Tensor) {
    (random(&[batch, 16, 64, 8], 1), random(&[16, 16, 9, 1], 2))
}

/// The desk-scale network (widths divided by 8) on an 8-joint tree.
pub fn desk_network(mode: NetworkMode) -> Network {
    let cfg = NetConfig::standard(3).with_width_divisor(8);
    Network::new(cfg, SkeletonTopology::binary_tree(8).unwrap(), mode).unwrap()
}

pub fn single_module(kind: ModuleKind) -> NetworkMode {
    NetworkMode::Finalized(FinalizedArchitecture::single(10, kind))
}

/// A batch of clips shaped for [`desk_network`].
pub fn clips(batch: usize, frames: usize) -> Tensor {
    random(&[batch, 3, frames, 8, 2], 3)
}

/// Shifted sphere used to time the search loop without a network.
pub fn sphere(center: f64) -> impl Fn(&[f64]) -> f64 {
    move |a| -a.iter().map(|x| (x - center).powi(2)).sum::<f64>()
}
