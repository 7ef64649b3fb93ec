//! Minibatch and accelerated model-based stochastic optimization (aProx).
//!
//! Each iteration samples a batch, builds a convex lower model of the batch
//! loss at the current point and takes a proximal (or mirror) step on it.

pub mod analysis;
pub mod geometry;
pub mod models;
pub mod optimizers;
pub mod problems;
pub mod prox;
mod reference;

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;

pub use geometry::{DgfKind, DistanceGenerator, Domain, GeometryError};
pub use models::{build_batch_model, BatchModel, BatchStrategy, ModelKind};
pub use problems::{Batch, NoiseSpec, OptimumInfo, ProblemInstance, ProblemKind, ProblemParams};
pub use prox::{ProxError, ProxResult, Regularizer, StepContext};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic random stream used throughout.
pub type StreamRng = ChaCha8Rng;

/// Derives an independent stream from a master seed and a list of labels
/// with a SplitMix64-style mix.
pub fn derive_stream(master: u64, labels: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(mix_seed(master, labels))
}

pub fn mix_seed(master: u64, labels: &[u64]) -> u64 {
    let mut h = splitmix(master ^ 0x9E37_79B9_7F4A_7C15);
    for &l in labels {
        h = splitmix(h ^ splitmix(l.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
