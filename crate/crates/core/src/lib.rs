//! Continuous convolution for unstructured point clouds.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`nn`], [`optim`], [`gradcheck`]: dense arithmetic with
//!   hand-written reverse-mode gradients, Adam and finite-difference checks.
//! * [`geometry`]: point clouds, an exact kd-tree, the score-based output
//!   point sampler and neighborhood normalisation.
//! * [`conv`]: the point convolution with learnable kernel positions and a
//!   learned weighting function.
//! * [`networks`]: classification, encoder-decoder segmentation and residual
//!   fusion networks.
//! * [`pipeline`]: datasets, training, evaluation and scene inference.
//! * [`checkpoint`]: the versioned binary model format.

pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod gradcheck;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::PointCloud;
pub use tensor::{Parameter, Parameterized, Tensor};

/// Random generator used throughout; portable and seedable so runs are
/// reproducible across platforms.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Derives an independent generator for work item `item` of run `seed`.
pub fn derive_rng(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
