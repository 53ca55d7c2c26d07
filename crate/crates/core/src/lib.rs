//! Collaborative teacher-student training of two peer networks.
//!
//! Each peer learns from ground-truth labels, from its partner (response
//! knowledge through a KL term and relation knowledge through distance- and
//! angle-wise embedding structure) and from a frozen pre-trained copy of
//! itself. Everything runs on a small `f64` reverse-mode autodiff tape so
//! gradients can be checked against finite differences.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod models;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use data::{Batch, Dataset, NormalizationStats};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, grad_check_many};
pub use losses::{Diagnostics, LossParts, LossWeights, Terms, TupleSets};
pub use models::{Checkpoint, ForwardOutput, Mode, NetworkConfig, PeerNetwork, Prediction};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use trainer::{MetricsRecord, OptimizerState, TrainConfig, UpdateOrder, Variant};

/// Mixes a base seed with a stream index (splitmix64 finalizer), giving
/// independent-looking seeds for per-epoch and per-run generators.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        ^ stream
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
