//! SAGA and distributed SAGA (dSAGA) for ℓ2-regularised generalized linear models.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: sparse examples, LIBSVM ingestion, synthetic Gaussian data, sharding.
//! - [`losses`]: logistic and squared-error objectives with scalar gradient statistics.
//! - [`saga`]: single-machine SAGA with a stored-gradient memory.
//! - [`dsaga`]: the synchronous K-node dSAGA simulator.
//! - [`theory`]: closed-form quadratic machinery (shard Hessians, contraction constant,
//!   Wishart limits).
//! - [`baselines`]: gradient descent, L-BFGS and the SGD warm start.
//! - [`diagnostics`]: reference optima, error decomposition, empirical rates, CSV output.

pub mod baselines;
pub mod data;
pub mod diagnostics;
pub mod dsaga;
mod error;
pub mod losses;
pub mod saga;
pub mod theory;
pub(crate) mod vecops;

pub use crate::data::{Dataset, Example, Shard};
pub use crate::dsaga::{ClusterConfig, DsagaRun, InnerSolve, NodeState, SyncGradient, SyncMessage};
pub use crate::error::{Error, Result};
pub use crate::losses::{GradientStat, Loss, Objective, QuadraticForm, Smoothness};
pub use crate::saga::{SagaState, StepRule};

/// Deterministic sampler for a given base seed and stream.
///
/// Stream 0 is the single-machine SAGA sampler; node `k` of a cluster draws from
/// stream `k`, so a one-node cluster and plain SAGA consume the same sequence.
pub fn sampler(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
