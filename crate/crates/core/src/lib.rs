//! Structured observer-feedback-feedforward controllers trained with
//! recurrent PPO on partially observable simulated plants.
//!
//! The crate is organized around the pipeline:
//!
//! - [`gradcore`]: a minimal reverse-mode differentiation tape over the
//!   primitive ops the controllers and losses need, with finite-difference
//!   verification and a binary checkpoint format for parameter stores.
//! - [`envs`]: the two simulated plants — a randomly generated stable linear
//!   system and a cascaded double tank — with reference/disturbance
//!   scheduling and the negative-squared-error tracking reward.
//! - [`policy`]: the three controller architectures (structured observer +
//!   state feedback, the variant with a separate feedforward observer, and
//!   an unstructured recurrent baseline), all built on the tape.
//! - [`ppo`]: recurrent PPO — rollout collection with stored hidden-state
//!   snapshots, GAE, clipped-surrogate updates with truncated BPTT.
//! - [`lqg`]: classical baselines on the linear plant (Riccati solvers,
//!   Kalman filter, LQR, their LQG composition, and a P-controller).
//! - [`analysis`]: state-identifiability regression, tracking evaluation,
//!   the feedforward ablation, and CSV export.
//!
//! Everything is deterministic in a single run seed: named RNG streams are
//! derived per consumer (see [`rng`]), and the optional rayon parallelism
//! (`parallel` feature, on by default) only fans out independent units of
//! work that are reduced in a fixed order, so results are bit-identical
//! with and without it.

pub mod analysis;
pub mod envs;
pub mod gradcore;
pub mod linalg;
pub mod lqg;
pub mod par;
pub mod policy;
pub mod ppo;
pub mod rng;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("Riccati iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    RiccatiDiverged { residual: f64, iterations: usize },

    #[error("training aborted: {0}")]
    TrainAbort(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
