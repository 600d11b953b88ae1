//! Symplectic recurrent neural networks.
//!
//! Learn separable Hamiltonians from sampled trajectories by backpropagating
//! through leapfrog rollouts. The crate contains a small reverse-mode tape
//! ([`ad`]), the trainable models ([`models`]), discrete integrators
//! ([`integrators`]), ground-truth simulators ([`systems`]) and the training
//! machinery ([`training`]).

pub mod ad;
pub mod integrators;
pub mod models;
pub mod systems;
pub mod training;

use ad::AdError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },
    #[error("near collision: pairwise distance {distance:e}")]
    NearCollision { distance: f64 },
    #[error("adaptive step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("sampler gave up after {0} rejections")]
    SamplerExhausted(usize),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("length mismatch: {0}")]
    Length(String),
}

pub type Result<T> = std::result::Result<T, Error>;
