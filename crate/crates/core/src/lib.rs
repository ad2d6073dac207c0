//! Streaming generalized CP decomposition.
//!
//! Each incoming slice of a tensor stream is fit against a shared set of
//! factor matrices. The slice gets its own temporal weight vector and the
//! factors are anchored to a reservoir-sampled window of past steps.

pub mod adam;
pub mod error;
pub mod io;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod rng;
pub mod sampling;
mod serde_float;
pub mod solvers;
pub mod streaming;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{GcpError, Result};
pub use loss::{LossFunction, LossKind};
pub use rng::RngStreams;
pub use sampling::{SampleCount, SamplerConfig};
pub use solvers::{GradientMode, SolverConfig, TemporalMode};
pub use tensor::{KTensor, SparseTensor};
pub use streaming::{StreamConfig, StreamState};
