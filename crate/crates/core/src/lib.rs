//! Streaming Bayesian inference with exact Gaussian belief propagation on
//! tree-structured linear-Gaussian parts of a model and particle sampling
//! everywhere else.
//!
//! * [`gauss`]: Gaussian primitives and the edge push/reverse operations.
//! * [`forest`]: rooted Gaussian forests with re-rooting, observation,
//!   sampling and reclamation of unreachable nodes.
//! * [`model`]: the streaming model interface and symbolic random variables.
//! * [`smc`]: the particle cloud, weights and resampling.
//! * [`oracles`]: Kalman filter and dense-joint references.
//! * [`experiments`]: drivers behind the command-line tool.

pub mod error;
pub mod experiments;
pub mod forest;
pub mod gauss;
pub mod model;
pub mod oracles;
pub mod rng;
pub mod smc;

pub use error::{Error, Result};
pub use forest::{GaussForest, NodeHandle};
pub use gauss::{push_forward, reverse, AffineEdge, Gaussian};
pub use model::{AffineExpr, Ctx, InferenceMode, Model, ParentPolicy, RandomVar, Trace};
pub use smc::{ess, systematic_resample, Execution, ParticleCloud, Resampler, SmcConfig};
