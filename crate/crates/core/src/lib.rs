//! Gradient-free max-likelihood training of feedforward linear networks and
//! the experiments built on it: output-space collapse, clustering by
//! memorized trajectories, flipped-label decidability and wormhole-based
//! label reconciliation of fooling examples.

pub mod cluster;
pub mod collapse;
pub mod dataset;
pub mod error;
pub mod extended;
pub mod flip;
pub mod likelihood;
pub mod linalg;
pub mod model_io;
pub mod net;
pub mod report;
pub mod rng;
pub mod wormhole;

pub use error::{Error, Result};
pub use linalg::RealVector;
pub use net::{train_maxlikelihood, LayerTrace, LinearModel, NetConfig};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
