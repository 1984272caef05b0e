//! Path characteristic functions of time series via unitary development.
//!
//! The crate covers the whole pipeline: piecewise-linear paths, the Lie
//! algebra u(m) and its exponential, the unitary feature of a path and its
//! gradients, the empirical path characteristic function distance (EPCFD),
//! two-sample testing, data simulators, a small reverse-mode tape for
//! recurrent networks, and the PCF-GAN training loops.

pub mod development;
pub mod disc;
pub mod eigen;
pub mod eval;
pub mod error;
pub mod gan;
pub mod io;
pub mod lie;
pub mod nets;
pub mod optim;
pub mod paths;
pub mod pcfd;
pub mod rng;
pub mod selfcheck;
pub mod sim;
pub mod testing;
mod small;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
