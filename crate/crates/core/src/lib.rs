//! Sloppy curvature spectra and PAC-Bayes generalization bounds for small
//! fully-connected networks.

pub mod curvature;
pub mod data;
pub mod error;
pub mod linalg;
pub mod net;
pub mod pacbayes;
pub mod pipeline;
pub mod rng;
pub mod sloppy;
pub mod train;

pub use error::{Error, Result};
