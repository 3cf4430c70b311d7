//! Variational hyperspectral unmixing with per-pixel endmember variability
//! and nonlinear mixing.

pub mod checkpoint;
pub mod data;
pub mod diffcore;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod generative;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod seeds;
pub mod special;

pub use error::{Result, UnmixError};
