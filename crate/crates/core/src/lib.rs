//! Numerical core of a deep-clustering single-channel source separator.
//!
//! Everything here is pure computation over in-memory buffers and builds
//! without `std` (an allocator is required). File formats, the training
//! driver and the command line live in the companion `dclust` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod clustering;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fft;
pub mod linalg;
pub mod network;
pub mod nmf;
pub mod objective;
pub mod rng;
pub mod separation;
pub mod signal;

pub use error::{Error, Result};
pub use linalg::Matrix;
