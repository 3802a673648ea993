//! Evaluation stack for object-centric representations.
//!
//! The crate is `no_std` (with `alloc`) and contains only pure computation:
//! a small reverse-mode differentiation tape, slot attention, HOG targets,
//! the multi-target reconstruction trainer, the question-answering probe,
//! slot attribution, the grounded metric suite and the grounded-QA data
//! model. File formats and the command line live in the `oclbench` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod array;
pub mod attribution;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod hog;
pub mod metrics;
pub mod mfresa;
pub mod nn;
pub mod probe;
pub mod rng;
pub mod slot_attention;

pub use array::Array;
pub use autodiff::{Gradients, Primitive, Tape, Var};
pub use error::{Error, Result};
