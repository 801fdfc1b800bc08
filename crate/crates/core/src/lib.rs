//! Quantum-jump simulation of two dipole-interacting three-level V atoms.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod hilbert;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{ModelParams, C64};
