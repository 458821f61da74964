//! Gradient-flow dynamics of deep ReLU networks trained with the
//! exponential loss.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! core: network evaluation and exact gradients ([`net`]), the family of
//! continuous-time flows ([`dynamics`]), fixed-step integration with event
//! detection ([`integrator`]), trajectory analysis ([`analysis`]),
//! independent ground-truth computations ([`oracles`]) and seeded synthetic
//! data ([`datasets`]). File formats and the command line live in the
//! `marginflow-cli` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod datasets;
pub mod dynamics;
mod error;
pub mod integrator;
pub mod net;
pub mod oracles;

pub use error::{Error, Result};
pub use net::{Dataset, Label, NetworkParams, NormalizedParams, Sample};

/// Dense real matrix used for every weight layer.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type Vector = nalgebra::DVector<f64>;
