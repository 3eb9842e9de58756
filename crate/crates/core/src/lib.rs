//! Penalized B-spline regression with the string-energy prior.
//!
//! The crate covers basis evaluation ([`bspline`]), exact penalty assembly ([`penalty`]),
//! additive and vector-valued design matrices ([`model`]), Gibbs sampling and conditional-mode
//! iteration ([`sampler`]), smoothing diagnostics ([`diagnostics`]), synthetic data
//! ([`datagen`]) and the method-comparison studies ([`benchmark`]).

pub mod benchmark;
pub mod bspline;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod model;
pub mod penalty;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
