//! Spectral-Galerkin simulation of one-dimensional stochastic energy balance
//! climate models of Budyko and Sellers type, with Legendre-weighted
//! degenerate diffusion and additive Wiener forcing.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constitutive;
pub mod error;
pub mod legendre;
pub mod noise;
pub mod solver;
pub mod stationary;

pub use error::{Error, Result};
