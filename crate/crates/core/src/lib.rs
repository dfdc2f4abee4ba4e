//! Desk-scale numerics for weighted `L^p`-`L^q` decay of the heat and Stokes
//! semigroups on `R^n`, exterior-domain construction tools, and
//! time-periodic Navier-Stokes mild solutions computed by Picard iteration
//! of the Poincare map.
//!
//! The whole space is replaced by the periodic cube `[-L, L)^n` sampled on a
//! uniform grid; see [`grid`]. Inner loops run through [`exec`], which uses
//! rayon when the `parallel` feature is enabled.

// Validation is written as `!(x > lo)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod exec;
pub mod exterior;
pub mod grid;
pub mod periodic;
pub mod semigroup;
pub mod weights;

pub use error::{Error, Result};
pub use grid::{integrate, Field, Grid, SpectralField};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
