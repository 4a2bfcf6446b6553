//! Grand-canonical observables of interacting lattice Bose gases by exact
//! diagonalization, auxiliary-field sampling, Brownian loop gases and
//! cluster expansions.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fock;
pub mod hs;
pub mod lattice;
pub mod loopgas;
pub mod mayer;
pub mod limits;
pub mod meanfield;
pub mod quad;
pub mod stats;

pub use error::{Error, Result};
