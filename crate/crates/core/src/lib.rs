#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coincidence_model;
pub mod constants;
pub mod error;
pub mod experiment_sim;
pub mod inference;
pub mod io;
mod linalg;
pub mod photon_field;
pub mod spatial_mode;
pub mod stats;
pub mod trap_dynamics;

pub use error::{Error, Result};
