#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Spectral simulation and fluctuation analysis of translation-invariant
//! random fields on the integer lattice.

pub mod cli;
pub mod entropy;
pub mod error;
pub mod fluctuations;
pub mod geometry;
pub mod moments;
pub mod numerics;
pub mod sampler;
pub mod spectral_models;
mod util;

pub use error::{Error, Result};
