//! Biased random walk on the ladder graph under conditioned bond percolation.
//!
//! The crate samples environments exactly, computes the electrical quantities
//! of their blocks, builds the harmonic coordinate and corrector, simulates
//! the lazy biased walk with its Girsanov decomposition, detects
//! regenerations, and estimates speed and diffusivity.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod corrector;
pub mod electrical;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod oracles;
pub mod percolation;
pub mod regeneration;
pub mod report;
pub mod rng;
pub mod selftest;
pub mod stats;
pub mod walk;

pub use error::{LadderError, Result};
