//! Coupled learning-while-optimizing first-order schemes for misspecified
//! convex programs and monotone variational inequalities.

pub mod bounds;
pub mod cli;
pub mod edisp;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod problems;
pub mod schedules;
pub mod solvers;

pub use error::{Error, Result};
pub use geometry::{FeasibleSet, Vector};
