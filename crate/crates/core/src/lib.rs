//! Periodic orbits of planar two-center Stark–Zeeman systems via a
//! Birkhoff-regularized action on the blown-up loop space.

pub mod error;
pub mod action;
pub mod cli;
pub mod dynamics;
pub mod fields;
pub mod geometry;
pub mod gradcheck;
pub mod loopspace;
mod spectral;
pub mod solver;

pub use error::{Error, Result};
