//! Steady-state heat currents of a three-level quantum absorption
//! refrigerator, from weak to strong system-bath coupling.
//!
//! The cold and work baths are treated through a reaction-coordinate mapping
//! followed by a Redfield master equation for the enlarged system. Local
//! Born-Markov-Redfield and a three-level effective model are provided for
//! comparison.

pub mod analysis;
pub mod config;
pub mod effective;
pub mod error;
pub mod model;
pub mod rcmap;
pub mod redfield;

pub use error::{QarError, Result};

#[cfg(test)]
mod pipeline_tests;
