//! Lorentz force dynamics as the autoparallel flow of a velocity-dependent
//! connection, its affine average over a particle distribution, and the
//! diagnostics that compare the two flows and the cold-fluid picture.

pub mod averaging;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod kinetic;
pub mod reduce;
pub mod solver;
pub mod tensor;
pub mod validation;

pub use error::{Error, Result};
