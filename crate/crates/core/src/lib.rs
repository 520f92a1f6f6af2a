//! Adaptive generalized multiscale finite elements for 2D high-contrast
//! elliptic problems `-div(kappa grad u) = f` on the unit square.

pub mod adapt;
pub mod cli;
pub mod coarse;
pub mod error;
pub mod fem;
pub mod field;
pub mod grid;
pub mod indicator;
pub mod localspaces;

pub use error::{Error, Result};
