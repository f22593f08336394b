//! Sub-Finsler workbench: exact polynomial frames, flags and privileged coordinates,
//! nilpotent approximation, numerical distances, measures of balls, tangent checks and
//! entropy-convexity experiments.

pub mod cdlab;
pub mod coords;
pub mod error;
pub mod experiments;
pub mod geodesic;
pub mod measure;
pub mod nilpotent;
pub mod pmgh;
pub mod sampling;
pub mod structure;
pub mod symvf;

pub use error::{Result, SflabError};
