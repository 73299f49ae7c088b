//! Spin squeezing in two-component condensates: exact single-mode dynamics,
//! truncated-Wigner ensembles, Gross-Pitaevskii fields and metrology estimators.

pub mod error;
pub mod grid;
pub mod params;
pub mod accum;
pub mod observables;
pub mod dicke;
pub mod two_mode;
pub mod gpe;
pub mod multimode;
pub mod calibration;

pub use error::{Error, Result};
pub use grid::SpatialGrid;
