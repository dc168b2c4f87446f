//! Numerical laboratory for the linearized inverse radiative transfer problem
//! in the diffusive (`Kn -> 0`) and forward-peaked (`eps -> 0`) regimes.

pub mod error;
pub mod grids;
pub mod inversion;
pub mod kernels;
pub mod linalg;
pub mod moments;
pub mod peaked;
pub mod quad;
pub mod diffusion;
pub mod transport;

pub use error::{Error, Result};
