pub mod error;
pub mod grid;
pub mod helmholtz;
pub mod inversion;
pub mod medium;
pub mod misfit;
pub mod optim;
pub mod report;
pub mod wavesim;

pub use error::{Error, Result};
