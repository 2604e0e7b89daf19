//! Interacting-particle simulation of mean-field SDEs, with audits of the
//! coefficient assumptions, Lyapunov generator checks and stability
//! diagnostics.

pub mod diagnostics;
pub mod cli;
pub mod error;
pub mod lyapunov;
pub mod measure;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
