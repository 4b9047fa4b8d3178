//! Simulation and analysis of photonic entanglement swapping between two
//! polarization-entangled pairs emitted by a quantum-dot biexciton cascade.

// `!(x > 0.0)` is used deliberately so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the tensor algebra they implement
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod interference;
pub mod mc;
pub mod qstate;
mod quad;
pub mod source;
pub mod swap;
pub mod tomography;

pub use error::{Error, Result};
