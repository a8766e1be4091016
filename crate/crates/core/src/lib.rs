//! Fisher-preconditioned policy gradient (QPPG) with its baselines, a
//! single-qubit density-matrix simulator and three training environments.

pub mod error;
pub mod fisher;
pub mod harness;
pub mod net;
pub mod agents;
pub mod env;
pub mod quantum;

pub use error::{Error, Result};
