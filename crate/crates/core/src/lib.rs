//! Coherent correlation OTDR laboratory.
//!
//! The crate simulates a dual-polarization coherent OTDR probing a strained
//! fiber with a BPSK-modulated PRBS frame, and implements the receive chain:
//! matched-filter correlation, fingerprint peak selection, per-peak phase
//! tracking, section phase differences, tone identification, transient
//! detection and localization of a pressure wave from its arrival times.

pub mod analysis;
pub mod correlator;
mod error;
pub mod fibersim;
pub mod fingerprint;
pub mod probegen;
pub mod receiver;
mod signal;

pub use error::{Error, Result};
pub use signal::DualPolFrame;
