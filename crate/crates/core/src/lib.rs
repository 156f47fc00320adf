//! Forward simulation and reconstruction for widefield magnetometry with
//! spin-3/2 silicon-vacancy centers in 4H-SiC.
//!
//! The crate is organised along the data flow of a lock-in camera
//! experiment:
//!
//! * [`spin`] holds the resonance physics and the lock-in response of the
//!   three sensing protocols (single-frequency AM/FM, dual-frequency FM and
//!   the microwave-free level-anticrossing protocol).
//! * [`calibration`] samples a protocol response into a signal-vs-field
//!   curve and inverts it on its monotone interval.
//! * [`field`] computes the field of a straight wire projected on the bias
//!   axis and averaged over the sensor thickness.
//! * [`framesim`] synthesizes demodulated I/Q frame stacks.
//! * [`recon`] turns frame stacks back into field maps, traces and currents.

pub mod calibration;
pub mod error;
pub mod field;
pub mod framesim;
pub mod lm;
pub mod quadrature;
pub mod recon;
pub mod rng;
pub mod spin;

pub use error::{Error, Result};
