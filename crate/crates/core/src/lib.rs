//! Simulation toolkit for a driven Kerr-nonlinear cavity dispersively coupled
//! to a mechanical resonator.
//!
//! All frequencies and rates are angular (rad/s) inside the library. Files and
//! the command line use ordinary frequencies in Hz; conversion happens once at
//! that boundary through [`units`].
//!
//! * [`steadystate`]: classical intracavity photon number, bistability and
//!   hysteresis sweeps.
//! * [`spectrum`]: linearised photon-number noise spectrum and the Stokes /
//!   anti-Stokes scattering rates.
//! * [`backaction`]: optomechanical damping, spring shift and phonon occupation
//!   per branch, and branch-resolved cooling traces.

pub mod backaction;
pub mod config;
mod cubic;
pub mod error;
pub mod io;
pub mod params;
pub mod spectrum;
pub mod steadystate;
pub mod units;

pub use error::{Error, Result};
pub use params::{
    validate, CavityParams, DriveParams, DriveStrength, MechParams, SweepDirection, SystemParams,
    ValidatedParams, Warning,
};
