//! Simulation and reconstruction toolkit for a mechanical oscillator
//! quadratically coupled to a Cooper-pair-box qubit.
//!
//! The crate synthesizes qubit spectra from phonon distributions, evolves
//! phonon populations under sideband drives with a classical master
//! equation, and inverts spectra back into phonon distributions with
//! statistically bounded Fano factors.
//!
//! Units convention: every frequency and rate is an ordinary (non-angular)
//! frequency in MHz; energies are stored as their frequency equivalents
//! (E/h in MHz). Time is in ms where it appears.

pub mod dynamics;
pub mod error;
pub mod expm;
pub mod fockspace;
pub mod optim;
pub mod rates;
pub mod reconstruct;
pub mod spectra;
pub mod special;

pub use error::{Error, Result};
pub use fockspace::{FockOperatorMatrix, Moments, PhononDistribution, WignerGrid};
pub use rates::{DitherDriveParams, SystemParams};
pub use spectra::{PsfMap, Spectrum};
