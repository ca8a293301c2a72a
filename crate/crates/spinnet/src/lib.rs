//! Deterministic simulator of distributed atomic sensor networks.
//!
//! The crate models networks of collective-spin modes — cold-atom ensembles
//! addressed by shared microwave and optical fields — in the Gaussian
//! (large atom number, small transverse angle) regime, where every protocol
//! of interest is exactly linear. On top of the state model it provides:
//!
//! - dispersive collective probes that entangle the modes by measuring the
//!   summed spin, plus destructive fluorescence readout
//!   ([`measurement`]);
//! - pulse-sequence timelines (Ramsey, spin echo, and a momentum-space
//!   interferometer) executed as single trials with per-trial noise streams
//!   ([`sequence`]);
//! - estimators and closed-form references for the metrological quantities
//!   the protocols target — squeezing parameters, angular sensitivities,
//!   phase responses, stability curves ([`metrology`]);
//! - a scenario harness that runs batches of trials over parameter sweeps
//!   with deterministic, seedable randomness ([`harness`]);
//! - TOML configuration, presets, and tabular export ([`config`],
//!   [`export`]).
//!
//! Every simulation is reproducible: one master seed determines every
//! random draw, independent of thread scheduling.

pub mod config;
pub mod constants;
pub mod error;
pub mod export;
pub mod harness;
pub mod measurement;
pub mod metrology;
pub mod network;
pub mod sequence;

pub use error::{Error, Result};
