//! Rate-loss engine for all-photonic, multi-node quantum key distribution in
//! which classical feedforward outruns the quantum signal.
//!
//! The crate is organised bottom-up:
//!
//! * [`bounds`]: repeaterless and n-repeater secret-key capacities.
//! * [`nesting`]: ideal dual-rail nested layouts, scaling exponents and
//!   quantum-memory break-even thresholds.
//! * [`geometry`]: node positions, buffer lengths and transmissivities of the
//!   single-rail protocol.
//! * [`rates`]: success probabilities, mean waits and the small-χ key rate.
//! * [`fock`]: truncated Fock-space engine used as an independent oracle and
//!   for finite-χ, imperfect-detector key rates.
//! * [`sim`]: seeded discrete-event simulation of heralding and buffering.
//! * [`optimize`]: parameter search, crossovers and the optimal-d₂ heatmap.
//! * [`config`] and [`export`]: run configuration, presets, CSV/JSON output.

pub mod bounds;
pub mod config;
pub mod error;
pub mod export;
pub mod fock;
pub mod geometry;
pub mod nesting;
pub mod optimize;
pub mod rates;
pub mod sim;

pub use error::{Error, Result};

/// Speed of light in vacuum, km/s.
pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;
