//! Dynamic sparse sampling simulator for energy-dispersive X-ray phase
//! mapping.
//!
//! The library covers the full pipeline: synthetic multi-phase specimens
//! with per-pixel energy spectra, a two-tier spectrum classifier (an
//! autoencoder-style ill-spectrum detector in front of a 1-D convolutional
//! phase classifier), and a greedy dynamic-sampling loop that selects the
//! next pixel to measure by the expected reduction in reconstruction
//! distortion. See the `cli` crate for the command-line front end.

pub mod classifier;
pub mod config;
pub mod detector;
pub mod experiment;
pub mod metrics;
pub mod error;
pub mod io;
pub mod nn;
pub mod phantom;
pub mod rng;
pub mod slads;

pub use error::{Error, Result};
