//! Simulation of a squeezed-state-receiver axion haloscope, from receiver
//! noise physics through calibration, synthetic data campaigns, spectral
//! processing and Bayesian exclusion.

pub mod artifacts;
pub mod axion;
pub mod calibration;
pub mod campaign;
pub mod config;
pub mod error;
pub mod inference;
pub mod optimize;
pub mod pipeline;
pub mod quadrature;
pub mod receiver;
pub mod runner;
pub mod savgol;
pub mod spectrum_io;
pub mod stats;

pub use error::{Error, Result};
