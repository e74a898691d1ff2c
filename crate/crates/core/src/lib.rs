//! Simulation and analysis of resolved-sideband Raman cooling of a single
//! trapped ²⁵Mg⁺ ion: Fock-space couplings, population dynamics under pulses
//! and repumping, photon-count state detection, thermometry and fitting, and
//! the laser modulation chain.

pub mod analysis;
pub mod config;
pub mod constants;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod modchain;
pub mod motional;
pub mod rng;
pub mod sequence;

pub use error::{Error, Result};
