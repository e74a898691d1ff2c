//! Physical constants (CODATA 2018 exact or recommended values).
//!
//! Quoted to at least six significant figures: ħ = 1.05457e-34 J·s,
//! k_B = 1.38065e-23 J/K, u = 1.66054e-27 kg.

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;

/// Unified atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;

/// Mass of ²⁵Mg⁺ in atomic mass units (neutral mass minus one electron).
pub const MG25_ION_MASS_AMU: f64 = 24.985_288;

pub const TWO_PI: f64 = std::f64::consts::TAU;
