//! Fock-space mathematics for a single harmonic mode: thermal occupation,
//! the Doppler limit, the Lamb-Dicke parameter and the motional-state
//! dependence of carrier and sideband Rabi frequencies.

use serde::{Deserialize, Serialize};

use crate::constants::{AMU, HBAR, K_B, MG25_ION_MASS_AMU, TWO_PI};
use crate::error::{invalid, Error, Result};

/// Default Fock-space cutoff for work around n̄ ≈ 10.
pub const DEFAULT_N_MAX: usize = 256;

/// Default bound on the population discarded above `n_max`.
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-6;

const NORM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    /// Atomic mass in u.
    pub mass_amu: f64,
    /// Wavelength of the Raman/cooling transition, m.
    pub transition_wavelength: f64,
    /// Natural linewidth γ of the cooling transition, rad/s.
    pub linewidth_gamma: f64,
    /// Ground-state hyperfine splitting, Hz.
    pub hyperfine_splitting: f64,
}

impl Default for AtomConfig {
    /// ²⁵Mg⁺ on the 280 nm S₁/₂ → P₃/₂ line.
    fn default() -> Self {
        Self {
            mass_amu: MG25_ION_MASS_AMU,
            transition_wavelength: 280e-9,
            linewidth_gamma: TWO_PI * 41.4e6,
            hyperfine_splitting: 1.789e9,
        }
    }
}

impl AtomConfig {
    pub fn validate(&self) -> Result<()> {
        positive_finite("mass_amu", self.mass_amu)?;
        positive_finite("transition_wavelength", self.transition_wavelength)?;
        positive_finite("linewidth_gamma", self.linewidth_gamma)?;
        positive_finite("hyperfine_splitting", self.hyperfine_splitting)
    }

    pub fn mass_kg(&self) -> f64 {
        self.mass_amu * AMU
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    /// Axial secular frequency, rad/s.
    pub omega_ax: f64,
    /// Radial secular frequency, rad/s.
    pub omega_rad: f64,
    /// Projection of the effective Raman wavevector onto the axis in units
    /// of 2π/λ. √2 for two beams crossing at 90° and each at 45° to the axis.
    pub raman_geometry_factor: f64,
    /// Measured η, used instead of the computed value when present.
    #[serde(default)]
    pub eta_override: Option<f64>,
}

impl Default for TrapConfig {
    fn default() -> Self {
        Self {
            omega_ax: TWO_PI * 2.0e6,
            omega_rad: TWO_PI * 2.3e6,
            raman_geometry_factor: std::f64::consts::SQRT_2,
            eta_override: Some(0.28),
        }
    }
}

impl TrapConfig {
    pub fn validate(&self) -> Result<()> {
        positive_finite("omega_ax", self.omega_ax)?;
        positive_finite("omega_rad", self.omega_rad)?;
        let g = self.raman_geometry_factor;
        if !(g > 0.0 && g <= 2.0) {
            return Err(invalid("raman_geometry_factor", format!("{g} not in (0, 2]")));
        }
        if let Some(eta) = self.eta_override {
            positive_finite("eta_override", eta)?;
        }
        Ok(())
    }
}

fn positive_finite(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must be positive and finite")))
    }
}

/// Occupation probabilities P(n), n = 0..=n_max, of one motional mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionalDistribution {
    populations: Vec<f64>,
}

impl MotionalDistribution {
    /// Validates normalization, range and the tail at `n_max`.
    pub fn new(populations: Vec<f64>, truncation_tol: f64) -> Result<Self> {
        if populations.is_empty() {
            return Err(invalid("populations", "empty distribution"));
        }
        if let Some(p) = populations.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid("populations", format!("entry {p} outside [0, 1]")));
        }
        let total: f64 = populations.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::Unnormalized { total });
        }
        let tail = *populations.last().unwrap();
        if populations.len() > 1 && tail > truncation_tol {
            return Err(Error::Truncation {
                n_max: populations.len() - 1,
                tail,
                tolerance: truncation_tol,
            });
        }
        Ok(Self { populations })
    }

    /// Fock state |n⟩ embedded in a space of size n_max + 1.
    pub fn fock(n: usize, n_max: usize) -> Result<Self> {
        if n > n_max {
            return Err(invalid("n", format!("{n} exceeds n_max = {n_max}")));
        }
        let mut populations = vec![0.0; n_max + 1];
        populations[n] = 1.0;
        Ok(Self { populations })
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    pub fn n_max(&self) -> usize {
        self.populations.len() - 1
    }

    pub fn mean(&self) -> f64 {
        mean_occupation(&self.populations)
    }

    pub fn ground_state_population(&self) -> f64 {
        self.populations[0]
    }
}

pub(crate) fn mean_occupation(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
}

/// Thermal (geometric) distribution P(n) = n̄ⁿ/(n̄+1)ⁿ⁺¹ truncated at `n_max`
/// and renormalized. Fails if the discarded tail exceeds the default tolerance.
pub fn thermal_distribution(nbar: f64, n_max: usize) -> Result<MotionalDistribution> {
    thermal_distribution_with_tol(nbar, n_max, DEFAULT_TRUNCATION_TOL)
}

pub fn thermal_distribution_with_tol(
    nbar: f64,
    n_max: usize,
    truncation_tol: f64,
) -> Result<MotionalDistribution> {
    if !(nbar >= 0.0 && nbar.is_finite()) {
        return Err(invalid("nbar", format!("{nbar} must be finite and >= 0")));
    }
    let q = nbar / (nbar + 1.0);
    // Population above n_max is q^(n_max + 1).
    let tail = q.powi(n_max as i32 + 1);
    if tail > truncation_tol {
        return Err(Error::Truncation { n_max, tail, tolerance: truncation_tol });
    }
    let p0 = 1.0 / (nbar + 1.0);
    let mut populations = Vec::with_capacity(n_max + 1);
    let mut p = p0;
    for _ in 0..=n_max {
        populations.push(p);
        p *= q;
    }
    let total: f64 = populations.iter().sum();
    populations.iter_mut().for_each(|p| *p /= total);
    Ok(MotionalDistribution { populations })
}

/// Doppler-limit temperature T = ħγ/2k_B and the Bose occupation of a mode
/// of angular frequency `omega` at that temperature.
pub fn doppler_limit_nbar(atom: &AtomConfig, omega: f64) -> Result<(f64, f64)> {
    atom.validate()?;
    if !(omega > 0.0) {
        return Err(invalid("omega", format!("{omega} must be positive")));
    }
    let temperature = HBAR * atom.linewidth_gamma / (2.0 * K_B);
    let x = HBAR * omega / (K_B * temperature);
    let nbar = 1.0 / x.exp_m1();
    Ok((temperature, nbar))
}

/// η = k_eff·√(ħ/2mω) with k_eff = geometry·2π/λ, or the configured override.
pub fn lamb_dicke(atom: &AtomConfig, trap: &TrapConfig) -> Result<f64> {
    trap.validate()?;
    if let Some(eta) = trap.eta_override {
        return Ok(eta);
    }
    atom.validate()?;
    let k_eff = trap.raman_geometry_factor * TWO_PI / atom.transition_wavelength;
    let x0 = (HBAR / (2.0 * atom.mass_kg() * trap.omega_ax)).sqrt();
    Ok(k_eff * x0)
}

/// Generalized Laguerre polynomial L_n^α(x) by the three-term recurrence
/// (k+1) L_{k+1} = (2k+1+α−x) L_k − (k+α) L_{k−1}.
pub fn laguerre(n: usize, alpha: usize, x: f64) -> f64 {
    let a = alpha as f64;
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + a - x;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + a - x) * cur - (k + a) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// L_0^α(x) ..= L_n^α(x) from a single recurrence pass.
pub fn laguerre_sequence(n: usize, alpha: usize, x: f64) -> Vec<f64> {
    let a = alpha as f64;
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(1.0 + a - x);
    }
    for k in 1..n {
        let kf = k as f64;
        out.push(((2.0 * kf + 1.0 + a - x) * out[k] - (kf + a) * out[k - 1]) / (kf + 1.0));
    }
    out
}

/// Signed Rabi frequency Ω_{n,n+s} for a transition from Fock state `n`
/// changing the motional quantum number by `s`:
///
/// Ω₀·e^{−η²/2}·η^{|s|}·√(n_<!/n_>!)·L_{n_<}^{|s|}(η²)
///
/// Returns exactly zero when n + s < 0.
pub fn rabi_frequency(n: usize, s: i32, eta: f64, omega0: f64) -> f64 {
    let target = n as i64 + s as i64;
    if target < 0 {
        return 0.0;
    }
    let (lo, hi) = if target < n as i64 { (target as usize, n) } else { (n, target as usize) };
    let order = (hi - lo) as i32;
    let x = eta * eta;
    // √(n_<!/n_>!) as a product; factorials overflow long before n ≈ 200.
    let ratio: f64 = ((lo + 1)..=hi).map(|k| 1.0 / (k as f64).sqrt()).product();
    omega0 * (-x / 2.0).exp() * eta.powi(order) * ratio * laguerre(lo, order as usize, x)
}

/// Smallest n at which the coupling Ω_{n,n+s} has changed sign relative to
/// the lowest addressable state, scanning n up to `n_max`.
pub fn first_zero_crossing(s: i32, eta: f64, n_max: usize) -> Option<usize> {
    let start = if s < 0 { s.unsigned_abs() as usize } else { 0 };
    if start > n_max {
        return None;
    }
    let reference = rabi_frequency(start, s, eta, 1.0).signum();
    ((start + 1)..=n_max).find(|&n| {
        let v = rabi_frequency(n, s, eta, 1.0);
        v == 0.0 || v.signum() != reference
    })
}
