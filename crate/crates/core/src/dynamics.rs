//! Population-level evolution of the joint internal × motional state under
//! coherent pulses and dissipative steps.
//!
//! The state is kept diagonal between operations. Each coherent pulse acts on
//! the two-level subspaces {(↓, n), (↑, n + s)} independently, with the
//! detuned Rabi transfer probability evaluated in closed form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::motional::{
    doppler_limit_nbar, mean_occupation, rabi_frequency, thermal_distribution, AtomConfig,
    MotionalDistribution, TrapConfig,
};

const NORM_TOL: f64 = 1e-9;

/// Internal levels tracked by the simulator.
///
/// `Down` is |F=3, m_F=3⟩ (bright, cooling target), `Up` is |2,2⟩ (dark) and
/// `Aux` is |3,2⟩, reachable by spontaneous decay during repumping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Down,
    Up,
    Aux,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Down, Level::Up, Level::Aux];

    fn index(self) -> usize {
        match self {
            Level::Down => 0,
            Level::Up => 1,
            Level::Aux => 2,
        }
    }
}

/// Joint populations P(level, n).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IonState {
    pop: [Vec<f64>; 3],
}

impl IonState {
    /// All population in `level` with motional distribution `motion`.
    pub fn product(level: Level, motion: &MotionalDistribution) -> Self {
        let len = motion.populations().len();
        let mut pop = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
        pop[level.index()].copy_from_slice(motion.populations());
        Self { pop }
    }

    pub fn fock(level: Level, n: usize, n_max: usize) -> Result<Self> {
        Ok(Self::product(level, &MotionalDistribution::fock(n, n_max)?))
    }

    /// Builds a state from explicit populations, checking range and normalization.
    pub fn from_populations(down: Vec<f64>, up: Vec<f64>, aux: Vec<f64>) -> Result<Self> {
        if down.is_empty() || down.len() != up.len() || down.len() != aux.len() {
            return Err(invalid("populations", "level vectors must be non-empty and equal length"));
        }
        let state = Self { pop: [down, up, aux] };
        if let Some(p) = state.pop.iter().flatten().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid("populations", format!("entry {p} outside [0, 1]")));
        }
        state.check_normalized()?;
        Ok(state)
    }

    pub fn n_max(&self) -> usize {
        self.pop[0].len() - 1
    }

    pub fn level(&self, level: Level) -> &[f64] {
        &self.pop[level.index()]
    }

    pub fn get(&self, level: Level, n: usize) -> f64 {
        self.pop[level.index()][n]
    }

    pub fn level_population(&self, level: Level) -> f64 {
        self.level(level).iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.pop.iter().flatten().sum()
    }

    /// Motional distribution traced over the internal levels.
    pub fn motional_marginal(&self) -> Vec<f64> {
        (0..=self.n_max()).map(|n| self.pop.iter().map(|l| l[n]).sum()).collect()
    }

    pub fn mean_n(&self) -> f64 {
        mean_occupation(&self.motional_marginal())
    }

    /// Probability of a bright detection outcome (only |↓⟩ fluoresces).
    pub fn bright_probability(&self) -> f64 {
        self.level_population(Level::Down)
    }

    pub fn check_normalized(&self) -> Result<()> {
        let total = self.total();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::Unnormalized { total });
        }
        Ok(())
    }

    fn levels_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<f64>, &mut Vec<f64>) {
        let [d, u, a] = &mut self.pop;
        (d, u, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseKind {
    /// Raman carrier, Δn = 0.
    Carrier,
    /// Raman sideband changing n by `order` (negative = red).
    Sideband(i32),
    /// Microwave drive on |↓⟩ ↔ |↑⟩, motion-independent.
    Rf,
    /// Microwave drive on |3,2⟩ ↔ |↑⟩.
    RfRecover,
    /// One complete repump block (optical pumping plus RF recovery cycles).
    Repump,
    DopplerCool,
    /// Raman beams on but not driving a resonance; leakage only.
    RamanIdle,
}

impl PulseKind {
    pub fn name(&self) -> &'static str {
        match self {
            PulseKind::Carrier => "carrier",
            PulseKind::Sideband(_) => "sideband",
            PulseKind::Rf => "rf",
            PulseKind::RfRecover => "rf_recover",
            PulseKind::Repump => "repump",
            PulseKind::DopplerCool => "doppler_cool",
            PulseKind::RamanIdle => "raman_idle",
        }
    }

    /// Change of motional quantum number driven by this pulse, when coherent.
    pub fn order(&self) -> i32 {
        match self {
            PulseKind::Sideband(s) => *s,
            _ => 0,
        }
    }

    /// Whether the Raman beams illuminate the ion during this step.
    pub fn is_raman(&self) -> bool {
        matches!(self, PulseKind::Carrier | PulseKind::Sideband(_) | PulseKind::RamanIdle)
    }
}

impl fmt::Display for PulseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PulseKind::Sideband(s) => write!(f, "sideband({s:+})"),
            k => f.write_str(k.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub kind: PulseKind,
    /// Seconds.
    pub duration: f64,
    /// Bare Rabi frequency, rad/s.
    pub omega0: f64,
    /// Detuning from the addressed resonance, rad/s.
    pub detuning: f64,
}

impl PulseSpec {
    pub fn new(kind: PulseKind, duration: f64, omega0: f64) -> Self {
        Self { kind, duration, omega0, detuning: 0.0 }
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.detuning = detuning;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", format!("{} must be finite and >= 0", self.duration)));
        }
        if !self.omega0.is_finite() || !self.detuning.is_finite() {
            return Err(invalid("omega0/detuning", "must be finite"));
        }
        if let PulseKind::Sideband(s) = self.kind {
            if !matches!(s, -2 | -1 | 1 | 2) {
                return Err(invalid("order", format!("sideband order {s} not in {{-2,-1,+1,+2}}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationConfig {
    /// Probability that an optically pumped ion lands in |↓⟩ rather than |3,2⟩.
    pub repump_down_branch: f64,
    /// Optical pump + RF recovery cycles per repump block.
    pub repump_cycles: u32,
    /// Mean phonon gain per scattering event.
    pub recoil_heating_per_photon: f64,
    /// |↓⟩ → |↑⟩ rate under Raman illumination, 1/s.
    pub leak_up_rate: f64,
    /// |↑⟩ → |↓⟩ rate under Raman illumination, 1/s.
    pub leak_down_rate: f64,
    /// Duration of one optical repump pulse, s.
    pub optical_pump_time: f64,
}

impl Default for DissipationConfig {
    fn default() -> Self {
        Self {
            repump_down_branch: 0.5,
            repump_cycles: 4,
            recoil_heating_per_photon: 0.0,
            // 0.02 %/µs and 0.06 %/µs
            leak_up_rate: 200.0,
            leak_down_rate: 600.0,
            optical_pump_time: 5e-6,
        }
    }
}

impl DissipationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.repump_down_branch) {
            return Err(invalid("repump_down_branch", "must be a probability"));
        }
        for (name, v) in [
            ("recoil_heating_per_photon", self.recoil_heating_per_photon),
            ("leak_up_rate", self.leak_up_rate),
            ("leak_down_rate", self.leak_down_rate),
            ("optical_pump_time", self.optical_pump_time),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("{v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Wall-clock length of one repump block given the RF π-time.
    pub fn block_duration(&self, rf_pi_time: f64) -> f64 {
        self.repump_cycles as f64 * (self.optical_pump_time + rf_pi_time) + self.optical_pump_time
    }
}

/// Transition probability of a two-level system driven for `t` at Rabi
/// frequency `omega` and detuning `delta`.
pub fn rabi_transfer(omega: f64, delta: f64, t: f64) -> f64 {
    let gen2 = omega * omega + delta * delta;
    if gen2 == 0.0 {
        return 0.0;
    }
    let s = (gen2.sqrt() * t / 2.0).sin();
    omega * omega / gen2 * s * s
}

/// Mixes populations of `a[i]` and `b[j]` pairwise with probability `p`.
fn swap_partial(a: &mut [f64], i: usize, b: &mut [f64], j: usize, p: f64) {
    let (x, y) = (a[i], b[j]);
    let moved = p * (x - y);
    a[i] = x - moved;
    b[j] = y + moved;
}

/// Raman carrier/sideband or RF pulse on |↓, n⟩ ↔ |↑, n + s⟩.
pub fn apply_coherent_pulse(state: &IonState, pulse: &PulseSpec, eta: f64) -> Result<IonState> {
    pulse.validate()?;
    let (s, motional) = match pulse.kind {
        PulseKind::Carrier => (0, true),
        PulseKind::Sideband(s) => (s, true),
        PulseKind::Rf => (0, false),
        other => return Err(Error::WrongPulseKind(other.to_string())),
    };
    state.check_normalized()?;
    let mut out = state.clone();
    let n_max = state.n_max() as i64;
    let (down, up, _) = out.levels_mut();
    for n in 0..=n_max {
        let m = n + s as i64;
        if m < 0 || m > n_max {
            continue;
        }
        let omega = if motional {
            rabi_frequency(n as usize, s, eta, pulse.omega0)
        } else {
            pulse.omega0
        };
        let p = rabi_transfer(omega, pulse.detuning, pulse.duration);
        swap_partial(down, n as usize, up, m as usize, p);
    }
    Ok(out)
}

/// Microwave pulse: `Rf` drives |↓⟩ ↔ |↑⟩, `RfRecover` drives |3,2⟩ ↔ |↑⟩.
/// Motion is not coupled.
pub fn apply_rf_pulse(state: &IonState, pulse: &PulseSpec) -> Result<IonState> {
    pulse.validate()?;
    state.check_normalized()?;
    let p = rabi_transfer(pulse.omega0, pulse.detuning, pulse.duration);
    let mut out = state.clone();
    let (down, up, aux) = out.levels_mut();
    let other = match pulse.kind {
        PulseKind::Rf => down,
        PulseKind::RfRecover => aux,
        k => return Err(Error::WrongPulseKind(k.to_string())),
    };
    for n in 0..other.len() {
        swap_partial(other, n, up, n, p);
    }
    Ok(out)
}

/// Shifts a motional distribution by Poisson(mean) quanta, piling overflow
/// into the last bin.
fn recoil_kernel(motion: &[f64], mean: f64) -> Vec<f64> {
    if mean == 0.0 {
        return motion.to_vec();
    }
    let len = motion.len();
    let mut kernel = Vec::with_capacity(len);
    let mut p = (-mean).exp();
    for k in 0..len {
        kernel.push(p);
        p *= mean / (k + 1) as f64;
    }
    let mut out = vec![0.0; len];
    for (n, &pn) in motion.iter().enumerate().filter(|(_, p)| **p != 0.0) {
        let mut placed = 0.0;
        for (k, &w) in kernel.iter().enumerate().take(len - 1 - n) {
            out[n + k] += pn * w;
            placed += pn * w;
        }
        out[len - 1] += pn - placed;
    }
    out
}

fn optical_pump(state: &mut IonState, cfg: &DissipationConfig) {
    let (down, up, aux) = state.levels_mut();
    let scattered = recoil_kernel(up, cfg.recoil_heating_per_photon);
    for n in 0..up.len() {
        down[n] += cfg.repump_down_branch * scattered[n];
        aux[n] += (1.0 - cfg.repump_down_branch) * scattered[n];
        up[n] = 0.0;
    }
}

/// One repump block: `repump_cycles` × (optical pump, RF recovery π-pulse),
/// then a final optical pump.
pub fn apply_repump(state: &IonState, cfg: &DissipationConfig) -> Result<IonState> {
    cfg.validate()?;
    let mut out = state.clone();
    for _ in 0..cfg.repump_cycles {
        optical_pump(&mut out, cfg);
        let (_, up, aux) = out.levels_mut();
        std::mem::swap(up, aux);
    }
    optical_pump(&mut out, cfg);
    Ok(out)
}

/// Resets the ion to |↓⟩ with a thermal axial distribution at the Doppler limit.
pub fn apply_doppler_cool(state: &IonState, atom: &AtomConfig, trap: &TrapConfig) -> Result<IonState> {
    trap.validate()?;
    let (_, nbar) = doppler_limit_nbar(atom, trap.omega_ax)?;
    let motion = thermal_distribution(nbar, state.n_max())?;
    Ok(IonState::product(Level::Down, &motion))
}

/// First-order off-resonant leakage for `duration` seconds. The returned flag
/// is set if either rate·t exceeded one and was clamped.
pub fn apply_leakage(state: &IonState, duration: f64, cfg: &DissipationConfig) -> Result<(IonState, bool)> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(invalid("duration", format!("{duration} must be finite and >= 0")));
    }
    cfg.validate()?;
    let raw_up = cfg.leak_up_rate * duration;
    let raw_down = cfg.leak_down_rate * duration;
    let clamped = raw_up > 1.0 || raw_down > 1.0;
    let (p_up, p_down) = (raw_up.min(1.0), raw_down.min(1.0));
    let mut out = state.clone();
    if p_up == 0.0 && p_down == 0.0 {
        return Ok((out, false));
    }
    let (down, up, _) = out.levels_mut();
    for n in 0..down.len() {
        let flow = p_up * down[n] - p_down * up[n];
        down[n] -= flow;
        up[n] += flow;
    }
    Ok((out, clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::TWO_PI;
    use approx::assert_relative_eq;

    const ETA: f64 = 0.28;

    fn pulse(kind: PulseKind, t: f64) -> PulseSpec {
        PulseSpec::new(kind, t, 1.0)
    }

    #[test]
    fn resonant_carrier_pi_pulse() {
        let s = IonState::fock(Level::Down, 0, 5).unwrap();
        let t = std::f64::consts::PI / (-ETA * ETA / 2.0).exp();
        let out = apply_coherent_pulse(&s, &pulse(PulseKind::Carrier, t), ETA).unwrap();
        assert_relative_eq!(out.get(Level::Up, 0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn red_sideband_dark_state() {
        let s = IonState::fock(Level::Down, 0, 5).unwrap();
        for t in [0.3, 7.0, 123.0] {
            let out = apply_coherent_pulse(&s, &pulse(PulseKind::Sideband(-1), t), ETA).unwrap();
            assert_eq!(out, s);
        }
    }

    #[test]
    fn detuned_carrier() {
        let s = IonState::fock(Level::Down, 0, 5).unwrap();
        let omega_eff = (-ETA * ETA / 2.0).exp();
        let t = std::f64::consts::PI / omega_eff;
        let p = pulse(PulseKind::Carrier, t).with_detuning(omega_eff);
        let out = apply_coherent_pulse(&s, &p, ETA).unwrap();
        let expect = 0.5 * (std::f64::consts::PI / std::f64::consts::SQRT_2).sin().powi(2);
        assert_relative_eq!(out.level_population(Level::Up), expect, epsilon = 1e-12);
        assert!((expect - 0.316).abs() < 1e-3);
    }

    #[test]
    fn coherent_pulse_rejects_bad_input() {
        let s = IonState::fock(Level::Down, 0, 3).unwrap();
        assert!(matches!(
            apply_coherent_pulse(&s, &pulse(PulseKind::Repump, 1.0), ETA),
            Err(Error::WrongPulseKind(_))
        ));
        let bad = IonState { pop: [vec![0.5, 0.0], vec![0.0; 2], vec![0.0; 2]] };
        assert!(matches!(
            apply_coherent_pulse(&bad, &pulse(PulseKind::Carrier, 1.0), ETA),
            Err(Error::Unnormalized { .. })
        ));
        assert!(apply_coherent_pulse(&s, &pulse(PulseKind::Sideband(3), 1.0), ETA).is_err());
    }

    #[test]
    fn rf_flop_and_recovery() {
        let omega = TWO_PI * 63.74e3;
        let s = IonState::fock(Level::Down, 3, 8).unwrap();
        for k in 0..20 {
            let t = k as f64 * 2e-6;
            let out = apply_rf_pulse(&s, &PulseSpec::new(PulseKind::Rf, t, omega)).unwrap();
            assert_relative_eq!(out.level_population(Level::Up), (omega * t / 2.0).sin().powi(2), epsilon = 1e-12);
        }
        let id = apply_rf_pulse(&s, &PulseSpec::new(PulseKind::Rf, 0.0, omega)).unwrap();
        assert_eq!(id, s);

        let aux = IonState::fock(Level::Aux, 2, 8).unwrap();
        let pi = std::f64::consts::PI / omega;
        let out = apply_rf_pulse(&aux, &PulseSpec::new(PulseKind::RfRecover, pi, omega)).unwrap();
        assert_relative_eq!(out.get(Level::Up, 2), 1.0, epsilon = 1e-12);
        assert!(apply_rf_pulse(&aux, &PulseSpec::new(PulseKind::Carrier, pi, omega)).is_err());
    }

    #[test]
    fn repump_fixed_point_and_branching() {
        let cfg = DissipationConfig::default();
        let down = IonState::fock(Level::Down, 4, 10).unwrap();
        assert_eq!(apply_repump(&down, &cfg).unwrap(), down);

        let up = IonState::fock(Level::Up, 4, 10).unwrap();
        let out = apply_repump(&up, &cfg).unwrap();
        // geometric series: 1 - 0.5^(cycles + 1)
        assert_relative_eq!(out.level_population(Level::Down), 1.0 - 0.5f64.powi(5), epsilon = 1e-15);
        assert!(out.level_population(Level::Down) >= 0.93);
        assert_relative_eq!(out.total(), 1.0, epsilon = 1e-15);
        // no recoil: motion untouched
        assert_eq!(out.motional_marginal(), up.motional_marginal());

        let ideal = DissipationConfig { repump_down_branch: 1.0, repump_cycles: 1, ..cfg };
        let out = apply_repump(&up, &ideal).unwrap();
        assert_eq!(out.get(Level::Down, 4), 1.0);
    }

    #[test]
    fn repump_recoil_heats() {
        let cfg = DissipationConfig { repump_down_branch: 1.0, recoil_heating_per_photon: 0.3, ..Default::default() };
        let up = IonState::fock(Level::Up, 2, 30).unwrap();
        let out = apply_repump(&up, &cfg).unwrap();
        assert_relative_eq!(out.mean_n(), 2.3, epsilon = 1e-12);
        assert_relative_eq!(out.total(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn doppler_reset() {
        let atom = AtomConfig::default();
        let trap = TrapConfig::default();
        let s = IonState::fock(Level::Up, 3, 256).unwrap();
        let once = apply_doppler_cool(&s, &atom, &trap).unwrap();
        assert_relative_eq!(once.level_population(Level::Down), 1.0, epsilon = 1e-12);
        let (_, nbar) = doppler_limit_nbar(&atom, trap.omega_ax).unwrap();
        assert_relative_eq!(once.mean_n(), nbar, max_relative = 1e-6);
        assert!((once.mean_n() - 9.9).abs() < 0.3);
        let twice = apply_doppler_cool(&once, &atom, &trap).unwrap();
        assert_eq!(once, twice);
        let other = TrapConfig { eta_override: None, ..trap };
        assert_eq!(apply_doppler_cool(&s, &atom, &other).unwrap(), once);
    }

    #[test]
    fn leakage_rates() {
        let cfg = DissipationConfig::default();
        let down = IonState::fock(Level::Down, 0, 4).unwrap();
        let (out, clamped) = apply_leakage(&down, 100e-6, &cfg).unwrap();
        assert!(!clamped);
        assert_relative_eq!(out.level_population(Level::Up), 0.02, epsilon = 1e-12);

        let up = IonState::fock(Level::Up, 1, 4).unwrap();
        let (out, _) = apply_leakage(&up, 50e-6, &cfg).unwrap();
        assert_relative_eq!(out.level_population(Level::Down), 0.03, epsilon = 1e-12);

        let off = DissipationConfig { leak_up_rate: 0.0, leak_down_rate: 0.0, ..cfg.clone() };
        assert_eq!(apply_leakage(&down, 1.0, &off).unwrap().0, down);

        let (out, clamped) = apply_leakage(&up, 1.0, &cfg).unwrap();
        assert!(clamped);
        assert_relative_eq!(out.total(), 1.0, epsilon = 1e-15);
    }
}
