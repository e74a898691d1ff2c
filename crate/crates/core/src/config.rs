//! TOML run configuration.
//!
//! Frequencies in the file are in Hz and times in µs; [`RunConfig::experiment`]
//! converts them to the rad/s and s used by the library. Every field has a
//! default, so an empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constants::TWO_PI;
use crate::detection::DetectionModel;
use crate::dynamics::DissipationConfig;
use crate::error::{Error, Result};
use crate::modchain::{raman_difference_chain, AomChain, ModulationState};
use crate::motional::{AtomConfig, TrapConfig, DEFAULT_N_MAX};
use crate::sequence::{ExperimentConfig, PulseSet, Preparation, SbcSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtomSection {
    pub mass_amu: f64,
    pub wavelength_nm: f64,
    pub linewidth_hz: f64,
    pub hyperfine_splitting_hz: f64,
}

impl Default for AtomSection {
    fn default() -> Self {
        let a = AtomConfig::default();
        Self {
            mass_amu: a.mass_amu,
            wavelength_nm: a.transition_wavelength * 1e9,
            linewidth_hz: a.linewidth_gamma / TWO_PI,
            hyperfine_splitting_hz: a.hyperfine_splitting,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapSection {
    pub axial_frequency_hz: f64,
    pub radial_frequency_hz: f64,
    pub raman_geometry_factor: f64,
    /// Fixed Lamb-Dicke parameter; omit to compute it from the geometry.
    pub eta: Option<f64>,
}

impl Default for TrapSection {
    fn default() -> Self {
        let t = TrapConfig::default();
        Self {
            axial_frequency_hz: t.omega_ax / TWO_PI,
            radial_frequency_hz: t.omega_rad / TWO_PI,
            raman_geometry_factor: t.raman_geometry_factor,
            eta: t.eta_override,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DissipationSection {
    pub repump_down_branch: f64,
    pub repump_cycles: u32,
    pub recoil_heating_per_photon: f64,
    pub leak_up_rate: f64,
    pub leak_down_rate: f64,
    pub optical_pump_time_us: f64,
}

impl Default for DissipationSection {
    fn default() -> Self {
        let d = DissipationConfig::default();
        Self {
            repump_down_branch: d.repump_down_branch,
            repump_cycles: d.repump_cycles,
            recoil_heating_per_photon: d.recoil_heating_per_photon,
            leak_up_rate: d.leak_up_rate,
            leak_down_rate: d.leak_down_rate,
            optical_pump_time_us: d.optical_pump_time * 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    pub mean_bright: f64,
    pub mean_dark: f64,
    pub exposure_us: f64,
    /// Mean dark-ion count including depumping; sets the depump rate.
    pub dark_mean_total: f64,
    pub k_max: usize,
}

impl Default for DetectionSection {
    fn default() -> Self {
        let d = DetectionModel::default();
        Self {
            mean_bright: d.mean_bright,
            mean_dark: d.mean_dark,
            exposure_us: d.exposure * 1e6,
            dark_mean_total: 0.2,
            k_max: d.k_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub raman_rabi_hz: f64,
    pub rf_rabi_hz: f64,
    pub shots_per_point: u64,
    pub seed: u64,
    pub n_max: usize,
    pub preparation: Preparation,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            raman_rabi_hz: 40.9e3,
            rf_rabi_hz: 63.74e3,
            shots_per_point: 300,
            seed: 1,
            n_max: DEFAULT_N_MAX,
            preparation: Preparation::DopplerSbc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub second_order_count: usize,
    pub second_order_n_start: usize,
    pub first_order_count: usize,
    pub first_order_n_start: usize,
    pub repeats: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = SbcSchedule::default();
        Self {
            second_order_count: s.second_order.count,
            second_order_n_start: s.second_order.n_start,
            first_order_count: s.first_order.count,
            first_order_n_start: s.first_order.n_start,
            repeats: s.repeats,
        }
    }
}

/// Sideband-ratio thermometry scans run after cooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermometrySection {
    pub probe_time_us: f64,
    /// Scan covers ±span_hz around each sideband.
    pub span_hz: f64,
    pub points: usize,
}

impl Default for ThermometrySection {
    fn default() -> Self {
        Self { probe_time_us: 45.0, span_hz: 60e3, points: 41 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModchainSection {
    pub beta: f64,
    pub mod_frequency_hz: f64,
    /// Optical frequency at the modulator (559 nm light).
    pub carrier_frequency_hz: f64,
    pub max_order: u32,
    /// Number of frequency doublings after the modulator.
    pub shg_stages: u32,
    pub aom_single_pass_hz: f64,
    pub aom_target_hz: f64,
    /// Not used by any calculation.
    pub single_pass_efficiency: f64,
    /// Not used by any calculation.
    pub double_pass_efficiency: f64,
}

impl Default for ModchainSection {
    fn default() -> Self {
        Self {
            beta: 0.58,
            mod_frequency_hz: 9.2e9,
            carrier_frequency_hz: 299_792_458.0 / 559e-9,
            max_order: 3,
            shg_stages: 1,
            aom_single_pass_hz: 450e6,
            aom_target_hz: 1.789e9,
            single_pass_efficiency: 0.7,
            double_pass_efficiency: 0.5,
        }
    }
}

impl ModchainSection {
    pub fn modulation(&self) -> ModulationState {
        ModulationState { carrier_frequency: self.carrier_frequency_hz, beta: self.beta, mod_frequency: self.mod_frequency_hz }
    }

    pub fn aom_chain(&self) -> AomChain {
        raman_difference_chain(self.aom_single_pass_hz)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub atom: AtomSection,
    pub trap: TrapSection,
    pub dissipation: DissipationSection,
    pub detection: DetectionSection,
    pub experiment: ExperimentSection,
    pub schedule: ScheduleSection,
    pub thermometry: ThermometrySection,
    pub modchain: ModchainSection,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            reason: e.message().to_string(),
        })?;
        cfg.experiment()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn schedule(&self) -> SbcSchedule {
        let s = &self.schedule;
        SbcSchedule {
            second_order: PulseSet { count: s.second_order_count, n_start: s.second_order_n_start },
            first_order: PulseSet { count: s.first_order_count, n_start: s.first_order_n_start },
            repeats: s.repeats,
        }
    }

    /// Library configuration in SI units, validated.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let atom = AtomConfig {
            mass_amu: self.atom.mass_amu,
            transition_wavelength: self.atom.wavelength_nm * 1e-9,
            linewidth_gamma: TWO_PI * self.atom.linewidth_hz,
            hyperfine_splitting: self.atom.hyperfine_splitting_hz,
        };
        let trap = TrapConfig {
            omega_ax: TWO_PI * self.trap.axial_frequency_hz,
            omega_rad: TWO_PI * self.trap.radial_frequency_hz,
            raman_geometry_factor: self.trap.raman_geometry_factor,
            eta_override: self.trap.eta,
        };
        let d = &self.dissipation;
        let dissipation = DissipationConfig {
            repump_down_branch: d.repump_down_branch,
            repump_cycles: d.repump_cycles,
            recoil_heating_per_photon: d.recoil_heating_per_photon,
            leak_up_rate: d.leak_up_rate,
            leak_down_rate: d.leak_down_rate,
            optical_pump_time: d.optical_pump_time_us * 1e-6,
        };
        let mut detection = DetectionModel {
            mean_bright: self.detection.mean_bright,
            mean_dark: self.detection.mean_dark,
            exposure: self.detection.exposure_us * 1e-6,
            depump_rate: 0.0,
            k_max: self.detection.k_max,
        };
        detection.validate()?;
        detection.depump_rate = detection.depump_rate_for_dark_mean(self.detection.dark_mean_total)?;
        let e = &self.experiment;
        let cfg = ExperimentConfig {
            atom,
            trap,
            dissipation,
            detection,
            raman_omega0: TWO_PI * e.raman_rabi_hz,
            rf_omega: TWO_PI * e.rf_rabi_hz,
            shots_per_point: e.shots_per_point,
            seed: e.seed,
            n_max: e.n_max,
            schedule: self.schedule(),
            preparation: e.preparation,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let run = RunConfig::from_toml("").unwrap();
        let cfg = run.experiment().unwrap();
        let def = ExperimentConfig::default();
        assert_eq!(cfg.schedule, def.schedule);
        assert!((cfg.raman_omega0 / def.raman_omega0 - 1.0).abs() < 1e-15);
        assert!((cfg.trap.omega_ax / def.trap.omega_ax - 1.0).abs() < 1e-15);
        assert!((cfg.detection.depump_rate / def.detection.depump_rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip() {
        let run = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&run.to_toml()).unwrap(), run);
    }

    #[test]
    fn errors_name_line_and_field() {
        let err = RunConfig::from_toml("[trap]\naxial_frequency_hz = 2e6\nbogus = 1\n").unwrap_err();
        match err {
            Error::Parse { line, reason } => {
                assert_eq!(line, 3);
                assert!(reason.contains("bogus"), "{reason}");
            }
            e => panic!("{e}"),
        }
        let err = RunConfig::from_toml("[experiment]\nshots_per_point = \"many\"\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(RunConfig::from_toml("[experiment]\nshots_per_point = 0\n").is_err());
    }

    #[test]
    fn unit_conversion() {
        let run = RunConfig::from_toml("[experiment]\nraman_rabi_hz = 1000.0\n[trap]\neta = 0.1\n").unwrap();
        let cfg = run.experiment().unwrap();
        assert!((cfg.raman_omega0 - TWO_PI * 1000.0).abs() < 1e-9);
        assert_eq!(cfg.trap.eta_override, Some(0.1));
    }
}
