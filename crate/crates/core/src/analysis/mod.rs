//! Thermometry and curve fitting for scan data.

mod fits;
mod lm;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::detection::csv_err;
use crate::error::{invalid, Error, Result};

pub use fits::{
    fit_decaying_sinusoid, fit_gaussian_resonance, fit_gaussian_resonance_fixed_shape, fit_rabi_sinusoid,
    fit_thermal_flop, thermal_flop_curve, DecayingSinusoidFit, GaussianFit, SinusoidFit, ThermalFlopFit,
};

/// One scanned series: x is a time (s) or a detuning (rad/s), y an
/// excitation probability with per-point uncertainty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma_y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScanRow {
    x: f64,
    y: f64,
    sigma_y: f64,
}

impl ScanData {
    pub fn new(x: Vec<f64>, y: Vec<f64>, sigma_y: Vec<f64>) -> Result<Self> {
        let scan = Self { x, y, sigma_y };
        scan.validate()?;
        Ok(scan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() || self.x.len() != self.sigma_y.len() {
            return Err(invalid("scan", "x, y and sigma_y must have equal lengths"));
        }
        if let Some(y) = self.y.iter().find(|y| !(0.0..=1.0).contains(*y)) {
            return Err(invalid("scan", format!("excitation {y} outside [0, 1]")));
        }
        if self.x.iter().any(|x| !x.is_finite()) {
            return Err(invalid("scan", "non-finite x"));
        }
        if self.sigma_y.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("scan", "sigma_y must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for i in 0..self.len() {
            wtr.serialize(ScanRow { x: self.x[i], y: self.y[i], sigma_y: self.sigma_y[i] })
                .map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut scan = ScanData::default();
        for row in rdr.deserialize::<ScanRow>() {
            let row = row.map_err(csv_err)?;
            scan.x.push(row.x);
            scan.y.push(row.y);
            scan.sigma_y.push(row.sigma_y);
        }
        scan.validate()?;
        Ok(scan)
    }
}

/// Serializable summary of a least-squares fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub parameter_names: Vec<String>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub dof: usize,
    /// √χ² of the weighted residuals.
    pub residual_norm: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.errors[i])
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|n| n == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thermometry {
    pub rho_red: f64,
    pub rho_blue: f64,
    /// Q = ρ_R/ρ_B.
    pub q: f64,
    pub sigma_q: f64,
    pub nbar: f64,
    pub sigma_nbar: f64,
    /// P(n = 0) = 1 − Q.
    pub p_ground: f64,
    pub sigma_p_ground: f64,
}

/// Mean occupation from the red/blue sideband amplitude ratio,
/// n̄ = Q/(1 − Q) with Q = ρ_R/ρ_B, and first-order error propagation.
pub fn nbar_from_sidebands(rho_red: f64, rho_blue: f64, sigma_red: f64, sigma_blue: f64) -> Result<Thermometry> {
    if !(rho_red >= 0.0) {
        return Err(invalid("rho_red", format!("{rho_red} must be >= 0")));
    }
    if !(rho_blue > 0.0 && rho_blue <= 1.0) {
        return Err(invalid("rho_blue", format!("{rho_blue} must be in (0, 1]")));
    }
    if !(sigma_red >= 0.0 && sigma_blue >= 0.0) {
        return Err(invalid("sigma", "uncertainties must be >= 0"));
    }
    let q = rho_red / rho_blue;
    if q >= 1.0 {
        return Err(Error::Thermometry { q });
    }
    let dq_dr = 1.0 / rho_blue;
    let dq_db = -rho_red / (rho_blue * rho_blue);
    let sigma_q = ((dq_dr * sigma_red).powi(2) + (dq_db * sigma_blue).powi(2)).sqrt();
    let nbar = q / (1.0 - q);
    let sigma_nbar = sigma_q / (1.0 - q).powi(2);
    Ok(Thermometry {
        rho_red,
        rho_blue,
        q,
        sigma_q,
        nbar,
        sigma_nbar,
        p_ground: 1.0 - q,
        sigma_p_ground: sigma_q,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidebandThermometry {
    pub red: GaussianFit,
    pub blue: GaussianFit,
    pub result: Thermometry,
    pub warnings: Vec<String>,
}

/// Fits the blue-sideband resonance freely, then the red one with center and
/// width fixed to the blue fit (the two lines share their shape), and applies
/// the ratio formula to the peak heights above baseline. A red amplitude
/// fitted below zero is taken as zero.
pub fn sideband_thermometry(red: &ScanData, blue: &ScanData) -> Result<SidebandThermometry> {
    let blue_fit = fit_gaussian_resonance(blue)?;
    if !blue_fit.report.converged {
        return Err(Error::FitFailed(format!("blue sideband fit did not converge: {:?}", blue_fit.report.warnings)));
    }
    let red_fit = fit_gaussian_resonance_fixed_shape(red, blue_fit.center, blue_fit.width)?;
    let mut warnings = Vec::new();
    let mut rho_red = red_fit.amplitude;
    if rho_red < 0.0 {
        warnings.push(format!("red amplitude {rho_red:.4} below zero; clamped"));
        rho_red = 0.0;
    }
    let result = nbar_from_sidebands(rho_red, blue_fit.amplitude.min(1.0), red_fit.sigma_amplitude, blue_fit.sigma_amplitude)?;
    Ok(SidebandThermometry { red: red_fit, blue: blue_fit, result, warnings })
}
