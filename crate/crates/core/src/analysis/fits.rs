//! Resonance and Rabi-flop fitters.
//!
//! Every fitter works in rescaled coordinates (x divided by its span, and
//! centered for resonances) and converts parameters back to input units, so
//! results do not depend on whether x is given in s or µs.
//!
//! Initialization: resonances start from the highest point, the mean of the
//! outer 15 % of the scan as baseline and the half-maximum width. Oscillation
//! frequencies start from the peak of a least-squares periodogram; if no peak
//! stands out the fallback is a quarter of the number of samples per span,
//! and a warning is recorded.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{chi2_at, covariance_at, least_squares, LsqFit, Model};
use super::{FitReport, ScanData};
use crate::error::{invalid, Result};
use crate::motional::laguerre_sequence;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

fn report(model: &str, names: &[&str], values: Vec<f64>, cov: &DMatrix<f64>, chi2: f64, dof: usize, converged: bool, warnings: Vec<String>) -> FitReport {
    let n = values.len();
    FitReport {
        model: model.to_string(),
        parameter_names: names.iter().map(|s| s.to_string()).collect(),
        errors: (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        covariance: (0..n).map(|i| (0..n).map(|j| cov[(i, j)]).collect()).collect(),
        values,
        chi2,
        dof,
        residual_norm: chi2.sqrt(),
        converged,
        warnings,
    }
}

/// Rescales a covariance for parameters multiplied by `scales`.
fn scale_covariance(cov: &DMatrix<f64>, scales: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| cov[(i, j)] * scales[i] * scales[j])
}

fn require_points(scan: &ScanData, min: usize) -> Result<()> {
    scan.validate()?;
    if scan.len() < min {
        return Err(invalid("scan", format!("need at least {min} points, got {}", scan.len())));
    }
    Ok(())
}

fn time_scale(x: &[f64]) -> f64 {
    let s = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if s > 0.0 { s } else { 1.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub center: f64,
    pub amplitude: f64,
    pub width: f64,
    pub baseline: f64,
    pub sigma_center: f64,
    pub sigma_amplitude: f64,
    pub sigma_width: f64,
    pub sigma_baseline: f64,
    pub report: FitReport,
}

struct Centered {
    offset: f64,
    scale: f64,
    x: Vec<f64>,
}

fn center_axis(x: &[f64]) -> Centered {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let offset = 0.5 * (lo + hi);
    let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
    Centered { offset, scale, x: x.iter().map(|v| (v - offset) / scale).collect() }
}

fn gaussian(x: f64, p: &[f64]) -> f64 {
    let z = (x - p[0]) / p[2];
    p[3] + p[1] * (-0.5 * z * z).exp()
}

fn edge_baseline(y: &[f64]) -> f64 {
    let k = ((y.len() as f64 * 0.15).ceil() as usize).max(1);
    let edges: Vec<f64> = y[..k].iter().chain(&y[y.len() - k..]).copied().collect();
    edges.iter().sum::<f64>() / edges.len() as f64
}

/// Weighted least-squares fit of y = b + A·exp(−(x−x₀)²/2w²). The amplitude A
/// is the peak height above the fitted baseline.
pub fn fit_gaussian_resonance(scan: &ScanData) -> Result<GaussianFit> {
    require_points(scan, 5)?;
    let axis = center_axis(&scan.x);
    let mut order: Vec<usize> = (0..scan.len()).collect();
    order.sort_by(|&a, &b| axis.x[a].total_cmp(&axis.x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| axis.x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| scan.y[i]).collect();

    let b0 = edge_baseline(&ys);
    let (peak, &y_peak) = ys.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let a0 = y_peak - b0;
    let half = b0 + 0.5 * a0;
    let left = (0..peak).rev().find(|&i| ys[i] < half).map_or(xs[0], |i| xs[i]);
    let right = (peak..xs.len()).find(|&i| ys[i] < half).map_or(xs[xs.len() - 1], |i| xs[i]);
    let min_step = xs.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    let w0 = ((right - left) / FWHM_PER_SIGMA).max(min_step.min(1.0));
    let p0 = [xs[peak], a0, w0, b0];

    let model: &Model = &gaussian;
    let fit = least_squares(model, &axis.x, &scan.y, &scan.sigma_y, &p0);
    let mut p = fit.params.clone();
    p[2] = p[2].abs();
    let cov = covariance_at(model, &axis.x, &scan.y, &scan.sigma_y, &p);
    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push(format!("no convergence: {}", fit.termination));
    }
    let values = vec![axis.offset + axis.scale * p[0], p[1], axis.scale * p[2], p[3]];
    let cov = scale_covariance(&cov, &[axis.scale, 1.0, axis.scale, 1.0]);
    let report = report(
        "gaussian",
        &["center", "amplitude", "width", "baseline"],
        values.clone(),
        &cov,
        fit.chi2,
        fit.dof,
        fit.converged,
        warnings,
    );
    Ok(GaussianFit {
        center: values[0],
        amplitude: values[1],
        width: values[2],
        baseline: values[3],
        sigma_center: report.errors[0],
        sigma_amplitude: report.errors[1],
        sigma_width: report.errors[2],
        sigma_baseline: report.errors[3],
        report,
    })
}

/// Gaussian fit with center and width held fixed; only amplitude and
/// baseline are free.
pub fn fit_gaussian_resonance_fixed_shape(scan: &ScanData, center: f64, width: f64) -> Result<GaussianFit> {
    require_points(scan, 3)?;
    if !(width > 0.0) {
        return Err(invalid("width", "must be positive"));
    }
    let shape: Vec<f64> = scan.x.iter().map(|&x| gaussian(x, &[center, 1.0, width, 0.0])).collect();
    let idx: Vec<f64> = (0..scan.len()).map(|i| i as f64).collect();
    let model = |i: f64, p: &[f64]| p[1] + p[0] * shape[i as usize];
    let b0 = edge_baseline(&scan.y);
    let a0 = scan.y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - b0;
    let fit: LsqFit = least_squares(&model, &idx, &scan.y, &scan.sigma_y, &[a0, b0]);
    let (a, b) = (fit.params[0], fit.params[1]);
    let mut cov = DMatrix::zeros(4, 4);
    cov[(1, 1)] = fit.covariance[(0, 0)];
    cov[(1, 3)] = fit.covariance[(0, 1)];
    cov[(3, 1)] = fit.covariance[(1, 0)];
    cov[(3, 3)] = fit.covariance[(1, 1)];
    let mut warnings = vec!["center and width fixed".to_string()];
    if !fit.converged {
        warnings.push(format!("no convergence: {}", fit.termination));
    }
    let report = report(
        "gaussian_fixed_shape",
        &["center", "amplitude", "width", "baseline"],
        vec![center, a, width, b],
        &cov,
        fit.chi2,
        fit.dof,
        fit.converged,
        warnings,
    );
    Ok(GaussianFit {
        center,
        amplitude: a,
        width,
        baseline: b,
        sigma_center: 0.0,
        sigma_amplitude: report.errors[1],
        sigma_width: 0.0,
        sigma_baseline: report.errors[3],
        report,
    })
}

/// Peak of the least-squares periodogram: frequency and the (cos, sin)
/// coefficients of the best single-frequency fit to the mean-subtracted data.
fn periodogram_peak(t: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return None;
    }
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min_dt = sorted.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    let w_min = std::f64::consts::PI / span;
    let w_max = std::f64::consts::PI / min_dt;
    let step = std::f64::consts::TAU / span / 20.0;
    let mut best: Option<(f64, f64, f64, f64)> = None;
    let mut w = w_min;
    while w <= w_max {
        let (mut cc, mut ss, mut cs, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&ti, &yi) in t.iter().zip(y) {
            let (s, c) = (w * ti).sin_cos();
            let d = yi - mean;
            cc += c * c;
            ss += s * s;
            cs += c * s;
            yc += d * c;
            ys += d * s;
        }
        let det = cc * ss - cs * cs;
        if det.abs() > 1e-12 * cc * ss {
            let alpha = (yc * ss - ys * cs) / det;
            let beta = (ys * cc - yc * cs) / det;
            let power = alpha * yc + beta * ys;
            if best.is_none_or(|b| power > b.0) {
                best = Some((power, w, alpha, beta));
            }
        }
        w += step;
    }
    let total: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    best.filter(|b| total > 0.0 && b.0 > 0.05 * total).map(|b| (b.1, b.2, b.3))
}

/// Converts α cos ωt + β sin ωt ≈ −(c/2) cos(ωt + φ) into (c, φ).
fn contrast_phase(alpha: f64, beta: f64) -> (f64, f64) {
    (2.0 * alpha.hypot(beta), beta.atan2(-alpha))
}

fn wrap_phase(phi: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let r = phi.rem_euclid(tau);
    if r > std::f64::consts::PI { r - tau } else { r }
}

fn frequency_guess(t: &[f64], y: &[f64], warnings: &mut Vec<String>) -> (f64, f64, f64) {
    match periodogram_peak(t, y) {
        Some((w, a, b)) => {
            let (c, phi) = contrast_phase(a, b);
            (w, c, phi)
        }
        None => {
            warnings.push("no spectral peak found; frequency initialized from sample count".into());
            let span = t.iter().cloned().fold(0.0, f64::max) - t.iter().cloned().fold(0.0, f64::min);
            (std::f64::consts::TAU * (t.len() as f64 / 4.0) / span.max(f64::MIN_POSITIVE), 0.0, 0.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    /// rad per unit of x.
    pub omega: f64,
    pub contrast: f64,
    pub phase: f64,
    pub baseline: f64,
    pub sigma_omega: f64,
    pub sigma_contrast: f64,
    pub report: FitReport,
}

fn sinusoid(t: f64, p: &[f64]) -> f64 {
    p[3] + 0.5 * p[1] * (1.0 - (p[0] * t + p[2]).cos())
}

/// Fit of y = b + (c/2)(1 − cos(Ωt + φ)).
pub fn fit_rabi_sinusoid(scan: &ScanData) -> Result<SinusoidFit> {
    require_points(scan, 5)?;
    let ts = time_scale(&scan.x);
    let t: Vec<f64> = scan.x.iter().map(|v| v / ts).collect();
    let mut warnings = Vec::new();
    let (w0, c0, phi0) = frequency_guess(&t, &scan.y, &mut warnings);
    let mean = scan.y.iter().sum::<f64>() / scan.len() as f64;
    let p0 = [w0, c0, phi0, mean - c0 / 2.0];
    let model: &Model = &sinusoid;
    let fit = least_squares(model, &t, &scan.y, &scan.sigma_y, &p0);
    let mut p = fit.params.clone();
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[2] = -p[2];
    }
    if p[1] < 0.0 {
        p[3] += p[1];
        p[1] = -p[1];
        p[2] += std::f64::consts::PI;
    }
    p[2] = wrap_phase(p[2]);
    let cov = covariance_at(model, &t, &scan.y, &scan.sigma_y, &p);
    if !fit.converged {
        warnings.push(format!("no convergence: {}", fit.termination));
    }
    let periods = p[0] * (t.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t.iter().cloned().fold(f64::INFINITY, f64::min))
        / std::f64::consts::TAU;
    if periods < 2.0 {
        warnings.push(format!("only {periods:.2} oscillation periods sampled"));
    }
    let values = vec![p[0] / ts, p[1], p[2], p[3]];
    let cov = scale_covariance(&cov, &[1.0 / ts, 1.0, 1.0, 1.0]);
    let chi2 = chi2_at(model, &t, &scan.y, &scan.sigma_y, &p);
    let report = report("rabi_sinusoid", &["omega", "contrast", "phase", "baseline"], values.clone(), &cov, chi2, fit.dof, fit.converged, warnings);
    Ok(SinusoidFit {
        omega: values[0],
        contrast: values[1],
        phase: values[2],
        baseline: values[3],
        sigma_omega: report.errors[0],
        sigma_contrast: report.errors[1],
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayingSinusoidFit {
    pub omega: f64,
    pub gamma_decay: f64,
    pub contrast: f64,
    pub phase: f64,
    pub baseline: f64,
    pub sigma_omega: f64,
    pub sigma_gamma: f64,
    pub sigma_contrast: f64,
    /// Set when the oscillation is overdamped or poorly determined.
    pub low_confidence: bool,
    pub report: FitReport,
}

fn decaying_sinusoid(t: f64, p: &[f64]) -> f64 {
    p[4] + 0.5 * p[2] * (1.0 - (-p[1] * t).exp() * (p[0] * t + p[3]).cos())
}

/// Fit of y = b + (c/2)(1 − e^{−Γt} cos(Ωt + φ)).
pub fn fit_decaying_sinusoid(scan: &ScanData) -> Result<DecayingSinusoidFit> {
    require_points(scan, 6)?;
    let ts = time_scale(&scan.x);
    let t: Vec<f64> = scan.x.iter().map(|v| v / ts).collect();
    let mut warnings = Vec::new();
    let (w0, c0, phi0) = frequency_guess(&t, &scan.y, &mut warnings);
    let mean = scan.y.iter().sum::<f64>() / scan.len() as f64;
    let model: &Model = &decaying_sinusoid;

    // The decay rate is started from a few values spanning the scan length.
    let fit = [0.0, 0.3, 1.0, 3.0, 10.0]
        .iter()
        .map(|&g| {
            let c = c0.max(2.0 * (mean - scan.y.iter().cloned().fold(f64::INFINITY, f64::min)));
            least_squares(model, &t, &scan.y, &scan.sigma_y, &[w0, g, c, phi0, mean - c / 2.0])
        })
        .min_by(|a, b| {
            let key = |f: &LsqFit| if f.converged { f.chi2 } else { f64::INFINITY };
            key(a).total_cmp(&key(b))
        })
        .unwrap();

    let mut p = fit.params.clone();
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[3] = -p[3];
    }
    if p[2] < 0.0 {
        p[4] += p[2];
        p[2] = -p[2];
        p[3] += std::f64::consts::PI;
    }
    p[3] = wrap_phase(p[3]);
    let cov = covariance_at(model, &t, &scan.y, &scan.sigma_y, &p);
    if !fit.converged {
        warnings.push(format!("no convergence: {}", fit.termination));
    }
    let values = vec![p[0] / ts, p[1] / ts, p[2], p[3], p[4]];
    let cov = scale_covariance(&cov, &[1.0 / ts, 1.0 / ts, 1.0, 1.0, 1.0]);
    let chi2 = chi2_at(model, &t, &scan.y, &scan.sigma_y, &p);
    let sigma_omega = cov[(0, 0)].max(0.0).sqrt();
    let overdamped = values[1] > 0.5 * values[0];
    let poorly_determined = !(sigma_omega < 0.05 * values[0]);
    if overdamped {
        warnings.push("decay faster than half the oscillation frequency".into());
    }
    if poorly_determined {
        warnings.push("oscillation frequency poorly determined".into());
    }
    let low_confidence = overdamped || poorly_determined || !fit.converged;
    let report = report(
        "decaying_sinusoid",
        &["omega", "gamma", "contrast", "phase", "baseline"],
        values.clone(),
        &cov,
        chi2,
        fit.dof,
        fit.converged,
        warnings,
    );
    Ok(DecayingSinusoidFit {
        omega: values[0],
        gamma_decay: values[1],
        contrast: values[2],
        phase: values[3],
        baseline: values[4],
        sigma_omega: report.errors[0],
        sigma_gamma: report.errors[1],
        sigma_contrast: report.errors[2],
        low_confidence,
        report,
    })
}

/// Carrier Rabi-frequency factors e^{−η²/2}·L_n(η²) for n = 0..=n_max.
fn carrier_factors(eta: f64, n_max: usize) -> Vec<f64> {
    let x = eta * eta;
    laguerre_sequence(n_max, 0, x).into_iter().map(|l| (-x / 2.0).exp() * l).collect()
}

const THERMAL_FIT_N_MAX: usize = 3000;

fn thermal_cutoff(nbar: f64) -> usize {
    if nbar < 1e-12 {
        return 0;
    }
    let q = nbar / (nbar + 1.0);
    ((1e-10f64.ln() / q.ln()).ceil() as usize).clamp(1, THERMAL_FIT_N_MAX)
}

fn thermal_average(nbar: f64, omega0: f64, t: f64, factors: &[f64]) -> f64 {
    let n_max = thermal_cutoff(nbar).min(factors.len() - 1);
    let q = nbar / (nbar + 1.0);
    let mut p = 1.0 / (nbar + 1.0);
    let mut acc = 0.0;
    let mut norm = 0.0;
    for f in &factors[..=n_max] {
        acc += p * (0.5 * omega0 * f * t).sin().powi(2);
        norm += p;
        p *= q;
    }
    acc / norm
}

/// Σ_n P_thermal(n; n̄)·sin²(Ω_{n,n}·t/2) at each time in `t`.
pub fn thermal_flop_curve(nbar: f64, omega0: f64, eta: f64, t: &[f64]) -> Vec<f64> {
    let factors = carrier_factors(eta, thermal_cutoff(nbar));
    t.iter().map(|&ti| thermal_average(nbar, omega0, ti, &factors)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalFlopFit {
    pub nbar: f64,
    pub omega0: f64,
    pub sigma_nbar: f64,
    pub sigma_omega0: f64,
    pub report: FitReport,
}

/// Fits (n̄, Ω₀) of a thermally averaged carrier flop with known η.
pub fn fit_thermal_flop(scan: &ScanData, eta: f64) -> Result<ThermalFlopFit> {
    require_points(scan, 4)?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(invalid("eta", "must be finite and >= 0"));
    }
    let ts = time_scale(&scan.x);
    let t: Vec<f64> = scan.x.iter().map(|v| v / ts).collect();
    let factors = carrier_factors(eta, THERMAL_FIT_N_MAX);
    let mut warnings = Vec::new();

    let mut sigmas = scan.sigma_y.clone();
    sigmas.sort_by(f64::total_cmp);
    let median_sigma = sigmas[sigmas.len() / 2];
    let excursion = scan.y.iter().fold(0.0f64, |m, y| m.max((y - 0.5).abs()));
    if excursion < (2.0 * median_sigma).max(0.1) {
        warnings.push("data only covers the collapsed regime; likelihood is flat in nbar and omega0".into());
    }

    // Parameters: u = √n̄ keeps n̄ ≥ 0; Ω₀ in rescaled units.
    let model = |x: f64, p: &[f64]| thermal_average(p[0] * p[0], p[1], x, &factors);
    let (w_spec, _, _) = frequency_guess(&t, &scan.y, &mut Vec::new());
    let base = w_spec / factors[0];
    let mut best = (f64::INFINITY, [0.0, base]);
    for &nbar in &[0.0f64, 0.05, 0.2, 0.5, 1.0, 2.0, 4.0, 7.0, 10.0, 15.0, 25.0] {
        for k in 0..=24 {
            let w = base * 2f64.powf(-1.5 + 3.0 * k as f64 / 24.0);
            let p = [nbar.sqrt(), w];
            let chi2 = chi2_at(&model, &t, &scan.y, &scan.sigma_y, &p);
            if chi2 < best.0 {
                best = (chi2, p);
            }
        }
    }
    let fit = least_squares(&model, &t, &scan.y, &scan.sigma_y, &best.1);
    let (u, w) = (fit.params[0].abs(), fit.params[1].abs());
    if !fit.converged {
        warnings.push(format!("no convergence: {}", fit.termination));
    }
    let cov_u = covariance_at(&model, &t, &scan.y, &scan.sigma_y, &[u, w]);
    // n̄ = u² ⇒ dn̄/du = 2u
    let cov = scale_covariance(&cov_u, &[2.0 * u, 1.0 / ts]);
    let values = vec![u * u, w / ts];
    let chi2 = chi2_at(&model, &t, &scan.y, &scan.sigma_y, &[u, w]);
    let report = report("thermal_flop", &["nbar", "omega0"], values.clone(), &cov, chi2, fit.dof, fit.converged, warnings);
    Ok(ThermalFlopFit {
        nbar: values[0],
        omega0: values[1],
        sigma_nbar: report.errors[0],
        sigma_omega0: report.errors[1],
        report,
    })
}
