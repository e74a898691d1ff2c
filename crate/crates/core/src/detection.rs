//! Electron-shelving detection: photon-count reference distributions for a
//! bright (|↓⟩) and dark (|↑⟩ or |3,2⟩) ion, simulated count histograms, and
//! the maximum-likelihood estimate of the bright fraction from a histogram.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

const TAIL_TOL: f64 = 1e-6;
const DEPUMP_QUADRATURE_INTERVALS: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionModel {
    /// Mean detected photons per exposure for a bright ion (includes stray light).
    pub mean_bright: f64,
    /// Mean stray-light photons per exposure for a dark ion.
    pub mean_dark: f64,
    /// Exposure time, s.
    pub exposure: f64,
    /// Rate at which a dark ion is depumped into the cycling transition
    /// during detection, 1/s.
    pub depump_rate: f64,
    /// Largest photon number kept in histograms.
    pub k_max: usize,
}

impl Default for DetectionModel {
    /// 5.8 photons bright in 12.5 µs; 0.15 stray photons plus depumping
    /// tuned to give a 0.2 photon dark mean.
    fn default() -> Self {
        let mut model = Self {
            mean_bright: 5.8,
            mean_dark: 0.15,
            exposure: 12.5e-6,
            depump_rate: 0.0,
            k_max: 30,
        };
        model.depump_rate = model
            .depump_rate_for_dark_mean(0.2)
            .expect("default dark mean is reachable");
        model
    }
}

impl DetectionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_dark >= 0.0 && self.mean_dark.is_finite()) {
            return Err(invalid("mean_dark", "must be finite and >= 0"));
        }
        if !(self.mean_bright > self.mean_dark && self.mean_bright.is_finite()) {
            return Err(invalid("mean_bright", "must be finite and exceed mean_dark"));
        }
        if !(self.exposure > 0.0 && self.exposure.is_finite()) {
            return Err(invalid("exposure", "must be positive"));
        }
        if !(self.depump_rate >= 0.0 && self.depump_rate.is_finite()) {
            return Err(invalid("depump_rate", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Same photon rates at a different exposure time.
    pub fn with_exposure(&self, exposure: f64) -> Self {
        let scale = exposure / self.exposure;
        Self {
            mean_bright: self.mean_bright * scale,
            mean_dark: self.mean_dark * scale,
            exposure,
            ..self.clone()
        }
    }

    /// Fluorescence photons per second from a bright ion above stray light.
    fn signal_rate(&self) -> f64 {
        (self.mean_bright - self.mean_dark) / self.exposure
    }

    /// Mean dark-ion count: stray light plus signal after an exponential
    /// depumping delay, mean_dark + r·(T − (1 − e^{−dT})/d).
    pub fn dark_mean(&self) -> f64 {
        let t = self.exposure;
        let d = self.depump_rate;
        let bright_time = if d * t < 1e-8 {
            d * t * t / 2.0
        } else {
            t - (-(d * t)).exp_m1().abs() / d
        };
        self.mean_dark + self.signal_rate() * bright_time
    }

    /// Depump rate that makes the dark-ion mean equal `target`.
    pub fn depump_rate_for_dark_mean(&self, target: f64) -> Result<f64> {
        let max = self.mean_bright;
        if !(target >= self.mean_dark && target < max) {
            return Err(invalid("target", format!("dark mean {target} not in [{}, {max})", self.mean_dark)));
        }
        let at = |d: f64| Self { depump_rate: d, ..self.clone() }.dark_mean() - target;
        let (mut lo, mut hi) = (0.0, 1.0 / self.exposure);
        while at(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn poisson_pmf(mean: f64, k_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k_max + 1);
    let mut p = (-mean).exp();
    for k in 0..=k_max {
        out.push(p);
        p *= mean / (k + 1) as f64;
    }
    out
}

/// Photon-count distributions ψ↓ (bright) and ψ↑ (dark) over k = 0..=k_max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDistributions {
    pub psi_down: Vec<f64>,
    pub psi_up: Vec<f64>,
}

impl ReferenceDistributions {
    pub fn k_max(&self) -> usize {
        self.psi_down.len() - 1
    }

    pub fn overlap(&self) -> f64 {
        overlap(&self.psi_down, &self.psi_up)
    }
}

fn normalize_checked(mut p: Vec<f64>, k_max: usize) -> Result<Vec<f64>> {
    let total: f64 = p.iter().sum();
    let tail = 1.0 - total;
    if tail > TAIL_TOL {
        return Err(Error::HistogramCutoff { k_max, tail });
    }
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// ψ↓ = Poisson(mean_bright). ψ↑ = Poisson(mean_dark) without depumping,
/// otherwise the mixture over an exponentially distributed depumping time τ
/// after which the ion fluoresces for the rest of the exposure.
pub fn reference_distributions(model: &DetectionModel) -> Result<ReferenceDistributions> {
    model.validate()?;
    let k_max = model.k_max;
    let psi_down = normalize_checked(poisson_pmf(model.mean_bright, k_max), k_max)?;

    let d = model.depump_rate;
    let t = model.exposure;
    let psi_up = if d == 0.0 {
        poisson_pmf(model.mean_dark, k_max)
    } else {
        let rate = model.signal_rate();
        let stay_dark = (-d * t).exp();
        let mut acc: Vec<f64> = poisson_pmf(model.mean_dark, k_max).iter().map(|p| stay_dark * p).collect();
        // Simpson over τ ∈ [0, T] of d·e^{−dτ}·Poisson(k; s + r(T − τ)).
        let m = DEPUMP_QUADRATURE_INTERVALS;
        let h = t / m as f64;
        for i in 0..=m {
            let tau = i as f64 * h;
            let w = match i {
                0 => 1.0,
                _ if i == m => 1.0,
                _ if i % 2 == 1 => 4.0,
                _ => 2.0,
            } * h / 3.0;
            let density = d * (-d * tau).exp();
            let pmf = poisson_pmf(model.mean_dark + rate * (t - tau), k_max);
            for (a, p) in acc.iter_mut().zip(pmf) {
                *a += w * density * p;
            }
        }
        acc
    };
    let psi_up = normalize_checked(psi_up, k_max)?;
    Ok(ReferenceDistributions { psi_down, psi_up })
}

/// Σ_k ψ↓(k)·ψ↑(k).
pub fn overlap(psi_down: &[f64], psi_up: &[f64]) -> f64 {
    psi_down.iter().zip(psi_up).map(|(a, b)| a * b).sum()
}

pub fn mean_count(psi: &[f64]) -> f64 {
    psi.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub shots: u64,
}

#[derive(Serialize, Deserialize)]
struct HistogramRow {
    k: usize,
    count: u64,
}

impl Histogram {
    pub fn new(counts: Vec<u64>) -> Self {
        let shots = counts.iter().sum();
        Self { counts, shots }
    }

    pub fn mean(&self) -> f64 {
        let total: u64 = self.counts.iter().enumerate().map(|(k, c)| k as u64 * c).sum();
        total as f64 / self.shots as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for (k, &count) in self.counts.iter().enumerate() {
            wtr.serialize(HistogramRow { k, count }).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut counts = Vec::new();
        for (i, row) in rdr.deserialize::<HistogramRow>().enumerate() {
            let row = row.map_err(csv_err)?;
            if row.k != i {
                return Err(Error::Parse { line: i + 2, reason: format!("expected k = {i}, found {}", row.k) });
            }
            counts.push(row.count);
        }
        Ok(Self::new(counts))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, reason: e.to_string() }
}

fn sample_index<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Draws `shots` detection outcomes: bright with probability `a`, then a
/// photon number from the matching reference distribution.
pub fn simulate_detection<R: Rng>(
    a: f64,
    refs: &ReferenceDistributions,
    shots: u64,
    rng: &mut R,
) -> Result<Histogram> {
    if !(0.0..=1.0).contains(&a) {
        return Err(invalid("a", format!("bright probability {a} not in [0, 1]")));
    }
    if shots == 0 {
        return Err(invalid("shots", "must be at least 1"));
    }
    let bright = cumulative(&refs.psi_down);
    let dark = cumulative(&refs.psi_up);
    let mut counts = vec![0u64; refs.k_max() + 1];
    for _ in 0..shots {
        let is_bright = rng.random::<f64>() < a;
        let k = sample_index(if is_bright { &bright } else { &dark }, rng);
        counts[k] += 1;
    }
    Ok(Histogram::new(counts))
}

/// [`simulate_detection`] with a fresh generator from `seed`.
pub fn simulate_detection_seeded(a: f64, model: &DetectionModel, shots: u64, seed: u64) -> Result<Histogram> {
    let refs = reference_distributions(model)?;
    simulate_detection(a, &refs, shots, &mut rng::master(seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationEstimate {
    /// Maximum-likelihood bright fraction in [0, 1].
    pub a: f64,
    /// 1/√(observed Fisher information). One-sided when `at_boundary`.
    pub sigma: f64,
    pub at_boundary: bool,
}

/// Maximum-likelihood fit of ψ = a·ψ↓ + (1−a)·ψ↑ to a histogram.
pub fn fit_population(hist: &Histogram, refs: &ReferenceDistributions) -> Result<PopulationEstimate> {
    if hist.shots == 0 {
        return Err(invalid("hist", "no shots"));
    }
    if hist.counts.len() != refs.psi_down.len() {
        return Err(invalid("hist", "histogram and references have different k_max"));
    }
    let diff: Vec<f64> = refs.psi_down.iter().zip(&refs.psi_up).map(|(d, u)| d - u).collect();
    if diff.iter().all(|d| d.abs() < 1e-12) {
        return Err(Error::DegenerateReferences);
    }
    let observed: Vec<(f64, f64, f64)> = hist
        .counts
        .iter()
        .zip(&diff)
        .zip(&refs.psi_up)
        .filter(|((c, _), _)| **c > 0)
        .map(|((&c, &d), &u)| (c as f64, d, u))
        .collect();

    // d/da log L, strictly decreasing in a.
    let score = |a: f64| -> f64 {
        observed.iter().map(|&(c, d, u)| c * d / (a * d + u)).sum()
    };
    let info = |a: f64| -> f64 {
        observed
            .iter()
            .map(|&(c, d, u)| {
                let m = a * d + u;
                c * d * d / (m * m)
            })
            .sum()
    };
    let finite_score = |a: f64| {
        let s = score(a);
        if s.is_nan() { 0.0 } else { s }
    };

    let (a, at_boundary) = if finite_score(0.0) <= 0.0 {
        (0.0, true)
    } else if finite_score(1.0) >= 0.0 {
        (1.0, true)
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if score(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi), false)
    };
    let fisher = info(a);
    let sigma = if fisher > 0.0 && fisher.is_finite() { 1.0 / fisher.sqrt() } else { f64::INFINITY };
    Ok(PopulationEstimate { a, sigma, at_boundary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn plain(mean_dark: f64) -> DetectionModel {
        DetectionModel { mean_dark, depump_rate: 0.0, ..DetectionModel::default() }
    }

    #[test]
    fn poisson_references() {
        let refs = reference_distributions(&plain(0.2)).unwrap();
        assert_relative_eq!(refs.psi_up[0], (-0.2f64).exp(), max_relative = 1e-9);
        assert!((refs.psi_up[0] - 0.819).abs() < 1e-3);
        assert_relative_eq!(mean_count(&refs.psi_down), 5.8, max_relative = 1e-9);
    }

    #[test]
    fn default_model_dark_mean() {
        let model = DetectionModel::default();
        assert_relative_eq!(model.dark_mean(), 0.2, max_relative = 1e-9);
        let refs = reference_distributions(&model).unwrap();
        assert_relative_eq!(mean_count(&refs.psi_up), 0.2, max_relative = 1e-6);
        assert!(model.depump_rate > 1e3 && model.depump_rate < 2e3, "{}", model.depump_rate);
    }

    #[test]
    fn zero_exposure_limit() {
        let refs = reference_distributions(&DetectionModel::default().with_exposure(1e-15)).unwrap();
        assert!(refs.psi_down[0] > 1.0 - 1e-8);
        assert!(refs.psi_up[0] > 1.0 - 1e-8);
    }

    #[test]
    fn cutoff_too_small() {
        let model = DetectionModel { k_max: 8, ..DetectionModel::default() };
        assert!(matches!(reference_distributions(&model), Err(Error::HistogramCutoff { .. })));
    }

    #[test]
    fn overlap_cases() {
        let a = [0.2, 0.3, 0.5];
        assert_relative_eq!(overlap(&a, &a), 0.04 + 0.09 + 0.25);
        assert_eq!(overlap(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        let refs = reference_distributions(&plain(0.2)).unwrap();
        // direct summation of Poisson(0.2)·Poisson(5.8)
        let direct: f64 = (0..60)
            .map(|k| {
                let f = (1..=k).map(|i| i as f64).product::<f64>();
                (-0.2f64).exp() * 0.2f64.powi(k) / f * (-5.8f64).exp() * 5.8f64.powi(k) / f
            })
            .sum();
        assert_relative_eq!(refs.overlap(), direct, max_relative = 1e-6);
        assert!((direct - 0.006).abs() < 0.001, "{direct}");
    }

    #[test]
    fn depump_increases_dark_mean() {
        let means: Vec<f64> = [0.0, 500.0, 2e3, 1e4, 5e4]
            .iter()
            .map(|&d| {
                let m = DetectionModel { depump_rate: d, ..DetectionModel::default() };
                mean_count(&reference_distributions(&m).unwrap().psi_up)
            })
            .collect();
        assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
    }

    #[test]
    fn detection_is_reproducible() {
        let model = DetectionModel::default();
        let a = simulate_detection_seeded(0.4, &model, 500, 7).unwrap();
        let b = simulate_detection_seeded(0.4, &model, 500, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shots, 500);
        let c = simulate_detection_seeded(0.4, &model, 500, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bright_sample_mean() {
        let model = plain(0.2);
        let h = simulate_detection_seeded(1.0, &model, 100_000, 3).unwrap();
        let tol = 3.0 * 5.8f64.sqrt() / (100_000f64).sqrt();
        assert!((h.mean() - 5.8).abs() < tol, "{}", h.mean());
    }

    #[test]
    fn dark_only_draws() {
        // with depumping off and tiny stray light, dark shots are almost all zero
        let model = DetectionModel { mean_dark: 1e-9, depump_rate: 0.0, ..DetectionModel::default() };
        let h = simulate_detection_seeded(0.0, &model, 1000, 11).unwrap();
        assert_eq!(h.counts[0], 1000);
    }

    #[test]
    fn fit_pure_components() {
        let refs = reference_distributions(&DetectionModel::default()).unwrap();
        let scale = 1e6;
        let exact = Histogram::new(refs.psi_down.iter().map(|p| (p * scale).round() as u64).collect());
        let est = fit_population(&exact, &refs).unwrap();
        assert!(est.a > 1.0 - 1e-4);
        let est = fit_population(&Histogram::new({
            let mut c = vec![0; refs.k_max() + 1];
            c[0] = 10;
            c
        }), &refs)
        .unwrap();
        assert_eq!(est.a, 0.0);
        assert!(est.at_boundary);
    }

    #[test]
    fn fit_sigma_scale() {
        let refs = reference_distributions(&DetectionModel::default()).unwrap();
        let mut sigmas = Vec::new();
        for seed in 0..50 {
            let h = simulate_detection(0.5, &refs, 300, &mut rng::stream(99, seed)).unwrap();
            sigmas.push(fit_population(&h, &refs).unwrap().sigma);
        }
        let mean = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
        assert!(mean > 0.02 && mean < 0.045, "{mean}");
    }

    #[test]
    fn degenerate_references() {
        let p = vec![0.5, 0.5];
        let refs = ReferenceDistributions { psi_down: p.clone(), psi_up: p };
        assert!(matches!(fit_population(&Histogram::new(vec![3, 4]), &refs), Err(Error::DegenerateReferences)));
    }

    #[test]
    fn histogram_csv_round_trip() {
        let h = Histogram::new(vec![4, 0, 7, 1]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("k,count\n0,4\n"));
        assert_eq!(Histogram::read_csv(buf.as_slice()).unwrap(), h);
    }
}
