//! Laser modulation chain: phase-modulation sidebands from an EOM, their
//! transformation under frequency doubling, and AOM frequency bookkeeping
//! for the two Raman beams.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// First zero of J₀.
pub const J0_FIRST_ZERO: f64 = 2.404_825_557_695_773;

/// Bessel function of the first kind J_k(x) for integer order, from the
/// ascending series Σ_m (−1)^m (x/2)^{2m+k} / (m!(m+k)!).
///
/// Accurate to ~1e-12 absolute for |x| ≲ 8; the modulation indices of
/// interest here stay below 3.
pub fn bessel_j(order: i32, x: f64) -> f64 {
    let k = order.unsigned_abs();
    let sign = if order < 0 && k % 2 == 1 { -1.0 } else { 1.0 };
    let half = x / 2.0;
    // (x/2)^k / k!
    let mut term = (1..=k).fold(1.0, |acc, i| acc * half / i as f64);
    let mut sum = term;
    let q = half * half;
    for m in 1..200u32 {
        term *= -q / (m as f64 * (m + k) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sign * sum
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidebandPowers {
    /// Orders −max_order..=max_order.
    pub orders: Vec<i32>,
    /// Fraction of total optical power in each order, J_k(β)².
    pub fractions: Vec<f64>,
    /// Power outside the listed orders.
    pub remainder: f64,
}

impl SidebandPowers {
    pub fn fraction(&self, order: i32) -> Option<f64> {
        self.orders.iter().position(|&k| k == order).map(|i| self.fractions[i])
    }

    pub fn carrier_to_first_ratio(&self) -> f64 {
        self.fraction(0).unwrap() / self.fraction(1).unwrap_or(0.0)
    }
}

pub fn sideband_powers(beta: f64, max_order: u32) -> Result<SidebandPowers> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid("beta", format!("{beta} must be finite and >= 0")));
    }
    let m = max_order as i32;
    let orders: Vec<i32> = (-m..=m).collect();
    let fractions: Vec<f64> = orders.iter().map(|&k| bessel_j(k, beta).powi(2)).collect();
    let remainder = (1.0 - fractions.iter().sum::<f64>()).max(0.0);
    Ok(SidebandPowers { orders, fractions, remainder })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationState {
    /// Optical carrier frequency, Hz.
    pub carrier_frequency: f64,
    pub beta: f64,
    /// Modulation (carrier-sideband) frequency, Hz.
    pub mod_frequency: f64,
}

impl ModulationState {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(invalid("beta", "must be >= 0"));
        }
        if !(self.carrier_frequency > 0.0 && self.mod_frequency > 0.0) {
            return Err(invalid("frequency", "carrier and modulation frequencies must be positive"));
        }
        Ok(())
    }
}

/// Second-harmonic generation: e^{i(ωt + β sin Ωt)} → e^{i(2ωt + 2β sin Ωt)}.
/// The carrier and β double; the sideband spacing Ω is unchanged.
pub fn shg_transform(state: ModulationState) -> ModulationState {
    ModulationState {
        carrier_frequency: 2.0 * state.carrier_frequency,
        beta: 2.0 * state.beta,
        mod_frequency: state.mod_frequency,
    }
}

fn carrier_to_first(beta: f64) -> f64 {
    (bessel_j(0, beta) / bessel_j(1, beta)).powi(2)
}

/// Inverts J₀(β)²/J₁(β)² = `ratio` for β in (0, first zero of J₀).
pub fn beta_from_ratio(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(invalid("ratio", format!("{ratio} outside the invertible range (0, inf)")));
    }
    // The ratio falls monotonically from +inf at β → 0 to 0 at the J₀ zero.
    let (mut lo, mut hi) = (0.0f64, J0_FIRST_ZERO);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if carrier_to_first(mid) > ratio {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AomStage {
    /// Drive frequency, Hz. `None` marks the stage to solve for; all unknown
    /// stages share one drive frequency.
    #[serde(default)]
    pub frequency: Option<f64>,
    pub passes: u32,
    /// +1 for the up-shifted diffraction order, −1 for the down-shifted one.
    pub sign: i8,
}

impl AomStage {
    pub fn known(frequency: f64, passes: u32, sign: i8) -> Self {
        Self { frequency: Some(frequency), passes, sign }
    }

    pub fn unknown(passes: u32, sign: i8) -> Self {
        Self { frequency: None, passes, sign }
    }

    fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::Unsolvable("stage with zero passes".into()));
        }
        if self.sign != 1 && self.sign != -1 {
            return Err(invalid("sign", format!("{} must be +1 or -1", self.sign)));
        }
        if let Some(f) = self.frequency {
            if !(f > 0.0 && f.is_finite()) {
                return Err(invalid("frequency", format!("{f} must be positive")));
            }
        }
        Ok(())
    }

    fn weight(&self) -> f64 {
        self.sign as f64 * self.passes as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AomChain {
    pub stages: Vec<AomStage>,
}

impl AomChain {
    pub fn new(stages: Vec<AomStage>) -> Self {
        Self { stages }
    }

    /// Known offset and coefficient of the shared unknown frequency.
    fn linear_form(&self) -> Result<(f64, f64)> {
        let mut known = 0.0;
        let mut coeff = 0.0;
        for stage in &self.stages {
            stage.validate()?;
            match stage.frequency {
                Some(f) => known += stage.weight() * f,
                None => coeff += stage.weight(),
            }
        }
        Ok((known, coeff))
    }

    /// Chain for the frequency difference between two beams: `a`'s stages
    /// as-is and `b`'s with flipped sign.
    pub fn difference(a: &AomChain, b: &AomChain) -> AomChain {
        let stages = a
            .stages
            .iter()
            .copied()
            .chain(b.stages.iter().map(|s| AomStage { sign: -s.sign, ..*s }))
            .collect();
        AomChain { stages }
    }
}

/// Σ sign·passes·frequency over all stages.
pub fn net_shift(chain: &AomChain) -> Result<f64> {
    if chain.stages.iter().any(|s| s.frequency.is_none()) {
        return Err(Error::Unsolvable("chain has an unknown stage; use solve_chain".into()));
    }
    Ok(chain.linear_form()?.0)
}

/// Drive frequency of the unknown stage(s) giving a net shift of `target` Hz.
pub fn solve_chain(chain: &AomChain, target: f64) -> Result<f64> {
    if !chain.stages.iter().any(|s| s.frequency.is_none()) {
        return Err(Error::Unsolvable("no unknown stage".into()));
    }
    let (known, coeff) = chain.linear_form()?;
    if coeff == 0.0 {
        return Err(Error::Unsolvable("unknown stages cancel in the net shift".into()));
    }
    let f = (target - known) / coeff;
    if !(f > 0.0) {
        return Err(Error::Unsolvable(format!("required drive frequency {f} Hz is not positive")));
    }
    Ok(f)
}

/// Two Raman beams each passing a single-pass AOM at ±`single_pass` and then
/// a shared double-pass AOM pair in opposite directions.
pub fn raman_difference_chain(single_pass: f64) -> AomChain {
    let sigma = AomChain::new(vec![AomStage::known(single_pass, 1, 1), AomStage::unknown(2, 1)]);
    let pi = AomChain::new(vec![AomStage::known(single_pass, 1, -1), AomStage::unknown(2, -1)]);
    AomChain::difference(&sigma, &pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    // J_n(x) = (1/π) ∫₀^π cos(nτ − x sin τ) dτ, composite Simpson
    fn bessel_integral(n: i32, x: f64) -> f64 {
        let m = 20_000;
        let h = PI / m as f64;
        let f = |t: f64| (n as f64 * t - x * t.sin()).cos();
        let mut s = f(0.0) + f(PI);
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        s * h / 3.0 / PI
    }

    #[test]
    fn bessel_matches_integral() {
        for &x in &[0.0, 0.1, 0.58, 1.16, 2.0, 3.0, 5.5] {
            for n in -6..=12 {
                assert_relative_eq!(bessel_j(n, x), bessel_integral(n, x), epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn unmodulated_carrier() {
        let p = sideband_powers(0.0, 4).unwrap();
        assert_eq!(p.fraction(0), Some(1.0));
        assert!(p.orders.iter().zip(&p.fractions).all(|(&k, &f)| k == 0 || f == 0.0));
    }

    #[test]
    fn eom_and_doubled_sidebands() {
        let p = sideband_powers(0.58, 6).unwrap();
        let ratio = p.carrier_to_first_ratio();
        assert!((ratio - 10.9).abs() < 0.2, "{ratio}");
        let q = sideband_powers(1.16, 6).unwrap();
        let first = q.fraction(1).unwrap();
        assert!((first - 0.238).abs() < 0.005, "{first}");
        assert_eq!(q.fraction(-1), q.fraction(1));
    }

    #[test]
    fn power_sums_to_one() {
        for &beta in &[0.1, 1.0, 2.0, 3.0] {
            let p = sideband_powers(beta, 12).unwrap();
            let total: f64 = p.fractions.iter().sum();
            assert!((total + p.remainder - 1.0).abs() < 1e-12);
            assert!(p.remainder < 1e-9);
        }
    }

    #[test]
    fn shg_doubles_index_not_spacing() {
        let s = ModulationState { carrier_frequency: 536.1e12, beta: 0.58, mod_frequency: 9.2e9 };
        let d = shg_transform(s);
        assert_eq!(d.beta, 1.16);
        assert_eq!(d.carrier_frequency, 2.0 * s.carrier_frequency);
        assert_eq!(d.mod_frequency, 9.2e9);
        let dd = shg_transform(d);
        assert_eq!(dd.beta, 4.0 * s.beta);
        assert_eq!(dd.carrier_frequency, 4.0 * s.carrier_frequency);
        assert_eq!(shg_transform(ModulationState { beta: 0.0, ..s }).beta, 0.0);
    }

    #[test]
    fn beta_inversion() {
        let beta = beta_from_ratio(11.0).unwrap();
        assert!((beta - 0.58).abs() < 0.01, "{beta}");
        assert!(beta_from_ratio(1e12).unwrap() < 1e-5);
        let r = carrier_to_first(0.3);
        assert!((beta_from_ratio(r).unwrap() - 0.3).abs() < 1e-8);
        assert!(beta_from_ratio(0.0).is_err());
        assert!(beta_from_ratio(f64::NAN).is_err());
    }

    #[test]
    fn aom_chain_arithmetic() {
        assert_eq!(net_shift(&AomChain::default()).unwrap(), 0.0);
        assert_eq!(net_shift(&AomChain::new(vec![AomStage::known(450e6, 1, 1)])).unwrap(), 450e6);
        let chain = raman_difference_chain(450e6);
        let f = solve_chain(&chain, 1.789e9).unwrap();
        assert_eq!(f, 222.25e6);
        let solved = AomChain::new(
            chain.stages.iter().map(|s| AomStage { frequency: Some(s.frequency.unwrap_or(f)), ..*s }).collect(),
        );
        assert_relative_eq!(net_shift(&solved).unwrap(), 1.789e9, max_relative = 1e-12);
    }

    #[test]
    fn aom_chain_errors() {
        let known = AomChain::new(vec![AomStage::known(450e6, 1, 1)]);
        assert!(matches!(solve_chain(&known, 1e9), Err(Error::Unsolvable(_))));
        let zero = AomChain::new(vec![AomStage::unknown(0, 1)]);
        assert!(matches!(solve_chain(&zero, 1e9), Err(Error::Unsolvable(_))));
        let cancel = AomChain::new(vec![AomStage::unknown(1, 1), AomStage::unknown(1, -1)]);
        assert!(solve_chain(&cancel, 1e9).is_err());
        assert!(net_shift(&AomChain::new(vec![AomStage::unknown(1, 1)])).is_err());
    }
}
