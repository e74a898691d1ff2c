use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sbcool::constants::TWO_PI;
use sbcool::detection::{fit_population, reference_distributions, simulate_detection, DetectionModel};
use sbcool::dynamics::{
    apply_coherent_pulse, apply_leakage, apply_repump, apply_rf_pulse, DissipationConfig, IonState, Level, PulseKind,
    PulseSpec,
};
use sbcool::modchain::{
    beta_from_ratio, bessel_j, net_shift, raman_difference_chain, shg_transform, sideband_powers, solve_chain,
    AomChain, AomStage, ModulationState,
};
use sbcool::motional::{first_zero_crossing, laguerre, rabi_frequency, thermal_distribution_with_tol};

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

// L_n^α(x) = Σ_k (−1)^k C(n+α, n−k) x^k / k!
fn laguerre_explicit(n: usize, alpha: usize, x: f64) -> f64 {
    let mut fact = 1.0;
    let mut sum = 0.0;
    for k in 0..=n {
        if k > 0 {
            fact *= k as f64;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * binomial((n + alpha) as u64, (n - k) as u64) * x.powi(k as i32) / fact;
    }
    sum
}

// Rabi frequency with factorials written out, valid for small n.
fn rabi_explicit(n: usize, s: i32, eta: f64, omega0: f64) -> f64 {
    let m = n as i64 + s as i64;
    if m < 0 {
        return 0.0;
    }
    let (lo, hi) = (n.min(m as usize), n.max(m as usize));
    let fact = |k: usize| (1..=k).fold(1.0, |a, i| a * i as f64);
    let d = (hi - lo) as i32;
    omega0 * (-eta * eta / 2.0).exp() * eta.powi(d) * (fact(lo) / fact(hi)).sqrt() * laguerre_explicit(lo, d as usize, eta * eta)
}

// Two-level Schrödinger equation, H = (δ/2)σz + (Ω/2)σx, integrated with RK4.
fn rk4_transfer(omega: f64, delta: f64, t: f64) -> f64 {
    let steps = 4000;
    let h = t / steps as f64;
    let i = Complex64::i();
    let deriv = |c: [Complex64; 2]| {
        [
            -i * (-0.5 * delta * c[0] + 0.5 * omega * c[1]),
            -i * (0.5 * omega * c[0] + 0.5 * delta * c[1]),
        ]
    };
    let mut c = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    let add = |a: [Complex64; 2], b: [Complex64; 2], k: f64| [a[0] + b[0] * k, a[1] + b[1] * k];
    for _ in 0..steps {
        let k1 = deriv(c);
        let k2 = deriv(add(c, k1, h / 2.0));
        let k3 = deriv(add(c, k2, h / 2.0));
        let k4 = deriv(add(c, k3, h));
        for j in 0..2 {
            c[j] += (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) * (h / 6.0);
        }
    }
    c[1].norm_sqr()
}

fn random_state(rng: &mut ChaCha8Rng, n_max: usize) -> IonState {
    let mut levels: Vec<Vec<f64>> = (0..3).map(|_| (0..=n_max).map(|_| rng.random::<f64>()).collect()).collect();
    let total: f64 = levels.iter().flatten().sum();
    levels.iter_mut().flatten().for_each(|p| *p /= total);
    IonState::from_populations(levels[0].clone(), levels[1].clone(), levels[2].clone()).unwrap()
}

#[test]
fn normalization_over_random_pulses() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n_max = 40;
    let mut state = random_state(&mut rng, n_max);
    let mut diss = DissipationConfig::default();
    let omega0 = TWO_PI * 40.9e3;
    for i in 0..10_000 {
        let duration = rng.random_range(0.0..100e-6);
        let detuning = rng.random_range(-TWO_PI * 50e3..TWO_PI * 50e3);
        state = match rng.random_range(0..8) {
            0 => apply_coherent_pulse(&state, &PulseSpec::new(PulseKind::Carrier, duration, omega0).with_detuning(detuning), 0.28),
            1..=4 => {
                let s = [-2, -1, 1, 2][rng.random_range(0..4)];
                let p = PulseSpec::new(PulseKind::Sideband(s), duration, omega0).with_detuning(detuning);
                apply_coherent_pulse(&state, &p, rng.random_range(0.01..0.6))
            }
            5 => {
                let kind = if rng.random::<bool>() { PulseKind::Rf } else { PulseKind::RfRecover };
                apply_rf_pulse(&state, &PulseSpec::new(kind, duration, TWO_PI * 63.74e3).with_detuning(detuning))
            }
            6 => {
                diss.repump_down_branch = rng.random();
                diss.recoil_heating_per_photon = rng.random_range(0.0..2.0);
                apply_repump(&state, &diss)
            }
            _ => apply_leakage(&state, duration, &diss).map(|(s, _)| s),
        }
        .unwrap();
        assert!((state.total() - 1.0).abs() < 1e-9, "step {i}: total {}", state.total());
        assert!(Level::ALL.iter().all(|&l| state.level(l).iter().all(|p| *p >= -1e-15)));
    }
}

#[test]
fn rsb_leaves_ground_state_dark() {
    let s = IonState::fock(Level::Down, 0, 10).unwrap();
    for order in [-1, -2] {
        for t in [1e-6, 25e-6, 45e-6, 1e-3] {
            let p = PulseSpec::new(PulseKind::Sideband(order), t, TWO_PI * 40.9e3).with_detuning(TWO_PI * 3e3);
            assert_eq!(apply_coherent_pulse(&s, &p, 0.28).unwrap(), s);
        }
    }
}

#[test]
fn one_quantum_removal_below_zero_crossing() {
    let eta = 0.28;
    let omega0 = TWO_PI * 40.9e3;
    let cfg = DissipationConfig {
        repump_down_branch: 1.0,
        leak_up_rate: 0.0,
        leak_down_rate: 0.0,
        ..DissipationConfig::default()
    };
    let limit = first_zero_crossing(-1, eta, 500).unwrap();
    for n in 1..limit {
        let s = IonState::fock(Level::Down, n, limit + 1).unwrap();
        let t = std::f64::consts::PI / rabi_frequency(n, -1, eta, omega0).abs();
        let after = apply_coherent_pulse(&s, &PulseSpec::new(PulseKind::Sideband(-1), t, omega0), eta).unwrap();
        let out = apply_repump(&after, &cfg).unwrap();
        assert!((out.get(Level::Down, n - 1) - 1.0).abs() < 1e-12, "n = {n}");
    }
}

#[test]
fn rsb_pi_twice_and_rsb_then_bsb() {
    let eta = 0.28;
    let omega0 = TWO_PI * 40.9e3;
    let n = 5;
    let s = IonState::fock(Level::Down, n, 10).unwrap();
    let t_r = std::f64::consts::PI / rabi_frequency(n, -1, eta, omega0).abs();
    let rsb = PulseSpec::new(PulseKind::Sideband(-1), t_r, omega0);
    let once = apply_coherent_pulse(&s, &rsb, eta).unwrap();
    assert!((once.get(Level::Up, n - 1) - 1.0).abs() < 1e-12);
    let twice = apply_coherent_pulse(&once, &rsb, eta).unwrap();
    assert!((twice.get(Level::Down, n) - 1.0).abs() < 1e-12);
    // |↑,n−1⟩ couples to |↓,n−2⟩ on the blue sideband
    let t_b = std::f64::consts::PI / rabi_frequency(n - 2, 1, eta, omega0).abs();
    let bsb = PulseSpec::new(PulseKind::Sideband(1), t_b, omega0);
    let out = apply_coherent_pulse(&once, &bsb, eta).unwrap();
    assert!((out.get(Level::Down, n - 2) - 1.0).abs() < 1e-12);
}

#[test]
fn modulation_identities() {
    let s = ModulationState { carrier_frequency: 5.36e14, beta: 0.58, mod_frequency: 9.2e9 };
    let q = shg_transform(shg_transform(s));
    assert_eq!(q.mod_frequency, s.mod_frequency);
    assert!((q.beta - 4.0 * s.beta).abs() < 1e-15);
    assert!((q.carrier_frequency - 4.0 * s.carrier_frequency).abs() < 1.0);
    assert!(beta_from_ratio(1e12).unwrap() < 1e-5);
    assert_eq!(net_shift(&AomChain::default()).unwrap(), 0.0);
    assert_eq!(net_shift(&AomChain::new(vec![AomStage::known(450e6, 1, 1)])).unwrap(), 450e6);
    assert_eq!(solve_chain(&raman_difference_chain(450e6), 1.789e9).unwrap(), 222.25e6);
    assert!(solve_chain(&AomChain::new(vec![AomStage::known(1e6, 1, 1)]), 2e6).is_err());
}

#[test]
fn detection_sigma_matches_spread() {
    let model = DetectionModel::default();
    let refs = reference_distributions(&model).unwrap();
    let a = 0.3;
    let trials = 400;
    let mut est = Vec::new();
    let mut sig = Vec::new();
    for i in 0..trials {
        let mut rng = sbcool::rng::stream(77, i);
        let hist = simulate_detection(a, &refs, 300, &mut rng).unwrap();
        let e = fit_population(&hist, &refs).unwrap();
        est.push(e.a);
        sig.push(e.sigma);
    }
    let mean = est.iter().sum::<f64>() / trials as f64;
    let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
    let mean_sigma = sig.iter().sum::<f64>() / trials as f64;
    assert!((mean - a).abs() < 3.0 * sd / (trials as f64).sqrt() + 1e-3, "mean {mean}");
    assert!((mean_sigma / sd - 1.0).abs() < 0.15, "{mean_sigma} vs {sd}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn coherent_pulse_matches_rk4(
        n in 0usize..=3,
        s in prop::sample::select(vec![-2, -1, 0, 1, 2]),
        eta in 0.02f64..0.6,
        t in 0.0f64..80e-6,
        delta_khz in -30.0f64..30.0,
    ) {
        let n_max = 3;
        let m = n as i64 + s as i64;
        prop_assume!(m >= 0 && m <= n_max as i64);
        let omega0 = TWO_PI * 40.9e3;
        let delta = TWO_PI * delta_khz * 1e3;
        let kind = if s == 0 { PulseKind::Carrier } else { PulseKind::Sideband(s) };
        let state = IonState::fock(Level::Down, n, n_max).unwrap();
        let out = apply_coherent_pulse(&state, &PulseSpec::new(kind, t, omega0).with_detuning(delta), eta).unwrap();
        let expected = rk4_transfer(rabi_explicit(n, s, eta, omega0), delta, t);
        prop_assert!((out.get(Level::Up, m as usize) - expected).abs() < 1e-9);
        prop_assert!((out.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rabi_symmetry_and_bound(n in 0usize..200, s in -2i32..=2, eta in 0.0f64..1.0) {
        let m = n as i64 + s as i64;
        prop_assume!(m >= 0);
        let fwd = rabi_frequency(n, s, eta, 1.0);
        let back = rabi_frequency(m as usize, -s, eta, 1.0);
        prop_assert!((fwd.abs() - back.abs()).abs() <= 1e-12 * fwd.abs().max(1e-300));
        prop_assert!(fwd.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn rabi_matches_explicit_form(n in 0usize..=20, s in -2i32..=2, eta in 0.01f64..0.8) {
        prop_assume!(n as i64 + s as i64 >= 0);
        let a = rabi_frequency(n, s, eta, 1.0);
        let b = rabi_explicit(n, s, eta, 1.0);
        prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
    }

    #[test]
    fn laguerre_recurrence_vs_expansion(n in 0usize..=25, alpha in 0usize..=3, x in 0.0f64..2.0) {
        let r = laguerre(n, alpha, x);
        let e = laguerre_explicit(n, alpha, x);
        prop_assert!((r - e).abs() <= 1e-9 * e.abs().max(1.0), "{} vs {}", r, e);
    }

    #[test]
    fn beta_round_trip(beta in 0.05f64..=1.0) {
        let ratio = (bessel_j(0, beta) / bessel_j(1, beta)).powi(2);
        prop_assert!((beta_from_ratio(ratio).unwrap() - beta).abs() < 1e-8);
    }

    #[test]
    fn sideband_powers_sum(beta in 0.0f64..=3.0, order in 12u32..=20) {
        let p = sideband_powers(beta, order).unwrap();
        let total: f64 = p.fractions.iter().sum::<f64>() + p.remainder;
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(p.remainder < 1e-10);
    }

    #[test]
    fn solve_then_shift(single in 1e6f64..1e9, target in 1e8f64..1e10) {
        let chain = raman_difference_chain(single);
        match solve_chain(&chain, target) {
            Ok(f) => {
                let solved = AomChain::new(chain.stages.iter().map(|s| AomStage { frequency: Some(s.frequency.unwrap_or(f)), ..*s }).collect());
                let shift = net_shift(&solved).unwrap();
                prop_assert!((shift / target - 1.0).abs() < 1e-9);
            }
            Err(_) => prop_assert!(target <= 2.0 * single),
        }
    }

    #[test]
    fn thermal_mean(nbar in 0.0f64..20.0) {
        let d = thermal_distribution_with_tol(nbar, 2000, 1e-12).unwrap();
        prop_assert!((d.mean() - nbar).abs() < 1e-8 * nbar.max(1.0));
        prop_assert!((d.populations().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repump_preserves_motion_without_recoil(seed in any::<u64>(), branch in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(&mut rng, 15);
        let cfg = DissipationConfig { repump_down_branch: branch, ..DissipationConfig::default() };
        let out = apply_repump(&s, &cfg).unwrap();
        for (a, b) in out.motional_marginal().iter().zip(s.motional_marginal()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(out.level_population(Level::Up), 0.0);
    }
}
