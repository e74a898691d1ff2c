//! Experiment recipes: the sideband-cooling schedule, its execution on the
//! population-level state, and simulated frequency and time scans.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{sideband_thermometry, ScanData, SidebandThermometry};
use crate::constants::TWO_PI;
use crate::detection::{fit_population, reference_distributions, simulate_detection, DetectionModel, ReferenceDistributions};
use crate::dynamics::{
    apply_coherent_pulse, apply_doppler_cool, apply_leakage, apply_repump, apply_rf_pulse, DissipationConfig,
    IonState, Level, PulseKind, PulseSpec,
};
use crate::error::{invalid, Error, Result};
use crate::motional::{lamb_dicke, rabi_frequency, AtomConfig, TrapConfig, DEFAULT_N_MAX};
use crate::rng::{self, SimRng};

/// Targets with |Ω| below this fraction of Ω₀ are rejected.
pub const ZERO_CROSSING_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSet {
    pub count: usize,
    pub n_start: usize,
}

/// RSB pulse trains: pulse k of a set targets n_start − k.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbcSchedule {
    pub second_order: PulseSet,
    pub first_order: PulseSet,
    pub repeats: usize,
}

impl Default for SbcSchedule {
    fn default() -> Self {
        Self {
            second_order: PulseSet { count: 25, n_start: 40 },
            first_order: PulseSet { count: 15, n_start: 15 },
            repeats: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preparation {
    Doppler,
    #[default]
    DopplerSbc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub atom: AtomConfig,
    pub trap: TrapConfig,
    pub dissipation: DissipationConfig,
    pub detection: DetectionModel,
    /// Bare Raman Rabi frequency Ω₀, rad/s.
    pub raman_omega0: f64,
    /// Microwave Rabi frequency, rad/s.
    pub rf_omega: f64,
    pub shots_per_point: u64,
    pub seed: u64,
    pub n_max: usize,
    pub schedule: SbcSchedule,
    pub preparation: Preparation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            atom: AtomConfig::default(),
            trap: TrapConfig::default(),
            dissipation: DissipationConfig::default(),
            detection: DetectionModel::default(),
            raman_omega0: TWO_PI * 40.9e3,
            rf_omega: TWO_PI * 63.74e3,
            shots_per_point: 300,
            seed: 1,
            n_max: DEFAULT_N_MAX,
            schedule: SbcSchedule::default(),
            preparation: Preparation::DopplerSbc,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.atom.validate()?;
        self.trap.validate()?;
        self.dissipation.validate()?;
        self.detection.validate()?;
        if !(self.raman_omega0 > 0.0 && self.raman_omega0.is_finite()) {
            return Err(invalid("raman_omega0", "must be positive"));
        }
        if !(self.rf_omega > 0.0 && self.rf_omega.is_finite()) {
            return Err(invalid("rf_omega", "must be positive"));
        }
        if self.shots_per_point == 0 {
            return Err(invalid("shots_per_point", "must be at least 1"));
        }
        if self.n_max == 0 {
            return Err(invalid("n_max", "must be at least 1"));
        }
        Ok(())
    }

    pub fn eta(&self) -> Result<f64> {
        lamb_dicke(&self.atom, &self.trap)
    }

    pub fn rf_pi_time(&self) -> f64 {
        std::f64::consts::PI / self.rf_omega
    }

    /// One repump block as a sequence step.
    pub fn repump_step(&self) -> PulseSpec {
        PulseSpec::new(PulseKind::Repump, self.dissipation.block_duration(self.rf_pi_time()), 0.0)
    }

    /// SHA-256 of the canonical JSON form, lowercase hex.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// SHA-256 digest as lowercase hex.
pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub steps: Vec<PulseSpec>,
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Sequence {
    pub fn total_duration(&self) -> f64 {
        self.steps.iter().map(|s| s.duration).sum()
    }

    pub fn count(&self, pred: impl Fn(&PulseKind) -> bool) -> usize {
        self.steps.iter().filter(|s| pred(&s.kind)).count()
    }

    /// One step per line: `kind,order,duration_us,detuning_Hz,omega0_Hz`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("kind,order,duration_us,detuning_Hz,omega0_Hz\n");
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.kind.name(),
                s.kind.order(),
                s.duration * 1e6,
                s.detuning / TWO_PI,
                s.omega0 / TWO_PI
            );
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Vec<PulseSpec>> {
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || (i == 0 && trimmed.starts_with("kind")) {
                continue;
            }
            let parse_err = |reason: String| Error::Parse { line, reason };
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(parse_err(format!("expected 5 fields, found {}", fields.len())));
            }
            let num = |j: usize, name: &str| -> Result<f64> {
                fields[j].parse::<f64>().map_err(|e| parse_err(format!("{name}: {e}")))
            };
            let order: i32 = fields[1].parse().map_err(|e| parse_err(format!("order: {e}")))?;
            let kind = match fields[0] {
                "carrier" => PulseKind::Carrier,
                "sideband" => PulseKind::Sideband(order),
                "rf" => PulseKind::Rf,
                "rf_recover" => PulseKind::RfRecover,
                "repump" => PulseKind::Repump,
                "doppler_cool" => PulseKind::DopplerCool,
                "raman_idle" => PulseKind::RamanIdle,
                other => return Err(parse_err(format!("unknown step kind '{other}'"))),
            };
            let spec = PulseSpec::new(kind, num(2, "duration_us")? * 1e-6, TWO_PI * num(4, "omega0_Hz")?)
                .with_detuning(TWO_PI * num(3, "detuning_Hz")?);
            spec.validate().map_err(|e| parse_err(e.to_string()))?;
            steps.push(spec);
        }
        Ok(steps)
    }
}

/// Target occupations n_start, n_start − 1, … for one pulse set.
fn targets(set: &PulseSet, order: usize) -> Result<Vec<usize>> {
    if set.count == 0 {
        return Ok(Vec::new());
    }
    let last = set.n_start as i64 - (set.count as i64 - 1);
    if last < order as i64 {
        return Err(Error::Schedule {
            n: last.max(0) as usize,
            order: -(order as i32),
            reason: format!("{} pulses from n = {} reach n = {last}, below the order", set.count, set.n_start),
        });
    }
    Ok((0..set.count).map(|k| set.n_start - k).collect())
}

/// Builds the cooling recipe: per repeat, 2nd-order RSB π-pulses then
/// 1st-order ones, each followed by a repump block. Pulse durations are
/// π/|Ω_{n,n−s}| at the targeted n.
pub fn build_sbc_sequence(cfg: &ExperimentConfig, schedule: &SbcSchedule) -> Result<Sequence> {
    cfg.validate()?;
    let eta = cfg.eta()?;
    let repump = cfg.repump_step();
    let mut block = Vec::new();
    for (set, order) in [(&schedule.second_order, 2usize), (&schedule.first_order, 1)] {
        let s = -(order as i32);
        for n in targets(set, order)? {
            let omega = rabi_frequency(n, s, eta, cfg.raman_omega0);
            if omega.abs() < ZERO_CROSSING_THRESHOLD * cfg.raman_omega0 {
                return Err(Error::Schedule {
                    n,
                    order: s,
                    reason: format!("|Rabi frequency| {:.3e} rad/s is at a zero crossing", omega.abs()),
                });
            }
            block.push(PulseSpec::new(PulseKind::Sideband(s), std::f64::consts::PI / omega.abs(), cfg.raman_omega0));
            block.push(repump);
        }
    }
    let steps: Vec<PulseSpec> = (0..schedule.repeats).flat_map(|_| block.iter().copied()).collect();
    if steps.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(Sequence {
        steps,
        label: format!(
            "sbc {}x2nd@{} {}x1st@{} x{}",
            schedule.second_order.count,
            schedule.second_order.n_start,
            schedule.first_order.count,
            schedule.first_order.n_start,
            schedule.repeats
        ),
        seed: cfg.seed,
        config_hash: cfg.hash(),
    })
}

/// Applies one step, including leakage while the Raman beams are on.
pub fn apply_step(state: &IonState, step: &PulseSpec, cfg: &ExperimentConfig, eta: f64) -> Result<IonState> {
    let out = match step.kind {
        PulseKind::Carrier | PulseKind::Sideband(_) => apply_coherent_pulse(state, step, eta)?,
        PulseKind::Rf => apply_coherent_pulse(state, step, eta)?,
        PulseKind::RfRecover => apply_rf_pulse(state, step)?,
        PulseKind::Repump => apply_repump(state, &cfg.dissipation)?,
        PulseKind::DopplerCool => apply_doppler_cool(state, &cfg.atom, &cfg.trap)?,
        PulseKind::RamanIdle => state.clone(),
    };
    if step.kind.is_raman() {
        let (leaked, clamped) = apply_leakage(&out, step.duration, &cfg.dissipation)?;
        if clamped {
            return Err(invalid("duration", format!("{} s step exceeds the first-order leakage model", step.duration)));
        }
        return Ok(leaked);
    }
    Ok(out)
}

fn check_n_max(state: &IonState, cfg: &ExperimentConfig) -> Result<()> {
    if state.n_max() != cfg.n_max {
        return Err(invalid("n_max", format!("state has n_max {} but config has {}", state.n_max(), cfg.n_max)));
    }
    Ok(())
}

pub fn run_sequence(state: &IonState, seq: &Sequence, cfg: &ExperimentConfig) -> Result<IonState> {
    check_n_max(state, cfg)?;
    let eta = cfg.eta()?;
    seq.steps.iter().try_fold(state.clone(), |s, step| apply_step(&s, step, cfg, eta))
}

/// [`run_sequence`] that also returns n̄ after every step.
pub fn run_sequence_traced(state: &IonState, seq: &Sequence, cfg: &ExperimentConfig) -> Result<(IonState, Vec<f64>)> {
    check_n_max(state, cfg)?;
    let eta = cfg.eta()?;
    let mut trace = Vec::with_capacity(seq.steps.len());
    let mut s = state.clone();
    for step in &seq.steps {
        s = apply_step(&s, step, cfg, eta)?;
        trace.push(s.mean_n());
    }
    Ok((s, trace))
}

/// Doppler-cooled state, optionally followed by the configured cooling schedule.
pub fn prepare(cfg: &ExperimentConfig, preparation: Preparation) -> Result<IonState> {
    cfg.validate()?;
    let start = IonState::fock(Level::Down, 0, cfg.n_max)?;
    let doppler = apply_doppler_cool(&start, &cfg.atom, &cfg.trap)?;
    match preparation {
        Preparation::Doppler => Ok(doppler),
        Preparation::DopplerSbc => {
            if cfg.schedule.repeats == 0 {
                return Ok(doppler);
            }
            run_sequence(&doppler, &build_sbc_sequence(cfg, &cfg.schedule)?, cfg)
        }
    }
}

/// Excitation estimate from one simulated histogram: y = 1 − â with â the
/// fitted bright fraction. σ_y is floored at 1/(2·shots).
pub fn measure_excitation(
    p_excited: f64,
    refs: &ReferenceDistributions,
    shots: u64,
    rng: &mut SimRng,
) -> Result<(f64, f64)> {
    let hist = simulate_detection((1.0 - p_excited).clamp(0.0, 1.0), refs, shots, rng)?;
    let est = fit_population(&hist, refs)?;
    Ok((1.0 - est.a, est.sigma.max(0.5 / shots as f64)))
}

fn scan<F>(cfg: &ExperimentConfig, initial: &IonState, xs: &[f64], shots: u64, seed: u64, probe: F) -> Result<ScanData>
where
    F: Fn(f64) -> PulseSpec,
{
    cfg.validate()?;
    check_n_max(initial, cfg)?;
    if xs.is_empty() {
        return Err(invalid("scan", "no scan points"));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(invalid("scan", "scan values must be finite"));
    }
    let eta = cfg.eta()?;
    let refs = reference_distributions(&cfg.detection)?;
    let mut data = ScanData::default();
    for (i, &x) in xs.iter().enumerate() {
        let after = apply_step(initial, &probe(x), cfg, eta)?;
        let mut r = rng::stream(seed, i as u64);
        let (y, sigma) = measure_excitation(1.0 - after.bright_probability(), &refs, shots, &mut r)?;
        data.x.push(x);
        data.y.push(y);
        data.sigma_y.push(sigma);
    }
    Ok(data)
}

/// Probe `template` at each detuning (rad/s) from `initial`.
pub fn scan_frequency(
    cfg: &ExperimentConfig,
    initial: &IonState,
    template: &PulseSpec,
    detunings: &[f64],
    shots: u64,
    seed: u64,
) -> Result<ScanData> {
    scan(cfg, initial, detunings, shots, seed, |d| template.with_detuning(d))
}

/// Probe `template` for each duration (s) from `initial`.
pub fn scan_time(
    cfg: &ExperimentConfig,
    initial: &IonState,
    template: &PulseSpec,
    durations: &[f64],
    shots: u64,
    seed: u64,
) -> Result<ScanData> {
    if durations.iter().any(|t| *t < 0.0) {
        return Err(invalid("durations", "must be >= 0"));
    }
    scan(cfg, initial, durations, shots, seed, |t| template.with_duration(t))
}

/// Evenly spaced points from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..points).map(|i| start + (stop - start) * i as f64 / (points - 1) as f64).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermometryRun {
    pub red: ScanData,
    pub blue: ScanData,
    pub analysis: SidebandThermometry,
}

/// RSB and BSB frequency scans with a probe of `probe_time`, analysed with
/// the sideband-ratio method. The blue scan uses seed + 1.
pub fn thermometry_scans(
    cfg: &ExperimentConfig,
    initial: &IonState,
    probe_time: f64,
    detunings: &[f64],
    shots: u64,
    seed: u64,
) -> Result<ThermometryRun> {
    let rsb = PulseSpec::new(PulseKind::Sideband(-1), probe_time, cfg.raman_omega0);
    let bsb = PulseSpec::new(PulseKind::Sideband(1), probe_time, cfg.raman_omega0);
    let red = scan_frequency(cfg, initial, &rsb, detunings, shots, seed)?;
    let blue = scan_frequency(cfg, initial, &bsb, detunings, shots, seed.wrapping_add(1))?;
    let analysis = sideband_thermometry(&red, &blue)?;
    Ok(ThermometryRun { red, blue, analysis })
}
