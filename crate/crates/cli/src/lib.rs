//! Subcommands of the `sbcool` binary.
//!
//! Each subcommand reads the run configuration, applies flag overrides,
//! writes its outputs atomically into the output directory and adds a
//! `manifest.json` that pins config hash, seed and tool version. Numbers are
//! written in shortest round-trip form, so a rerun with the same manifest
//! produces byte-identical files.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sbcool::analysis::{
    fit_decaying_sinusoid, fit_gaussian_resonance, fit_rabi_sinusoid, fit_thermal_flop, ScanData, SidebandThermometry,
    Thermometry,
};
use sbcool::config::RunConfig;
use sbcool::constants::TWO_PI;
use sbcool::dynamics::{IonState, Level, PulseKind, PulseSpec};
use sbcool::modchain::{net_shift, shg_transform, sideband_powers, solve_chain, AomStage};
use sbcool::motional::rabi_frequency;
use sbcool::sequence::{
    build_sbc_sequence, linspace, prepare, run_sequence_traced, scan_frequency, scan_time, sha256_hex,
    thermometry_scans, ExperimentConfig, Preparation,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FIT: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "sbcool", version, about = "Resolved-sideband Raman cooling simulator")]
pub struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides experiment.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides experiment.shots_per_point.
    #[arg(long, global = true)]
    pub shots: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Doppler cooling followed by the sideband-cooling schedule.
    Cool(CoolArgs),
    /// Simulated frequency or time scan with a fit.
    Scan(ScanArgs),
    /// Sideband power table and AOM frequency solution.
    Modchain(ModchainArgs),
}

#[derive(Args, Debug)]
pub struct CoolArgs {
    /// Overrides schedule.repeats.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Skip the sideband-ratio thermometry scans.
    #[arg(long)]
    pub no_thermometry: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Rsb,
    Bsb,
    Carrier,
    Rf,
    /// RSB and BSB frequency scans plus thermometry.
    Sidebands,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Frequency,
    Time,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Prep {
    Doppler,
    DopplerSbc,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[arg(long, value_enum)]
    pub observable: Observable,
    #[arg(long, value_enum, default_value = "frequency")]
    pub axis: Axis,
    /// First point: detuning in Hz or duration in µs.
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<f64>,
    /// Last point: detuning in Hz or duration in µs.
    #[arg(long, allow_hyphen_values = true)]
    pub stop: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Probe duration for frequency scans, µs.
    #[arg(long)]
    pub probe_us: Option<f64>,
    /// Overrides experiment.preparation.
    #[arg(long, value_enum)]
    pub prep: Option<Prep>,
}

#[derive(Args, Debug)]
pub struct ModchainArgs {
    /// Overrides modchain.beta.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Overrides modchain.aom_target_hz.
    #[arg(long)]
    pub target_hz: Option<f64>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Fit(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Fit(_) => EXIT_FIT,
            CliError::Io(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Fit(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<sbcool::Error> for CliError {
    fn from(e: sbcool::Error) -> Self {
        use sbcool::Error as E;
        match e {
            E::InvalidParameter { .. } | E::Parse { .. } | E::Truncation { .. } | E::HistogramCutoff { .. } => {
                CliError::Config(e.to_string())
            }
            E::Io(_) | E::Json(_) => CliError::Io(e.to_string()),
            _ => CliError::Fit(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    config_path: Option<String>,
    config_hash: String,
    seed: u64,
    output_dir: String,
    tool_version: &'a str,
}

/// Writes `bytes` to `dir/name` through a temporary file in the same directory.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_atomic(dir, name, text.as_bytes())
}

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> CliResult<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for row in rows {
        wtr.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    wtr.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

struct Context {
    run: RunConfig,
    cfg: ExperimentConfig,
    out: PathBuf,
    config_path: Option<PathBuf>,
}

impl Context {
    fn load(cli: &Cli) -> CliResult<Self> {
        let mut run = match &cli.config {
            Some(path) => {
                if !path.is_file() {
                    return Err(CliError::Config(format!("cannot read config file {}", path.display())));
                }
                RunConfig::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            run.experiment.seed = seed;
        }
        if let Some(shots) = cli.shots {
            run.experiment.shots_per_point = shots;
        }
        let cfg = run.experiment()?;
        std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Io(format!("{}: {e}", cli.out.display())))?;
        Ok(Self { run, cfg, out: cli.out.clone(), config_path: cli.config.clone() })
    }

    fn refresh(&mut self) -> CliResult<()> {
        self.cfg = self.run.experiment()?;
        Ok(())
    }

    fn write_manifest(&self, subcommand: &str) -> CliResult<()> {
        let manifest = Manifest {
            subcommand,
            config_path: self.config_path.as_ref().map(|p| p.display().to_string()),
            config_hash: sha256_hex(self.run.to_toml().as_bytes()),
            seed: self.cfg.seed,
            output_dir: self.out.display().to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
        };
        write_json(&self.out, "manifest.json", &manifest)
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let mut ctx = Context::load(cli)?;
    match &cli.command {
        Command::Cool(args) => cmd_cool(&mut ctx, args),
        Command::Scan(args) => cmd_scan(&mut ctx, args),
        Command::Modchain(args) => cmd_modchain(&mut ctx, args),
    }
}

#[derive(Serialize)]
struct StateRow {
    n: usize,
    p_down: f64,
    p_up: f64,
    p_aux: f64,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    step: usize,
    kind: &'a str,
    order: i32,
    duration_s: f64,
    nbar: f64,
}

#[derive(Serialize)]
struct CoolSummary {
    nbar_initial: f64,
    nbar_final: f64,
    p_ground_final: f64,
    eta: f64,
    steps: usize,
    sequence_duration_s: f64,
    thermometry: Option<Thermometry>,
    thermometry_warnings: Vec<String>,
    thermometry_error: Option<String>,
}

fn state_rows(state: &IonState) -> Vec<StateRow> {
    (0..=state.n_max())
        .map(|n| StateRow {
            n,
            p_down: state.get(Level::Down, n),
            p_up: state.get(Level::Up, n),
            p_aux: state.get(Level::Aux, n),
        })
        .collect()
}

fn thermometry_detunings(run: &RunConfig) -> CliResult<Vec<f64>> {
    let t = &run.thermometry;
    if t.points < 5 {
        return Err(CliError::Config("thermometry.points must be at least 5".into()));
    }
    Ok(linspace(-TWO_PI * t.span_hz, TWO_PI * t.span_hz, t.points))
}

fn cmd_cool(ctx: &mut Context, args: &CoolArgs) -> CliResult<()> {
    if let Some(r) = args.repeats {
        ctx.run.schedule.repeats = r;
        ctx.refresh()?;
    }
    let cfg = &ctx.cfg;
    let doppler = prepare(cfg, Preparation::Doppler)?;
    let (state, trace, steps) = if cfg.schedule.repeats == 0 {
        (doppler.clone(), Vec::new(), Vec::new())
    } else {
        let seq = build_sbc_sequence(cfg, &cfg.schedule)?;
        let (state, trace) = run_sequence_traced(&doppler, &seq, cfg)?;
        write_atomic(&ctx.out, "sequence.txt", seq.to_text().as_bytes())?;
        (state, trace, seq.steps)
    };

    let mut summary = CoolSummary {
        nbar_initial: doppler.mean_n(),
        nbar_final: state.mean_n(),
        p_ground_final: state.motional_marginal()[0],
        eta: cfg.eta()?,
        steps: steps.len(),
        sequence_duration_s: steps.iter().map(|s| s.duration).sum(),
        thermometry: None,
        thermometry_warnings: Vec::new(),
        thermometry_error: None,
    };
    if !args.no_thermometry {
        let detunings = thermometry_detunings(&ctx.run)?;
        let probe = ctx.run.thermometry.probe_time_us * 1e-6;
        match thermometry_scans(cfg, &state, probe, &detunings, cfg.shots_per_point, cfg.seed) {
            Ok(t) => {
                summary.thermometry = Some(t.analysis.result);
                summary.thermometry_warnings = t.analysis.warnings;
            }
            Err(e) => summary.thermometry_error = Some(e.to_string()),
        }
    }

    write_atomic(&ctx.out, "final_state.csv", &csv_bytes(state_rows(&state))?)?;
    let rows = steps.iter().zip(&trace).enumerate().map(|(i, (s, nbar))| TraceRow {
        step: i + 1,
        kind: s.kind.name(),
        order: s.kind.order(),
        duration_s: s.duration,
        nbar: *nbar,
    });
    write_atomic(&ctx.out, "nbar_trace.csv", &csv_bytes(rows)?)?;
    write_json(&ctx.out, "summary.json", &summary)?;
    ctx.write_manifest("cool")
}

#[derive(Serialize)]
struct ScanReport<T: Serialize> {
    observable: Observable,
    axis: Axis,
    preparation: Preparation,
    probe_duration_s: Option<f64>,
    x_unit: &'static str,
    fit: T,
}

#[derive(Serialize)]
struct ThermometryReport<'a> {
    preparation: Preparation,
    probe_duration_s: f64,
    x_unit: &'static str,
    thermometry: &'a SidebandThermometry,
}

fn to_hz(scan: &ScanData) -> ScanData {
    ScanData { x: scan.x.iter().map(|x| x / TWO_PI).collect(), ..scan.clone() }
}

fn write_scan(dir: &Path, name: &str, scan: &ScanData) -> CliResult<()> {
    let mut buf = Vec::new();
    scan.write_csv(&mut buf)?;
    write_atomic(dir, name, &buf)
}

fn require_converged(converged: bool, what: &str) -> CliResult<()> {
    if converged {
        Ok(())
    } else {
        Err(CliError::Fit(format!("{what} fit did not converge; outputs written")))
    }
}

fn cmd_scan(ctx: &mut Context, args: &ScanArgs) -> CliResult<()> {
    if let Some(p) = args.prep {
        ctx.run.experiment.preparation = match p {
            Prep::Doppler => Preparation::Doppler,
            Prep::DopplerSbc => Preparation::DopplerSbc,
        };
        ctx.refresh()?;
    }
    let cfg = &ctx.cfg;
    let eta = cfg.eta()?;
    let (start, stop, points) = match args.axis {
        Axis::Frequency => (
            args.start.unwrap_or(-ctx.run.thermometry.span_hz),
            args.stop.unwrap_or(ctx.run.thermometry.span_hz),
            args.points.unwrap_or(ctx.run.thermometry.points),
        ),
        Axis::Time => (args.start.unwrap_or(0.0), args.stop.unwrap_or(100.0), args.points.unwrap_or(51)),
    };
    if points == 0 || !(start.is_finite() && stop.is_finite()) || (points > 1 && stop <= start) {
        return Err(CliError::Config(format!("empty scan range: {points} points from {start} to {stop}")));
    }
    if args.axis == Axis::Time && start < 0.0 {
        return Err(CliError::Config("durations must be >= 0".into()));
    }
    let shots = cfg.shots_per_point;
    let initial = prepare(cfg, cfg.preparation)?;

    if args.observable == Observable::Sidebands {
        if args.axis != Axis::Frequency {
            return Err(CliError::Config("sidebands observable needs --axis frequency".into()));
        }
        let probe = args.probe_us.unwrap_or(ctx.run.thermometry.probe_time_us) * 1e-6;
        let detunings: Vec<f64> = linspace(start, stop, points).iter().map(|f| TWO_PI * f).collect();
        let t = thermometry_scans(cfg, &initial, probe, &detunings, shots, cfg.seed)?;
        write_scan(&ctx.out, "red.csv", &to_hz(&t.red))?;
        write_scan(&ctx.out, "blue.csv", &to_hz(&t.blue))?;
        write_json(
            &ctx.out,
            "thermometry.json",
            &ThermometryReport { preparation: cfg.preparation, probe_duration_s: probe, x_unit: "rad/s", thermometry: &t.analysis },
        )?;
        ctx.write_manifest("scan")?;
        return Ok(());
    }

    let (kind, omega0) = match args.observable {
        Observable::Rsb => (PulseKind::Sideband(-1), cfg.raman_omega0),
        Observable::Bsb => (PulseKind::Sideband(1), cfg.raman_omega0),
        Observable::Carrier => (PulseKind::Carrier, cfg.raman_omega0),
        Observable::Rf => (PulseKind::Rf, cfg.rf_omega),
        Observable::Sidebands => unreachable!(),
    };
    let out = &ctx.out;
    match args.axis {
        Axis::Frequency => {
            let probe = match args.probe_us {
                Some(us) => us * 1e-6,
                None => match args.observable {
                    Observable::Rsb | Observable::Bsb => ctx.run.thermometry.probe_time_us * 1e-6,
                    _ => std::f64::consts::PI / rabi_frequency(0, kind.order(), eta, omega0).abs(),
                },
            };
            let tpl = PulseSpec::new(kind, probe, omega0);
            let detunings: Vec<f64> = linspace(start, stop, points).iter().map(|f| TWO_PI * f).collect();
            let scan = to_hz(&scan_frequency(cfg, &initial, &tpl, &detunings, shots, cfg.seed)?);
            write_scan(out, "scan.csv", &scan)?;
            let fit = fit_gaussian_resonance(&scan)?;
            let converged = fit.report.converged;
            let report = ScanReport {
                observable: args.observable,
                axis: args.axis,
                preparation: cfg.preparation,
                probe_duration_s: Some(probe),
                x_unit: "Hz",
                fit,
            };
            write_json(out, "fit.json", &report)?;
            ctx.write_manifest("scan")?;
            require_converged(converged, "resonance")
        }
        Axis::Time => {
            let tpl = PulseSpec::new(kind, 0.0, omega0);
            let durations: Vec<f64> = linspace(start, stop, points).iter().map(|t| t * 1e-6).collect();
            let scan = scan_time(cfg, &initial, &tpl, &durations, shots, cfg.seed)?;
            write_scan(out, "scan.csv", &scan)?;
            let base = |fit| ScanReport {
                observable: args.observable,
                axis: args.axis,
                preparation: cfg.preparation,
                probe_duration_s: None,
                x_unit: "s",
                fit,
            };
            let converged = match (args.observable, cfg.preparation) {
                (Observable::Rf, _) => {
                    let fit = fit_rabi_sinusoid(&scan)?;
                    let c = fit.report.converged;
                    write_json(out, "fit.json", &base(serde_json::to_value(fit).unwrap()))?;
                    c
                }
                (Observable::Carrier, Preparation::Doppler) => {
                    let fit = fit_thermal_flop(&scan, eta)?;
                    let c = fit.report.converged;
                    write_json(out, "fit.json", &base(serde_json::to_value(fit).unwrap()))?;
                    c
                }
                _ => {
                    let fit = fit_decaying_sinusoid(&scan)?;
                    let c = fit.report.converged;
                    write_json(out, "fit.json", &base(serde_json::to_value(fit).unwrap()))?;
                    c
                }
            };
            ctx.write_manifest("scan")?;
            require_converged(converged, "time-scan")
        }
    }
}

#[derive(Serialize)]
struct PowerRow {
    stage: String,
    order: i32,
    offset_hz: f64,
    beta: f64,
    fraction: f64,
}

#[derive(Serialize)]
struct AomReport {
    single_pass_hz: f64,
    target_hz: f64,
    double_pass_hz: f64,
    net_shift_hz: f64,
    single_pass_efficiency: f64,
    double_pass_efficiency: f64,
    carrier_to_first_ratio_per_stage: Vec<(String, f64)>,
}

fn cmd_modchain(ctx: &mut Context, args: &ModchainArgs) -> CliResult<()> {
    if let Some(b) = args.beta {
        ctx.run.modchain.beta = b;
    }
    if let Some(t) = args.target_hz {
        ctx.run.modchain.aom_target_hz = t;
    }
    let m = &ctx.run.modchain;
    let mut state = m.modulation();
    state.validate()?;
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for stage in 0..=m.shg_stages {
        let name = if stage == 0 { "eom".to_string() } else { format!("shg{stage}") };
        let powers = sideband_powers(state.beta, m.max_order)?;
        for (&k, &f) in powers.orders.iter().zip(&powers.fractions) {
            rows.push(PowerRow { stage: name.clone(), order: k, offset_hz: k as f64 * state.mod_frequency, beta: state.beta, fraction: f });
        }
        ratios.push((name, powers.carrier_to_first_ratio()));
        state = shg_transform(state);
    }
    write_atomic(&ctx.out, "modchain.csv", &csv_bytes(rows)?)?;

    let chain = m.aom_chain();
    let f = solve_chain(&chain, m.aom_target_hz)?;
    let solved = sbcool::modchain::AomChain::new(
        chain.stages.iter().map(|s| AomStage { frequency: Some(s.frequency.unwrap_or(f)), ..*s }).collect(),
    );
    let report = AomReport {
        single_pass_hz: m.aom_single_pass_hz,
        target_hz: m.aom_target_hz,
        double_pass_hz: f,
        net_shift_hz: net_shift(&solved)?,
        single_pass_efficiency: m.single_pass_efficiency,
        double_pass_efficiency: m.double_pass_efficiency,
        carrier_to_first_ratio_per_stage: ratios,
    };
    write_json(&ctx.out, "aom.json", &report)?;
    ctx.write_manifest("modchain")
}
