//! Scenario definitions and the Monte Carlo executor.
//!
//! A [`ScenarioConfig`] names one of six experiment templates, the network
//! parameters, the noise environment, and a master seed; [`run_scenario`]
//! expands it into report rows (one per data series and sweep value), runs
//! `sets × trials` independent sequences per row, and aggregates per-set and
//! pooled statistics into a [`RunReport`].
//!
//! Reproducibility: every trial owns a dedicated random stream derived from
//! (master seed, row, set, trial) with a counter-based scheme, so the trial
//! table is a pure function of the configuration — independent of execution
//! order and thread count. Trials run in parallel via rayon.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::measurement::QndConfig;
use crate::metrology::{
    self, ContrastModel, LinearFit, StabilityPoint, StatsSummary,
};
use crate::network::NetworkState;
use crate::sequence::{run_timeline, ExecutionConfig, SequenceTimings, Timeline};

/// The experiment templates the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Spin-echo readout-phase scan of both single-mode orientations and
    /// the two-mode network: the differential response with opposite
    /// single-mode slopes.
    PhaseScan,
    /// Spin-echo response to a per-mode detuning proportional to a coil
    /// current, scanned over currents.
    GradientScan,
    /// Ramsey clock network at a sweep of mode counts, comparing
    /// mode-entangled, mode-separable, and coherent-reference operation.
    NetworkScaling,
    /// Single-point Ramsey clock comparison (entangled / coherent /
    /// detection-only floor).
    RamseyClock,
    /// Momentum-space interferometer with a phase kick standing in for an
    /// acceleration signal, entangled vs coherent.
    Interferometer,
    /// Analytic contrast-vs-separation model; no Monte Carlo trials.
    ContrastCurve,
}

impl Scenario {
    /// Stable kebab-case name (used in files and on the command line).
    pub fn label(&self) -> &'static str {
        match self {
            Scenario::PhaseScan => "phase-scan",
            Scenario::GradientScan => "gradient-scan",
            Scenario::NetworkScaling => "network-scaling",
            Scenario::RamseyClock => "ramsey-clock",
            Scenario::Interferometer => "interferometer",
            Scenario::ContrastCurve => "contrast-curve",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The data series a scenario row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesKind {
    /// One network sharing a single collective probe (and readout).
    ModeEntangled,
    /// Independent single-mode sensors, each with its own probe, summed.
    ModeSeparable,
    /// Coherent-state reference: same sequence, probe light off.
    CoherentReference,
    /// A lone mode oriented along +x.
    SinglePlus,
    /// A lone mode oriented along −x.
    SingleMinus,
    /// Probe immediately followed by readout — the conditioning floor.
    DetectionOnly,
}

impl SeriesKind {
    /// Short stable label used in file names and summaries.
    pub fn label(&self) -> &'static str {
        match self {
            SeriesKind::ModeEntangled => "me",
            SeriesKind::ModeSeparable => "ms",
            SeriesKind::CoherentReference => "css",
            SeriesKind::SinglePlus => "single_plus",
            SeriesKind::SingleMinus => "single_minus",
            SeriesKind::DetectionOnly => "detection_only",
        }
    }

    fn uses_probe(&self) -> bool {
        !matches!(self, SeriesKind::CoherentReference)
    }
}

impl fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn default_modes() -> usize {
    2
}
fn default_atoms() -> f64 {
    45_000.0
}
fn default_contrast() -> f64 {
    0.78
}
fn default_trials() -> usize {
    200
}
fn default_sets() -> usize {
    3
}
fn default_temperature() -> f64 {
    25e-6
}
fn default_time_constant() -> f64 {
    0.46e-6
}
fn default_gradient_slope() -> f64 {
    // rad/s of common detuning per ampere of coil current; with the default
    // 110 µs echo window this is a 1.7 mrad/A angular response.
    1.7e-3 / 110e-6
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Which experiment template to run.
    pub scenario: Scenario,
    /// Master seed; every random draw in the run derives from it.
    pub seed: u64,
    /// Number of network modes M (a power of two; split from one ensemble).
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Atoms per mode N.
    #[serde(default = "default_atoms")]
    pub atoms_per_mode: f64,
    /// Interference contrast C of the prepared state, in (0, 1].
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    /// Std of the common local-oscillator phase error per microwave pulse,
    /// rad.
    #[serde(default)]
    pub lo_noise_std: f64,
    /// Std of the common optical phase error per two-photon pulse, rad.
    #[serde(default)]
    pub raman_phase_std: f64,
    /// Detection noise std of the destructive readout, spins.
    #[serde(default)]
    pub readout_std: f64,
    /// Trials per set (≥ 2).
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Number of sets pooled in the report (≥ 1).
    #[serde(default = "default_sets")]
    pub sets: usize,
    /// Sweep grid; meaning depends on the scenario (readout phase rad, coil
    /// current A, mode count, kick angle rad, separation time s). Empty
    /// selects the scenario's default grid.
    #[serde(default)]
    pub sweep: Vec<f64>,
    /// Ensemble temperature for coherence estimates, K.
    #[serde(default = "default_temperature")]
    pub ensemble_temperature: f64,
    /// Measured contrast-decay time constant, s (contrast-curve scenario).
    #[serde(default = "default_time_constant")]
    pub coherence_time_constant: f64,
    /// Common detuning injected per ampere of coil current, rad/s/A
    /// (gradient-scan scenario).
    #[serde(default = "default_gradient_slope")]
    pub gradient_slope_per_ampere: f64,
    /// Split atoms binomially instead of exactly in half.
    #[serde(default)]
    pub partition_noise: bool,
    /// Dispersive-probe settings (infinite resolution = probe light off).
    #[serde(default)]
    pub qnd: QndConfig,
    /// Pulse-sequence timing parameters.
    #[serde(default)]
    pub timings: SequenceTimings,
    /// Physical constants used by analytic formulas.
    #[serde(default)]
    pub constants: PhysicalConstants,
}

impl ScenarioConfig {
    /// A configuration with the given scenario and seed and every other
    /// field at its default.
    pub fn new(scenario: Scenario, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            scenario,
            seed,
            modes: default_modes(),
            atoms_per_mode: default_atoms(),
            contrast: default_contrast(),
            qnd: QndConfig::default(),
            lo_noise_std: 0.0,
            raman_phase_std: 0.0,
            readout_std: 0.0,
            trials: default_trials(),
            sets: default_sets(),
            timings: SequenceTimings::default(),
            sweep: Vec::new(),
            ensemble_temperature: default_temperature(),
            coherence_time_constant: default_time_constant(),
            gradient_slope_per_ampere: default_gradient_slope(),
            partition_noise: false,
            constants: PhysicalConstants::default(),
        }
    }

    /// Validate every field, naming the offending one in the error.
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 || !self.modes.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "modes must be a power of two ≥ 1, got {}",
                self.modes
            )));
        }
        if !self.atoms_per_mode.is_finite() || self.atoms_per_mode <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "atoms_per_mode must be positive, got {}",
                self.atoms_per_mode
            )));
        }
        if !self.contrast.is_finite() || self.contrast <= 0.0 || self.contrast > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "contrast must lie in (0, 1], got {}",
                self.contrast
            )));
        }
        self.qnd.validate()?;
        for (name, v) in [
            ("lo_noise_std", self.lo_noise_std),
            ("raman_phase_std", self.raman_phase_std),
            ("readout_std", self.readout_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a non-negative finite number, got {v}"
                )));
            }
        }
        if self.trials < 2 {
            return Err(Error::InvalidConfig(format!(
                "trials must be at least 2, got {}",
                self.trials
            )));
        }
        if self.sets == 0 || self.sets > u16::MAX as usize {
            return Err(Error::InvalidConfig(format!(
                "sets must lie in 1..=65535, got {}",
                self.sets
            )));
        }
        if self.trials > u32::MAX as usize {
            return Err(Error::InvalidConfig("trials exceeds the stream budget".into()));
        }
        self.timings.validate()?;
        if self.sweep.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("sweep values must be finite".into()));
        }
        if !self.ensemble_temperature.is_finite() || self.ensemble_temperature <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "ensemble_temperature must be positive, got {}",
                self.ensemble_temperature
            )));
        }
        if !self.coherence_time_constant.is_finite() || self.coherence_time_constant <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "coherence_time_constant must be positive, got {}",
                self.coherence_time_constant
            )));
        }
        if !self.gradient_slope_per_ampere.is_finite() {
            return Err(Error::InvalidConfig(
                "gradient_slope_per_ampere must be finite".into(),
            ));
        }
        for (name, v) in [
            ("h", self.constants.h),
            ("hbar", self.constants.hbar),
            ("k_b", self.constants.k_b),
            ("atom_mass", self.constants.atom_mass),
            ("wavelength", self.constants.wavelength),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "constants.{name} must be positive, got {v}"
                )));
            }
        }
        match self.scenario {
            Scenario::NetworkScaling => {
                for v in self.effective_sweep() {
                    if v < 1.0 || v.fract() != 0.0 || !(v as usize).is_power_of_two() {
                        return Err(Error::InvalidConfig(format!(
                            "network-scaling sweep values must be powers of two ≥ 1, got {v}"
                        )));
                    }
                }
            }
            Scenario::ContrastCurve if self.effective_sweep().iter().any(|&t| t < 0.0) => {
                return Err(Error::InvalidConfig(
                    "contrast-curve sweep times must be non-negative".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// The sweep grid actually used: the configured one, or the scenario's
    /// default when empty.
    pub fn effective_sweep(&self) -> Vec<f64> {
        if !self.sweep.is_empty() {
            return self.sweep.clone();
        }
        let linspace = |a: f64, b: f64, n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                .collect()
        };
        match self.scenario {
            Scenario::PhaseScan => linspace(-0.025, 0.025, 11),
            Scenario::GradientScan => linspace(-2.0, 2.0, 9),
            Scenario::NetworkScaling => vec![1.0, 2.0, 4.0],
            Scenario::RamseyClock => vec![0.0],
            Scenario::Interferometer => vec![0.01],
            Scenario::ContrastCurve => linspace(0.0, 3e-6, 61),
        }
    }
}

/// One executed trial, keyed by set and trial index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub set: usize,
    pub trial: usize,
    /// Dispersive-probe outcome, spins (0.0 when the probe light is off).
    pub outcome_first: f64,
    /// Destructive-readout outcome, spins.
    pub outcome_second: f64,
    /// Parity-corrected difference of the two outcomes, spins.
    pub delta_jz: f64,
    /// Network-averaged angle, rad.
    pub theta_bar: f64,
    /// Per-mode decomposition of `delta_jz` (sums to it exactly).
    pub per_mode_delta: Vec<f64>,
}

/// All trials and statistics of one (series, sweep value) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub series: SeriesKind,
    /// The sweep-grid value this row was run at (scenario-dependent units).
    pub sweep_value: f64,
    /// Number of modes in this row's network.
    pub modes: usize,
    pub per_set: Vec<StatsSummary>,
    /// Pooled over sets: atom-weighted mean, within-set pooled variance.
    pub pooled: StatsSummary,
    pub trials: Vec<TrialRow>,
}

/// A least-squares line over a series' sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFit {
    pub series: SeriesKind,
    pub fit: LinearFit,
}

/// A stability curve for one row's trial sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStability {
    pub series: SeriesKind,
    pub sweep_value: f64,
    pub points: Vec<StabilityPoint>,
}

/// One point of the analytic contrast-vs-separation curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastPoint {
    /// Time the two momentum classes have been separating, s.
    pub separation_time: f64,
    /// Contrast from the temperature-derived decay constant.
    pub derived_contrast: f64,
    /// Contrast from the configured (measured) decay constant.
    pub fitted_contrast: f64,
}

/// Analytic Gaussian moments of the probe's conditioning, for illustrating
/// how one collective measurement narrows the marginal of each mode and
/// correlates the modes: prior marginal, post-probe marginal, and the
/// distribution of one mode conditioned on another.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentGrids {
    /// Grid over a single mode's J_z, spins.
    pub jz: Vec<f64>,
    /// CSS marginal pdf of one mode before the probe.
    pub prior_pdf: Vec<f64>,
    /// Marginal pdf of one mode after a collective probe with outcome 0.
    pub posterior_marginal_pdf: Vec<f64>,
    /// Pdf of mode 2 conditioned on mode 1 sitting one posterior std above
    /// its mean.
    pub posterior_conditional_pdf: Vec<f64>,
    /// Conditional mean of mode 2 in that situation, spins.
    pub conditional_center: f64,
    pub prior_variance: f64,
    pub marginal_variance: f64,
    pub conditional_variance: f64,
}

/// Everything produced by one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Echo of the configuration that produced the report.
    pub config: ScenarioConfig,
    pub rows: Vec<ReportRow>,
    /// Per-series response fits (phase and gradient scans).
    pub fits: Vec<SeriesFit>,
    /// Log-log fit of mode-separable sensitivity vs mode count
    /// (network-scaling scenario); slope ≈ −1/2.
    pub scaling_fit: Option<LinearFit>,
    /// Stability curves (interferometer scenario).
    pub stability: Vec<SeriesStability>,
    /// Analytic contrast curve (contrast-curve scenario).
    pub contrast_points: Vec<ContrastPoint>,
    /// The zero-separation contrast model (carries the thermal wavelength
    /// and derived time constant).
    pub contrast_model: Option<ContrastModel>,
    /// Probe-conditioning illustration (probed multi-mode scenarios).
    pub moment_grids: Option<MomentGrids>,
}

/// Result of a probe calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    /// Probe settings achieving the target (resolution possibly infinite).
    pub qnd: QndConfig,
    /// Net squeezing parameter the calibration run measured, dB.
    pub achieved_db: f64,
    /// Number of simulated evaluations spent.
    pub evaluations: usize,
    /// The target was achievable with the probe light off.
    pub no_squeezing_needed: bool,
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Expand the master seed into a 256-bit cipher key.
fn seed_key(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// The dedicated random stream of one trial: same key for the whole run,
/// stream number packing (row, set, trial).
fn trial_rng(key: &[u8; 32], row: u16, set: u16, trial: u32) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::from_seed(*key);
    rng.set_stream(((row as u64) << 48) | ((set as u64) << 32) | trial as u64);
    rng
}

// ---------------------------------------------------------------------------
// Row construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct RowSpec {
    series: SeriesKind,
    sweep_value: f64,
    modes: usize,
}

fn scenario_rows(cfg: &ScenarioConfig) -> Vec<RowSpec> {
    let sweep = cfg.effective_sweep();
    let mut rows = Vec::new();
    match cfg.scenario {
        Scenario::PhaseScan => {
            for series in [
                SeriesKind::SinglePlus,
                SeriesKind::SingleMinus,
                SeriesKind::ModeEntangled,
            ] {
                let modes = if series == SeriesKind::ModeEntangled {
                    cfg.modes
                } else {
                    1
                };
                for &phase in &sweep {
                    rows.push(RowSpec {
                        series,
                        sweep_value: phase,
                        modes,
                    });
                }
            }
        }
        Scenario::GradientScan => {
            // The entangled sensor plus a no-pulses reference that should
            // show no response to the coil current.
            for series in [SeriesKind::ModeEntangled, SeriesKind::DetectionOnly] {
                for &current in &sweep {
                    rows.push(RowSpec {
                        series,
                        sweep_value: current,
                        modes: cfg.modes,
                    });
                }
            }
        }
        Scenario::NetworkScaling => {
            for series in [
                SeriesKind::ModeEntangled,
                SeriesKind::ModeSeparable,
                SeriesKind::CoherentReference,
                SeriesKind::DetectionOnly,
            ] {
                for &m in &sweep {
                    rows.push(RowSpec {
                        series,
                        sweep_value: m,
                        modes: m as usize,
                    });
                }
            }
        }
        Scenario::RamseyClock => {
            for series in [
                SeriesKind::ModeEntangled,
                SeriesKind::ModeSeparable,
                SeriesKind::CoherentReference,
                SeriesKind::SinglePlus,
                SeriesKind::SingleMinus,
                SeriesKind::DetectionOnly,
            ] {
                let modes = match series {
                    SeriesKind::SinglePlus | SeriesKind::SingleMinus => 1,
                    _ => cfg.modes,
                };
                rows.push(RowSpec {
                    series,
                    sweep_value: 0.0,
                    modes,
                });
            }
        }
        Scenario::Interferometer => {
            for series in [SeriesKind::ModeEntangled, SeriesKind::CoherentReference] {
                for &kick in &sweep {
                    rows.push(RowSpec {
                        series,
                        sweep_value: kick,
                        modes: cfg.modes,
                    });
                }
            }
        }
        Scenario::ContrastCurve => {}
    }
    rows
}

fn build_timeline(cfg: &ScenarioConfig, spec: &RowSpec) -> Result<Timeline> {
    match cfg.scenario {
        Scenario::RamseyClock | Scenario::NetworkScaling => {
            if spec.series == SeriesKind::DetectionOnly {
                Ok(Timeline::detection_only())
            } else {
                Timeline::ramsey(cfg.timings.t_int)
            }
        }
        Scenario::PhaseScan => Timeline::echo(cfg.timings.t_int, spec.sweep_value, vec![]),
        Scenario::GradientScan => {
            if spec.series == SeriesKind::DetectionOnly {
                Ok(Timeline::detection_only())
            } else {
                Timeline::echo(cfg.timings.t_int, 0.0, gradient_detunings(cfg, spec)?)
            }
        }
        Scenario::Interferometer => Timeline::interferometer(
            &cfg.timings,
            vec![spec.sweep_value; spec.modes],
            0.0,
        ),
        Scenario::ContrastCurve => Err(Error::InvalidConfig(
            "the contrast-curve scenario runs no sequences".into(),
        )),
    }
}

/// Per-mode detunings injected by a coil current: anti-parallel modes
/// reject any common detuning, so the field gradient enters as a detuning
/// signed like each mode's orientation — every mode then contributes the
/// same differential phase ω_g · t_int.
fn gradient_detunings(cfg: &ScenarioConfig, spec: &RowSpec) -> Result<Vec<f64>> {
    let mut reference =
        NetworkState::init_css(cfg.atoms_per_mode * spec.modes as f64, cfg.contrast)?;
    while reference.mode_count() < spec.modes {
        reference = reference.split_network()?;
    }
    let omega = cfg.gradient_slope_per_ampere * spec.sweep_value;
    Ok(reference
        .modes
        .iter()
        .map(|m| f64::from(m.orientation_sign) * omega)
        .collect())
}

fn execution_for(cfg: &ScenarioConfig, series: SeriesKind) -> ExecutionConfig {
    let qnd = if series.uses_probe() {
        cfg.qnd
    } else {
        QndConfig {
            resolution_std: f64::INFINITY,
            ..cfg.qnd
        }
    };
    ExecutionConfig {
        lo_noise_std: cfg.lo_noise_std,
        raman_phase_std: cfg.raman_phase_std,
        qnd,
        readout_noise_std: cfg.readout_std,
    }
}

fn build_network(cfg: &ScenarioConfig, spec: &RowSpec, rng: &mut ChaCha12Rng) -> Result<NetworkState> {
    match spec.series {
        SeriesKind::SinglePlus => {
            NetworkState::init_css_oriented(cfg.atoms_per_mode, cfg.contrast, 1, 0)
        }
        SeriesKind::SingleMinus => {
            NetworkState::init_css_oriented(cfg.atoms_per_mode, cfg.contrast, -1, 0)
        }
        _ => {
            let total = cfg.atoms_per_mode * spec.modes as f64;
            let mut state = NetworkState::init_css(total, cfg.contrast)?;
            while state.mode_count() < spec.modes {
                state = if cfg.partition_noise {
                    state.split_network_with_partition_noise(rng)?
                } else {
                    state.split_network()?
                };
            }
            Ok(state)
        }
    }
}

/// Run one trial of one row; returns (first, second, delta, theta, per-mode).
fn run_single_trial(
    cfg: &ScenarioConfig,
    spec: &RowSpec,
    timeline: &Timeline,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, f64, f64, f64, Vec<f64>)> {
    let exec = execution_for(cfg, spec.series);
    if spec.series == SeriesKind::ModeSeparable {
        // Independent single-mode sensors, drawn sequentially from this
        // trial's stream, their outcomes summed.
        let mut first = 0.0;
        let mut second = 0.0;
        let mut delta = 0.0;
        let mut theta_sum = 0.0;
        let mut per_mode = Vec::with_capacity(spec.modes);
        for _ in 0..spec.modes {
            let state = NetworkState::init_css(cfg.atoms_per_mode, cfg.contrast)?;
            let out = run_timeline(state, timeline, &exec, rng)?;
            first += out.first.as_ref().map(|r| r.outcome).unwrap_or(0.0);
            second += out.second.outcome;
            delta += out.delta_jz;
            theta_sum += out.theta_bar;
            per_mode.push(out.delta_jz);
        }
        Ok((first, second, delta, theta_sum / spec.modes as f64, per_mode))
    } else {
        let state = build_network(cfg, spec, rng)?;
        let out = run_timeline(state, timeline, &exec, rng)?;
        Ok((
            out.first.as_ref().map(|r| r.outcome).unwrap_or(0.0),
            out.second.outcome,
            out.delta_jz,
            out.theta_bar,
            out.per_mode_delta.iter().copied().collect(),
        ))
    }
}

fn run_trials(
    cfg: &ScenarioConfig,
    spec: &RowSpec,
    row_id: u16,
    sets: usize,
    trials: usize,
    key: &[u8; 32],
) -> Result<Vec<TrialRow>> {
    let timeline = build_timeline(cfg, spec)?;
    let jobs: Vec<(usize, usize)> = (0..sets)
        .flat_map(|s| (0..trials).map(move |t| (s, t)))
        .collect();
    jobs.into_par_iter()
        .map(|(set, trial)| {
            let mut rng = trial_rng(key, row_id, set as u16, trial as u32);
            run_single_trial(cfg, spec, &timeline, &mut rng)
                .map(
                    |(outcome_first, outcome_second, delta_jz, theta_bar, per_mode_delta)| {
                        TrialRow {
                            set,
                            trial,
                            outcome_first,
                            outcome_second,
                            delta_jz,
                            theta_bar,
                            per_mode_delta,
                        }
                    },
                )
                .map_err(|e| e.at_trial(set, trial))
        })
        .collect()
}

fn summarize_row(cfg: &ScenarioConfig, spec: &RowSpec, trials: Vec<TrialRow>) -> Result<ReportRow> {
    let mut per_set = Vec::with_capacity(cfg.sets);
    let mut delta_moments = Vec::with_capacity(cfg.sets);
    let mut theta_moments = Vec::with_capacity(cfg.sets);
    for s in 0..cfg.sets {
        let deltas: Vec<f64> = trials
            .iter()
            .filter(|r| r.set == s)
            .map(|r| r.delta_jz)
            .collect();
        let thetas: Vec<f64> = trials
            .iter()
            .filter(|r| r.set == s)
            .map(|r| r.theta_bar)
            .collect();
        let summary = StatsSummary::from_trials(
            &deltas,
            &thetas,
            spec.modes,
            cfg.atoms_per_mode,
            cfg.contrast,
        )?;
        delta_moments.push((summary.n_trials, summary.mean_delta_jz, summary.var_delta_jz));
        theta_moments.push((summary.n_trials, summary.mean_theta, summary.var_theta));
        per_set.push(summary);
    }
    let (n, mean_delta, var_delta) = metrology::pooled_mean_variance(&delta_moments)?;
    let (_, mean_theta, var_theta) = metrology::pooled_mean_variance(&theta_moments)?;
    let mut pooled = StatsSummary::from_moments(
        n,
        mean_delta,
        var_delta,
        mean_theta,
        var_theta,
        spec.modes,
        cfg.atoms_per_mode,
        cfg.contrast,
    )?;
    if spec.modes >= 2 {
        let samples = DMatrix::from_fn(trials.len(), spec.modes, |r, c| {
            trials[r].per_mode_delta[c]
        });
        pooled.squeezing = Some(metrology::squeezing_matrix(
            &samples,
            cfg.atoms_per_mode,
            cfg.contrast,
        )?);
    }
    let all_thetas: Vec<f64> = trials.iter().map(|r| r.theta_bar).collect();
    pooled.gaussian_fit = metrology::fit_gaussian(&all_thetas).ok();
    Ok(ReportRow {
        series: spec.series,
        sweep_value: spec.sweep_value,
        modes: spec.modes,
        per_set,
        pooled,
        trials,
    })
}

fn series_fits(cfg: &ScenarioConfig, rows: &[ReportRow]) -> Vec<SeriesFit> {
    if !matches!(cfg.scenario, Scenario::PhaseScan | Scenario::GradientScan) {
        return Vec::new();
    }
    let mut fits = Vec::new();
    let mut seen: Vec<SeriesKind> = Vec::new();
    for row in rows {
        if seen.contains(&row.series) {
            continue;
        }
        seen.push(row.series);
        let (x, y): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.series == row.series)
            .map(|r| (r.sweep_value, r.pooled.mean_theta))
            .unzip();
        if let Ok(fit) = metrology::fit_linear(&x, &y) {
            fits.push(SeriesFit {
                series: row.series,
                fit,
            });
        }
    }
    fits
}

fn scaling_fit(cfg: &ScenarioConfig, rows: &[ReportRow]) -> Option<LinearFit> {
    if cfg.scenario != Scenario::NetworkScaling {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.series == SeriesKind::ModeSeparable && r.pooled.sensitivity_rad > 0.0)
        .map(|r| ((r.modes as f64).ln(), r.pooled.sensitivity_rad.ln()))
        .unzip();
    metrology::fit_linear(&x, &y).ok()
}

fn stability_curves(cfg: &ScenarioConfig, rows: &[ReportRow]) -> Vec<SeriesStability> {
    if cfg.scenario != Scenario::Interferometer {
        return Vec::new();
    }
    rows.iter()
        .filter_map(|row| {
            let thetas: Vec<f64> = row.trials.iter().map(|t| t.theta_bar).collect();
            metrology::fractional_stability(&thetas)
                .ok()
                .map(|points| SeriesStability {
                    series: row.series,
                    sweep_value: row.sweep_value,
                    points,
                })
        })
        .collect()
}

fn gaussian_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * variance).sqrt();
    norm * (-(x - mean) * (x - mean) / (2.0 * variance)).exp()
}

fn compute_moment_grids(cfg: &ScenarioConfig) -> Option<MomentGrids> {
    if !cfg.qnd.is_active() || cfg.modes < 2 || cfg.scenario == Scenario::ContrastCurve {
        return None;
    }
    let v = cfg.atoms_per_mode / 4.0;
    let sigma2 = cfg.qnd.resolution_std * cfg.qnd.resolution_std;
    let s = cfg.modes as f64 * v + sigma2;
    let shrink = v * v / s;
    let marginal = v - shrink;
    let cross = -shrink;
    let conditional = marginal - cross * cross / marginal;
    let center_mode1 = marginal.sqrt();
    let conditional_center = cross / marginal * center_mode1;
    let half_span = 4.0 * v.sqrt();
    let jz: Vec<f64> = (0..201)
        .map(|i| -half_span + 2.0 * half_span * i as f64 / 200.0)
        .collect();
    Some(MomentGrids {
        prior_pdf: jz.iter().map(|&z| gaussian_pdf(z, 0.0, v)).collect(),
        posterior_marginal_pdf: jz.iter().map(|&z| gaussian_pdf(z, 0.0, marginal)).collect(),
        posterior_conditional_pdf: jz
            .iter()
            .map(|&z| gaussian_pdf(z, conditional_center, conditional))
            .collect(),
        jz,
        conditional_center,
        prior_variance: v,
        marginal_variance: marginal,
        conditional_variance: conditional,
    })
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Execute a scenario: all series rows, `sets × trials` sequences each, with
/// per-set and pooled statistics, response fits, stability curves, and
/// analytic side products.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut report = RunReport {
        config: cfg.clone(),
        rows: Vec::new(),
        fits: Vec::new(),
        scaling_fit: None,
        stability: Vec::new(),
        contrast_points: Vec::new(),
        contrast_model: None,
        moment_grids: compute_moment_grids(cfg),
    };
    if cfg.scenario == Scenario::ContrastCurve {
        let base = metrology::contrast_vs_separation(
            0.0,
            cfg.ensemble_temperature,
            &cfg.constants,
            cfg.contrast,
        )?;
        report.contrast_points = cfg
            .effective_sweep()
            .iter()
            .map(|&t| {
                Ok(ContrastPoint {
                    separation_time: t,
                    derived_contrast: metrology::contrast_decay(
                        t,
                        base.time_constant,
                        cfg.contrast,
                    ),
                    fitted_contrast: metrology::contrast_decay(
                        t,
                        cfg.coherence_time_constant,
                        cfg.contrast,
                    ),
                })
            })
            .collect::<Result<_>>()?;
        report.contrast_model = Some(base);
        return Ok(report);
    }
    let specs = scenario_rows(cfg);
    if specs.len() >= u16::MAX as usize {
        return Err(Error::InvalidConfig(format!(
            "scenario expands to {} rows, exceeding the stream budget",
            specs.len()
        )));
    }
    let key = seed_key(cfg.seed);
    for (row_id, spec) in specs.iter().enumerate() {
        let trials = run_trials(cfg, spec, row_id as u16, cfg.sets, cfg.trials, &key)?;
        report.rows.push(summarize_row(cfg, spec, trials)?);
    }
    report.fits = series_fits(cfg, &report.rows);
    report.scaling_fit = scaling_fit(cfg, &report.rows);
    report.stability = stability_curves(cfg, &report.rows);
    Ok(report)
}

/// Row id reserved for calibration evaluations, outside the scenario's own
/// row range.
const CALIBRATION_ROW: u16 = u16::MAX;

/// Find the probe resolution that makes the template's mode-entangled
/// series reach a target net squeezing parameter, by bisection on simulated
/// runs with common random numbers. Targets at or above the probe-off level
/// come back with the probe light off ("no squeezing needed"); targets below
/// the strong-probe floor are a calibration error.
pub fn calibrate_probe(target_xi_db: f64, template: &ScenarioConfig) -> Result<CalibrationOutcome> {
    template.validate()?;
    if !target_xi_db.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "calibration target must be finite, got {target_xi_db}"
        )));
    }
    if template.scenario == Scenario::ContrastCurve {
        return Err(Error::Calibration(
            "the contrast-curve scenario is analytic; there is no probe to calibrate".into(),
        ));
    }
    let spec = RowSpec {
        series: SeriesKind::ModeEntangled,
        sweep_value: match template.scenario {
            Scenario::Interferometer => template.effective_sweep()[0],
            _ => 0.0,
        },
        modes: template.modes,
    };
    let trials = template.trials.max(2000);
    let key = seed_key(template.seed);
    let mut evaluations = 0usize;
    let mut eval = |sigma: f64| -> Result<f64> {
        evaluations += 1;
        let mut cfg = template.clone();
        cfg.qnd.resolution_std = sigma;
        let rows = run_trials(&cfg, &spec, CALIBRATION_ROW, 1, trials, &key)?;
        let deltas: Vec<f64> = rows.iter().map(|r| r.delta_jz).collect();
        metrology::xi_net_db(&deltas, spec.modes, cfg.atoms_per_mode, cfg.contrast)
    };

    const TOLERANCE_DB: f64 = 0.1;
    const MONOTONE_SLACK_DB: f64 = 0.05;

    let xi_off = eval(f64::INFINITY)?;
    if target_xi_db >= xi_off {
        return Ok(CalibrationOutcome {
            qnd: QndConfig {
                resolution_std: f64::INFINITY,
                ..template.qnd
            },
            achieved_db: xi_off,
            evaluations,
            no_squeezing_needed: true,
        });
    }
    let mut lo = 1e-3;
    let mut hi = 1e9;
    let mut xi_lo = eval(lo)?;
    let mut xi_hi = eval(hi)?;
    if xi_lo > xi_hi + MONOTONE_SLACK_DB {
        return Err(Error::Calibration(format!(
            "squeezing is not monotone over the probe bracket: {xi_lo:.3} dB at σ={lo:.3e} vs {xi_hi:.3} dB at σ={hi:.3e}"
        )));
    }
    if target_xi_db < xi_lo {
        return Err(Error::Calibration(format!(
            "target {target_xi_db:.2} dB is below the strong-probe floor {xi_lo:.2} dB"
        )));
    }
    for _ in 0..200 {
        let mid = (lo.ln() + (hi / lo).ln() / 2.0).exp();
        let xi_mid = eval(mid)?;
        if xi_mid < xi_lo - MONOTONE_SLACK_DB || xi_mid > xi_hi + MONOTONE_SLACK_DB {
            return Err(Error::Calibration(format!(
                "squeezing is not monotone in the probe resolution near σ={mid:.4e}"
            )));
        }
        if (xi_mid - target_xi_db).abs() <= TOLERANCE_DB {
            return Ok(CalibrationOutcome {
                qnd: QndConfig {
                    resolution_std: mid,
                    ..template.qnd
                },
                achieved_db: xi_mid,
                evaluations,
                no_squeezing_needed: false,
            });
        }
        if xi_mid < target_xi_db {
            lo = mid;
            xi_lo = xi_mid;
        } else {
            hi = mid;
            xi_hi = xi_mid;
        }
    }
    Err(Error::Calibration(format!(
        "bisection did not reach {target_xi_db:.2} dB within 200 evaluations"
    )))
}
