//! Timed pulse sequences and their execution against a spin network.
//!
//! A [`Timeline`] is an ordered list of events — pulses on the microwave or
//! two-photon optical channel, free-evolution windows with optional per-mode
//! detunings, analytic per-mode phase kicks, a dispersive probe marker, and
//! a final destructive readout marker. Builders are provided for the three
//! protocols of interest:
//!
//! - **Ramsey**: π/2 — free(T_int) — π/2; the workhorse clock sequence.
//! - **Spin echo**: π/2 — free(T_int) — π — free(T_int) — π/2; static common
//!   detunings cancel between the two halves, so only signals applied
//!   asymmetrically (a gradient pulsed on during the second interval, or a
//!   phase offset on the final pulse) survive to the readout.
//! - **Momentum-space interferometer**: four optical π pulses split, redirect
//!   and recombine the two momentum wavepackets around a central microwave π,
//!   with finite pulse durations recorded for the acceleration phase formula;
//!   a conversion π/2 on each side maps phase to population.
//!
//! [`run_timeline`] executes one trial: an optional dispersive probe of the
//! collective spin (the first measurement), the pulse dynamics, and a
//! destructive readout (the second measurement). The trial statistic is the
//! parity-corrected difference `δ = y₂ − p·y₁`, where the parity `p = ±1`
//! tracks whether the net sequence rotation maps the probed quadrature onto
//! plus or minus itself. With the probe on, the quantum projection noise
//! common to both measurements cancels in δ, leaving detection noise and any
//! phase signal — the differential-measurement trick every protocol here
//! relies on.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::measurement::{fluorescence_readout, qnd_measure, DetectionRecord, QndConfig};
use crate::network::NetworkState;

/// Which field drives a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseChannel {
    /// Microwave drive: shared local oscillator, couples the clock states of
    /// every mode identically regardless of momentum.
    Microwave,
    /// Two-photon optical (Raman) drive: transfers momentum, so it addresses
    /// the momentum-split modes; its phase jitter is common across modes.
    TwoPhoton,
}

/// What happens during one timeline event.
#[derive(Debug, Clone, PartialEq)]
pub enum EventAction {
    /// A resonant pulse of the given rotation area about an equatorial axis.
    Pulse {
        channel: PulseChannel,
        axis_phase: f64,
        area: f64,
    },
    /// Free evolution; `detunings` holds one rad/s entry per mode (empty
    /// means all zero). A window with non-zero detunings models a field
    /// gradient pulsed on for exactly this interval.
    FreeEvolution { detunings: Vec<f64> },
    /// Instantaneous analytic phase displacement, one angle (rad) per mode.
    /// Used to inject closed-form responses (e.g. the acceleration phase of
    /// an interferometer) without integrating trajectories.
    PhaseKick { angles: Vec<f64> },
    /// Dispersive probe of the collective Σ J_z (the first, non-destructive
    /// measurement). Executed only when the run's probe light is on.
    Probe,
    /// Destructive fluorescence readout of Σ J_z. Must be the last event.
    Readout,
}

/// One scheduled event.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelineEvent {
    /// Start time, s, relative to the sequence origin.
    pub start: f64,
    /// Duration, s (zero for idealized instantaneous operations).
    pub duration: f64,
    /// What happens.
    pub action: EventAction,
}

impl TimelineEvent {
    fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Named durations of a sequence, s. The same structure configures both the
/// clock sequences (which only use `t_int`) and the interferometer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceTimings {
    /// Free-evolution (interrogation) time between pulses, s.
    pub t_int: f64,
    /// Gap between sequential pulses in the interferometer mirror block, s.
    pub t_0: f64,
    /// Duration of a microwave π/2 pulse, s (a π pulse lasts 2·tau_0).
    pub tau_0: f64,
    /// Duration of a two-photon optical π pulse, s.
    pub tau_k: f64,
}

impl Default for SequenceTimings {
    fn default() -> Self {
        SequenceTimings {
            t_int: 100e-6,
            t_0: 1e-6,
            tau_0: 80e-6,
            tau_k: 2e-6,
        }
    }
}

impl SequenceTimings {
    /// Check that every duration is finite and non-negative.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_int", self.t_int),
            ("t_0", self.t_0),
            ("tau_0", self.tau_0),
            ("tau_k", self.tau_k),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "timing {name} must be non-negative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A time-ordered pulse sequence plus the named durations it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    /// Events sorted by start time, non-overlapping.
    pub events: Vec<TimelineEvent>,
    /// Free-evolution time per interrogation window, s.
    pub interrogation_time: f64,
    /// Gap between sequential pulses in the mirror block, s.
    pub inter_pulse_gap: f64,
    /// Microwave π/2 duration, s.
    pub microwave_half_pulse: f64,
    /// Two-photon π duration, s.
    pub two_photon_pulse: f64,
}

/// Tolerance used when the readout parity is derived from the net rotation.
const PARITY_MARGIN: f64 = 0.99;

impl Timeline {
    /// Ramsey sequence: probe, π/2 — free(t_int) — π/2, readout. All pulses
    /// are modeled as instantaneous; `t_int = 0` degenerates to a single π
    /// pulse.
    pub fn ramsey(t_int: f64) -> Result<Timeline> {
        if !t_int.is_finite() || t_int < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "interrogation time must be non-negative and finite, got {t_int}"
            )));
        }
        let events = vec![
            TimelineEvent {
                start: 0.0,
                duration: 0.0,
                action: EventAction::Probe,
            },
            microwave_pulse(0.0, 0.0, FRAC_PI_2),
            TimelineEvent {
                start: 0.0,
                duration: t_int,
                action: EventAction::FreeEvolution { detunings: vec![] },
            },
            microwave_pulse(t_int, 0.0, FRAC_PI_2),
            TimelineEvent {
                start: t_int,
                duration: 0.0,
                action: EventAction::Readout,
            },
        ];
        let timeline = Timeline {
            events,
            interrogation_time: t_int,
            inter_pulse_gap: 0.0,
            microwave_half_pulse: 0.0,
            two_photon_pulse: 0.0,
        };
        timeline.validate()?;
        Ok(timeline)
    }

    /// Probe followed immediately by readout — no pulses, no free evolution.
    /// Measures the conditioning floor of the probe itself (or, with the
    /// probe light off, the bare detection noise).
    pub fn detection_only() -> Timeline {
        let timeline = Timeline {
            events: vec![
                TimelineEvent {
                    start: 0.0,
                    duration: 0.0,
                    action: EventAction::Probe,
                },
                TimelineEvent {
                    start: 0.0,
                    duration: 0.0,
                    action: EventAction::Readout,
                },
            ],
            interrogation_time: 0.0,
            inter_pulse_gap: 0.0,
            microwave_half_pulse: 0.0,
            two_photon_pulse: 0.0,
        };
        debug_assert!(timeline.validate().is_ok());
        timeline
    }

    /// Spin-echo sequence: probe, π/2 — free(t_int) — π — free(t_int) — π/2,
    /// readout. The `gradient_detunings` (rad/s per mode, empty for none)
    /// act during the **second** free interval only, so they survive the
    /// echo while static common detunings cancel. The final π/2 carries the
    /// scannable `readout_phase` offset.
    pub fn echo(t_int: f64, readout_phase: f64, gradient_detunings: Vec<f64>) -> Result<Timeline> {
        if !t_int.is_finite() || t_int < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "interrogation time must be non-negative and finite, got {t_int}"
            )));
        }
        if !readout_phase.is_finite() {
            return Err(Error::InvalidConfig("readout phase must be finite".into()));
        }
        let events = vec![
            TimelineEvent {
                start: 0.0,
                duration: 0.0,
                action: EventAction::Probe,
            },
            microwave_pulse(0.0, 0.0, FRAC_PI_2),
            TimelineEvent {
                start: 0.0,
                duration: t_int,
                action: EventAction::FreeEvolution { detunings: vec![] },
            },
            microwave_pulse(t_int, 0.0, PI),
            TimelineEvent {
                start: t_int,
                duration: t_int,
                action: EventAction::FreeEvolution {
                    detunings: gradient_detunings,
                },
            },
            microwave_pulse(2.0 * t_int, readout_phase, FRAC_PI_2),
            TimelineEvent {
                start: 2.0 * t_int,
                duration: 0.0,
                action: EventAction::Readout,
            },
        ];
        let timeline = Timeline {
            events,
            interrogation_time: t_int,
            inter_pulse_gap: 0.0,
            microwave_half_pulse: 0.0,
            two_photon_pulse: 0.0,
        };
        timeline.validate()?;
        Ok(timeline)
    }

    /// The momentum-space interferometer core: optical π — free(t_int) —
    /// [optical π, gap, microwave π, gap, optical π] — free(t_int) —
    /// optical π, with the finite pulse durations recorded so the
    /// acceleration phase formula can use them. No probe, conversion pulses,
    /// or readout — see [`interferometer`](Self::interferometer) for the
    /// full protocol.
    pub fn interferometer_core(timings: &SequenceTimings) -> Result<Timeline> {
        timings.validate()?;
        for (name, v) in [
            ("t_int", timings.t_int),
            ("t_0", timings.t_0),
            ("tau_0", timings.tau_0),
            ("tau_k", timings.tau_k),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "interferometer timing {name} must be positive, got {v}"
                )));
            }
        }
        let tau_k = timings.tau_k;
        let t = timings.t_int;
        let gap = timings.t_0;
        let tau_pi = 2.0 * timings.tau_0;
        let mut cursor = 0.0;
        let mut events = Vec::new();
        let mut push = |events: &mut Vec<TimelineEvent>, duration: f64, action: EventAction| {
            events.push(TimelineEvent {
                start: cursor,
                duration,
                action,
            });
            cursor += duration;
        };
        push(&mut events, tau_k, optical_pi());
        push(&mut events, t, free());
        push(&mut events, tau_k, optical_pi());
        push(&mut events, gap, free());
        push(
            &mut events,
            tau_pi,
            EventAction::Pulse {
                channel: PulseChannel::Microwave,
                axis_phase: 0.0,
                area: PI,
            },
        );
        push(&mut events, gap, free());
        push(&mut events, tau_k, optical_pi());
        push(&mut events, t, free());
        push(&mut events, tau_k, optical_pi());
        let timeline = Timeline {
            events,
            interrogation_time: t,
            inter_pulse_gap: gap,
            microwave_half_pulse: timings.tau_0,
            two_photon_pulse: tau_k,
        };
        timeline.validate()?;
        Ok(timeline)
    }

    /// The full differential accelerometer protocol: probe, a conversion
    /// microwave π/2, the interferometer core, the analytic per-mode
    /// acceleration phase (`kick_angles`, rad), a conversion π/2 carrying
    /// the `readout_phase` offset, and the destructive readout. The
    /// conversion pulses are modeled as instantaneous; the recorded pulse
    /// durations describe the core, whose span sets the total duration.
    pub fn interferometer(
        timings: &SequenceTimings,
        kick_angles: Vec<f64>,
        readout_phase: f64,
    ) -> Result<Timeline> {
        let mut core = Self::interferometer_core(timings)?;
        let end = core.events.last().map(TimelineEvent::end).unwrap_or(0.0);
        let mut events = vec![
            TimelineEvent {
                start: 0.0,
                duration: 0.0,
                action: EventAction::Probe,
            },
            microwave_pulse(0.0, 0.0, FRAC_PI_2),
        ];
        events.append(&mut core.events);
        events.push(TimelineEvent {
            start: end,
            duration: 0.0,
            action: EventAction::PhaseKick {
                angles: kick_angles,
            },
        });
        events.push(microwave_pulse(end, readout_phase, FRAC_PI_2));
        events.push(TimelineEvent {
            start: end,
            duration: 0.0,
            action: EventAction::Readout,
        });
        core.events = events;
        core.validate()?;
        Ok(core)
    }

    /// Span from the first event's start to the last event's end, s.
    pub fn total_duration(&self) -> f64 {
        let start = self.events.first().map(|e| e.start).unwrap_or(0.0);
        let end = self.events.iter().map(TimelineEvent::end).fold(start, f64::max);
        end - start
    }

    /// Net signed rotation area of all pulses at their nominal phases, rad.
    /// Pulses about axes nearer −x count negatively, matching how the
    /// quadrature pair actually composes.
    pub fn net_quadrature_angle(&self) -> f64 {
        self.events
            .iter()
            .filter_map(|e| match &e.action {
                EventAction::Pulse {
                    axis_phase, area, ..
                } => Some(axis_phase.cos().signum() * area),
                _ => None,
            })
            .sum()
    }

    /// Parity `p = ±1` relating the readout quadrature to the probed one:
    /// the net sequence rotation maps J_z onto `p`·J_z. Errors if the net
    /// rotation leaves the quadratures substantially mixed, in which case a
    /// first/second measurement difference has no meaning.
    pub fn readout_parity(&self) -> Result<f64> {
        let c = self.net_quadrature_angle().cos();
        if c.abs() < PARITY_MARGIN {
            return Err(Error::InvalidConfig(format!(
                "net sequence rotation mixes the readout quadratures (cos = {c:.3}); \
                 the paired-measurement difference is undefined"
            )));
        }
        Ok(c.signum())
    }

    /// Structural checks: events sorted and non-overlapping, durations
    /// non-negative and finite, at most one probe (before any dynamics),
    /// at most one readout (last), and pulse durations consistent with the
    /// named timing parameters.
    pub fn validate(&self) -> Result<()> {
        let mut cursor = f64::NEG_INFINITY;
        let mut seen_dynamics = false;
        let mut probes = 0usize;
        for (i, event) in self.events.iter().enumerate() {
            if !event.start.is_finite() || !event.duration.is_finite() || event.duration < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "event {i} has invalid timing (start {}, duration {})",
                    event.start, event.duration
                )));
            }
            if event.start + 1e-15 < cursor {
                return Err(Error::InvalidConfig(format!(
                    "event {i} starts at {} s, before the previous event ended at {} s",
                    event.start, cursor
                )));
            }
            cursor = event.end();
            match &event.action {
                EventAction::Probe => {
                    probes += 1;
                    if probes > 1 {
                        return Err(Error::InvalidConfig(
                            "a sequence performs at most one dispersive probe".into(),
                        ));
                    }
                    if seen_dynamics {
                        return Err(Error::InvalidConfig(format!(
                            "event {i}: the probe must precede all pulses and evolution"
                        )));
                    }
                }
                EventAction::Readout => {
                    if i + 1 != self.events.len() {
                        return Err(Error::InvalidConfig(format!(
                            "event {i}: the destructive readout must be the last event"
                        )));
                    }
                }
                EventAction::Pulse {
                    channel,
                    axis_phase,
                    area,
                } => {
                    seen_dynamics = true;
                    if !axis_phase.is_finite() || !area.is_finite() {
                        return Err(Error::InvalidConfig(format!(
                            "event {i}: pulse phase and area must be finite"
                        )));
                    }
                    let nominal = match channel {
                        PulseChannel::TwoPhoton => self.two_photon_pulse,
                        PulseChannel::Microwave => area / FRAC_PI_2 * self.microwave_half_pulse,
                    };
                    let consistent = match channel {
                        // Microwave pulses may be idealized as instantaneous.
                        PulseChannel::Microwave => {
                            event.duration == 0.0
                                || (event.duration - nominal).abs() <= 1e-12 * nominal.max(1e-12)
                        }
                        PulseChannel::TwoPhoton => {
                            (event.duration - nominal).abs() <= 1e-12 * nominal.max(1e-12)
                        }
                    };
                    if !consistent {
                        return Err(Error::InvalidConfig(format!(
                            "event {i}: pulse duration {} s disagrees with the named \
                             timing parameter {} s",
                            event.duration, nominal
                        )));
                    }
                }
                EventAction::FreeEvolution { .. } | EventAction::PhaseKick { .. } => {
                    seen_dynamics = true;
                }
            }
        }
        Ok(())
    }
}

fn microwave_pulse(start: f64, axis_phase: f64, area: f64) -> TimelineEvent {
    TimelineEvent {
        start,
        duration: 0.0,
        action: EventAction::Pulse {
            channel: PulseChannel::Microwave,
            axis_phase,
            area,
        },
    }
}

fn optical_pi() -> EventAction {
    EventAction::Pulse {
        channel: PulseChannel::TwoPhoton,
        axis_phase: 0.0,
        area: PI,
    }
}

fn free() -> EventAction {
    EventAction::FreeEvolution { detunings: vec![] }
}

/// Noise and measurement settings for executing a timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecutionConfig {
    /// Std of the common local-oscillator phase error, rad, drawn
    /// independently for every microwave pulse.
    pub lo_noise_std: f64,
    /// Std of the common optical phase error, rad, drawn independently for
    /// every two-photon pulse.
    pub raman_phase_std: f64,
    /// Dispersive-probe settings; infinite resolution means the probe light
    /// is off and the sequence's probe marker is skipped.
    pub qnd: QndConfig,
    /// Detection noise std of the final destructive readout, spins.
    pub readout_noise_std: f64,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig {
            lo_noise_std: 0.0,
            raman_phase_std: 0.0,
            qnd: QndConfig::default(),
            readout_noise_std: 0.0,
        }
    }
}

impl ExecutionConfig {
    /// Check parameter ranges.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lo_noise_std", self.lo_noise_std),
            ("raman_phase_std", self.raman_phase_std),
            ("readout_noise_std", self.readout_noise_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        self.qnd.validate()
    }
}

/// Everything one executed trial produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// The dispersive-probe record, if the probe light was on.
    pub first: Option<DetectionRecord>,
    /// The destructive-readout record.
    pub second: DetectionRecord,
    /// Parity-corrected difference of the two outcomes,
    /// `second − parity·first`, spins. With the probe off this is simply the
    /// readout outcome.
    pub delta_jz: f64,
    /// The network-averaged angle `delta_jz / (C·ΣN/2)`, rad.
    pub theta_bar: f64,
    /// The sequence parity `p = ±1` used in the pairing.
    pub parity: f64,
    /// Per-mode decomposition of `delta_jz` (sums to it exactly): each
    /// mode's latent readout value minus parity times its post-probe
    /// conditional mean, with the mode-blind detection noise of both
    /// measurements split equally across modes.
    pub per_mode_delta: DVector<f64>,
    /// Interference contrast at readout time.
    pub final_contrast: f64,
}

/// Execute the dynamics of a timeline (everything except the final
/// destructive readout) and return the evolved state. The probe marker is
/// honored when the execution config has the probe light on. Total elapsed
/// time advances by the timeline's full span.
pub fn evolve_timeline<R: Rng + ?Sized>(
    state: NetworkState,
    timeline: &Timeline,
    exec: &ExecutionConfig,
    rng: &mut R,
) -> Result<NetworkState> {
    let (state, _, _) = evolve_inner(state, timeline, exec, rng)?;
    Ok(state)
}

fn evolve_inner<R: Rng + ?Sized>(
    state: NetworkState,
    timeline: &Timeline,
    exec: &ExecutionConfig,
    rng: &mut R,
) -> Result<(NetworkState, Option<DetectionRecord>, DVector<f64>)> {
    timeline.validate()?;
    exec.validate()?;
    let start_time = state.elapsed_time;
    let mode_count = state.mode_count();
    let mut current = state;
    let mut first: Option<DetectionRecord> = None;
    let mut snapshot: Option<DVector<f64>> = None;

    for (index, event) in timeline.events.iter().enumerate() {
        let at = |e: Error| e.at_event(index);
        match &event.action {
            EventAction::Probe => {
                if exec.qnd.is_active() {
                    let (next, record) = qnd_measure(&current, &exec.qnd, rng).map_err(at)?;
                    current = next;
                    first = Some(record);
                }
                snapshot = Some(jz_means(&current));
            }
            EventAction::Pulse {
                channel,
                axis_phase,
                area,
            } => {
                snapshot.get_or_insert_with(|| jz_means(&current));
                let noise_std = match channel {
                    PulseChannel::Microwave => exec.lo_noise_std,
                    PulseChannel::TwoPhoton => exec.raman_phase_std,
                };
                current = current
                    .rotate(*axis_phase, *area, noise_std, rng)
                    .map_err(at)?;
            }
            EventAction::FreeEvolution { detunings } => {
                snapshot.get_or_insert_with(|| jz_means(&current));
                let zeros;
                let detunings = if detunings.is_empty() {
                    zeros = vec![0.0; mode_count];
                    &zeros
                } else {
                    detunings
                };
                current = current
                    .accumulate_phase(detunings, event.duration)
                    .map_err(at)?;
            }
            EventAction::PhaseKick { angles } => {
                snapshot.get_or_insert_with(|| jz_means(&current));
                current = current.advance_mode_phases(angles).map_err(at)?;
            }
            EventAction::Readout => break,
        }
    }
    // Pulses with finite duration occupy time without accumulating detuning
    // phase, so the wall clock is set from the timeline span directly.
    current.elapsed_time = start_time + timeline.total_duration();
    let snapshot = snapshot.unwrap_or_else(|| jz_means(&current));
    Ok((current, first, snapshot))
}

/// Execute one full trial: optional probe, dynamics, destructive readout,
/// and the paired-difference statistics. Deterministic given the state and
/// the random stream.
pub fn run_timeline<R: Rng + ?Sized>(
    state: NetworkState,
    timeline: &Timeline,
    exec: &ExecutionConfig,
    rng: &mut R,
) -> Result<TrialOutcome> {
    match timeline.events.last() {
        Some(TimelineEvent {
            action: EventAction::Readout,
            ..
        }) => {}
        _ => {
            return Err(Error::InvalidConfig(
                "a runnable timeline must end with a destructive readout".into(),
            ))
        }
    }
    let parity = timeline.readout_parity()?;
    let (evolved, first, snapshot) = evolve_inner(state, timeline, exec, rng)?;
    let readout_index = timeline.events.len() - 1;
    let mode_count = evolved.mode_count();
    let final_contrast = evolved.contrast;
    let total_atoms = evolved.total_atoms();
    let (second, latent) = fluorescence_readout(evolved, exec.readout_noise_std, rng)
        .map_err(|e| e.at_event(readout_index))?;

    let first_outcome = first.as_ref().map_or(0.0, |r| r.outcome);
    let delta_jz = second.outcome - parity * first_outcome;
    let theta_bar = delta_jz / (final_contrast * total_atoms / 2.0);

    // Detection noise carries no mode label, so each measurement's excess
    // over its mode-resolved latent values is shared equally across modes;
    // the shares then sum back to delta_jz exactly.
    let m = mode_count as f64;
    let second_excess = (second.outcome - latent.sum()) / m;
    let first_excess = (first_outcome - snapshot.sum()) / m;
    let per_mode_delta = DVector::from_iterator(
        mode_count,
        (0..mode_count).map(|i| {
            (latent[i] + second_excess) - parity * (snapshot[i] + first_excess)
        }),
    );

    Ok(TrialOutcome {
        first,
        second,
        delta_jz,
        theta_bar,
        parity,
        per_mode_delta,
        final_contrast,
    })
}

fn jz_means(state: &NetworkState) -> DVector<f64> {
    DVector::from_iterator(
        state.mode_count(),
        (0..state.mode_count()).map(|m| state.jz_mean(m)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(0x5e9)
    }

    fn quiet() -> ExecutionConfig {
        ExecutionConfig::default()
    }

    fn probe_exec(resolution_std: f64, readout_noise_std: f64) -> ExecutionConfig {
        ExecutionConfig {
            qnd: QndConfig {
                resolution_std,
                ..QndConfig::default()
            },
            readout_noise_std,
            ..ExecutionConfig::default()
        }
    }

    fn two_mode_clock() -> NetworkState {
        NetworkState::init_css(90_000.0, 0.78)
            .unwrap()
            .split_network()
            .unwrap()
    }

    #[test]
    fn ramsey_timeline_has_the_expected_shape() {
        let t = Timeline::ramsey(100e-6).unwrap();
        assert_eq!(t.events.len(), 5);
        assert!(matches!(t.events[0].action, EventAction::Probe));
        assert!(matches!(t.events[4].action, EventAction::Readout));
        assert_abs_diff_eq!(t.total_duration(), 100e-6, epsilon = 1e-18);
        assert_eq!(t.readout_parity().unwrap(), -1.0);
    }

    #[test]
    fn detection_only_pairs_the_probe_with_the_readout() {
        let t = Timeline::detection_only();
        assert!(t.validate().is_ok());
        assert_eq!(t.readout_parity().unwrap(), 1.0);
        assert_eq!(t.total_duration(), 0.0);

        let mut rng = ChaCha12Rng::seed_from_u64(5150);
        let exec = ExecutionConfig {
            qnd: QndConfig {
                resolution_std: 30.0,
                ..QndConfig::default()
            },
            readout_noise_std: 30.0,
            ..ExecutionConfig::default()
        };
        let outcome = run_timeline(two_mode_clock(), &t, &exec, &mut rng).unwrap();
        let first = outcome.first.expect("probe record");
        assert_abs_diff_eq!(
            outcome.delta_jz,
            outcome.second.outcome - first.outcome,
            epsilon = 1e-12
        );
    }

    #[test]
    fn echo_timeline_places_the_gradient_in_the_second_half() {
        let t = Timeline::echo(110e-6, 2e-3, vec![5.0, -5.0]).unwrap();
        assert_abs_diff_eq!(t.total_duration(), 220e-6, epsilon = 1e-18);
        assert_eq!(t.readout_parity().unwrap(), 1.0);
        let windows: Vec<&Vec<f64>> = t
            .events
            .iter()
            .filter_map(|e| match &e.action {
                EventAction::FreeEvolution { detunings } => Some(detunings),
                _ => None,
            })
            .collect();
        assert_eq!(windows.len(), 2);
        assert!(windows[0].is_empty());
        assert_eq!(windows[1], &vec![5.0, -5.0]);
    }

    #[test]
    fn interferometer_core_lasts_270_microseconds() {
        let t = Timeline::interferometer_core(&SequenceTimings {
            t_int: 50e-6,
            ..SequenceTimings::default()
        })
        .unwrap();
        assert_abs_diff_eq!(t.total_duration(), 270e-6, epsilon = 1e-15);
        let optical: usize = t
            .events
            .iter()
            .filter(|e| {
                matches!(
                    e.action,
                    EventAction::Pulse {
                        channel: PulseChannel::TwoPhoton,
                        ..
                    }
                )
            })
            .count();
        assert_eq!(optical, 4);
        // Four optical π plus the central microwave π: J_z → −J_z.
        assert_eq!(t.readout_parity().unwrap(), -1.0);
    }

    #[test]
    fn full_interferometer_keeps_the_core_span_and_even_parity() {
        let timings = SequenceTimings {
            t_int: 50e-6,
            ..SequenceTimings::default()
        };
        let t = Timeline::interferometer(&timings, vec![1e-3, -1e-3], 0.0).unwrap();
        assert_abs_diff_eq!(t.total_duration(), 270e-6, epsilon = 1e-15);
        assert_eq!(t.readout_parity().unwrap(), 1.0);
        assert!(matches!(t.events[0].action, EventAction::Probe));
        assert!(matches!(
            t.events.last().unwrap().action,
            EventAction::Readout
        ));
    }

    #[test]
    fn builders_reject_bad_inputs() {
        assert!(Timeline::ramsey(-1.0).is_err());
        assert!(Timeline::ramsey(f64::NAN).is_err());
        assert!(Timeline::echo(-1.0, 0.0, vec![]).is_err());
        assert!(Timeline::echo(1e-4, f64::INFINITY, vec![]).is_err());
        let bad = SequenceTimings {
            tau_k: 0.0,
            ..SequenceTimings::default()
        };
        assert!(Timeline::interferometer_core(&bad).is_err());
    }

    #[test]
    fn validate_rejects_overlap_probe_misplacement_and_early_readout() {
        let mut t = Timeline::ramsey(1e-4).unwrap();
        t.events[3].start = 0.4e-4; // inside the free-evolution window
        assert!(t.validate().is_err());

        let mut t = Timeline::ramsey(1e-4).unwrap();
        t.events.swap(0, 1); // probe after a pulse
        assert!(t.validate().is_err());

        let mut t = Timeline::ramsey(1e-4).unwrap();
        let readout = t.events.remove(4);
        t.events.insert(1, TimelineEvent { start: 0.0, ..readout });
        assert!(t.validate().is_err());
    }

    #[test]
    fn zero_gap_ramsey_acts_like_a_single_pi_pulse() {
        let displaced = NetworkState::init_css(10_000.0, 1.0)
            .unwrap()
            .advance_mode_phases(&[0.02])
            .unwrap();
        let mut r1 = rng();
        let mut r2 = rng();
        let via_ramsey = evolve_timeline(
            displaced.clone(),
            &Timeline::ramsey(0.0).unwrap(),
            &quiet(),
            &mut r1,
        )
        .unwrap();
        let direct = displaced.rotate(0.0, PI, 0.0, &mut r2).unwrap();
        let diff_mean = (&via_ramsey.moments.mean - &direct.moments.mean).amax();
        let diff_cov = (&via_ramsey.moments.covariance - &direct.moments.covariance).amax();
        assert!(diff_mean < 1e-9);
        assert!(diff_cov < 1e-9);
    }

    #[test]
    fn echo_cancels_a_static_common_detuning_exactly() {
        let mut t = Timeline::echo(110e-6, 0.0, vec![40.0, 40.0]).unwrap();
        // Put the same detuning in the first window too: a static field.
        if let EventAction::FreeEvolution { detunings } = &mut t.events[2].action {
            *detunings = vec![40.0, 40.0];
        }
        let evolved = evolve_timeline(two_mode_clock(), &t, &quiet(), &mut rng()).unwrap();
        let radius = evolved.bloch_radius(0);
        assert!(evolved.sum_jz_mean().abs() < 1e-12 * radius);
        assert!(evolved.jz_mean(0).abs() < 1e-12 * radius);
    }

    #[test]
    fn echo_gradient_in_second_half_gives_theta_bar_of_detuning_times_t() {
        let omega = 12.0; // rad/s, opposite signs on the two momentum classes
        let t_int = 110e-6;
        let t = Timeline::echo(t_int, 0.0, vec![omega, -omega]).unwrap();
        let state = two_mode_clock();
        let denominator = state.contrast * state.total_atoms() / 2.0;
        let evolved = evolve_timeline(state, &t, &quiet(), &mut rng()).unwrap();
        let theta_bar = evolved.sum_jz_mean() / denominator;
        assert_abs_diff_eq!(theta_bar, omega * t_int, epsilon = 1e-12);
    }

    #[test]
    fn final_pulse_phase_scan_drives_opposite_single_mode_responses() {
        let phase = 5e-3;
        let t = Timeline::echo(110e-6, phase, vec![]).unwrap();
        let plus = NetworkState::init_css_oriented(45_000.0, 0.78, 1, 1).unwrap();
        let minus = NetworkState::init_css_oriented(45_000.0, 0.78, -1, -1).unwrap();
        let plus_out = evolve_timeline(plus.clone(), &t, &quiet(), &mut rng()).unwrap();
        let minus_out = evolve_timeline(minus, &t, &quiet(), &mut rng()).unwrap();
        let radius = plus.bloch_radius(0);
        let response_plus = plus_out.jz_mean(0) / radius;
        let response_minus = minus_out.jz_mean(0) / radius;
        // Equal and opposite to machine precision; magnitude −sin(phase).
        assert_abs_diff_eq!(response_plus, -response_minus, epsilon = 1e-15);
        assert_abs_diff_eq!(response_plus, -phase.sin(), epsilon = 1e-12);
        // The anti-parallel pair rejects the same offset as a common mode.
        let pair = evolve_timeline(
            two_mode_clock(),
            &Timeline::echo(110e-6, phase, vec![]).unwrap(),
            &quiet(),
            &mut rng(),
        )
        .unwrap();
        assert!(pair.sum_jz_mean().abs() < 1e-12 * radius);
    }

    #[test]
    fn interferometer_zero_acceleration_gives_no_response() {
        let timings = SequenceTimings {
            t_int: 50e-6,
            ..SequenceTimings::default()
        };
        let t = Timeline::interferometer(&timings, vec![0.0, 0.0], 0.0).unwrap();
        let state = two_mode_clock();
        let radius = state.bloch_radius(0);
        let evolved = evolve_timeline(state, &t, &quiet(), &mut rng()).unwrap();
        assert!(evolved.sum_jz_mean().abs() < 1e-12 * radius);
    }

    #[test]
    fn interferometer_kick_appears_with_unit_slope_in_theta_bar() {
        let timings = SequenceTimings {
            t_int: 50e-6,
            ..SequenceTimings::default()
        };
        let kick = 2.5e-3;
        let t = Timeline::interferometer(&timings, vec![kick, -kick], 0.0).unwrap();
        let state = two_mode_clock();
        let denominator = state.contrast * state.total_atoms() / 2.0;
        let evolved = evolve_timeline(state, &t, &quiet(), &mut rng()).unwrap();
        assert_abs_diff_eq!(
            evolved.sum_jz_mean() / denominator,
            kick,
            epsilon = 1e-12
        );
    }

    #[test]
    fn common_optical_phase_jitter_cancels_between_antiparallel_modes() {
        let timings = SequenceTimings {
            t_int: 50e-6,
            ..SequenceTimings::default()
        };
        let t = Timeline::interferometer(&timings, vec![0.0, 0.0], 0.0).unwrap();
        let exec = ExecutionConfig {
            raman_phase_std: 10e-3,
            ..ExecutionConfig::default()
        };
        // Whatever the drawn jitter, the mean collective signal stays zero:
        // the displacement a common optical phase produces on one mode is
        // cancelled by its anti-parallel partner.
        let mut r = rng();
        for _ in 0..25 {
            let evolved = evolve_timeline(two_mode_clock(), &t, &exec, &mut r).unwrap();
            assert!(evolved.sum_jz_mean().abs() < 1e-9 * evolved.bloch_radius(0));
        }
    }

    #[test]
    fn single_mode_echo_reproduces_the_lo_noise_budget() {
        // Three microwave pulses with weights (1, 2, 1) on the phase error
        // give a technical variance of 6·σ_LO²; the σ_LO below is calibrated
        // so a single-mode echo carries 3.6 mrad of technical noise. The
        // technical channel is isolated by reading the deterministic mean
        // response per trial (no projection-noise sampling).
        let sigma_lo = 3.6e-3 / 6.0_f64.sqrt();
        let exec = ExecutionConfig {
            lo_noise_std: sigma_lo,
            ..ExecutionConfig::default()
        };
        let t = Timeline::echo(110e-6, 0.0, vec![]).unwrap();
        let state = NetworkState::init_css(45_000.0, 0.78).unwrap();
        let radius = state.bloch_radius(0);
        let mut r = rng();
        let n = 3_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let evolved = evolve_timeline(state.clone(), &t, &exec, &mut r).unwrap();
            let theta = evolved.sum_jz_mean() / radius;
            sum += theta;
            sq += theta * theta;
        }
        let mean = sum / n as f64;
        let var = (sq - sum * sum / n as f64) / (n as f64 - 1.0);
        let expected = 6.0 * sigma_lo * sigma_lo;
        let se = expected * (2.0 / n as f64).sqrt();
        assert!((var - expected).abs() < 3.0 * se, "var {var} vs {expected}");
        assert!(mean.abs() < 4.0 * (expected / n as f64).sqrt());
        assert!((var.sqrt() - 3.6e-3).abs() < 0.1 * 3.6e-3);
    }

    #[test]
    fn paired_difference_variance_is_pure_detection_noise() {
        // With the probe on and equal detection noises, the quantum noise
        // common to both measurements cancels in δ = y₂ − p·y₁, leaving
        // exactly σ_r² + r² whatever the prior state.
        let sigma_r = 30.736;
        let exec = probe_exec(sigma_r, sigma_r);
        let t = Timeline::ramsey(100e-6).unwrap();
        let mut r = rng();
        let n = 4_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let out = run_timeline(two_mode_clock(), &t, &exec, &mut r).unwrap();
            sum += out.delta_jz;
            sq += out.delta_jz * out.delta_jz;
        }
        let var = (sq - sum * sum / n as f64) / (n as f64 - 1.0);
        let expected = 2.0 * sigma_r * sigma_r;
        let se = expected * (2.0 / n as f64).sqrt();
        assert!((var - expected).abs() < 3.0 * se, "var {var} vs {expected}");
    }

    #[test]
    fn per_mode_deltas_partition_the_sum_and_anticorrelate() {
        let exec = probe_exec(30.736, 30.736);
        let t = Timeline::ramsey(100e-6).unwrap();
        let mut r = rng();
        let n = 3_000;
        let (mut s1, mut s2, mut s12) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let out = run_timeline(two_mode_clock(), &t, &exec, &mut r).unwrap();
            let sum: f64 = out.per_mode_delta.iter().sum();
            assert_abs_diff_eq!(sum, out.delta_jz, epsilon = 1e-9);
            s1 += out.per_mode_delta[0];
            s2 += out.per_mode_delta[1];
            s12 += out.per_mode_delta[0] * out.per_mode_delta[1];
        }
        let nf = n as f64;
        let cov = s12 / nf - (s1 / nf) * (s2 / nf);
        assert!(
            cov < 0.0,
            "probe-generated inter-mode covariance should be negative, got {cov}"
        );
    }

    #[test]
    fn probe_light_off_reports_no_first_outcome() {
        let t = Timeline::ramsey(100e-6).unwrap();
        let out = run_timeline(two_mode_clock(), &t, &quiet(), &mut rng()).unwrap();
        assert!(out.first.is_none());
        assert_eq!(out.delta_jz, out.second.outcome);
    }

    #[test]
    fn identical_seeds_give_identical_trials() {
        let exec = probe_exec(30.736, 30.736);
        let t = Timeline::ramsey(100e-6).unwrap();
        let a = run_timeline(two_mode_clock(), &t, &exec, &mut rng()).unwrap();
        let b = run_timeline(two_mode_clock(), &t, &exec, &mut rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn execution_errors_carry_the_event_index() {
        // A detuning too strong for the linearized regime blows up inside
        // the gradient window, which is event index 4 of the echo sequence.
        let t = Timeline::echo(110e-6, 0.0, vec![1e5, -1e5]).unwrap();
        let err = run_timeline(two_mode_clock(), &t, &quiet(), &mut rng()).unwrap_err();
        match err {
            Error::Timeline { index, .. } => assert_eq!(index, 4),
            other => panic!("expected a timeline error, got {other:?}"),
        }
    }

    #[test]
    fn run_requires_a_readout_and_a_clean_parity() {
        let mut t = Timeline::ramsey(100e-6).unwrap();
        t.events.pop();
        assert!(run_timeline(two_mode_clock(), &t, &quiet(), &mut rng()).is_err());

        // A net π/2 rotation leaves the quadratures mixed.
        let t = Timeline {
            events: vec![
                microwave_pulse(0.0, 0.0, FRAC_PI_2),
                TimelineEvent {
                    start: 0.0,
                    duration: 0.0,
                    action: EventAction::Readout,
                },
            ],
            interrogation_time: 0.0,
            inter_pulse_gap: 0.0,
            microwave_half_pulse: 0.0,
            two_photon_pulse: 0.0,
        };
        assert!(run_timeline(two_mode_clock(), &t, &quiet(), &mut rng()).is_err());
    }

    #[test]
    fn elapsed_time_advances_by_the_timeline_span() {
        let timings = SequenceTimings {
            t_int: 50e-6,
            ..SequenceTimings::default()
        };
        let t = Timeline::interferometer(&timings, vec![0.0, 0.0], 0.0).unwrap();
        let evolved = evolve_timeline(two_mode_clock(), &t, &quiet(), &mut rng()).unwrap();
        assert_abs_diff_eq!(evolved.elapsed_time, 270e-6, epsilon = 1e-15);

        let echo = Timeline::echo(110e-6, 0.0, vec![]).unwrap();
        let evolved = evolve_timeline(two_mode_clock(), &echo, &quiet(), &mut rng()).unwrap();
        assert_abs_diff_eq!(evolved.elapsed_time, 220e-6, epsilon = 1e-15);
    }
}
