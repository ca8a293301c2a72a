//! Helpers shared by the integration test targets.

use rand::Rng;
use spinnet::network::NetworkState;
use spinnet::sequence::{EventAction, PulseChannel, Timeline, TimelineEvent};

/// A random split network: 1, 2, or 4 modes, random size and contrast.
pub fn random_network<R: Rng>(rng: &mut R) -> NetworkState {
    let modes = [1usize, 2, 4][rng.gen_range(0..3)];
    let atoms_per_mode = rng.gen_range(1_000.0..100_000.0_f64).round();
    let contrast = rng.gen_range(0.5..1.0);
    let mut state = NetworkState::init_css(atoms_per_mode * modes as f64, contrast).unwrap();
    while state.mode_count() < modes {
        state = state.split_network().unwrap();
    }
    state
}

/// A valid random timeline with `n_events` dynamics events: microwave and
/// two-photon pulses, free-evolution windows with per-mode detunings, and
/// analytic phase kicks. Angular excursions stay well inside the model's
/// linear regime.
pub fn random_timeline<R: Rng>(rng: &mut R, modes: usize, n_events: usize) -> Timeline {
    let mut events = Vec::with_capacity(n_events);
    let mut cursor = 0.0;
    for _ in 0..n_events {
        let action = match rng.gen_range(0..4) {
            0 => EventAction::Pulse {
                channel: PulseChannel::Microwave,
                // Keep the pole tilt per pulse small: phase near 0 or π.
                axis_phase: if rng.gen_bool(0.5) { 0.0 } else { std::f64::consts::PI }
                    + rng.gen_range(-8e-3..8e-3),
                area: rng.gen_range(0.0..std::f64::consts::PI),
            },
            1 => EventAction::Pulse {
                channel: PulseChannel::TwoPhoton,
                axis_phase: rng.gen_range(-8e-3..8e-3),
                area: std::f64::consts::PI,
            },
            2 => EventAction::FreeEvolution {
                detunings: (0..modes).map(|_| rng.gen_range(-50.0..50.0)).collect(),
            },
            _ => EventAction::PhaseKick {
                angles: (0..modes).map(|_| rng.gen_range(-5e-3..5e-3)).collect(),
            },
        };
        let duration = match &action {
            EventAction::FreeEvolution { .. } => rng.gen_range(0.0..200e-6),
            _ => 0.0,
        };
        events.push(TimelineEvent {
            start: cursor,
            duration,
            action,
        });
        cursor += duration;
    }
    let timeline = Timeline {
        events,
        interrogation_time: 0.0,
        inter_pulse_gap: 0.0,
        microwave_half_pulse: 0.0,
        two_photon_pulse: 0.0,
    };
    timeline.validate().expect("generated timeline must be valid");
    timeline
}
