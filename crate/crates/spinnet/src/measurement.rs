//! Collective-spin measurements: dispersive probes and destructive readout.
//!
//! A dispersive probe couples one optical mode to the summed polar spin
//! component Σ_m J_z of every mode it passes through, so one photodetection
//! record carries information about the collective variable only. Because
//! the joint state is Gaussian and the probe outcome is a linear function
//! plus Gaussian photon shot noise, measurement conditioning is exact: the
//! posterior is again Gaussian with the familiar linear-Gaussian update.
//! Conditioning on a *sum* builds negative inter-mode covariance — the
//! mode-entangled resource every differential protocol here consumes.
//!
//! The probe is not free: photon scattering costs interference contrast,
//! and the phase quadrature of each mode absorbs back-action noise. Both
//! costs are modeled explicitly. The probe light also imposes a large
//! deterministic phase shift on the atoms; its value is carried in the
//! configuration, and the pulse phases that follow a probe are assumed to
//! be pre-adjusted to cancel it exactly, so it never reaches the moments.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::network::NetworkState;

/// How much noise the probe injects into each mode's phase quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BackactionMode {
    /// Inject exactly enough anti-squeezing to keep each mode at its
    /// minimum-uncertainty product Var(J_z)·Var(J_y) = (C·N/4)².
    #[default]
    MinimumUncertainty,
    /// Add the given variance (spins²) to each mode's Var(J_y), never
    /// dipping below the minimum-uncertainty floor.
    Explicit(f64),
}

impl Serialize for BackactionMode {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BackactionMode::MinimumUncertainty => serializer.serialize_str("minimum-uncertainty"),
            BackactionMode::Explicit(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for BackactionMode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Amount(f64),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Name(s) if s == "minimum-uncertainty" => Ok(BackactionMode::MinimumUncertainty),
            Raw::Name(s) => Err(D::Error::custom(format!(
                "unknown back-action mode {s:?}; use \"minimum-uncertainty\" or a variance"
            ))),
            Raw::Amount(v) if v.is_finite() && v >= 0.0 => Ok(BackactionMode::Explicit(v)),
            Raw::Amount(v) => Err(D::Error::custom(format!(
                "explicit back-action variance must be non-negative and finite, got {v}"
            ))),
        }
    }
}

/// Parameters of one dispersive collective-spin probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QndConfig {
    /// Photon shot-noise resolution of the probe, spins (std of the additive
    /// readout noise on Σ J_z). An infinite value means the probe light is
    /// off — the configuration is valid but no probe is performed; actually
    /// probing requires a finite, positive value.
    pub resolution_std: f64,
    /// Phase back-action injected by the probe.
    pub backaction: BackactionMode,
    /// Fractional contrast lost per probe to photon scattering, in [0, 1).
    pub contrast_cost: f64,
    /// Deterministic probe-light phase shift per atom (rad). Calibrated out:
    /// every pulse that follows a probe has its phase pre-adjusted by the
    /// same amount, so the shift cancels exactly and never displaces the
    /// state. Kept in the configuration because it is part of the record of
    /// what the hardware must do.
    pub ac_stark_shift: f64,
}

impl Default for QndConfig {
    fn default() -> Self {
        QndConfig {
            resolution_std: f64::INFINITY,
            backaction: BackactionMode::MinimumUncertainty,
            contrast_cost: 0.0,
            ac_stark_shift: 0.0,
        }
    }
}

impl QndConfig {
    /// Whether the probe light is on (finite resolution).
    pub fn is_active(&self) -> bool {
        self.resolution_std.is_finite()
    }

    /// Check parameter ranges. Infinite resolution (probe off) is a valid
    /// configuration; zero, negative, or NaN resolution is not.
    pub fn validate(&self) -> Result<()> {
        if self.resolution_std.is_nan() || self.resolution_std <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "probe resolution must be positive, got {}",
                self.resolution_std
            )));
        }
        if !(0.0..1.0).contains(&self.contrast_cost) {
            return Err(Error::InvalidConfig(format!(
                "contrast cost must lie in [0, 1), got {}",
                self.contrast_cost
            )));
        }
        if !self.ac_stark_shift.is_finite() {
            return Err(Error::InvalidConfig(
                "probe phase shift must be finite".into(),
            ));
        }
        if let BackactionMode::Explicit(v) = self.backaction {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "explicit back-action variance must be non-negative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One measurement of the collective spin: what was read and what the state
/// predicted for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    /// The noisy detected value of Σ_m J_z, spins.
    pub outcome: f64,
    /// Pre-measurement mean of the outcome distribution.
    pub predicted_mean: f64,
    /// Pre-measurement variance of the outcome distribution (state variance
    /// plus detection noise), spins².
    pub predicted_variance: f64,
}

/// Probe the collective Σ J_z dispersively: draw the outcome, condition the
/// Gaussian on it, charge the contrast cost, and inject phase back-action.
/// Returns the posterior state and the measurement record.
pub fn qnd_measure<R: Rng + ?Sized>(
    state: &NetworkState,
    config: &QndConfig,
    rng: &mut R,
) -> Result<(NetworkState, DetectionRecord)> {
    config.validate()?;
    if !config.is_active() {
        return Err(Error::InvalidConfig(
            "probe light is off (infinite resolution); skip the probe instead of applying it"
                .into(),
        ));
    }
    state.validate()?;
    let m = state.mode_count();
    let dim = 2 * m;

    // h picks out every J_z entry; the probe sees hᵀx + shot noise.
    let mut h = DVector::zeros(dim);
    for i in 0..m {
        h[2 * i] = 1.0;
    }
    let sigma_h = &state.moments.covariance * &h;
    let noise_var = config.resolution_std * config.resolution_std;
    let outcome_var = h.dot(&sigma_h) + noise_var;
    let outcome_mean = h.dot(&state.moments.mean);
    let outcome = Normal::new(outcome_mean, outcome_var.sqrt())
        .map_err(|e| Error::NumericalState(format!("outcome distribution: {e}")))?
        .sample(rng);

    let mut next = state.clone();
    let gain = &sigma_h / outcome_var;
    next.moments.mean += &gain * (outcome - outcome_mean);
    next.moments.covariance -= &sigma_h * (&sigma_h / outcome_var).transpose();
    // Kill round-off asymmetry from the rank-one downdate.
    next.moments.covariance = (&next.moments.covariance + next.moments.covariance.transpose()) * 0.5;

    if config.contrast_cost > 0.0 {
        next.apply_contrast_factor(1.0 - config.contrast_cost)?;
    } else {
        next.refresh_polar_angles()?;
    }

    for i in 0..m {
        let zz = next.moments.covariance[(2 * i, 2 * i)];
        let yy = next.moments.covariance[(2 * i + 1, 2 * i + 1)];
        let bound = next.bloch_radius(i) / 2.0;
        let floor = bound * bound / zz;
        let target = match config.backaction {
            BackactionMode::MinimumUncertainty => floor,
            BackactionMode::Explicit(v) => (yy + v).max(floor),
        };
        if target > yy {
            next.moments.covariance[(2 * i + 1, 2 * i + 1)] = target;
        }
    }

    next.validate()?;
    Ok((
        next,
        DetectionRecord {
            outcome,
            predicted_mean: outcome_mean,
            predicted_variance: outcome_var,
        },
    ))
}

/// Destructive fluorescence readout of the collective Σ J_z. Consumes the
/// state — the atoms are scattered into free space — and returns the
/// detected value together with the latent per-mode J_z sample that
/// produced it (a physical detector sees only the sum; the parts are kept
/// for mode-resolved analysis).
pub fn fluorescence_readout<R: Rng + ?Sized>(
    state: NetworkState,
    readout_std: f64,
    rng: &mut R,
) -> Result<(DetectionRecord, DVector<f64>)> {
    if !readout_std.is_finite() || readout_std < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "readout noise std must be non-negative and finite, got {readout_std}"
        )));
    }
    state.validate()?;
    let latent = state.sample_jz_vector(rng);
    let noise = if readout_std > 0.0 {
        Normal::new(0.0, readout_std)
            .expect("validated std")
            .sample(rng)
    } else {
        0.0
    };
    let predicted_mean = state.sum_jz_mean();
    let predicted_variance = state.sum_jz_var() + readout_std * readout_std;
    Ok((
        DetectionRecord {
            outcome: latent.sum() + noise,
            predicted_mean,
            predicted_variance,
        },
        latent,
    ))
}
