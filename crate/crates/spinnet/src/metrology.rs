//! Closed-form metrology formulas and statistical estimators.
//!
//! Everything here is pure arithmetic on trial data or physical parameters:
//! the network-averaged angle and its sensitivity, the net squeezing
//! parameter and the mode-resolved squeezing matrix, the interferometer
//! acceleration response (closed form plus a brute-force numerical oracle),
//! thermal-coherence and contrast models, clock-shift conversion, Allan-type
//! stability analysis, and Gaussian/linear fits with 68% confidence
//! intervals. Variances use the unbiased (n−1) estimator throughout;
//! variance confidence intervals use chi-squared quantiles.

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::sequence::{EventAction, PulseChannel, SequenceTimings, Timeline, TimelineEvent};

/// Check the shared (modes, atoms, contrast) parameter triple.
fn check_network_params(modes: usize, atoms_per_mode: f64, contrast: f64) -> Result<()> {
    if modes == 0 {
        return Err(Error::InvalidConfig("mode count must be at least 1".into()));
    }
    if !atoms_per_mode.is_finite() || atoms_per_mode <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "atoms per mode must be positive and finite, got {atoms_per_mode}"
        )));
    }
    if !contrast.is_finite() || contrast <= 0.0 || contrast > 1.0 {
        return Err(Error::InvalidConfig(format!(
            "contrast must lie in (0, 1], got {contrast}"
        )));
    }
    Ok(())
}

/// Network-averaged angle θ̄ = δJ_z / (C·M·N/2), rad. Linear in the spin
/// difference, so it inherits all its statistics.
pub fn theta_bar(
    delta_jz_sum: f64,
    modes: usize,
    atoms_per_mode: f64,
    contrast: f64,
) -> Result<f64> {
    check_network_params(modes, atoms_per_mode, contrast)?;
    Ok(delta_jz_sum / (contrast * modes as f64 * atoms_per_mode / 2.0))
}

/// Collective spin signal a given network-averaged angle produces:
/// ⟨ΣδJ_z⟩ = C·(N/2)·M·θ̄, spins. Exact inverse of [`theta_bar`].
pub fn expected_collective_signal(
    theta_bar: f64,
    modes: usize,
    atoms_per_mode: f64,
    contrast: f64,
) -> Result<f64> {
    check_network_params(modes, atoms_per_mode, contrast)?;
    Ok(contrast * (atoms_per_mode / 2.0) * modes as f64 * theta_bar)
}

/// Unbiased sample mean and variance.
pub fn mean_and_variance(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "variance needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    Ok((mean, ss / (n - 1.0)))
}

/// Pool per-set statistics `(n, mean, variance)` into one triple: the mean
/// is atom-weighted; the variance is the within-set pooled variance
/// Σ(nᵢ−1)sᵢ² / Σ(nᵢ−1).
pub fn pooled_mean_variance(sets: &[(usize, f64, f64)]) -> Result<(usize, f64, f64)> {
    if sets.is_empty() {
        return Err(Error::InvalidConfig("no sets to pool".into()));
    }
    let mut n_total = 0usize;
    let mut weighted_mean = 0.0;
    let mut ss = 0.0;
    let mut dof = 0.0;
    for &(n, mean, var) in sets {
        if n < 2 {
            return Err(Error::InvalidConfig(
                "every pooled set needs at least 2 trials".into(),
            ));
        }
        n_total += n;
        weighted_mean += n as f64 * mean;
        ss += (n as f64 - 1.0) * var;
        dof += n as f64 - 1.0;
    }
    Ok((n_total, weighted_mean / n_total as f64, ss / dof))
}

/// Net squeezing parameter from a collective spin-difference variance,
/// dB: 10·log₁₀[ Var(ΣδJ_z) / (C²·M·N/4) ]. Negative values mean the
/// network beats the coherent-state projection noise of the same contrast.
/// A non-positive variance returns the −∞ sentinel (degenerate data).
pub fn xi_net_db_from_variance(
    var_delta_jz: f64,
    modes: usize,
    atoms_per_mode: f64,
    contrast: f64,
) -> Result<f64> {
    check_network_params(modes, atoms_per_mode, contrast)?;
    if !var_delta_jz.is_finite() || var_delta_jz < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "variance must be non-negative and finite, got {var_delta_jz}"
        )));
    }
    let reference = contrast * contrast * modes as f64 * atoms_per_mode / 4.0;
    if var_delta_jz == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (var_delta_jz / reference).log10())
}

/// Net squeezing parameter of a set of collective spin-difference trials,
/// dB. Algebraically identical to 10·log₁₀[M·N·Var(θ̄)] on the same data.
pub fn xi_net_db(
    trial_delta_jz_sums: &[f64],
    modes: usize,
    atoms_per_mode: f64,
    contrast: f64,
) -> Result<f64> {
    let (_, var) = mean_and_variance(trial_delta_jz_sums)?;
    xi_net_db_from_variance(var, modes, atoms_per_mode, contrast)
}

/// Noise relative to the quantum projection limit of an ideal (unit
/// contrast) coherent network, dB: 10·log₁₀[ Var(ΣδJ_z) / (M·N/4) ].
/// Equals [`xi_net_db`] + 20·log₁₀(C); a noiseless coherent-state run sits
/// at exactly 0 dB whatever its contrast.
pub fn qpn_relative_db(
    trial_delta_jz_sums: &[f64],
    modes: usize,
    atoms_per_mode: f64,
) -> Result<f64> {
    let (_, var) = mean_and_variance(trial_delta_jz_sums)?;
    xi_net_db_from_variance(var, modes, atoms_per_mode, 1.0)
}

/// Angular sensitivity: the standard deviation of θ̄ over trials,
/// Δθ̄ = Δ(ΣδJ_z)/(C·M·N/2), rad.
pub fn sensitivity(
    trial_delta_jz_sums: &[f64],
    modes: usize,
    atoms_per_mode: f64,
    contrast: f64,
) -> Result<f64> {
    check_network_params(modes, atoms_per_mode, contrast)?;
    let (_, var) = mean_and_variance(trial_delta_jz_sums)?;
    Ok(var.sqrt() / (contrast * modes as f64 * atoms_per_mode / 2.0))
}

/// The mode-resolved squeezing matrix and its network contraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezingAnalysis {
    /// Ξ²_{kl} = √(N⁽ᵏ⁾N⁽ˡ⁾)·Cov(δJ_z⁽ᵏ⁾, δJ_z⁽ˡ⁾)/(⟨J_x⁽ᵏ⁾⟩⟨J_x⁽ˡ⁾⟩),
    /// dimensionless, symmetric. Negative off-diagonals witness nonlocal
    /// entanglement between modes.
    pub matrix: DMatrix<f64>,
    /// The uniform network contraction M·nᵀΞ²n (n = 1/M), in dB — the same
    /// quantity [`xi_net_db`] computes from the summed trials.
    pub network_db: f64,
}

/// Build the squeezing matrix from per-mode spin-difference samples
/// (rows = trials, columns = modes), assuming equal per-mode populations.
pub fn squeezing_matrix(
    per_mode_samples: &DMatrix<f64>,
    atoms_per_mode: f64,
    contrast: f64,
) -> Result<SqueezingAnalysis> {
    let trials = per_mode_samples.nrows();
    let modes = per_mode_samples.ncols();
    check_network_params(modes.max(1), atoms_per_mode, contrast)?;
    if modes == 0 || trials < 2 {
        return Err(Error::InvalidConfig(format!(
            "squeezing matrix needs ≥ 2 trials and ≥ 1 mode, got {trials}×{modes}"
        )));
    }
    let n = trials as f64;
    let means: Vec<f64> = (0..modes)
        .map(|m| per_mode_samples.column(m).sum() / n)
        .collect();
    let radius = contrast * atoms_per_mode / 2.0;
    let mut matrix = DMatrix::zeros(modes, modes);
    for k in 0..modes {
        for l in k..modes {
            let mut cov = 0.0;
            for t in 0..trials {
                cov += (per_mode_samples[(t, k)] - means[k])
                    * (per_mode_samples[(t, l)] - means[l]);
            }
            cov /= n - 1.0;
            let value = atoms_per_mode * cov / (radius * radius);
            matrix[(k, l)] = value;
            matrix[(l, k)] = value;
        }
    }
    // M·nᵀΞ²n with n = (1/M, …, 1/M) — the all-pairs average times M.
    let contraction = matrix.sum() / modes as f64;
    let network_db = if contraction > 0.0 {
        10.0 * contraction.log10()
    } else {
        f64::NEG_INFINITY
    };
    Ok(SqueezingAnalysis { matrix, network_db })
}

/// The timing bracket of the interferometer acceleration response, s²:
/// 2T² + 4TT₀ + 4Tτ₀ + 6Tτ_k + 4T₀τ_k + 4τ₀τ_k + 4τ_k², with
/// T = interrogation time, T₀ = inter-pulse gap, τ₀ = microwave π/2 time,
/// τ_k = optical π time. The phase per mode is 2|k|·a·bracket.
pub fn interferometer_bracket(timings: &SequenceTimings) -> f64 {
    let t = timings.t_int;
    let t0 = timings.t_0;
    let tau0 = timings.tau_0;
    let tauk = timings.tau_k;
    2.0 * t * t
        + 4.0 * t * t0
        + 4.0 * t * tau0
        + 6.0 * t * tauk
        + 4.0 * t0 * tauk
        + 4.0 * tau0 * tauk
        + 4.0 * tauk * tauk
}

/// Closed-form interferometer phase per mode, rad: δθ = 2|k|·a·bracket,
/// for a mode with constant local acceleration `accel` (m/s²) and optical
/// wavenumber magnitude `k_mag` (1/m).
pub fn interferometer_phase(accel: f64, k_mag: f64, timings: &SequenceTimings) -> f64 {
    2.0 * k_mag.abs() * accel * interferometer_bracket(timings)
}

/// Brute-force numerical oracle for [`interferometer_phase`]: build the
/// velocity sensitivity profile from the optical-pulse intervals of the
/// timeline (ramp up across the splitter, reverse across the mirror block,
/// close across the recombiner) and integrate it against a constant
/// acceleration. Exact for piecewise-linear profiles because the integrand
/// is piecewise quadratic and each piece is integrated with Simpson panels.
pub fn sensitivity_function_oracle(timeline: &Timeline, accel: f64, k_mag: f64) -> Result<f64> {
    let optical: Vec<&TimelineEvent> = timeline
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
        .collect();
    if optical.len() != 4 {
        return Err(Error::InvalidConfig(format!(
            "the oracle needs the four optical pulses of an interferometer, found {}",
            optical.len()
        )));
    }
    let spans: Vec<(f64, f64)> = optical
        .iter()
        .map(|e| (e.start, e.start + e.duration))
        .collect();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::InvalidConfig(
                "optical pulses out of order in the oracle timeline".into(),
            ));
        }
    }
    let t_end = spans[3].1;
    // Normalized relative-velocity profile g(t): 0→1 across the splitter,
    // 1→0 across the second pulse, 0 through the microwave block, 0→−1
    // across the third, −1→0 across the recombiner.
    let ramp = |t: f64, from: f64, to: f64, v0: f64, v1: f64| -> f64 {
        if to == from {
            v1
        } else {
            v0 + (v1 - v0) * (t - from) / (to - from)
        }
    };
    let g = |t: f64| -> f64 {
        if t < spans[0].0 {
            0.0
        } else if t < spans[0].1 {
            ramp(t, spans[0].0, spans[0].1, 0.0, 1.0)
        } else if t < spans[1].0 {
            1.0
        } else if t < spans[1].1 {
            ramp(t, spans[1].0, spans[1].1, 1.0, 0.0)
        } else if t < spans[2].0 {
            0.0
        } else if t < spans[2].1 {
            ramp(t, spans[2].0, spans[2].1, 0.0, -1.0)
        } else if t < spans[3].0 {
            -1.0
        } else if t <= spans[3].1 {
            ramp(t, spans[3].0, spans[3].1, -1.0, 0.0)
        } else {
            0.0
        }
    };
    // Accumulated phase: 4|k|·a·∫ g(t)·(t_end − t) dt over the sequence.
    let mut breakpoints: Vec<f64> = spans.iter().flat_map(|&(s, e)| [s, e]).collect();
    breakpoints.dedup_by(|a, b| (*a - *b).abs() < f64::EPSILON);
    let mut integral = 0.0;
    for pair in breakpoints.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        let panels = 4;
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let x0 = a + p as f64 * h;
            let x1 = x0 + h;
            let xm = 0.5 * (x0 + x1);
            let f = |x: f64| g(x) * (t_end - x);
            integral += (h / 6.0) * (f(x0) + 4.0 * f(xm) + f(x1));
        }
    }
    Ok(4.0 * k_mag.abs() * accel * integral)
}

/// Thermal de Broglie wavelength λ_th = h/√(2π·m·k_B·T), m.
pub fn thermal_de_broglie_wavelength(
    consts: &PhysicalConstants,
    temperature: f64,
) -> Result<f64> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(consts.h / (2.0 * std::f64::consts::PI * consts.atom_mass * consts.k_b * temperature).sqrt())
}

/// Relative recoil velocity between the two momentum classes separated by
/// 4ħk of photon momentum: v_rel = 4ħ|k|/m, m/s.
pub fn recoil_velocity(consts: &PhysicalConstants) -> f64 {
    4.0 * consts.hbar * consts.wavenumber() / consts.atom_mass
}

/// Coherence/contrast model for two wavepackets separating at the recoil
/// velocity out of a thermal ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastModel {
    /// Remaining interference contrast after the separation time.
    pub contrast: f64,
    /// Thermal de Broglie wavelength of the ensemble, m.
    pub thermal_wavelength: f64,
    /// Decay time constant β, s, chosen so the 1/e decay *length*
    /// (v_rel·β) equals the thermal wavelength.
    pub time_constant: f64,
}

/// Contrast after the two momentum classes separate for `separation_time`
/// seconds: C₀·exp(−T/β) with β = λ_th/v_rel, so coherence is lost once
/// the wavepackets are about one thermal wavelength apart. The measured
/// time constant of a real apparatus may be shorter; see
/// [`contrast_decay`] for using a fitted β directly.
pub fn contrast_vs_separation(
    separation_time: f64,
    ensemble_temperature: f64,
    consts: &PhysicalConstants,
    base_contrast: f64,
) -> Result<ContrastModel> {
    if !separation_time.is_finite() || separation_time < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "separation time must be non-negative, got {separation_time}"
        )));
    }
    if !base_contrast.is_finite() || base_contrast <= 0.0 || base_contrast > 1.0 {
        return Err(Error::InvalidConfig(format!(
            "base contrast must lie in (0, 1], got {base_contrast}"
        )));
    }
    let thermal_wavelength = thermal_de_broglie_wavelength(consts, ensemble_temperature)?;
    let time_constant = thermal_wavelength / recoil_velocity(consts);
    Ok(ContrastModel {
        contrast: contrast_decay(separation_time, time_constant, base_contrast),
        thermal_wavelength,
        time_constant,
    })
}

/// Exponential contrast decay C₀·exp(−T/β) with an explicitly given time
/// constant (e.g. one fitted to data).
pub fn contrast_decay(separation_time: f64, time_constant: f64, base_contrast: f64) -> f64 {
    base_contrast * (-separation_time / time_constant).exp()
}

/// Contrast budget of a multi-pulse sequence: each of `n_pulses` transfers
/// a fraction `transfer_prob` of the population, on top of a base contrast.
pub fn contrast_budget(transfer_prob: f64, n_pulses: u32, base_contrast: f64) -> Result<f64> {
    for (name, v) in [("transfer_prob", transfer_prob), ("base_contrast", base_contrast)] {
        if !v.is_finite() || v <= 0.0 || v > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "{name} must lie in (0, 1], got {v}"
            )));
        }
    }
    Ok(transfer_prob.powi(n_pulses as i32) * base_contrast)
}

/// Convert a network-averaged angle into the average clock (angular)
/// frequency shift that would produce it over one interrogation window:
/// δω = θ̄/T_int, rad/s.
pub fn clock_shift_from_angle(theta_bar: f64, t_int: f64) -> Result<f64> {
    if !t_int.is_finite() || t_int <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "interrogation time must be positive, got {t_int}"
        )));
    }
    Ok(theta_bar / t_int)
}

/// One point of a stability curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityPoint {
    /// Number of consecutive trials averaged together.
    pub averaging_count: usize,
    /// Overlapping Allan deviation of the trial series at this averaging
    /// count, in the input's units.
    pub deviation: f64,
    /// Lower edge of the 68% confidence interval.
    pub ci_low: f64,
    /// Upper edge of the 68% confidence interval.
    pub ci_high: f64,
}

/// Fractional-stability curve of an ordered trial series: the overlapping
/// Allan deviation at power-of-two averaging counts, with 68% chi-squared
/// confidence intervals sized by the white-noise equivalent degrees of
/// freedom. For white input noise the curve falls as 1/√n and its first
/// point estimates the single-shot deviation.
pub fn fractional_stability(trials: &[f64]) -> Result<Vec<StabilityPoint>> {
    let k = trials.len();
    if k < 8 {
        return Err(Error::InvalidConfig(format!(
            "stability analysis needs at least 8 trials, got {k}"
        )));
    }
    // Prefix sums make each overlapping second difference O(1).
    let mut prefix = vec![0.0; k + 1];
    for (i, v) in trials.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let block = |start: usize, n: usize| prefix[start + n] - prefix[start];

    let mut points = Vec::new();
    let mut n = 1usize;
    while 2 * n < k {
        let terms = k - 2 * n + 1;
        let mut ss = 0.0;
        for i in 0..terms {
            let d = block(i + n, n) - block(i, n);
            ss += d * d;
        }
        let avar = ss / (2.0 * (n * n * terms) as f64);
        // White-frequency-noise equivalent degrees of freedom for the
        // overlapping estimator.
        let kf = k as f64;
        let nf = n as f64;
        let edf = (3.0 * (kf - 1.0) / (2.0 * nf) - 2.0 * (kf - 2.0) / kf) * 4.0 * nf * nf
            / (4.0 * nf * nf + 5.0);
        let (ci_low, ci_high) = if avar > 0.0 && edf > 0.0 {
            let chi = ChiSquared::new(edf)
                .map_err(|e| Error::NumericalState(format!("chi-squared dof {edf}: {e}")))?;
            let hi_q = chi.inverse_cdf(0.84);
            let lo_q = chi.inverse_cdf(0.16);
            (
                (avar * edf / hi_q).sqrt(),
                (avar * edf / lo_q).sqrt(),
            )
        } else {
            (0.0, 0.0)
        };
        points.push(StabilityPoint {
            averaging_count: n,
            deviation: avar.sqrt(),
            ci_low,
            ci_high,
        });
        n *= 2;
    }
    Ok(points)
}

/// Gaussian fit of a sample set: location/scale with 68% confidence
/// intervals (Student-t for the mean, chi-squared for the scale). The scale
/// uses the unbiased (n−1) normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub mean: f64,
    pub std: f64,
    /// 68% confidence interval for the mean.
    pub mean_ci: (f64, f64),
    /// 68% confidence interval for the standard deviation.
    pub std_ci: (f64, f64),
    pub n: usize,
}

/// Fit a Gaussian to samples (≥ 3).
pub fn fit_gaussian(samples: &[f64]) -> Result<GaussianFit> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::InvalidConfig(format!(
            "a Gaussian fit needs at least 3 samples, got {n}"
        )));
    }
    let (mean, var) = mean_and_variance(samples)?;
    let std = var.sqrt();
    let nf = n as f64;
    let dof = nf - 1.0;
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::NumericalState(format!("t distribution: {e}")))?
        .inverse_cdf(0.84);
    let half = t * std / nf.sqrt();
    let chi = ChiSquared::new(dof)
        .map_err(|e| Error::NumericalState(format!("chi-squared: {e}")))?;
    let std_ci = if std > 0.0 {
        (
            std * (dof / chi.inverse_cdf(0.84)).sqrt(),
            std * (dof / chi.inverse_cdf(0.16)).sqrt(),
        )
    } else {
        (0.0, 0.0)
    };
    Ok(GaussianFit {
        mean,
        std,
        mean_ci: (mean - half, mean + half),
        std_ci,
        n,
    })
}

/// Least-squares line with 68% confidence intervals on both parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// 68% confidence interval for the slope.
    pub slope_ci: (f64, f64),
    /// 68% confidence interval for the intercept.
    pub intercept_ci: (f64, f64),
    /// Residual standard deviation around the fit.
    pub residual_std: f64,
    pub n: usize,
}

/// Fit y = slope·x + intercept by least squares (≥ 3 points, non-degenerate
/// abscissas).
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::InvalidConfig(format!(
            "a linear fit needs matched x/y with at least 3 points, got {n}/{}",
            y.len()
        )));
    }
    let nf = n as f64;
    let x_mean = x.iter().sum::<f64>() / nf;
    let y_mean = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - x_mean) * (v - x_mean)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidConfig(
            "degenerate abscissas: all x values equal".into(),
        ));
    }
    let sxy: f64 = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a - x_mean) * (b - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    let dof = nf - 2.0;
    let residual_var = sse / dof;
    let residual_std = residual_var.sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::NumericalState(format!("t distribution: {e}")))?
        .inverse_cdf(0.84);
    let se_slope = residual_std / sxx.sqrt();
    let se_intercept = residual_std * (1.0 / nf + x_mean * x_mean / sxx).sqrt();
    Ok(LinearFit {
        slope,
        intercept,
        slope_ci: (slope - t * se_slope, slope + t * se_slope),
        intercept_ci: (intercept - t * se_intercept, intercept + t * se_intercept),
        residual_std,
        n,
    })
}

/// Summary statistics of one batch of trials of one scenario row.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsSummary {
    /// Number of trials summarized.
    pub n_trials: usize,
    /// Mean of θ̄ over trials, rad.
    pub mean_theta: f64,
    /// Unbiased variance of θ̄ over trials, rad².
    pub var_theta: f64,
    /// Mean of the collective spin difference, spins.
    pub mean_delta_jz: f64,
    /// Unbiased variance of the collective spin difference, spins².
    pub var_delta_jz: f64,
    /// Net squeezing parameter, dB (−∞ sentinel for degenerate data).
    pub xi_net_db: f64,
    /// Noise relative to the unit-contrast projection limit, dB.
    pub qpn_relative_db: f64,
    /// Angular sensitivity Δθ̄, rad.
    pub sensitivity_rad: f64,
    /// Mode-resolved squeezing analysis, when per-mode samples are kept.
    pub squeezing: Option<SqueezingAnalysis>,
    /// Gaussian fit of the θ̄ distribution, when requested.
    pub gaussian_fit: Option<GaussianFit>,
}

impl StatsSummary {
    /// Build a summary from already-computed first and second moments of
    /// the spin-difference and angle series (e.g. pooled over sets).
    #[allow(clippy::too_many_arguments)]
    pub fn from_moments(
        n_trials: usize,
        mean_delta_jz: f64,
        var_delta_jz: f64,
        mean_theta: f64,
        var_theta: f64,
        modes: usize,
        atoms_per_mode: f64,
        contrast: f64,
    ) -> Result<StatsSummary> {
        Ok(StatsSummary {
            n_trials,
            mean_theta,
            var_theta,
            mean_delta_jz,
            var_delta_jz,
            xi_net_db: xi_net_db_from_variance(var_delta_jz, modes, atoms_per_mode, contrast)?,
            qpn_relative_db: xi_net_db_from_variance(var_delta_jz, modes, atoms_per_mode, 1.0)?,
            sensitivity_rad: var_theta.sqrt(),
            squeezing: None,
            gaussian_fit: None,
        })
    }

    /// Summarize paired (spin difference, θ̄) trial series. The θ̄ values are
    /// taken as recorded — they may use a contrast that differs from the
    /// nominal one (e.g. after probe-induced contrast loss) — so statistics
    /// recomputed from an exported trial table reproduce these numbers
    /// exactly.
    pub fn from_trials(
        deltas: &[f64],
        thetas: &[f64],
        modes: usize,
        atoms_per_mode: f64,
        contrast: f64,
    ) -> Result<StatsSummary> {
        if deltas.len() != thetas.len() {
            return Err(Error::InvalidConfig(format!(
                "mismatched trial series: {} spin differences vs {} angles",
                deltas.len(),
                thetas.len()
            )));
        }
        let (mean_delta_jz, var_delta_jz) = mean_and_variance(deltas)?;
        let (mean_theta, var_theta) = mean_and_variance(thetas)?;
        StatsSummary::from_moments(
            deltas.len(),
            mean_delta_jz,
            var_delta_jz,
            mean_theta,
            var_theta,
            modes,
            atoms_per_mode,
            contrast,
        )
    }

    /// Summarize trials by their collective spin differences (and θ̄ values
    /// derived with the given network parameters).
    pub fn from_deltas(
        deltas: &[f64],
        modes: usize,
        atoms_per_mode: f64,
        contrast: f64,
    ) -> Result<StatsSummary> {
        let thetas: Vec<f64> = deltas
            .iter()
            .map(|d| theta_bar(*d, modes, atoms_per_mode, contrast))
            .collect::<Result<_>>()?;
        StatsSummary::from_trials(deltas, &thetas, modes, atoms_per_mode, contrast)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Normal};

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn theta_bar_matches_the_definition() {
        assert_eq!(theta_bar(0.0, 2, 45_000.0, 0.78).unwrap(), 0.0);
        // δJ_z equal to the full collective slope gives exactly 1 rad.
        let slope = 0.78 * 2.0 * 45_000.0 / 2.0;
        assert_abs_diff_eq!(theta_bar(slope, 2, 45_000.0, 0.78).unwrap(), 1.0);
        assert_abs_diff_eq!(
            theta_bar(45.63, 2, 45_000.0, 0.78).unwrap(),
            1.3e-3,
            epsilon = 1e-6
        );
        assert!(theta_bar(1.0, 0, 45_000.0, 0.78).is_err());
        assert!(theta_bar(1.0, 2, -1.0, 0.78).is_err());
        assert!(theta_bar(1.0, 2, 45_000.0, 1.0001).is_err());
    }

    #[test]
    fn theta_bar_is_linear_in_the_spin_difference() {
        let f = |d: f64| theta_bar(d, 4, 45_000.0, 0.78).unwrap();
        assert_abs_diff_eq!(f(2.0 * 17.0), 2.0 * f(17.0), epsilon = 1e-18);
        assert_abs_diff_eq!(f(17.0 + 5.0), f(17.0) + f(5.0), epsilon = 1e-18);
    }

    #[test]
    fn expected_signal_inverts_theta_bar() {
        let signal = expected_collective_signal(1e-3, 2, 45_000.0, 0.78).unwrap();
        assert_abs_diff_eq!(signal, 35.1, epsilon = 1e-9);
        let back = theta_bar(signal, 2, 45_000.0, 0.78).unwrap();
        assert_abs_diff_eq!(back, 1e-3, epsilon = 1e-18);
    }

    #[test]
    fn xi_net_identity_with_theta_variance_holds_to_machine_precision() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let normal = Normal::new(3.0, 40.0).unwrap();
        let deltas: Vec<f64> = (0..600).map(|_| normal.sample(&mut rng)).collect();
        let (modes, n, c) = (2usize, 45_000.0, 0.78);
        let from_deltas = xi_net_db(&deltas, modes, n, c).unwrap();
        let thetas: Vec<f64> = deltas
            .iter()
            .map(|d| theta_bar(*d, modes, n, c).unwrap())
            .collect();
        let (_, var_theta) = mean_and_variance(&thetas).unwrap();
        let from_theta = 10.0 * (modes as f64 * n * var_theta).log10();
        assert_abs_diff_eq!(from_deltas, from_theta, epsilon = 1e-12);
    }

    #[test]
    fn known_variances_map_to_known_decibels() {
        // Var(δ) = 2σ_r² = 1889.6 spins² at M=2, N=45000, C=0.78 is the
        // −8.6 dB operating point; the same detection variance at M=4
        // improves by exactly 10·log₁₀(2) ≈ 3.01 dB.
        let var = 1889.6;
        let two = xi_net_db_from_variance(var, 2, 45_000.0, 0.78).unwrap();
        let four = xi_net_db_from_variance(var, 4, 45_000.0, 0.78).unwrap();
        assert_abs_diff_eq!(two, -8.6, epsilon = 5e-3);
        assert_abs_diff_eq!(two - four, 10.0 * 2f64.log10(), epsilon = 1e-12);
        // Δθ̄ at the operating point: 1.24 mrad.
        assert_abs_diff_eq!(var.sqrt() / 35_100.0, 1.238e-3, epsilon = 1e-6);

        // A noiseless coherent-state reference sits at 0 dB relative to the
        // projection limit whatever its contrast, while the
        // contrast-referenced value is shifted by −20·log₁₀(C).
        let css = 2.0 * 45_000.0 / 4.0;
        let qpn = xi_net_db_from_variance(css, 2, 45_000.0, 1.0).unwrap();
        assert_abs_diff_eq!(qpn, 0.0, epsilon = 1e-12);
        let referenced = xi_net_db_from_variance(css, 2, 45_000.0, 0.78).unwrap();
        assert_abs_diff_eq!(referenced, -20.0 * 0.78f64.log10(), epsilon = 1e-12);
    }

    #[test]
    fn degenerate_trials_return_the_sentinel() {
        let same = vec![4.25; 50];
        assert_eq!(
            xi_net_db(&same, 2, 45_000.0, 0.78).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn sensitivity_of_projection_noise_limited_css_trials() {
        let n_atoms = 45_000.0_f64;
        let c = 0.78;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, (n_atoms / 4.0).sqrt()).unwrap();
        let deltas: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        let got = sensitivity(&deltas, 1, n_atoms, c).unwrap();
        let expected = 1.0 / (c * n_atoms.sqrt());
        assert_abs_diff_eq!(expected, 6.04e-3, epsilon = 5e-6);
        let se = expected / (2.0 * 10_000f64).sqrt();
        assert!((got - expected).abs() < 3.0 * se, "{got} vs {expected}");
    }

    #[test]
    fn squeezed_network_sensitivities_at_the_operating_points() {
        // Inverting ξ² = M·N·Var(θ̄): σ = √(10^(ξ/10)/(M·N)).
        let sigma_m4 = (10f64.powf(-1.16) / (4.0 * 45_000.0)).sqrt();
        assert_abs_diff_eq!(sigma_m4, 0.62e-3, epsilon = 5e-6);
    }

    #[test]
    fn squeezing_matrix_of_independent_css_modes_is_the_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let (trials, n_atoms) = (4_000, 45_000.0_f64);
        let normal = Normal::new(0.0, (n_atoms / 4.0).sqrt()).unwrap();
        let samples =
            DMatrix::from_fn(trials, 2, |_, _| normal.sample(&mut rng));
        let analysis = squeezing_matrix(&samples, n_atoms, 1.0).unwrap();
        let se = (2.0 / trials as f64).sqrt();
        for k in 0..2 {
            for l in 0..2 {
                let expected = if k == l { 1.0 } else { 0.0 };
                assert!(
                    (analysis.matrix[(k, l)] - expected).abs() < 3.0 * se,
                    "entry ({k},{l}) = {}",
                    analysis.matrix[(k, l)]
                );
            }
        }
    }

    #[test]
    fn squeezing_matrix_contraction_equals_the_net_parameter() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let normal = Normal::new(0.0, 60.0).unwrap();
        // Correlated per-mode samples with negative cross-covariance.
        let trials = 500;
        let mut samples = DMatrix::zeros(trials, 2);
        for t in 0..trials {
            let common = normal.sample(&mut rng);
            let indiv = 0.3 * normal.sample(&mut rng);
            samples[(t, 0)] = common + indiv;
            samples[(t, 1)] = -common + 0.3 * normal.sample(&mut rng);
        }
        let (n_atoms, c) = (45_000.0, 0.78);
        let analysis = squeezing_matrix(&samples, n_atoms, c).unwrap();
        assert!(analysis.matrix[(0, 1)] < 0.0);
        let sums: Vec<f64> = (0..trials)
            .map(|t| samples[(t, 0)] + samples[(t, 1)])
            .collect();
        let direct = xi_net_db(&sums, 2, n_atoms, c).unwrap();
        assert_abs_diff_eq!(analysis.network_db, direct, epsilon = 1e-12);
    }

    #[test]
    fn interferometer_bracket_matches_the_frozen_value() {
        let timings = SequenceTimings {
            t_int: 50e-6,
            t_0: 1e-6,
            tau_0: 80e-6,
            tau_k: 2e-6,
        };
        assert_abs_diff_eq!(
            interferometer_bracket(&timings),
            2.2464e-8,
            epsilon = 1e-12
        );
        let k = consts().wavenumber();
        let response = interferometer_phase(1.0, k, &timings);
        assert_abs_diff_eq!(response, 0.36191, epsilon = 5e-5);
        // Δθ̄ = 4.9 mrad maps to Δā ≈ 1.35×10⁻² m/s².
        assert_abs_diff_eq!(4.9e-3 / response, 1.354e-2, epsilon = 5e-5);
    }

    #[test]
    fn instantaneous_pulses_reduce_to_the_textbook_response() {
        let timings = SequenceTimings {
            t_int: 50e-6,
            t_0: 0.0,
            tau_0: 0.0,
            tau_k: 0.0,
        };
        let k = consts().wavenumber();
        let a = 0.3;
        assert_abs_diff_eq!(
            interferometer_phase(a, k, &timings),
            4.0 * k * a * 50e-6 * 50e-6,
            epsilon = 1e-15
        );
    }

    #[test]
    fn oracle_agrees_with_the_closed_form_on_the_reference_timings() {
        let timings = SequenceTimings {
            t_int: 50e-6,
            ..SequenceTimings::default()
        };
        let timeline = Timeline::interferometer_core(&timings).unwrap();
        let k = consts().wavenumber();
        for a in [0.0, 0.05, 1.0, -2.4] {
            let numeric = sensitivity_function_oracle(&timeline, a, k).unwrap();
            let closed = interferometer_phase(a, k, &timings);
            if a == 0.0 {
                assert_eq!(numeric, 0.0);
            } else {
                assert_abs_diff_eq!(numeric, closed, epsilon = 1e-9 * closed.abs());
            }
        }
    }

    #[test]
    fn oracle_agrees_with_the_closed_form_on_random_timings() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let k = consts().wavenumber();
        for _ in 0..100 {
            let timings = SequenceTimings {
                t_int: rng.gen_range(5e-6..200e-6),
                t_0: rng.gen_range(0.1e-6..10e-6),
                tau_0: rng.gen_range(1e-6..150e-6),
                tau_k: rng.gen_range(0.2e-6..20e-6),
            };
            let timeline = Timeline::interferometer_core(&timings).unwrap();
            let a = rng.gen_range(-3.0..3.0);
            let numeric = sensitivity_function_oracle(&timeline, a, k).unwrap();
            let closed = interferometer_phase(a, k, &timings);
            let scale = closed.abs().max(1e-12);
            assert!(
                (numeric - closed).abs() < 1e-9 * scale,
                "timings {timings:?}: {numeric} vs {closed}"
            );
        }
    }

    #[test]
    fn thermal_wavelength_and_recoil_velocity_match_frozen_values() {
        let c = consts();
        let lambda = thermal_de_broglie_wavelength(&c, 25e-6).unwrap();
        assert_abs_diff_eq!(lambda, 37.45e-9, epsilon = 0.05e-9);
        // Within 5% of the rounded published 36 nm figure.
        assert!((lambda - 36e-9).abs() / 36e-9 < 0.05);

        let v = recoil_velocity(&c);
        assert_abs_diff_eq!(v, 2.3546e-2, epsilon = 5e-6);
        assert!((v - 2.4e-2).abs() / 2.4e-2 < 0.03);

        let separation = v * 0.9e-3;
        assert_abs_diff_eq!(separation, 21.19e-6, epsilon = 0.02e-6);
        assert!((separation - 20e-6).abs() / 20e-6 < 0.10);
    }

    #[test]
    fn contrast_model_decays_over_one_thermal_wavelength() {
        let c = consts();
        let at_zero = contrast_vs_separation(0.0, 25e-6, &c, 0.73).unwrap();
        assert_eq!(at_zero.contrast, 0.73);
        let beta = at_zero.time_constant;
        assert_abs_diff_eq!(
            beta * recoil_velocity(&c),
            at_zero.thermal_wavelength,
            epsilon = 1e-18
        );
        let later = contrast_vs_separation(beta, 25e-6, &c, 0.73).unwrap();
        assert_abs_diff_eq!(later.contrast, 0.73 / std::f64::consts::E, epsilon = 1e-12);
        assert!(contrast_vs_separation(1e-6, -1.0, &c, 0.73).is_err());

        // A fitted time constant of 0.46 µs corresponds to a decay length
        // of ~10.8 nm, the same order as the thermal wavelength.
        let fitted_length = 0.46e-6 * recoil_velocity(&c);
        assert_abs_diff_eq!(fitted_length, 10.83e-9, epsilon = 0.05e-9);
        assert_abs_diff_eq!(
            contrast_decay(0.46e-6, 0.46e-6, 1.0),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn contrast_budget_multiplies_transfer_probabilities() {
        let b = contrast_budget(0.88, 4, 0.79).unwrap();
        assert_eq!(b, 0.88f64.powi(4) * 0.79);
        assert!((b - 0.474).abs() < 5e-4);
        assert_eq!(contrast_budget(1.0, 7, 0.79).unwrap(), 0.79);
        assert_eq!(contrast_budget(0.88, 0, 0.79).unwrap(), 0.79);
        assert!(contrast_budget(0.0, 1, 0.79).is_err());
        assert!(contrast_budget(0.5, 1, 1.2).is_err());
    }

    #[test]
    fn clock_shift_is_angle_over_interrogation_time() {
        assert_eq!(clock_shift_from_angle(0.0, 110e-6).unwrap(), 0.0);
        assert_abs_diff_eq!(
            clock_shift_from_angle(1.7e-3, 110e-6).unwrap(),
            15.4545,
            epsilon = 5e-4
        );
        assert!(clock_shift_from_angle(1.0, 0.0).is_err());
    }

    #[test]
    fn stability_curve_of_white_noise_falls_as_inverse_sqrt() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let s = 4.9e-3;
        let normal = Normal::new(0.0, s).unwrap();
        let trials: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
        let curve = fractional_stability(&trials).unwrap();
        assert_eq!(curve[0].averaging_count, 1);
        // First point estimates the single-shot deviation.
        assert!(curve[0].ci_low <= s && s <= curve[0].ci_high * 1.2);
        for p in &curve {
            let expected = s / (p.averaging_count as f64).sqrt();
            assert!(
                p.ci_low * 0.7 < expected && expected < p.ci_high * 1.3,
                "n {} dev {} expected {expected}",
                p.averaging_count,
                p.deviation
            );
            assert!(p.ci_low <= p.deviation && p.deviation <= p.ci_high);
        }
    }

    #[test]
    fn stability_of_constant_input_is_zero() {
        let trials = vec![1.5; 64];
        let curve = fractional_stability(&trials).unwrap();
        for p in curve {
            assert_eq!(p.deviation, 0.0);
            assert_eq!(p.ci_low, 0.0);
            assert_eq!(p.ci_high, 0.0);
        }
        assert!(fractional_stability(&[1.0; 7]).is_err());
    }

    #[test]
    fn linear_fit_recovers_an_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 1.7e-3 * v - 0.4e-3).collect();
        let fit = fit_linear(&x, &y).unwrap();
        assert_abs_diff_eq!(fit.slope, 1.7e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(fit.intercept, -0.4e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(fit.residual_std, 0.0, epsilon = 1e-15);
        assert!(fit_linear(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_linear(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn linear_fit_confidence_interval_covers_a_noisy_slope() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let normal = Normal::new(0.0, 0.2e-3).unwrap();
        let x: Vec<f64> = (-10..=10).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 1.7e-3 * v + normal.sample(&mut rng))
            .collect();
        let fit = fit_linear(&x, &y).unwrap();
        // 68% CI at ~2σ margin: allow three half-widths around the truth.
        let half = fit.slope_ci.1 - fit.slope;
        assert!((fit.slope - 1.7e-3).abs() < 3.0 * half);
    }

    #[test]
    fn gaussian_fit_round_trips_a_generator() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let normal = Normal::new(0.0, 1.3e-3).unwrap();
        let samples: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
        let fit = fit_gaussian(&samples).unwrap();
        assert!(fit.std_ci.0 < 1.3e-3 * 1.1 && 1.3e-3 * 0.9 < fit.std_ci.1);
        assert!(fit.mean_ci.0 < 0.0 && 0.0 < fit.mean_ci.1 || fit.mean.abs() < 4e-4);
        assert!(fit_gaussian(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn pooled_variance_follows_the_weighted_formula() {
        let sets = [(200, 1.0e-3, 4.0e-6), (200, 1.2e-3, 5.0e-6), (200, 0.8e-3, 4.5e-6)];
        let (n, mean, var) = pooled_mean_variance(&sets).unwrap();
        assert_eq!(n, 600);
        assert_abs_diff_eq!(mean, 1.0e-3, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 4.5e-6, epsilon = 1e-12);
        let uneven = [(100, 0.0, 2.0e-6), (300, 0.0, 6.0e-6)];
        let (_, _, v) = pooled_mean_variance(&uneven).unwrap();
        assert_abs_diff_eq!(
            v,
            (99.0 * 2.0e-6 + 299.0 * 6.0e-6) / 398.0,
            epsilon = 1e-18
        );
    }

    #[test]
    fn stats_summary_is_consistent_with_its_ingredients() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let normal = Normal::new(10.0, 45.0).unwrap();
        let deltas: Vec<f64> = (0..400).map(|_| normal.sample(&mut rng)).collect();
        let (modes, n_atoms, c) = (2, 45_000.0, 0.78);
        let s = StatsSummary::from_deltas(&deltas, modes, n_atoms, c).unwrap();
        assert_eq!(s.n_trials, 400);
        assert_abs_diff_eq!(
            s.xi_net_db,
            xi_net_db(&deltas, modes, n_atoms, c).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            s.qpn_relative_db,
            qpn_relative_db(&deltas, modes, n_atoms).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            s.sensitivity_rad,
            sensitivity(&deltas, modes, n_atoms, c).unwrap(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(s.var_theta, s.sensitivity_rad * s.sensitivity_rad, epsilon = 1e-20);
        assert_abs_diff_eq!(
            s.mean_theta,
            theta_bar(s.mean_delta_jz, modes, n_atoms, c).unwrap(),
            epsilon = 1e-15
        );
    }
}
