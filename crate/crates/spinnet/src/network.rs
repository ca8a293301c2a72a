//! Gaussian model of a network of collective-spin modes.
//!
//! Each mode is a large ensemble of two-level atoms whose collective spin is
//! prepared on the equator of its Bloch sphere, pointing along ±x with mean
//! spin length `contrast · N/2`. In the large-atom-number limit the two
//! transverse components (J_z, J_y) of every mode form a joint Gaussian with
//! a mean vector of length 2M (per mode: ⟨J_z⟩ then ⟨J_y⟩) and a 2M×2M
//! covariance matrix. All dynamics used here — microwave and two-photon
//! optical pulses, free-evolution phase accumulation, and measurement
//! back-action — act linearly on that Gaussian, which keeps the simulation
//! exact within the linearized (small transverse angle) regime.
//!
//! Sign conventions: a pulse drives a rotation about an equatorial axis at
//! angle `axis_phase` from the +x line. The quadrature pair of every mode is
//! rotated by the same orthogonal 2×2 matrix, while the first-order mean
//! displacement produced by a pulse-phase offset is proportional to the
//! mode's orientation sign — anti-parallel modes respond with opposite sign
//! to a common phase offset, which is what makes differential operation
//! reject common-mode phase noise.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};

use crate::error::{Error, Result};

/// Largest mean transverse angle (rad) for which the linearized model is
/// trusted; operations error out beyond it.
pub const SMALL_ANGLE_BOUND: f64 = 0.3;

/// Relative tolerance for covariance symmetry checks.
pub const SYMMETRY_RTOL: f64 = 1e-12;

/// Eigenvalue floor for positive semi-definiteness, relative to the trace.
pub const PSD_RTOL: f64 = 1e-9;

/// Per-mode bookkeeping for one collective-spin mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeState {
    /// Momentum label in units of the two-photon recoil (2ħ|k|).
    pub momentum_index: i32,
    /// Number of atoms in the mode (real-valued; conserved by splitting).
    pub atom_number: f64,
    /// Direction (±1) of the mean spin along the x line of the Bloch sphere.
    pub orientation_sign: i8,
    /// Mean polar offset from the equatorial plane, rad: ⟨J_z⟩ / (C·N/2).
    pub mean_polar_angle: f64,
    /// Centre-of-mass position offset along the beam axis, m.
    pub position_offset: f64,
}

impl ModeState {
    /// Orientation sign as a float multiplier.
    pub fn sign(&self) -> f64 {
        f64::from(self.orientation_sign)
    }
}

/// First and second moments of the joint transverse-quadrature Gaussian.
///
/// Layout: index 2m holds ⟨J_z⟩ of mode m, index 2m+1 holds ⟨J_y⟩ of mode m.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    /// Mean vector, length 2M.
    pub mean: DVector<f64>,
    /// Covariance matrix, 2M×2M, symmetric positive semi-definite.
    pub covariance: DMatrix<f64>,
}

/// A network of collective-spin modes sharing one Gaussian description.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// Per-mode bookkeeping, in mean-vector order.
    pub modes: Vec<ModeState>,
    /// Joint Gaussian moments over all modes.
    pub moments: GaussianMoments,
    /// Interference contrast C ∈ (0, 1]; the mean spin length is C·N/2.
    pub contrast: f64,
    /// Total evolved time, s.
    pub elapsed_time: f64,
}

impl NetworkState {
    /// Prepare a single coherent mode with every atom in an equal
    /// superposition: mean spin +x, Var(J_z) = Var(J_y) = N/4.
    ///
    /// Atom numbers below ~100 leave the regime where the Gaussian
    /// description is meaningful, but only non-positive (or non-finite)
    /// values are rejected.
    pub fn init_css(total_atoms: f64, contrast: f64) -> Result<Self> {
        Self::init_css_oriented(total_atoms, contrast, 1, 0)
    }

    /// As [`init_css`](Self::init_css) with explicit orientation and
    /// momentum label, for preparing a lone counter-oriented mode.
    pub fn init_css_oriented(
        total_atoms: f64,
        contrast: f64,
        orientation_sign: i8,
        momentum_index: i32,
    ) -> Result<Self> {
        if !total_atoms.is_finite() || total_atoms <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "atom number must be positive and finite, got {total_atoms}"
            )));
        }
        if !contrast.is_finite() || contrast <= 0.0 || contrast > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "contrast must lie in (0, 1], got {contrast}"
            )));
        }
        if orientation_sign != 1 && orientation_sign != -1 {
            return Err(Error::InvalidConfig(format!(
                "orientation sign must be +1 or -1, got {orientation_sign}"
            )));
        }
        let var = total_atoms / 4.0;
        Ok(NetworkState {
            modes: vec![ModeState {
                momentum_index,
                atom_number: total_atoms,
                orientation_sign,
                mean_polar_angle: 0.0,
                position_offset: 0.0,
            }],
            moments: GaussianMoments {
                mean: DVector::zeros(2),
                covariance: DMatrix::from_diagonal(&DVector::from_element(2, var)),
            },
            contrast,
            elapsed_time: 0.0,
        })
    }

    /// Number of modes M.
    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Total atom number over all modes.
    pub fn total_atoms(&self) -> f64 {
        self.modes.iter().map(|m| m.atom_number).sum()
    }

    /// Mean spin length C·N/2 of mode `m`.
    pub fn bloch_radius(&self, m: usize) -> f64 {
        self.contrast * self.modes[m].atom_number / 2.0
    }

    /// ⟨J_z⟩ of mode `m`.
    pub fn jz_mean(&self, m: usize) -> f64 {
        self.moments.mean[2 * m]
    }

    /// ⟨J_y⟩ of mode `m`.
    pub fn jy_mean(&self, m: usize) -> f64 {
        self.moments.mean[2 * m + 1]
    }

    /// Var(J_z) of mode `m`.
    pub fn jz_var(&self, m: usize) -> f64 {
        self.moments.covariance[(2 * m, 2 * m)]
    }

    /// Var(J_y) of mode `m`.
    pub fn jy_var(&self, m: usize) -> f64 {
        self.moments.covariance[(2 * m + 1, 2 * m + 1)]
    }

    /// Mean of the collective readout observable Σ_m J_z.
    pub fn sum_jz_mean(&self) -> f64 {
        (0..self.mode_count()).map(|m| self.jz_mean(m)).sum()
    }

    /// Variance of Σ_m J_z including inter-mode covariances.
    pub fn sum_jz_var(&self) -> f64 {
        let mut v = 0.0;
        for a in 0..self.mode_count() {
            for b in 0..self.mode_count() {
                v += self.moments.covariance[(2 * a, 2 * b)];
            }
        }
        v
    }

    /// Split every mode into two half-population modes with momentum labels
    /// offset by ±1 and opposite orientation, then bring both children back
    /// to the equator (J_z = 0) with a common π/2 pulse.
    ///
    /// The children are fresh coherent states of N/2 atoms each —
    /// Var(J_z) = Var(J_y) = N/8, no inter-mode covariance — because the
    /// splitting pulse addresses atoms independently and any pre-split
    /// correlation ends up distributed over untracked degrees of freedom.
    /// Total atom number is conserved exactly.
    pub fn split_network(&self) -> Result<Self> {
        self.split_impl(None::<&mut rand::rngs::ThreadRng>)
    }

    /// As [`split_network`](Self::split_network), but partition atoms
    /// binomially between the children instead of exactly in half.
    pub fn split_network_with_partition_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self> {
        self.split_impl(Some(rng))
    }

    fn split_impl<R: Rng + ?Sized>(&self, mut rng: Option<&mut R>) -> Result<Self> {
        let mut modes = Vec::with_capacity(self.modes.len() * 2);
        for parent in &self.modes {
            if parent.atom_number <= 0.0 {
                return Err(Error::InvalidState(
                    "cannot split a mode with no atoms".into(),
                ));
            }
            let (n_plus, n_minus) = match rng.as_deref_mut() {
                None => (parent.atom_number / 2.0, parent.atom_number / 2.0),
                Some(r) => {
                    let total = parent.atom_number.round().max(1.0) as u64;
                    let drawn = Binomial::new(total, 0.5)
                        .expect("binomial parameters are valid")
                        .sample(r) as f64;
                    // Preserve the exact (possibly fractional) total.
                    (drawn, parent.atom_number - drawn)
                }
            };
            if n_plus <= 0.0 || n_minus <= 0.0 {
                return Err(Error::InvalidState(
                    "splitting produced a child mode with no atoms".into(),
                ));
            }
            modes.push(ModeState {
                momentum_index: parent.momentum_index + 1,
                atom_number: n_plus,
                orientation_sign: 1,
                mean_polar_angle: 0.0,
                position_offset: parent.position_offset,
            });
            modes.push(ModeState {
                momentum_index: parent.momentum_index - 1,
                atom_number: n_minus,
                orientation_sign: -1,
                mean_polar_angle: 0.0,
                position_offset: parent.position_offset,
            });
        }
        let dim = 2 * modes.len();
        let mut covariance = DMatrix::zeros(dim, dim);
        for (m, mode) in modes.iter().enumerate() {
            let var = mode.atom_number / 4.0;
            covariance[(2 * m, 2 * m)] = var;
            covariance[(2 * m + 1, 2 * m + 1)] = var;
        }
        let state = NetworkState {
            modes,
            moments: GaussianMoments {
                mean: DVector::zeros(dim),
                covariance,
            },
            contrast: self.contrast,
            elapsed_time: self.elapsed_time,
        };
        state.validate()?;
        Ok(state)
    }

    /// Apply one resonant pulse of rotation `area` about an equatorial axis
    /// at `axis_phase` (rad from the +x line) to every mode simultaneously.
    ///
    /// One common phase error ε ~ N(0, lo_noise_std²) is drawn per pulse —
    /// the local oscillator is shared — and added to `axis_phase`. In the
    /// linearized frame the quadrature pair of every mode rotates by the
    /// same orthogonal matrix (direction set by which of ±x the axis is
    /// closer to), the covariance transforms congruently, and the phase
    /// offset displaces the means to first order with the mode's
    /// orientation sign: δ⟨J_z⟩ = −sin(area)·sin(φ)·(±C·N/2).
    pub fn rotate<R: Rng + ?Sized>(
        &self,
        axis_phase: f64,
        area: f64,
        lo_noise_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..=2.0 * std::f64::consts::PI).contains(&area) || !area.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "rotation area must lie in [0, 2π], got {area}"
            )));
        }
        if !axis_phase.is_finite() {
            return Err(Error::InvalidConfig("axis phase must be finite".into()));
        }
        if lo_noise_std < 0.0 || !lo_noise_std.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "phase-noise std must be non-negative and finite, got {lo_noise_std}"
            )));
        }
        let eps = if lo_noise_std > 0.0 {
            Normal::new(0.0, lo_noise_std)
                .expect("validated std")
                .sample(rng)
        } else {
            0.0
        };
        let phi = axis_phase + eps;
        let (sin_phi, cos_phi) = phi.sin_cos();
        let dir = if cos_phi >= 0.0 { 1.0 } else { -1.0 };
        let (sin_a, cos_a) = area.sin_cos();
        let quad = Matrix2::new(cos_a, sin_a * dir, -sin_a * dir, cos_a);

        let mut next = self.clone();
        for (m, mode) in self.modes.iter().enumerate() {
            let radius = self.bloch_radius(m) * mode.sign();
            let u = Vector2::new(self.jz_mean(m), self.jy_mean(m));
            let rotated = quad * u;
            next.moments.mean[2 * m] = rotated.x - sin_a * sin_phi * radius;
            next.moments.mean[2 * m + 1] = rotated.y + (1.0 - cos_a) * cos_phi * sin_phi * radius;
        }
        let big = block_diagonal(&quad, self.mode_count());
        let cov = &big * &self.moments.covariance * big.transpose();
        next.moments.covariance = symmetrized(&cov);
        next.refresh_polar_angles()?;
        Ok(next)
    }

    /// Free evolution for `duration` under per-mode detunings (rad/s).
    ///
    /// Each mode's accumulated phase advances by detuning × duration; in the
    /// linearized frame this displaces the azimuthal mean by the
    /// orientation-signed amount ⟨J_y⟩ += (±C·N/2)·δθ, which a later readout
    /// pulse converts into the measurable polar offset. The covariance is
    /// unchanged (transverse fluctuations are insensitive to rotations about
    /// the polar axis at first order).
    pub fn accumulate_phase(&self, detunings: &[f64], duration: f64) -> Result<Self> {
        if duration < 0.0 || !duration.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "duration must be non-negative and finite, got {duration}"
            )));
        }
        let angles: Vec<f64> = detunings.iter().map(|d| d * duration).collect();
        let mut next = self.advance_mode_phases(&angles)?;
        next.elapsed_time += duration;
        Ok(next)
    }

    /// Displace each mode's accumulated phase by the given angles (rad)
    /// without advancing time. Used for free evolution and for analytic
    /// phase injection (e.g. the acceleration response of an interferometer
    /// sequence).
    pub fn advance_mode_phases(&self, angles: &[f64]) -> Result<Self> {
        if angles.len() != self.mode_count() {
            return Err(Error::InvalidConfig(format!(
                "got {} phase entries for {} modes",
                angles.len(),
                self.mode_count()
            )));
        }
        let mut next = self.clone();
        for (m, angle) in angles.iter().enumerate() {
            if !angle.is_finite() {
                return Err(Error::InvalidConfig("phase advance must be finite".into()));
            }
            let radius = self.bloch_radius(m) * self.modes[m].sign();
            next.moments.mean[2 * m + 1] += radius * angle;
        }
        next.refresh_polar_angles()?;
        Ok(next)
    }

    /// Ballistic drift: every mode's position advances by its momentum label
    /// times `velocity_per_momentum_unit` (m/s per unit label) for
    /// `duration` seconds. Phases and moments are untouched.
    pub fn drift(&self, duration: f64, velocity_per_momentum_unit: f64) -> Result<Self> {
        if duration < 0.0 || !duration.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "duration must be non-negative and finite, got {duration}"
            )));
        }
        let mut next = self.clone();
        for mode in &mut next.modes {
            mode.position_offset +=
                f64::from(mode.momentum_index) * velocity_per_momentum_unit * duration;
        }
        next.elapsed_time += duration;
        Ok(next)
    }

    /// Scale the contrast by `factor` (measurement light scattering, extra
    /// pulse inefficiency, …), keeping it in (0, 1].
    pub(crate) fn apply_contrast_factor(&mut self, factor: f64) -> Result<()> {
        let next = self.contrast * factor;
        if !(0.0..=1.0).contains(&next) || next == 0.0 {
            return Err(Error::InvalidState(format!(
                "contrast {next} left (0, 1] after scaling by {factor}"
            )));
        }
        self.contrast = next;
        // The polar angles are defined relative to the mean spin length, so
        // they must be re-derived when that length changes.
        self.refresh_polar_angles()
    }

    /// Draw one joint sample of the per-mode J_z values from the current
    /// Gaussian. This is the mode-resolved latent variable behind a
    /// collective readout; a physical detector only sees the sum, but the
    /// simulation exposes the parts for diagnostics.
    pub fn sample_jz_vector<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let m = self.mode_count();
        let mut mean = DVector::zeros(m);
        let mut cov = DMatrix::zeros(m, m);
        for a in 0..m {
            mean[a] = self.jz_mean(a);
            for b in 0..m {
                cov[(a, b)] = self.moments.covariance[(2 * a, 2 * b)];
            }
        }
        sample_multivariate_normal(&mean, &cov, rng)
    }

    /// Re-derive every mode's mean polar angle from the moments and check
    /// that both transverse mean angles stay inside the linearized regime.
    pub(crate) fn refresh_polar_angles(&mut self) -> Result<()> {
        for m in 0..self.mode_count() {
            let radius = self.bloch_radius(m);
            let polar = self.moments.mean[2 * m] / radius;
            let azimuthal = self.moments.mean[2 * m + 1] / radius;
            if polar.abs() >= SMALL_ANGLE_BOUND || azimuthal.abs() >= SMALL_ANGLE_BOUND {
                return Err(Error::SmallAngle {
                    mode: m,
                    angle_rad: if polar.abs() >= azimuthal.abs() {
                        polar
                    } else {
                        azimuthal
                    },
                });
            }
            self.modes[m].mean_polar_angle = polar;
        }
        Ok(())
    }

    /// Check all structural invariants: shapes, contrast range, positive
    /// atom numbers, covariance symmetry and positive semi-definiteness,
    /// and the per-mode uncertainty product
    /// Var(J_z)·Var(J_y) ≥ (C·N/4)² up to numerical tolerance.
    pub fn validate(&self) -> Result<()> {
        let m = self.mode_count();
        if m == 0 {
            return Err(Error::InvalidState("network has no modes".into()));
        }
        if !(0.0..=1.0).contains(&self.contrast) || self.contrast == 0.0 {
            return Err(Error::InvalidState(format!(
                "contrast {} outside (0, 1]",
                self.contrast
            )));
        }
        for (i, mode) in self.modes.iter().enumerate() {
            if !mode.atom_number.is_finite() || mode.atom_number <= 0.0 {
                return Err(Error::InvalidState(format!(
                    "mode {i} has non-positive atom number {}",
                    mode.atom_number
                )));
            }
        }
        let dim = 2 * m;
        if self.moments.mean.len() != dim
            || self.moments.covariance.nrows() != dim
            || self.moments.covariance.ncols() != dim
        {
            return Err(Error::NumericalState(format!(
                "moment shapes do not match {m} modes"
            )));
        }
        let cov = &self.moments.covariance;
        let scale = (cov.trace() / dim as f64).abs().max(1.0);
        for i in 0..dim {
            for j in (i + 1)..dim {
                let diff = (cov[(i, j)] - cov[(j, i)]).abs();
                let mag = cov[(i, j)].abs().max(cov[(j, i)].abs()).max(scale);
                if diff > SYMMETRY_RTOL * mag {
                    return Err(Error::NumericalState(format!(
                        "covariance asymmetric at ({i}, {j}): {diff:e}"
                    )));
                }
            }
        }
        let sym = symmetrized(cov);
        let eig = sym.symmetric_eigenvalues();
        let floor = -PSD_RTOL * cov.trace().abs();
        if let Some(lambda) = eig.iter().copied().find(|l| *l < floor) {
            return Err(Error::NumericalState(format!(
                "covariance not positive semi-definite: eigenvalue {lambda:e}"
            )));
        }
        for i in 0..m {
            let bound = self.bloch_radius(i) / 2.0;
            let product = self.jz_var(i) * self.jy_var(i);
            if product < bound * bound * (1.0 - 1e-9) {
                return Err(Error::NumericalState(format!(
                    "mode {i} violates the uncertainty product: {product:e} < {:e}",
                    bound * bound
                )));
            }
        }
        Ok(())
    }
}

/// Assemble the block-diagonal 2M×2M matrix with `block` repeated M times.
fn block_diagonal(block: &Matrix2<f64>, m: usize) -> DMatrix<f64> {
    let mut big = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        big[(2 * i, 2 * i)] = block[(0, 0)];
        big[(2 * i, 2 * i + 1)] = block[(0, 1)];
        big[(2 * i + 1, 2 * i)] = block[(1, 0)];
        big[(2 * i + 1, 2 * i + 1)] = block[(1, 1)];
    }
    big
}

/// (A + Aᵀ)/2, killing round-off asymmetry after congruence transforms.
fn symmetrized(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Draw from N(mean, cov) for symmetric PSD `cov` via eigendecomposition,
/// clamping slightly negative round-off eigenvalues to zero.
pub(crate) fn sample_multivariate_normal<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let eig = symmetrized(cov).symmetric_eigen();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| normal.sample(rng)));
    let scaled = DVector::from_iterator(
        mean.len(),
        eig.eigenvalues
            .iter()
            .zip(z.iter())
            .map(|(l, zi)| l.max(0.0).sqrt() * zi),
    );
    mean + &eig.eigenvectors * scaled
}
