//! Physical constants used by the kinematic and thermal formulas.
//!
//! Values are CODATA 2018 exact/recommended values; the atomic mass is the
//! rubidium-87 ground-state mass and the optical wavelength is the D2 line
//! driven by the momentum-transfer beams.

use serde::{Deserialize, Serialize};

/// Constants bundle passed to the kinematic formulas so tests can substitute
/// alternative species or wavelengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    /// Planck constant, J s.
    pub h: f64,
    /// Reduced Planck constant, J s.
    pub hbar: f64,
    /// Boltzmann constant, J/K.
    pub k_b: f64,
    /// Atomic mass, kg (rubidium-87).
    pub atom_mass: f64,
    /// Optical wavelength of the momentum-transfer light, m.
    pub wavelength: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            h: 6.626_070_15e-34,
            hbar: 1.054_571_817e-34,
            k_b: 1.380_649e-23,
            atom_mass: 1.443_160_6e-25,
            wavelength: 780e-9,
        }
    }
}

impl PhysicalConstants {
    /// Optical wavenumber magnitude |k| = 2π/λ, 1/m.
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }
}
