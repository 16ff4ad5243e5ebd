//! Physical constants and unit conventions.
//!
//! All energies are expressed in meV and all times in ps, so that every
//! parameter of the underlying model can be typed as published. Loss rates
//! cross the API in ns⁻¹ and are converted to ps⁻¹ internally. Phonon
//! material parameters (deformation potentials, density, sound velocity)
//! enter in their usual SI-flavored units and are converted once, inside
//! the spectral density.

/// Reduced Planck constant, meV·ps.
pub const HBAR_MEV_PS: f64 = 0.6582119569;

/// Boltzmann constant, meV/K.
pub const KB_MEV_PER_K: f64 = 0.08617333;

/// Bohr magneton, meV/T.
pub const MU_B_MEV_PER_T: f64 = 0.05788382;

/// Electron volt in Joule, for deformation-potential conversions.
pub const EV_IN_JOULE: f64 = 1.602176634e-19;

/// Reduced Planck constant in J·s, for the phonon spectral density.
pub const HBAR_J_S: f64 = 1.054571817e-34;

/// Convert a rate in ns⁻¹ to ps⁻¹.
#[inline]
pub fn per_ns_to_per_ps(rate: f64) -> f64 {
    rate * 1e-3
}

/// Convert an energy in meV to an angular frequency in ps⁻¹.
#[inline]
pub fn mev_to_per_ps(energy: f64) -> f64 {
    energy / HBAR_MEV_PS
}
