//! Physical parameters, exchange couplings from the Mn position, and
//! assembly of the rotating-frame Hamiltonian and loss channels.
//!
//! The dot is reduced to a Λ-type three-level system {|G>, |X>, |D>}: the
//! cavity and laser act on the G-X arm, the Mn-mediated flip-flop of
//! strength J on the X-D arm, and the dark state sits δ_eff below the
//! bright one.

use num_complex::Complex64 as C64;

use crate::constants::{HBAR_MEV_PS, MU_B_MEV_PER_T};
use crate::error::{Error, Result};
use crate::hilbert::{self, Level, OperatorMatrix, SpaceDescriptor};
use crate::linalg::CMat;
use crate::pulses::PulseSpec;

/// All physical constants of a run, defaulting to the published values.
///
/// Energies in meV, lengths in nm, rates in ns⁻¹, field in T, temperature
/// in K. `mn_position` is given as fractions of the box dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Electron-Mn coupling, meV·nm³.
    pub j_e: f64,
    /// Hole-Mn coupling, meV·nm³.
    pub j_h: f64,
    /// Intrinsic dark-bright splitting δ_XD, meV.
    pub delta_xd: f64,
    /// Mn g-factor.
    pub g_mn: f64,
    /// Electron g-factor.
    pub g_e: f64,
    /// Dot-cavity coupling ħg, meV.
    pub hbar_g: f64,
    /// Cavity loss rate κ, ns⁻¹.
    pub kappa: f64,
    /// Bright-exciton radiative decay rate γ_X, ns⁻¹.
    pub gamma_x: f64,
    /// Dark-exciton residual decay rate γ_D, ns⁻¹.
    pub gamma_d: f64,
    /// Electron deformation potential, eV.
    pub d_e: f64,
    /// Hole deformation potential, eV.
    pub d_h: f64,
    /// Mass density, kg·m⁻³.
    pub rho_d: f64,
    /// Sound velocity, m·s⁻¹.
    pub c_s: f64,
    /// Electron confinement radius, nm.
    pub a_e: f64,
    /// Electron-to-hole confinement ratio a_e/a_h.
    pub a_ratio: f64,
    /// Mn position as fractions of the box dimensions, each in (0, 1).
    pub mn_position: [f64; 3],
    /// Hard-wall box dimensions, nm.
    pub box_dims: [f64; 3],
    /// Magnetic field in Faraday configuration, T.
    pub b_z: f64,
    /// Laser-exciton detuning ħΔω_AX, meV.
    pub hbar_detuning: f64,
    /// Phonon bath temperature, K.
    pub temperature: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            j_e: -15.0,
            j_h: 60.0,
            delta_xd: 0.95,
            g_mn: 2.0075,
            g_e: -1.5,
            hbar_g: 0.1,
            kappa: 8.5,
            gamma_x: 2.4,
            gamma_d: 0.01,
            d_e: -5.0,
            d_h: 1.0,
            rho_d: 5510.0,
            c_s: 4000.0,
            a_e: 3.0,
            a_ratio: 1.38,
            mn_position: [0.3, 0.3, 0.13],
            box_dims: [6.0, 6.0, 2.0],
            b_z: 0.0,
            hbar_detuning: 15.0,
            temperature: 4.0,
        }
    }
}

/// Site-resolved exchange couplings and the derived Λ-system quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedCouplings {
    /// Electron exchange at the Mn site, meV.
    pub j_e_site: f64,
    /// Hole exchange at the Mn site, meV.
    pub j_h_site: f64,
    /// Flip-flop strength J = -sqrt(5) * j_e, meV.
    pub flip_coupling: f64,
    /// Effective dark-bright splitting δ_eff, meV.
    pub delta_eff: f64,
}

/// Squared hard-wall ground-state wave function at a fractional position,
/// |Psi_0(r)|^2 = prod_i (2 / L_i) sin^2(pi x_i), in nm⁻³.
fn ground_state_density(frac: [f64; 3], box_dims: [f64; 3]) -> f64 {
    frac.iter()
        .zip(box_dims.iter())
        .map(|(&x, &l)| 2.0 / l * (std::f64::consts::PI * x).sin().powi(2))
        .product()
}

/// Site-resolved exchange couplings j_e, j_h and the flip-flop strength J.
pub fn exchange_couplings(params: &ModelParams) -> Result<(f64, f64, f64)> {
    if params
        .mn_position
        .iter()
        .any(|&x| x <= 0.0 || x >= 1.0 || !x.is_finite())
    {
        return Err(Error::MnPositionOutsideBox(params.mn_position));
    }
    let density = ground_state_density(params.mn_position, params.box_dims);
    let j_e_site = params.j_e * density;
    let j_h_site = params.j_h * density;
    let flip = -(5.0f64).sqrt() * j_e_site;
    Ok((j_e_site, j_h_site, flip))
}

/// Effective dark-bright splitting,
/// δ_eff = δ_XD - 2 j_e + (3/2) j_h + (g_Mn - g_e) μ_B B_z.
pub fn effective_splitting(params: &ModelParams, j_e_site: f64, j_h_site: f64) -> f64 {
    params.delta_xd - 2.0 * j_e_site + 1.5 * j_h_site
        + (params.g_mn - params.g_e) * MU_B_MEV_PER_T * params.b_z
}

/// Compute all derived couplings in one pass.
pub fn derive(params: &ModelParams) -> Result<DerivedCouplings> {
    let (j_e_site, j_h_site, flip_coupling) = exchange_couplings(params)?;
    Ok(DerivedCouplings {
        j_e_site,
        j_h_site,
        flip_coupling,
        delta_eff: effective_splitting(params, j_e_site, j_h_site),
    })
}

/// The effective system actually fed to the dynamics: Λ-system couplings,
/// cavity, detuning, and loss rates. Parameter studies construct this
/// directly; [`SystemSpec::from_params`] derives it from [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemSpec {
    /// Flip-flop coupling J, meV.
    pub flip_coupling: f64,
    /// Effective dark-bright splitting δ_eff, meV.
    pub delta_eff: f64,
    /// Dot-cavity coupling ħg, meV.
    pub cavity_coupling: f64,
    /// Laser-exciton detuning ħΔω_AX, meV.
    pub laser_detuning: f64,
    /// Cavity loss rate, ns⁻¹.
    pub kappa: f64,
    /// Bright decay rate, ns⁻¹.
    pub gamma_x: f64,
    /// Dark decay rate, ns⁻¹.
    pub gamma_d: f64,
}

impl SystemSpec {
    /// Derive the effective system from the full parameter set.
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        let derived = derive(params)?;
        Ok(SystemSpec {
            flip_coupling: derived.flip_coupling,
            delta_eff: derived.delta_eff,
            cavity_coupling: params.hbar_g,
            laser_detuning: params.hbar_detuning,
            kappa: params.kappa,
            gamma_x: params.gamma_x,
            gamma_d: params.gamma_d,
        })
    }

    /// Vacuum Rabi angular frequency g, ps⁻¹.
    pub fn vacuum_rabi_frequency(&self) -> f64 {
        self.cavity_coupling / HBAR_MEV_PS
    }

    /// Period of the |G,1> <-> |X,0> occupation oscillation, π/g, ps.
    pub fn vacuum_rabi_period(&self) -> f64 {
        std::f64::consts::PI / self.vacuum_rabi_frequency()
    }

    /// Time of complete photon-to-exciton transfer out of |G,n>,
    /// half the occupation oscillation at the n-photon Rabi frequency.
    pub fn photon_transfer_time(&self, n_photons: usize) -> f64 {
        0.5 * self.vacuum_rabi_period() / (n_photons as f64).sqrt()
    }

    /// System copy with all loss rates set to zero (the ideal case).
    pub fn lossless(&self) -> Self {
        SystemSpec {
            kappa: 0.0,
            gamma_x: 0.0,
            gamma_d: 0.0,
            ..*self
        }
    }
}

/// Rotating-frame Hamiltonian at envelope value `f_acs` (ps⁻¹), in meV:
///
/// H_I = ħΔω_AX P_G - δ_eff P_D - ħΔω_AX a†a
///       - (ħ/2) f_ACS (|G><X| + |X><G|)
///       - (J/2) (|X><D| + |D><X|)
///       + ħg (a |X><G| + a† |G><X|)
pub fn rotating_frame_hamiltonian(
    space: &SpaceDescriptor,
    sys: &SystemSpec,
    f_acs: f64,
) -> OperatorMatrix {
    let dim = space.dim();
    let mut h: CMat = CMat::zeros((dim, dim));

    for idx in 0..dim {
        let (level, n) = space.basis_state(idx);
        let mut e = -sys.laser_detuning * n as f64;
        match level {
            Level::G => e += sys.laser_detuning,
            Level::X => {}
            Level::D => e -= sys.delta_eff,
        }
        h[[idx, idx]] = C64::new(e, 0.0);
    }

    let drive = -0.5 * HBAR_MEV_PS * f_acs;
    let flip = -0.5 * sys.flip_coupling;
    for n in 0..=space.n_max() {
        let g_n = space.flat_index(Level::G, n);
        let x_n = space.flat_index(Level::X, n);
        let d_n = space.flat_index(Level::D, n);
        h[[g_n, x_n]] += C64::new(drive, 0.0);
        h[[x_n, g_n]] += C64::new(drive, 0.0);
        h[[x_n, d_n]] += C64::new(flip, 0.0);
        h[[d_n, x_n]] += C64::new(flip, 0.0);
        // a |X><G| connects |G,n> to |X,n-1> with sqrt(n).
        if n >= 1 {
            let x_below = space.flat_index(Level::X, n - 1);
            let amp = C64::new(sys.cavity_coupling * (n as f64).sqrt(), 0.0);
            h[[x_below, g_n]] += amp;
            h[[g_n, x_below]] += amp;
        }
    }
    h
}

/// Time-dependent Hamiltonians handed to the integrators.
pub trait HamiltonianOp: Sync {
    fn dim(&self) -> usize;
    fn at(&self, t_ps: f64) -> CMat;
}

/// Rotating-frame Hamiltonian driven by a pulse envelope.
pub struct DrivenHamiltonian<'a> {
    pub space: SpaceDescriptor,
    pub sys: SystemSpec,
    pub pulse: &'a PulseSpec,
}

impl HamiltonianOp for DrivenHamiltonian<'_> {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn at(&self, t_ps: f64) -> CMat {
        rotating_frame_hamiltonian(&self.space, &self.sys, self.pulse.envelope(t_ps))
    }
}

/// Constant Hamiltonian, e.g. the free system between pulses.
pub struct ConstantHamiltonian(pub CMat);

impl HamiltonianOp for ConstantHamiltonian {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn at(&self, _t_ps: f64) -> CMat {
        self.0.clone()
    }
}

/// Full lab-frame Hamiltonian with an explicit exciton energy ħω_X (meV),
/// used only to verify that the rotating frame reproduces the same level
/// occupations independently of the absolute energy scale.
///
/// The cavity is on resonance with the bright state and the laser carrier
/// sits at ω_X + Δω_AX; the drive carries its full complex phase.
pub struct LabFrameHamiltonian<'a> {
    pub space: SpaceDescriptor,
    pub sys: SystemSpec,
    pub pulse: &'a PulseSpec,
    pub hbar_omega_x: f64,
}

impl HamiltonianOp for LabFrameHamiltonian<'_> {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn at(&self, t_ps: f64) -> CMat {
        let space = &self.space;
        let sys = &self.sys;
        let dim = space.dim();
        let mut h: CMat = CMat::zeros((dim, dim));
        let hbar_omega_c = self.hbar_omega_x;
        let hbar_omega_acs = self.hbar_omega_x + sys.laser_detuning;

        for idx in 0..dim {
            let (level, n) = space.basis_state(idx);
            let mut e = hbar_omega_c * n as f64;
            match level {
                Level::G => {}
                Level::X => e += self.hbar_omega_x,
                Level::D => e += self.hbar_omega_x - sys.delta_eff,
            }
            h[[idx, idx]] = C64::new(e, 0.0);
        }

        // f(t) = f_ACS(t) exp(-i omega_ACS t)
        let phase = C64::new(0.0, -hbar_omega_acs / HBAR_MEV_PS * t_ps).exp();
        let f_t = phase * self.pulse.envelope(t_ps);
        let flip = C64::new(-0.5 * sys.flip_coupling, 0.0);
        for n in 0..=space.n_max() {
            let g_n = space.flat_index(Level::G, n);
            let x_n = space.flat_index(Level::X, n);
            let d_n = space.flat_index(Level::D, n);
            // -(hbar/2)(f* |G><X| + f |X><G|)
            h[[g_n, x_n]] += -0.5 * HBAR_MEV_PS * f_t.conj();
            h[[x_n, g_n]] += -0.5 * HBAR_MEV_PS * f_t;
            h[[x_n, d_n]] += flip;
            h[[d_n, x_n]] += flip;
            if n >= 1 {
                let x_below = space.flat_index(Level::X, n - 1);
                let amp = C64::new(sys.cavity_coupling * (n as f64).sqrt(), 0.0);
                h[[x_below, g_n]] += amp;
                h[[g_n, x_below]] += amp;
            }
        }
        h
    }
}

/// The three loss channels of the model: cavity decay on `a`, radiative
/// decay on |G><X|, and residual dark decay on |G><D|. Rates in ns⁻¹.
pub fn lindblad_channels(
    space: &SpaceDescriptor,
    sys: &SystemSpec,
) -> Result<Vec<(OperatorMatrix, f64)>> {
    for &rate in &[sys.kappa, sys.gamma_x, sys.gamma_d] {
        if rate < 0.0 {
            return Err(Error::NegativeRate(rate));
        }
    }
    Ok(vec![
        (hilbert::annihilation(space), sys.kappa),
        (hilbert::projector(space, Level::G, Level::X), sys.gamma_x),
        (hilbert::projector(space, Level::G, Level::D), sys.gamma_d),
    ])
}
