//! Truncated product Hilbert space of the three-level dot and the cavity
//! mode, with the operator algebra everything else is assembled from.
//!
//! Basis ordering is photon-major, level-minor:
//! |G,0>, |X,0>, |D,0>, |G,1>, |X,1>, |D,1>, ... so each photon sector is a
//! contiguous block of three states.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

/// Dense complex operator on the truncated product space.
pub type OperatorMatrix = CMat;

/// The three electronic levels of the reduced dot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    /// Ground state, no electronic excitation.
    G,
    /// Bright exciton, optically active.
    X,
    /// Dark exciton, the storage state.
    D,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::G, Level::X, Level::D];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Level::G => 0,
            Level::X => 1,
            Level::D => 2,
        }
    }

    fn from_index(i: usize) -> Level {
        Level::ALL[i]
    }
}

/// Descriptor of the truncated space: photon cutoff and the bijective map
/// between (level, photon number) pairs and flat indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpaceDescriptor {
    n_max: usize,
    dim: usize,
}

impl SpaceDescriptor {
    /// Build the space with photon numbers 0..=n_max.
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::InvalidCutoff(n_max));
        }
        Ok(SpaceDescriptor {
            n_max,
            dim: 3 * (n_max + 1),
        })
    }

    #[inline]
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Flat index of |level, n>.
    #[inline]
    pub fn flat_index(&self, level: Level, n: usize) -> usize {
        debug_assert!(n <= self.n_max);
        3 * n + level.index()
    }

    /// Inverse of [`Self::flat_index`].
    #[inline]
    pub fn basis_state(&self, idx: usize) -> (Level, usize) {
        debug_assert!(idx < self.dim);
        (Level::from_index(idx % 3), idx / 3)
    }

    #[inline]
    pub fn level_of(&self, idx: usize) -> Level {
        Level::from_index(idx % 3)
    }

    #[inline]
    pub fn photon_of(&self, idx: usize) -> usize {
        idx / 3
    }

    fn zeros(&self) -> CMat {
        Array2::zeros((self.dim, self.dim))
    }
}

/// Photon annihilation operator: a|chi, n> = sqrt(n) |chi, n-1>.
/// The matrix element out of the top sector is dropped (standard truncation).
pub fn annihilation(space: &SpaceDescriptor) -> OperatorMatrix {
    let mut a = space.zeros();
    for n in 1..=space.n_max() {
        let amp = C64::new((n as f64).sqrt(), 0.0);
        for level in Level::ALL {
            a[[space.flat_index(level, n - 1), space.flat_index(level, n)]] = amp;
        }
    }
    a
}

/// Photon creation operator, the adjoint of [`annihilation`].
pub fn creation(space: &SpaceDescriptor) -> OperatorMatrix {
    linalg::dagger(&annihilation(space))
}

/// Photon number operator a†a.
pub fn number_operator(space: &SpaceDescriptor) -> OperatorMatrix {
    let mut n_op = space.zeros();
    for idx in 0..space.dim() {
        n_op[[idx, idx]] = C64::new(space.photon_of(idx) as f64, 0.0);
    }
    n_op
}

/// Level transition operator |to><from| ⊗ 1_cavity.
pub fn projector(space: &SpaceDescriptor, to: Level, from: Level) -> OperatorMatrix {
    let mut p = space.zeros();
    for n in 0..=space.n_max() {
        p[[space.flat_index(to, n), space.flat_index(from, n)]] = C64::new(1.0, 0.0);
    }
    p
}

/// Projector onto one level across all photon sectors.
pub fn level_projector(space: &SpaceDescriptor, level: Level) -> OperatorMatrix {
    projector(space, level, level)
}

/// Density matrix on the truncated space, validated against the physical
/// invariants (Hermiticity, unit trace, positivity).
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    space: SpaceDescriptor,
    mat: CMat,
}

/// Tolerances for [`DensityMatrix`] validity checks.
pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-8;
pub const POSITIVITY_TOL: f64 = 1e-8;

impl DensityMatrix {
    /// Pure basis state |level, n><level, n|.
    pub fn pure(space: SpaceDescriptor, level: Level, n: usize) -> Result<Self> {
        if n > space.n_max() {
            return Err(Error::Domain(format!(
                "photon number {n} above cutoff {}",
                space.n_max()
            )));
        }
        let mut mat = space.zeros();
        let idx = space.flat_index(level, n);
        mat[[idx, idx]] = C64::new(1.0, 0.0);
        Ok(DensityMatrix { space, mat })
    }

    /// Wrap and validate an arbitrary matrix.
    pub fn from_matrix(space: SpaceDescriptor, mat: CMat) -> Result<Self> {
        if mat.dim() != (space.dim(), space.dim()) {
            return Err(Error::Domain(format!(
                "density matrix shape {:?} does not match space dim {}",
                mat.dim(),
                space.dim()
            )));
        }
        let rho = DensityMatrix { space, mat };
        rho.validate()?;
        Ok(rho)
    }

    /// Check Hermiticity, trace, and positivity within the module tolerances.
    pub fn validate(&self) -> Result<()> {
        validate_state(&self.mat, 0.0)
    }

    #[inline]
    pub fn space(&self) -> &SpaceDescriptor {
        &self.space
    }

    #[inline]
    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.mat)
    }

    /// Occupations of |G>, |X>, |D> summed over photon sectors.
    pub fn level_populations(&self) -> [f64; 3] {
        level_populations(&self.mat, &self.space)
    }

    /// Occupations of the photon-number states 0..=n_max.
    pub fn photon_populations(&self) -> Vec<f64> {
        photon_populations(&self.mat, &self.space)
    }
}

pub(crate) fn level_populations(rho: &CMat, space: &SpaceDescriptor) -> [f64; 3] {
    let mut p = [0.0; 3];
    for idx in 0..space.dim() {
        p[space.level_of(idx).index()] += rho[[idx, idx]].re;
    }
    p
}

pub(crate) fn photon_populations(rho: &CMat, space: &SpaceDescriptor) -> Vec<f64> {
    let mut p = vec![0.0; space.n_max() + 1];
    for idx in 0..space.dim() {
        p[space.photon_of(idx)] += rho[[idx, idx]].re;
    }
    p
}

/// Shared validity check used by the integrators at every sample:
/// Hermitian to 1e-10, unit trace to 1e-8, minimum eigenvalue >= -1e-8.
pub(crate) fn validate_state(rho: &CMat, t_ps: f64) -> Result<()> {
    let herm = linalg::hermiticity_error(rho);
    if herm > HERMITICITY_TOL {
        return Err(Error::Integration {
            t_ps,
            reason: format!("Hermiticity violated: max |rho - rho^dagger| = {herm:.3e}"),
        });
    }
    let tr = linalg::trace(rho);
    if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(Error::Integration {
            t_ps,
            reason: format!("trace drifted to {tr}"),
        });
    }
    let min_eig = linalg::min_eigenvalue(rho);
    if min_eig < -POSITIVITY_TOL {
        return Err(Error::Integration {
            t_ps,
            reason: format!("negative eigenvalue {min_eig:.3e}"),
        });
    }
    Ok(())
}
