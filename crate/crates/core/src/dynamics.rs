//! Time-dependent Lindblad master-equation integrator.
//!
//! The density matrix is integrated with an adaptive embedded
//! Dormand-Prince 5(4) scheme; the Hamiltonian is evaluated at every
//! internal stage, which the smoothed pulse edges demand. For stationary
//! stretches the same generator is exponentiated into a superoperator,
//! which lets buffer-time sweeps jump across nanoseconds of storage in a
//! handful of matrix products.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::constants::{per_ns_to_per_ps, HBAR_MEV_PS};
use crate::error::{Error, Result};
use crate::hilbert::{self, DensityMatrix, SpaceDescriptor};
use crate::linalg::{self, CMat};
use crate::model::HamiltonianOp;
use crate::par::*;

/// Sampling grid of an evolution. Samples force integrator stop points;
/// the integrator's internal step is additionally bounded by `dt_max`.
#[derive(Clone, Debug)]
pub struct TimeGrid {
    samples: Vec<f64>,
    dt_max: f64,
}

impl TimeGrid {
    /// Uniform sampling of [t_start, t_end] with spacing `sample_dt`.
    pub fn uniform(t_start: f64, t_end: f64, sample_dt: f64, dt_max: f64) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(Error::Spec(format!(
                "time grid needs t_end > t_start, got [{t_start}, {t_end}]"
            )));
        }
        if !(dt_max > 0.0) || !(sample_dt > 0.0) {
            return Err(Error::Spec(format!(
                "time grid needs positive sample_dt and dt_max, got ({sample_dt}, {dt_max})"
            )));
        }
        let n = ((t_end - t_start) / sample_dt).ceil() as usize;
        let mut samples: Vec<f64> = (0..=n).map(|k| t_start + k as f64 * sample_dt).collect();
        if let Some(last) = samples.last_mut() {
            *last = t_end;
        }
        Ok(TimeGrid { samples, dt_max })
    }

    /// Explicit, strictly increasing sample times.
    pub fn from_sample_times(samples: Vec<f64>, dt_max: f64) -> Result<Self> {
        if samples.len() < 2 || samples.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Spec(
                "time grid needs at least two strictly increasing samples".into(),
            ));
        }
        if !(dt_max > 0.0) {
            return Err(Error::Spec(format!("time grid needs dt_max > 0, got {dt_max}")));
        }
        Ok(TimeGrid { samples, dt_max })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn t_start(&self) -> f64 {
        self.samples[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.samples.last().unwrap()
    }

    pub fn dt_max(&self) -> f64 {
        self.dt_max
    }
}

/// Sampled occupations along an evolution.
#[derive(Clone, Debug, Default)]
pub struct TimeSeries {
    /// Sample times, ps.
    pub times: Vec<f64>,
    /// Occupation of |G> summed over photon sectors.
    pub pop_g: Vec<f64>,
    /// Occupation of |X>.
    pub pop_x: Vec<f64>,
    /// Occupation of |D>.
    pub pop_d: Vec<f64>,
    /// Occupation of each photon-number state; `photon[n][k]` is photon
    /// number n at sample k.
    pub photon: Vec<Vec<f64>>,
    /// Full density-matrix snapshots, if requested.
    pub snapshots: Option<Vec<CMat>>,
}

impl TimeSeries {
    pub(crate) fn with_capacity(n_max: usize, len: usize, keep_snapshots: bool) -> Self {
        TimeSeries {
            times: Vec::with_capacity(len),
            pop_g: Vec::with_capacity(len),
            pop_x: Vec::with_capacity(len),
            pop_d: Vec::with_capacity(len),
            photon: vec![Vec::with_capacity(len); n_max + 1],
            snapshots: keep_snapshots.then(Vec::new),
        }
    }

    pub(crate) fn record(&mut self, t: f64, rho: &CMat, space: &SpaceDescriptor) {
        let levels = hilbert::level_populations(rho, space);
        self.times.push(t);
        self.pop_g.push(levels[0]);
        self.pop_x.push(levels[1]);
        self.pop_d.push(levels[2]);
        for (n, p) in hilbert::photon_populations(rho, space).into_iter().enumerate() {
            self.photon[n].push(p);
        }
        if let Some(snaps) = &mut self.snapshots {
            snaps.push(rho.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Occupation track of the n-photon state.
    pub fn photon_population(&self, n: usize) -> &[f64] {
        &self.photon[n]
    }

}

/// Maximum of a sampled track over the window (lo, hi], refined by a local
/// parabola through the three samples around the discrete maximum.
pub fn refined_max(times: &[f64], values: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let idx: Vec<usize> = (0..times.len())
        .filter(|&k| times[k] > lo && times[k] <= hi)
        .collect();
    let (&best, _) = idx
        .iter()
        .zip(idx.iter().map(|&k| values[k]))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())?;
    let v = values[best];
    // Parabolic refinement for an interior maximum on a locally uniform grid.
    if best > 0 && best + 1 < values.len() {
        let (vm, vp) = (values[best - 1], values[best + 1]);
        let denom = vm - 2.0 * v + vp;
        let (hm, hp) = (times[best] - times[best - 1], times[best + 1] - times[best]);
        if denom < 0.0 && (hm - hp).abs() < 1e-9 * hm.max(hp) {
            let peak = v - 0.125 * (vp - vm).powi(2) / denom;
            return Some(peak.max(v));
        }
    }
    Some(v)
}

/// Tolerances and policies of the adaptive integrator.
#[derive(Clone, Copy, Debug)]
pub struct IntegratorOptions {
    /// Relative tolerance per density-matrix entry.
    pub rel_tol: f64,
    /// Absolute tolerance per entry.
    pub abs_tol: f64,
    /// Step-size floor; underflow below this aborts with a diagnostic.
    pub dt_min: f64,
    /// Keep full density-matrix snapshots at the samples.
    pub keep_snapshots: bool,
    /// Check trace, Hermiticity, and positivity at every sample.
    pub validate: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            dt_min: 1e-12,
            keep_snapshots: false,
            validate: true,
        }
    }
}

/// Lindblad dissipator Γ (O ρ O† - ½{ρ, O†O}), in the units of Γ.
pub fn lindblad_dissipator(rho: &CMat, op: &CMat, rate: f64) -> Result<CMat> {
    if rate < 0.0 {
        return Err(Error::NegativeRate(rate));
    }
    let op_dag = linalg::dagger(op);
    let sandwich = op.dot(rho).dot(&op_dag);
    let opdag_op = op_dag.dot(op);
    let anti = linalg::anti_commutator(rho, &opdag_op);
    Ok((sandwich - anti * C64::new(0.5, 0.0)) * C64::new(rate, 0.0))
}

/// Loss channels with precomputed adjoints, rates converted to ps⁻¹.
/// Channels with zero rate are dropped.
pub(crate) struct PreparedChannels {
    ops: Vec<(CMat, CMat)>,
    rates_ps: Vec<f64>,
    /// Σ Γ O†O, for the anticommutator in one pass.
    damping: Option<CMat>,
}

impl PreparedChannels {
    pub(crate) fn new(channels: &[(CMat, f64)]) -> Result<Self> {
        let mut ops = Vec::new();
        let mut rates_ps = Vec::new();
        let mut damping: Option<CMat> = None;
        for (op, rate_ns) in channels {
            if *rate_ns < 0.0 {
                return Err(Error::NegativeRate(*rate_ns));
            }
            if *rate_ns == 0.0 {
                continue;
            }
            let rate_ps = per_ns_to_per_ps(*rate_ns);
            let op_dag = linalg::dagger(op);
            let weighted = op_dag.dot(op) * C64::new(rate_ps, 0.0);
            damping = Some(match damping {
                Some(acc) => acc + weighted,
                None => weighted,
            });
            ops.push((op.clone(), op_dag));
            rates_ps.push(rate_ps);
        }
        Ok(PreparedChannels { ops, rates_ps, damping })
    }

    /// Right-hand side of the master equation,
    /// dρ/dt = -(i/ħ)[H, ρ] + Σ Γ (O ρ O† - ½{ρ, O†O}), in ps⁻¹.
    pub(crate) fn rhs(&self, h: &CMat, rho: &CMat) -> CMat {
        let mut out = linalg::commutator(h, rho) * C64::new(0.0, -1.0 / HBAR_MEV_PS);
        for ((op, op_dag), &rate) in self.ops.iter().zip(&self.rates_ps) {
            out = out + op.dot(rho).dot(op_dag) * C64::new(rate, 0.0);
        }
        if let Some(damping) = &self.damping {
            out = out - linalg::anti_commutator(rho, damping) * C64::new(0.5, 0.0);
        }
        out
    }
}

// Dormand-Prince 5(4) tableau.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// b - b* error weights including the FSAL stage.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];

fn error_norm(err: &CMat, y: &CMat, y_new: &CMat, rel: f64, abs: f64) -> f64 {
    let mut worst = 0.0f64;
    for ((e, a), b) in err.iter().zip(y.iter()).zip(y_new.iter()) {
        let scale = abs + rel * a.norm().max(b.norm());
        let r = e.norm() / scale;
        if r > worst {
            worst = r;
        }
    }
    worst
}

/// March `y` from `t0` to `t1` with adaptive Dormand-Prince steps.
/// `dt` and the FSAL stage `k_last` persist across calls for continuity.
pub(crate) fn integrate_between<F>(
    y: &mut CMat,
    t0: f64,
    t1: f64,
    dt: &mut f64,
    k_last: &mut Option<CMat>,
    rhs: &F,
    opts: &IntegratorOptions,
    dt_max: f64,
) -> Result<()>
where
    F: Fn(f64, &CMat) -> CMat,
{
    let mut t = t0;
    while t < t1 {
        let mut h = dt.min(dt_max).min(t1 - t);
        loop {
            let k1 = match k_last.take() {
                Some(k) => k,
                None => rhs(t, y),
            };
            let k2 = rhs(t + C[0] * h, &(&*y + &k1 * C64::from(A2[0] * h)));
            let k3 = rhs(
                t + C[1] * h,
                &(&*y + &k1 * C64::from(A3[0] * h) + &k2 * C64::from(A3[1] * h)),
            );
            let k4 = rhs(
                t + C[2] * h,
                &(&*y
                    + &k1 * C64::from(A4[0] * h)
                    + &k2 * C64::from(A4[1] * h)
                    + &k3 * C64::from(A4[2] * h)),
            );
            let k5 = rhs(
                t + C[3] * h,
                &(&*y
                    + &k1 * C64::from(A5[0] * h)
                    + &k2 * C64::from(A5[1] * h)
                    + &k3 * C64::from(A5[2] * h)
                    + &k4 * C64::from(A5[3] * h)),
            );
            let k6 = rhs(
                t + h,
                &(&*y
                    + &k1 * C64::from(A6[0] * h)
                    + &k2 * C64::from(A6[1] * h)
                    + &k3 * C64::from(A6[2] * h)
                    + &k4 * C64::from(A6[3] * h)
                    + &k5 * C64::from(A6[4] * h)),
            );
            let y_new = &*y
                + &k1 * C64::from(B[0] * h)
                + &k3 * C64::from(B[2] * h)
                + &k4 * C64::from(B[3] * h)
                + &k5 * C64::from(B[4] * h)
                + &k6 * C64::from(B[5] * h);
            let k7 = rhs(t + h, &y_new);
            let err = &k1 * C64::from(E[0] * h)
                + &k3 * C64::from(E[2] * h)
                + &k4 * C64::from(E[3] * h)
                + &k5 * C64::from(E[4] * h)
                + &k6 * C64::from(E[5] * h)
                + &k7 * C64::from(E[6] * h);
            let norm = error_norm(&err, y, &y_new, opts.rel_tol, opts.abs_tol);

            if norm <= 1.0 {
                t += h;
                *y = y_new;
                *k_last = Some(k7);
                let grow = if norm == 0.0 {
                    5.0
                } else {
                    (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0)
                };
                *dt = (h * grow).min(dt_max);
                break;
            }
            let shrink = (0.9 * norm.powf(-0.2)).clamp(0.1, 0.9);
            h *= shrink;
            *k_last = Some(k1);
            if h < opts.dt_min {
                return Err(Error::Integration {
                    t_ps: t,
                    reason: format!("step size underflow (h = {h:.3e} ps)"),
                });
            }
        }
    }
    Ok(())
}

/// Integrate the master equation with a time-dependent Hamiltonian,
/// sampling occupations on the grid. The initial state is recorded at the
/// first sample.
pub fn evolve(
    rho0: &DensityMatrix,
    hamiltonian: &dyn HamiltonianOp,
    channels: &[(CMat, f64)],
    grid: &TimeGrid,
    opts: &IntegratorOptions,
) -> Result<TimeSeries> {
    let (series, _) = evolve_raw(
        rho0.matrix().clone(),
        *rho0.space(),
        hamiltonian,
        channels,
        grid,
        opts,
    )?;
    Ok(series)
}

/// As [`evolve`], returning the final state for hand-offs between phases.
pub(crate) fn evolve_raw(
    rho0: CMat,
    space: SpaceDescriptor,
    hamiltonian: &dyn HamiltonianOp,
    channels: &[(CMat, f64)],
    grid: &TimeGrid,
    opts: &IntegratorOptions,
) -> Result<(TimeSeries, CMat)> {
    let prepared = PreparedChannels::new(channels)?;
    let rhs = |t: f64, rho: &CMat| prepared.rhs(&hamiltonian.at(t), rho);

    let samples = grid.samples();
    let mut series = TimeSeries::with_capacity(space.n_max(), samples.len(), opts.keep_snapshots);
    let mut rho = rho0;
    let mut dt = grid.dt_max().min(1e-2);
    let mut k_last: Option<CMat> = None;

    series.record(samples[0], &rho, &space);
    if opts.validate {
        hilbert::validate_state(&rho, samples[0])?;
    }
    for pair in samples.windows(2) {
        integrate_between(
            &mut rho,
            pair[0],
            pair[1],
            &mut dt,
            &mut k_last,
            &rhs,
            opts,
            grid.dt_max(),
        )?;
        series.record(pair[1], &rho, &space);
        if opts.validate {
            hilbert::validate_state(&rho, pair[1])?;
        }
    }
    Ok((series, rho))
}

/// Linear propagator of the master equation over a time window, stored in
/// row form: `vec(ρ_out) = vec(ρ_in) · K` with row-major vectorization.
/// Composition in application order is then a plain matrix product.
#[derive(Clone, Debug)]
pub struct SuperOp {
    k: CMat,
    dim: usize,
}

impl SuperOp {
    pub fn identity(dim: usize) -> Self {
        SuperOp {
            k: Array2::eye(dim * dim),
            dim,
        }
    }

    /// Generator transpose L^T for a constant Hamiltonian: row r holds
    /// vec(rhs(E_r)) for the r-th basis matrix.
    fn generator_rowform(h: &CMat, prepared: &PreparedChannels) -> CMat {
        let dim = h.nrows();
        let d2 = dim * dim;
        let mut gen: CMat = Array2::zeros((d2, d2));
        for r in 0..d2 {
            let mut basis: CMat = Array2::zeros((dim, dim));
            basis[[r / dim, r % dim]] = C64::new(1.0, 0.0);
            let out = prepared.rhs(h, &basis);
            let row = out.into_shape_with_order(d2).unwrap();
            gen.row_mut(r).assign(&row);
        }
        gen
    }

    /// Exact propagator over `dt` for a time-independent generator.
    pub fn constant(h: &CMat, channels: &[(CMat, f64)], dt: f64) -> Result<Self> {
        let prepared = PreparedChannels::new(channels)?;
        let gen = Self::generator_rowform(h, &prepared);
        Ok(SuperOp {
            k: linalg::expm(&(gen * C64::from(dt))),
            dim: h.nrows(),
        })
    }

    /// Propagator over [t0, t1] for a time-dependent Hamiltonian, by
    /// integrating the matrix equation dK/dt = K L^T(t) row-parallel with
    /// the same adaptive scheme as the state integrator.
    pub fn window(
        hamiltonian: &dyn HamiltonianOp,
        channels: &[(CMat, f64)],
        t0: f64,
        t1: f64,
        opts: &IntegratorOptions,
        dt_max: f64,
    ) -> Result<Self> {
        let dim = hamiltonian.dim();
        let d2 = dim * dim;
        let prepared = PreparedChannels::new(channels)?;
        let rhs = |t: f64, k: &CMat| -> CMat {
            let h = hamiltonian.at(t);
            let mut out: CMat = Array2::zeros((d2, d2));
            let in_slice = k.as_slice().unwrap();
            out.as_slice_mut()
                .unwrap()
                .par_chunks_mut(d2)
                .zip(in_slice.par_chunks(d2))
                .for_each(|(orow, irow)| {
                    let state =
                        ndarray::ArrayView2::from_shape((dim, dim), irow).unwrap().to_owned();
                    let derived = prepared.rhs(&h, &state);
                    orow.copy_from_slice(derived.as_slice().unwrap());
                });
            out
        };
        let mut k: CMat = Array2::eye(d2);
        let mut dt = dt_max.min(1e-2);
        let mut k_last: Option<CMat> = None;
        integrate_between(&mut k, t0, t1, &mut dt, &mut k_last, &rhs, opts, dt_max)?;
        Ok(SuperOp { k, dim })
    }

    /// Apply to a density matrix.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let d2 = self.dim * self.dim;
        let flat = rho.view().into_shape_with_order(d2).unwrap();
        let out = flat.dot(&self.k);
        out.into_shape_with_order((self.dim, self.dim)).unwrap()
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &SuperOp) -> SuperOp {
        SuperOp {
            k: self.k.dot(&other.k),
            dim: self.dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-form matrix element K[x, x']: amplitude from basis pair x to x'.
    #[inline]
    pub(crate) fn rowform(&self) -> &CMat {
        &self.k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{DensityMatrix, Level, SpaceDescriptor};
    use crate::model::{
        lindblad_channels, ConstantHamiltonian, ModelParams, SystemSpec,
    };
    use approx::assert_relative_eq;

    fn default_sys() -> SystemSpec {
        SystemSpec::from_params(&ModelParams::default()).unwrap()
    }

    fn zero_h(space: &SpaceDescriptor) -> ConstantHamiltonian {
        ConstantHamiltonian(Array2::zeros((space.dim(), space.dim())))
    }

    #[test]
    fn dissipator_hand_evaluations() {
        let space = SpaceDescriptor::new(1).unwrap();
        let rho_g1 = DensityMatrix::pure(space, Level::G, 1).unwrap();

        // Zero rate: zero matrix.
        let zero = lindblad_dissipator(rho_g1.matrix(), &hilbert::annihilation(&space), 0.0).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));

        // Cavity decay on |G,1><G,1|: kappa (|G,0><G,0| - |G,1><G,1|).
        let kappa = 8.5;
        let d = lindblad_dissipator(rho_g1.matrix(), &hilbert::annihilation(&space), kappa).unwrap();
        let g0 = space.flat_index(Level::G, 0);
        let g1 = space.flat_index(Level::G, 1);
        assert_relative_eq!(d[[g0, g0]].re, kappa, epsilon = 1e-14);
        assert_relative_eq!(d[[g1, g1]].re, -kappa, epsilon = 1e-14);
        assert!(linalg::trace(&d).norm() < 1e-12);

        // Radiative decay on |X,0><X,0|: gamma_x (|G,0><G,0| - |X,0><X,0|).
        let rho_x0 = DensityMatrix::pure(space, Level::X, 0).unwrap();
        let gamma_x = 2.4;
        let op = hilbert::projector(&space, Level::G, Level::X);
        let d = lindblad_dissipator(rho_x0.matrix(), &op, gamma_x).unwrap();
        let x0 = space.flat_index(Level::X, 0);
        assert_relative_eq!(d[[g0, g0]].re, gamma_x, epsilon = 1e-14);
        assert_relative_eq!(d[[x0, x0]].re, -gamma_x, epsilon = 1e-14);
        assert!(linalg::trace(&d).norm() < 1e-12);

        assert!(lindblad_dissipator(rho_x0.matrix(), &op, -1.0).is_err());
    }

    #[test]
    fn vacuum_rabi_oscillation_matches_closed_form() {
        // No drive, no losses, flip-flop off: P_{X,0}(t) = sin^2(g t).
        let mut sys = default_sys().lossless();
        sys.flip_coupling = 0.0;
        let space = SpaceDescriptor::new(1).unwrap();
        let h = ConstantHamiltonian(crate::model::rotating_frame_hamiltonian(&space, &sys, 0.0));
        let rho0 = DensityMatrix::pure(space, Level::G, 1).unwrap();
        let grid = TimeGrid::uniform(0.0, 20.7, 0.25, 0.5).unwrap();
        let series = evolve(&rho0, &h, &[], &grid, &IntegratorOptions::default()).unwrap();

        let g = sys.vacuum_rabi_frequency();
        for (k, &t) in series.times.iter().enumerate() {
            let expect = (g * t).sin().powi(2);
            assert!(
                (series.pop_x[k] - expect).abs() < 1e-6,
                "t = {t}: {} vs {}",
                series.pop_x[k],
                expect
            );
        }
        // Full transfer after half a coherent Rabi oscillation.
        let t_half = sys.photon_transfer_time(1);
        assert_relative_eq!(t_half, 10.34, max_relative = 1e-3);
        let grid = TimeGrid::uniform(0.0, t_half, t_half / 4.0, 0.5).unwrap();
        let series = evolve(&rho0, &h, &[], &grid, &IntegratorOptions::default()).unwrap();
        assert!(series.pop_x.last().unwrap() >= &0.9999);
    }

    #[test]
    fn cavity_only_decay_is_exponential() {
        let space = SpaceDescriptor::new(1).unwrap();
        let kappa = 8.5;
        let channels = vec![(hilbert::annihilation(&space), kappa)];
        let rho0 = DensityMatrix::pure(space, Level::G, 1).unwrap();
        let grid = TimeGrid::uniform(0.0, 118.0, 1.0, 1.0).unwrap();
        let series = evolve(&rho0, &zero_h(&space), &channels, &grid, &IntegratorOptions::default())
            .unwrap();
        let kappa_ps = per_ns_to_per_ps(kappa);
        for (k, &t) in series.times.iter().enumerate() {
            let expect = (-kappa_ps * t).exp();
            assert!((series.photon[1][k] - expect).abs() < 1e-4);
        }
        // At t = 118 ps (about one cavity lifetime) the deviation from the
        // analytic decay stays below 1e-4.
        let last = *series.photon[1].last().unwrap();
        assert!((last - (-kappa_ps * 118.0).exp()).abs() < 1e-4);
        assert!((last - (-1.0f64).exp()).abs() < 2e-3);
    }

    #[test]
    fn free_evolution_is_identity() {
        let space = SpaceDescriptor::new(1).unwrap();
        let rho0 = DensityMatrix::pure(space, Level::D, 0).unwrap();
        let grid = TimeGrid::uniform(0.0, 10.0, 2.5, 1.0).unwrap();
        let series = evolve(&rho0, &zero_h(&space), &[], &grid, &IntegratorOptions::default())
            .unwrap();
        for k in 0..series.len() {
            assert_eq!(series.pop_d[k], 1.0);
            assert_eq!(series.pop_x[k], 0.0);
        }
    }

    #[test]
    fn unitary_evolution_preserves_spectrum() {
        // All rates zero: eigenvalues of rho are conserved.
        let sys = default_sys().lossless();
        let space = SpaceDescriptor::new(1).unwrap();
        let h = ConstantHamiltonian(crate::model::rotating_frame_hamiltonian(&space, &sys, 2.0));
        let mut mat: CMat = Array2::zeros((space.dim(), space.dim()));
        let weights = [0.4, 0.3, 0.15, 0.1, 0.05, 0.0];
        for (i, w) in weights.iter().enumerate() {
            mat[[i, i]] = C64::new(*w, 0.0);
        }
        let rho0 = DensityMatrix::from_matrix(space, mat).unwrap();
        let before = linalg::hermitian_eigenvalues(rho0.matrix());
        let grid = TimeGrid::uniform(0.0, 30.0, 30.0, 0.5).unwrap();
        let mut opts = IntegratorOptions::default();
        opts.keep_snapshots = true;
        let series = evolve(&rho0, &h, &[], &grid, &opts).unwrap();
        let after = linalg::hermitian_eigenvalues(series.snapshots.as_ref().unwrap().last().unwrap());
        for (b, a) in before.iter().zip(after.iter()) {
            assert!((b - a).abs() < 1e-8);
        }
    }

    #[test]
    fn trace_and_hermiticity_hold_on_lossy_driven_run() {
        let params = ModelParams::default();
        let sys = SystemSpec::from_params(&params).unwrap();
        let space = SpaceDescriptor::new(2).unwrap();
        let pulse = crate::pulses::designed_rect_write(&sys, 10.0, 1).unwrap();
        let h = crate::model::DrivenHamiltonian { space, sys, pulse: &pulse };
        let channels = lindblad_channels(&space, &sys).unwrap();
        let rho0 = DensityMatrix::pure(space, Level::G, 1).unwrap();
        let grid = TimeGrid::uniform(0.0, 25.0, 0.1, 0.5).unwrap();
        let mut opts = IntegratorOptions::default();
        opts.keep_snapshots = true;
        // evolve() already validates trace/Hermiticity/positivity per sample.
        let series = evolve(&rho0, &h, &channels, &grid, &opts).unwrap();
        for rho in series.snapshots.as_ref().unwrap() {
            assert!((linalg::trace(rho).re - 1.0).abs() < 1e-8);
            assert!(linalg::hermiticity_error(rho) < 1e-10);
        }
        // The pulse has moved population into the dark state.
        assert!(*series.pop_d.last().unwrap() > 0.5);
    }

    #[test]
    fn superop_constant_matches_direct_integration() {
        let sys = default_sys();
        let space = SpaceDescriptor::new(1).unwrap();
        let h = crate::model::rotating_frame_hamiltonian(&space, &sys, 0.0);
        let channels = lindblad_channels(&space, &sys).unwrap();
        let rho0 = DensityMatrix::pure(space, Level::G, 1).unwrap();

        let prop = SuperOp::constant(&h, &channels, 100.0).unwrap();
        let jumped = prop.apply(rho0.matrix());

        let grid = TimeGrid::uniform(0.0, 100.0, 100.0, 0.5).unwrap();
        let mut opts = IntegratorOptions::default();
        opts.keep_snapshots = true;
        let series =
            evolve(&rho0, &ConstantHamiltonian(h.clone()), &channels, &grid, &opts).unwrap();
        let direct = series.snapshots.as_ref().unwrap().last().unwrap();
        assert!(linalg::max_abs_diff(&jumped, direct) < 5e-9);

        // Composition: two 50 ps jumps equal one 100 ps jump.
        let half = SuperOp::constant(&h, &channels, 50.0).unwrap();
        let composed = half.then(&half);
        assert!(linalg::max_abs_diff(&composed.apply(rho0.matrix()), &jumped) < 5e-9);
    }

    #[test]
    fn superop_window_matches_direct_integration_over_pulse_edge() {
        let params = ModelParams::default();
        let sys = SystemSpec::from_params(&params).unwrap();
        let space = SpaceDescriptor::new(1).unwrap();
        let pulse = crate::pulses::designed_rect_write(&sys, 10.0, 1).unwrap();
        let h = crate::model::DrivenHamiltonian { space, sys, pulse: &pulse };
        let channels = lindblad_channels(&space, &sys).unwrap();
        let rho0 = DensityMatrix::pure(space, Level::G, 1).unwrap();
        let opts = IntegratorOptions::default();

        // Window straddling the switch-on edge at about 10.3 ps.
        let (t0, t1) = (9.5, 11.5);
        let prop = SuperOp::window(&h, &channels, t0, t1, &opts, 0.5).unwrap();

        let grid = TimeGrid::uniform(0.0, t1, t0, 0.5).unwrap();
        let mut keep = opts;
        keep.keep_snapshots = true;
        let series = evolve(&rho0, &h, &channels, &grid, &keep).unwrap();
        let snaps = series.snapshots.as_ref().unwrap();
        let at_t0 = &snaps[1];
        let at_t1 = snaps.last().unwrap();
        assert_relative_eq!(series.times[1], t0);
        assert!(linalg::max_abs_diff(&prop.apply(at_t0), at_t1) < 1e-8);
    }

    #[test]
    fn step_underflow_produces_diagnostic() {
        // An envelope with an essential singularity at t = 1 drives the
        // adaptive step below the floor; the error names the time.
        struct Singular(SpaceDescriptor);
        impl HamiltonianOp for Singular {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn at(&self, t: f64) -> CMat {
                let sys = SystemSpec::from_params(&ModelParams::default()).unwrap();
                let f = 1.0 / (1.0 - t).max(1e-300);
                crate::model::rotating_frame_hamiltonian(&self.0, &sys, f)
            }
        }
        let space = SpaceDescriptor::new(1).unwrap();
        let rho0 = DensityMatrix::pure(space, Level::G, 1).unwrap();
        let grid = TimeGrid::uniform(0.0, 2.0, 1.0, 0.5).unwrap();
        let err = evolve(&rho0, &Singular(space), &[], &grid, &IntegratorOptions::default());
        match err {
            Err(Error::Integration { t_ps, .. }) => assert!(t_ps <= 1.0 + 1e-9),
            other => panic!("expected integration failure, got {other:?}"),
        }
    }

    #[test]
    fn refined_max_recovers_smooth_peak() {
        let times: Vec<f64> = (0..200).map(|k| 0.05 * k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| (0.7 * (t - 4.3)).cos().powi(2)).collect();
        let peak = refined_max(&times, &values, 1.0, 9.0).unwrap();
        assert!((peak - 1.0).abs() < 1e-6);
        assert!(refined_max(&times, &values, 100.0, 101.0).is_none());
    }
}
