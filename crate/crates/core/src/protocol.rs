//! The write/store/read buffering protocol and its figures of merit.
//!
//! A run starts in |G, n> with n cavity photons, lets the photon swap into
//! the bright exciton, writes it to the dark state with an AC-Stark pulse,
//! waits the buffer time τ, and reads it back with an identical pulse.
//! The captured 1- and 2-photon occupations (C1PO/C2PO) are the maxima of
//! the photon occupations after the readout pulse has ended.
//!
//! Buffer-time sweeps exploit that the Hamiltonian is stationary between
//! the pulses: the write phase is integrated once, the storage interval is
//! crossed with an exponentiated superoperator (or, with phonons, by
//! stepping the augmented density matrix once along the full storage span
//! and branching per τ), and only the short readout phase is integrated
//! per grid point. Sweep points evaluate in parallel and are returned in
//! grid order.

use crate::dynamics::{
    self, evolve_raw, refined_max, IntegratorOptions, SuperOp, TimeGrid, TimeSeries,
};
use crate::error::{Error, Result};
use crate::hilbert::{self, DensityMatrix, Level, SpaceDescriptor};
use crate::model::{
    lindblad_channels, rotating_frame_hamiltonian, DrivenHamiltonian, SystemSpec,
};
use crate::par::*;
use crate::phonons::{
    influence_coefficients, polaron_shift, quapi_evolve, quapi_evolve_scheduled, PhononParams,
    PolaronCompensated, QuapiConfig, QuapiEngine, QuapiSchedule, WindowAccuracy,
};
use crate::pulses::PulseSpec;

/// Phonon treatment of a protocol run.
#[derive(Clone, Debug)]
pub struct PhononRun {
    pub params: PhononParams,
    pub config: QuapiConfig,
}

/// Full specification of one protocol run.
#[derive(Clone, Debug)]
pub struct ProtocolSpec {
    /// Initial photon number n of |G, n>, n >= 1.
    pub initial_photons: usize,
    /// The write pulse; the read pulse is an identical delayed copy.
    pub write_pulse: PulseSpec,
    /// Buffer time τ between write and read, ps.
    pub buffer_time: f64,
    /// Simulation horizon, ps; defaults to five vacuum-Rabi periods past
    /// the end of the readout pulse.
    pub horizon: Option<f64>,
    /// Apply the Lindblad loss channels.
    pub include_losses: bool,
    /// Phonon environment, if any.
    pub phonons: Option<PhononRun>,
    /// Photon cutoff; defaults to max(initial_photons, 2) + 1.
    pub n_max: Option<usize>,
    /// Occupation sampling interval, ps.
    pub sample_dt: f64,
    /// Integrator step cap, ps.
    pub dt_max: f64,
    /// Integrator tolerances. Long loss-free runs need tighter settings
    /// than the defaults to keep the positivity drift within bounds.
    pub integrator: IntegratorOptions,
}

impl ProtocolSpec {
    /// The standard protocol: designed rectangular pulses, losses on.
    pub fn designed(sys: &SystemSpec, buffer_time: f64) -> Result<Self> {
        Ok(ProtocolSpec {
            initial_photons: 1,
            write_pulse: crate::pulses::designed_rect_write(sys, crate::pulses::DEFAULT_ALPHA, 1)?,
            buffer_time,
            horizon: None,
            include_losses: true,
            phonons: None,
            n_max: None,
            sample_dt: 0.05,
            dt_max: 0.5,
            integrator: IntegratorOptions::default(),
        })
    }

    pub fn n_max_effective(&self) -> usize {
        self.n_max.unwrap_or(self.initial_photons.max(2) + 1)
    }

    fn read_pulse(&self, tau: f64) -> Result<PulseSpec> {
        Ok(self.write_pulse.shifted(self.write_pulse.read_shift(tau)?))
    }

    /// Metric windows for buffer time `tau`.
    pub fn windows(&self, sys: &SystemSpec, tau: f64) -> Result<ProtocolWindows> {
        let read = self.read_pulse(tau)?;
        let write_end = self.write_pulse.end_marker();
        let read_end = read.end_marker();
        let tail = 5.0 * sys.vacuum_rabi_period();
        let horizon = self.horizon.unwrap_or(read_end + tail);
        if horizon < read_end + tail - 1e-9 {
            return Err(Error::Spec(format!(
                "horizon {horizon} ps must exceed the readout end {read_end} ps \
                 by at least five vacuum-Rabi periods ({tail:.1} ps)"
            )));
        }
        Ok(ProtocolWindows {
            write_end,
            read_start: read.support_start(),
            read_end,
            horizon,
        })
    }

    pub fn validate(&self, sys: &SystemSpec) -> Result<()> {
        if self.initial_photons < 1 {
            return Err(Error::Spec("protocol needs at least one initial photon".into()));
        }
        if self.initial_photons > self.n_max_effective() {
            return Err(Error::Spec(format!(
                "initial photon number {} above cutoff {}",
                self.initial_photons,
                self.n_max_effective()
            )));
        }
        if self.buffer_time < 0.0 {
            return Err(Error::Spec(format!(
                "buffer time must be non-negative, got {} ps",
                self.buffer_time
            )));
        }
        if !(self.sample_dt > 0.0) || !(self.dt_max > 0.0) {
            return Err(Error::Spec("sample_dt and dt_max must be positive".into()));
        }
        self.write_pulse.validate()?;
        self.windows(sys, self.buffer_time)?;
        if let Some(phonons) = &self.phonons {
            phonons.params.validate()?;
            phonons.config.validate()?;
        }
        Ok(())
    }

    fn effective_sys(&self, sys: &SystemSpec) -> SystemSpec {
        if self.include_losses {
            *sys
        } else {
            sys.lossless()
        }
    }
}

/// Timing anchors of a run, ps.
#[derive(Clone, Copy, Debug)]
pub struct ProtocolWindows {
    /// End of the write pulse (metric convention).
    pub write_end: f64,
    /// Time where the readout pulse envelope becomes non-negligible.
    pub read_start: f64,
    /// End of the readout pulse; the capture window starts here.
    pub read_end: f64,
    /// End of the simulation; the capture window ends here.
    pub horizon: f64,
}

/// Metrics of one protocol run.
#[derive(Clone, Debug)]
pub struct ProtocolResult {
    pub series: TimeSeries,
    /// Maximum captured 1-photon occupation after the readout pulse.
    pub c1po: f64,
    /// Maximum captured 2-photon occupation, when the space resolves it.
    pub c2po: Option<f64>,
    /// Maximum dark occupation within 2 ps after the write pulse.
    pub max_dark_after_write: f64,
    pub windows: ProtocolWindows,
}

/// The dense/sparse/dense sampling grid of a protocol run: fine sampling
/// around the pulses and the capture window, sparse during storage.
fn protocol_grid(w: &ProtocolWindows, sample_dt: f64, dt_max: f64) -> Result<TimeGrid> {
    let dense_a_end = (w.write_end + 2.0).min(w.horizon);
    let dense_b_start = w.read_start.max(dense_a_end);
    let mut times = Vec::new();
    let mut t = 0.0;
    while t < dense_a_end {
        times.push(t);
        t += sample_dt;
    }
    if dense_b_start > dense_a_end {
        let span = dense_b_start - dense_a_end;
        let stride = sample_dt.max(span / 2000.0);
        let mut t = dense_a_end;
        while t < dense_b_start {
            times.push(t);
            t += stride;
        }
    }
    let mut t = dense_b_start;
    while t < w.horizon {
        times.push(t);
        t += sample_dt;
    }
    times.push(w.horizon);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    TimeGrid::from_sample_times(times, dt_max)
}

fn extract_metrics(
    series: &TimeSeries,
    w: &ProtocolWindows,
    n_max: usize,
) -> Result<(f64, Option<f64>, f64)> {
    let c1po = refined_max(&series.times, &series.photon[1], w.read_end, w.horizon)
        .ok_or_else(|| Error::Spec("no samples in the capture window".into()))?;
    let c2po = (n_max >= 2)
        .then(|| refined_max(&series.times, &series.photon[2], w.read_end, w.horizon))
        .flatten();
    let max_dark = refined_max(&series.times, &series.pop_d, w.write_end, w.write_end + 2.0)
        .ok_or_else(|| Error::Spec("no samples in the dark-occupation window".into()))?;
    Ok((c1po, c2po, max_dark))
}

/// Run the full protocol once.
pub fn run(spec: &ProtocolSpec, sys: &SystemSpec) -> Result<ProtocolResult> {
    spec.validate(sys)?;
    let sys_eff = spec.effective_sys(sys);
    let space = SpaceDescriptor::new(spec.n_max_effective())?;
    let windows = spec.windows(sys, spec.buffer_time)?;
    let read = spec.read_pulse(spec.buffer_time)?;
    let sequence = PulseSpec::Sequence(vec![spec.write_pulse.clone(), read]);
    let hamiltonian = DrivenHamiltonian {
        space,
        sys: sys_eff,
        pulse: &sequence,
    };
    let channels = lindblad_channels(&space, &sys_eff)?;
    let rho0 = DensityMatrix::pure(space, Level::G, spec.initial_photons)?;
    let grid = protocol_grid(&windows, spec.sample_dt, spec.dt_max)?;
    let opts = spec.integrator;

    let series = match &spec.phonons {
        None => dynamics::evolve(&rho0, &hamiltonian, &channels, &grid, &opts)?,
        Some(phonons) => quapi_evolve(
            &rho0,
            &hamiltonian,
            &channels,
            &phonons.params,
            &phonons.config,
            &grid,
            &opts,
        )?,
    };
    let (c1po, c2po, max_dark_after_write) = extract_metrics(&series, &windows, space.n_max())?;
    Ok(ProtocolResult {
        series,
        c1po,
        c2po,
        max_dark_after_write,
        windows,
    })
}

/// Maximum dark-state occupation within 2 ps of the end of a write pulse,
/// with no readout. The target quantity of the pulse-shape comparison.
pub fn dark_occupation_after_write(
    write_pulse: &PulseSpec,
    sys: &SystemSpec,
    settings: &WriteSettings,
) -> Result<f64> {
    write_pulse.validate()?;
    let sys_eff = if settings.include_losses {
        *sys
    } else {
        sys.lossless()
    };
    let space = SpaceDescriptor::new(settings.n_max)?;
    let write_end = write_pulse.end_marker();
    let horizon = write_end + 2.0;
    let hamiltonian = DrivenHamiltonian {
        space,
        sys: sys_eff,
        pulse: write_pulse,
    };
    let channels = lindblad_channels(&space, &sys_eff)?;
    let rho0 = DensityMatrix::pure(space, Level::G, settings.initial_photons)?;
    let grid = TimeGrid::uniform(0.0, horizon, settings.sample_dt, 0.5)?;
    let opts = settings.integrator;
    let series = match &settings.phonons {
        None => dynamics::evolve(&rho0, &hamiltonian, &channels, &grid, &opts)?,
        Some(phonons) => quapi_evolve(
            &rho0,
            &hamiltonian,
            &channels,
            &phonons.params,
            &phonons.config,
            &grid,
            &opts,
        )?,
    };
    refined_max(&series.times, &series.pop_d, write_end, horizon)
        .ok_or_else(|| Error::Spec("no samples in the dark-occupation window".into()))
}

/// Settings for write-only evaluations (pulse optimization).
#[derive(Clone, Debug)]
pub struct WriteSettings {
    pub initial_photons: usize,
    pub include_losses: bool,
    pub phonons: Option<PhononRun>,
    pub n_max: usize,
    pub sample_dt: f64,
    pub integrator: IntegratorOptions,
}

impl Default for WriteSettings {
    fn default() -> Self {
        WriteSettings {
            initial_photons: 1,
            include_losses: true,
            phonons: None,
            n_max: 3,
            sample_dt: 0.02,
            integrator: IntegratorOptions::default(),
        }
    }
}

/// One row of a buffer-time sweep.
#[derive(Clone, Copy, Debug)]
pub struct TauPoint {
    /// Buffer time actually simulated, ps (snapped to the path-integral
    /// step when phonons are on).
    pub tau_ps: f64,
    pub c1po: f64,
    pub c2po: Option<f64>,
}

/// C1PO/C2PO as a function of the buffer time, one protocol run per grid
/// point. Rows are returned in grid order.
pub fn sweep_tau(spec: &ProtocolSpec, sys: &SystemSpec, taus: &[f64]) -> Result<Vec<TauPoint>> {
    if taus.is_empty() {
        return Ok(Vec::new());
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) || taus[0] < 0.0 {
        return Err(Error::Spec(
            "buffer-time grid must be non-negative and strictly increasing".into(),
        ));
    }
    spec.validate(sys)?;
    match &spec.phonons {
        None => sweep_tau_lindblad(spec, sys, taus),
        Some(phonons) => sweep_tau_quapi(spec, sys, taus, phonons),
    }
}

/// Smallest τ from which the write and read phases are separated by a
/// stationary stretch; below it the pulses overlap and the run is done in
/// one piece.
fn split_threshold(spec: &ProtocolSpec) -> Result<f64> {
    let handoff = spec.write_pulse.support_end();
    let probe = spec.read_pulse(0.0)?;
    Ok(handoff - probe.support_start())
}

fn sweep_tau_lindblad(
    spec: &ProtocolSpec,
    sys: &SystemSpec,
    taus: &[f64],
) -> Result<Vec<TauPoint>> {
    let sys_eff = spec.effective_sys(sys);
    let space = SpaceDescriptor::new(spec.n_max_effective())?;
    let channels = lindblad_channels(&space, &sys_eff)?;
    let opts = spec.integrator;
    let tau_split = split_threshold(spec)?;
    let handoff = spec.write_pulse.support_end();

    // Write phase, shared by all split points.
    let rho0 = DensityMatrix::pure(space, Level::G, spec.initial_photons)?;
    let write_h = DrivenHamiltonian {
        space,
        sys: sys_eff,
        pulse: &spec.write_pulse,
    };
    let write_grid = TimeGrid::uniform(0.0, handoff, spec.sample_dt, spec.dt_max)?;
    let (_, rho_handoff) = evolve_raw(
        rho0.matrix().clone(),
        space,
        &write_h,
        &channels,
        &write_grid,
        &opts,
    )?;

    let h_free = rotating_frame_hamiltonian(&space, &sys_eff, 0.0);
    let capture_step = SuperOp::constant(&h_free, &channels, spec.sample_dt)?;

    let results: Result<Vec<TauPoint>> = taus
        .iter()
        .copied()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|tau| -> Result<TauPoint> {
            if tau < tau_split {
                let mut one = spec.clone();
                one.buffer_time = tau;
                let res = run(&one, sys)?;
                return Ok(TauPoint {
                    tau_ps: tau,
                    c1po: res.c1po,
                    c2po: res.c2po,
                });
            }
            let windows = spec.windows(sys, tau)?;
            let read = spec.read_pulse(tau)?;
            let gap = windows.read_start - handoff;
            let jump = SuperOp::constant(&h_free, &channels, gap)?;
            let rho_read = jump.apply(&rho_handoff);
            hilbert::validate_state(&rho_read, windows.read_start)?;

            let read_h = DrivenHamiltonian {
                space,
                sys: sys_eff,
                pulse: &read,
            };
            // Integrate through the readout pulse, then march the capture
            // window (stationary Hamiltonian) with the shared sample-step
            // superoperator.
            let grid = TimeGrid::uniform(
                windows.read_start,
                windows.read_end,
                spec.sample_dt,
                spec.dt_max,
            )?;
            let (_, mut rho) = evolve_raw(rho_read, space, &read_h, &channels, &grid, &opts)?;
            let n_capture =
                ((windows.horizon - windows.read_end) / spec.sample_dt).ceil() as usize;
            let mut times = Vec::with_capacity(n_capture);
            let mut p1 = Vec::with_capacity(n_capture);
            let mut p2 = Vec::with_capacity(n_capture);
            for k in 1..=n_capture {
                rho = capture_step.apply(&rho);
                let t = windows.read_end + k as f64 * spec.sample_dt;
                hilbert::validate_state(&rho, t)?;
                let photons = hilbert::photon_populations(&rho, &space);
                times.push(t);
                p1.push(photons[1]);
                if space.n_max() >= 2 {
                    p2.push(photons[2]);
                }
            }
            let hi = windows.horizon + spec.sample_dt;
            let c1po = refined_max(&times, &p1, windows.read_end, hi)
                .ok_or_else(|| Error::Spec("empty capture window".into()))?;
            let c2po = (space.n_max() >= 2)
                .then(|| refined_max(&times, &p2, windows.read_end, hi))
                .flatten();
            Ok(TauPoint { tau_ps: tau, c1po, c2po })
        })
        .collect();
    results
}

fn sweep_tau_quapi(
    spec: &ProtocolSpec,
    sys: &SystemSpec,
    taus: &[f64],
    phonons: &PhononRun,
) -> Result<Vec<TauPoint>> {
    Ok(sweep_tau_phonon_grid(spec, sys, taus, std::slice::from_ref(phonons))?
        .pop()
        .expect("one bath in, one table out"))
}

/// Buffer-time sweeps for several phonon baths sharing the step size:
/// temperature studies build the per-step system propagators once, since
/// those do not depend on the bath.
pub fn sweep_tau_phonon_grid(
    spec: &ProtocolSpec,
    sys: &SystemSpec,
    taus: &[f64],
    baths: &[PhononRun],
) -> Result<Vec<Vec<TauPoint>>> {
    if baths.is_empty() {
        return Ok(Vec::new());
    }
    let dt = baths[0].config.dt;
    let accuracy = baths[0].config.accuracy;
    if baths
        .iter()
        .any(|b| b.config.dt != dt || b.config.accuracy != accuracy)
    {
        return Err(Error::Spec(
            "phonon-grid sweeps need a common dt and window accuracy".into(),
        ));
    }
    let sys_eff = spec.effective_sys(sys);
    let space = SpaceDescriptor::new(spec.n_max_effective())?;
    let channels = lindblad_channels(&space, &sys_eff)?;
    let opts = spec.integrator;
    let tau_split = split_threshold(spec)?;

    // One bath material per grid: the polaron counter-term must match for
    // the schedules to be shareable.
    let shift = polaron_shift(&baths[0].params)?;
    for bath in &baths[1..] {
        if (polaron_shift(&bath.params)? - shift).abs() > 1e-12 {
            return Err(Error::Spec(
                "phonon-grid sweeps need one bath material (equal polaron shifts)".into(),
            ));
        }
    }

    // Snap buffer times to the path-integral lattice.
    let taus_snapped: Vec<f64> = taus.iter().map(|t| (t / dt).round() * dt).collect();

    // Branch points on the step lattice; snapped τ below the overlap
    // threshold fall back to full runs.
    struct Branch {
        row: usize,
        tau: f64,
        k_start: usize,
    }
    let mut branches = Vec::new();
    let mut fallback_rows = Vec::new();
    for (row, &tau) in taus_snapped.iter().enumerate() {
        if tau < tau_split {
            fallback_rows.push((row, tau));
        } else {
            let windows = spec.windows(sys, tau)?;
            let k_start = (windows.read_start / dt).floor() as usize;
            branches.push(Branch { row, tau, k_start });
        }
    }

    // Shared schedules: the trunk through write and storage, and the
    // readout relative to the branch start. All branches see the same
    // readout windows because the snapped τ values shift the read pulse
    // by whole steps.
    let write_h = DrivenHamiltonian {
        space,
        sys: sys_eff,
        pulse: &spec.write_pulse,
    };
    let write_h = PolaronCompensated {
        inner: &write_h,
        space,
        shift,
    };
    let trunk_steps = branches.last().map(|b| b.k_start).unwrap_or(0);
    let trunk = QuapiSchedule::build_with_samples(
        &write_h,
        &channels,
        0.0,
        trunk_steps.max(1),
        &[],
        dt,
        accuracy,
        &opts,
    )?;

    let mut read_schedule: Option<(QuapiSchedule, usize, f64, f64)> = None;
    if let Some(first) = branches.first() {
        let windows = spec.windows(sys, first.tau)?;
        let read = spec.read_pulse(first.tau)?;
        let read_h = DrivenHamiltonian {
            space,
            sys: sys_eff,
            pulse: &read,
        };
        let read_h = PolaronCompensated {
            inner: &read_h,
            space,
            shift,
        };
        let k0 = first.k_start;
        let steps_total = ((windows.horizon - k0 as f64 * dt) / dt).ceil() as usize;
        let capture_from = ((windows.read_end - k0 as f64 * dt) / dt).ceil() as usize;
        let sampled: Vec<usize> = (capture_from..=steps_total).collect();
        // The schedule is built in absolute time of the first branch; the
        // replay below shifts it per branch by whole steps, which leaves
        // every window identical.
        let schedule = QuapiSchedule::build_with_samples(
            &read_h,
            &channels,
            k0 as f64 * dt,
            steps_total,
            &sampled,
            dt,
            accuracy,
            &opts,
        )?;
        read_schedule = Some((schedule, capture_from, windows.read_end, windows.horizon));
    }

    let mut tables = Vec::with_capacity(baths.len());
    for bath in baths {
        let eta = influence_coefficients(&bath.params, &bath.config)?;
        let mut engine = QuapiEngine::new(space, &bath.config, &eta)?;
        let rho0 = DensityMatrix::pure(space, Level::G, spec.initial_photons)?;
        engine.init(rho0.matrix());

        // March the shared trunk, snapshotting at each branch start.
        let mut snapshots: Vec<QuapiEngine> = Vec::new();
        let mut k_now = 0usize;
        for branch in &branches {
            while k_now < branch.k_start {
                let k = k_now + 1;
                engine.step(trunk.step_prop(k));
                k_now = k;
            }
            snapshots.push(engine.clone());
        }

        // Replay the readout schedule per branch, in parallel.
        let branch_refs: Vec<(usize, &Branch)> = branches.iter().enumerate().collect();
        let branch_rows: Result<Vec<(usize, TauPoint)>> = branch_refs
            .into_par_iter()
            .zip(snapshots.into_par_iter())
            .map(|((_, branch), mut engine)| -> Result<(usize, TauPoint)> {
                let (schedule, _, read_end, horizon) =
                    read_schedule.as_ref().expect("branches imply a read schedule");
                let shift = (branch.k_start as f64 - schedule.t_start() / dt) * dt;
                let mut p1 = Vec::new();
                let mut p2 = Vec::new();
                let mut times = Vec::new();
                for k in 1..=schedule.n_steps() {
                    engine.step(schedule.step_prop(k));
                    if let Some(half) = schedule.half_prop(k) {
                        let rho = engine.sample(half);
                        let t = schedule.t_start() + shift + k as f64 * dt;
                        let tr = crate::linalg::trace(&rho);
                        if (tr.re - 1.0).abs() > 1e-6 {
                            return Err(Error::Integration {
                                t_ps: t,
                                reason: format!("path-integral trace drifted to {tr}"),
                            });
                        }
                        let photons = hilbert::photon_populations(&rho, &space);
                        times.push(t);
                        p1.push(photons[1]);
                        if space.n_max() >= 2 {
                            p2.push(photons[2]);
                        }
                    }
                }
                let windows = spec.windows(sys, branch.tau)?;
                let _ = (read_end, horizon);
                let c1po = refined_max(&times, &p1, windows.read_end, windows.horizon + dt)
                    .ok_or_else(|| Error::Spec("empty capture window".into()))?;
                let c2po = (space.n_max() >= 2)
                    .then(|| refined_max(&times, &p2, windows.read_end, windows.horizon + dt))
                    .flatten();
                Ok((
                    branch.row,
                    TauPoint {
                        tau_ps: branch.tau,
                        c1po,
                        c2po,
                    },
                ))
            })
            .collect();
        let mut rows: Vec<(usize, TauPoint)> = branch_rows?;

        for &(row, tau) in &fallback_rows {
            let mut one = spec.clone();
            one.buffer_time = tau;
            one.phonons = Some(bath.clone());
            let res = run(&one, sys)?;
            rows.push((
                row,
                TauPoint {
                    tau_ps: tau,
                    c1po: res.c1po,
                    c2po: res.c2po,
                },
            ));
        }
        rows.sort_by_key(|(row, _)| *row);
        tables.push(rows.into_iter().map(|(_, point)| point).collect());
    }
    Ok(tables)
}

/// Protocol runs for several phonon configurations sharing a step size:
/// the propagator schedule is built once. Used by convergence studies.
pub fn run_phonon_grid(
    spec: &ProtocolSpec,
    sys: &SystemSpec,
    runs: &[PhononRun],
) -> Result<Vec<ProtocolResult>> {
    let mut results = Vec::with_capacity(runs.len());
    let mut schedules: Vec<((f64, WindowAccuracy, u64), QuapiSchedule)> = Vec::new();
    for phonons in runs {
        let mut one = spec.clone();
        one.phonons = Some(phonons.clone());
        one.validate(sys)?;
        let sys_eff = one.effective_sys(sys);
        let space = SpaceDescriptor::new(one.n_max_effective())?;
        let windows = one.windows(sys, one.buffer_time)?;
        let read = one.read_pulse(one.buffer_time)?;
        let sequence = PulseSpec::Sequence(vec![one.write_pulse.clone(), read]);
        let hamiltonian = DrivenHamiltonian {
            space,
            sys: sys_eff,
            pulse: &sequence,
        };
        let channels = lindblad_channels(&space, &sys_eff)?;
        let rho0 = DensityMatrix::pure(space, Level::G, one.initial_photons)?;
        let grid = protocol_grid(&windows, one.sample_dt, one.dt_max)?;

        let shift = polaron_shift(&phonons.params)?;
        let key = (phonons.config.dt, phonons.config.accuracy, shift.to_bits());
        if !schedules.iter().any(|(k, _)| *k == key) {
            let compensated = PolaronCompensated {
                inner: &hamiltonian,
                space,
                shift,
            };
            let schedule = QuapiSchedule::build(
                &compensated,
                &channels,
                &grid,
                phonons.config.dt,
                phonons.config.accuracy,
                &one.integrator,
            )?;
            schedules.push((key, schedule));
        }
        let schedule = &schedules.iter().find(|(k, _)| *k == key).unwrap().1;
        let series =
            quapi_evolve_scheduled(&rho0, schedule, &phonons.params, &phonons.config, &one.integrator)?;
        let (c1po, c2po, max_dark_after_write) =
            extract_metrics(&series, &windows, space.n_max())?;
        results.push(ProtocolResult {
            series,
            c1po,
            c2po,
            max_dark_after_write,
            windows,
        });
    }
    Ok(results)
}
