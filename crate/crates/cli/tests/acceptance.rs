//! Acceptance suite: every published claim the toolkit must reproduce,
//! one test per criterion, each printing a PASS line with the measured
//! values. Thresholds and tolerances are pinned here.
//!
//! Run with `cargo test -p photon-buffer-cli --test acceptance`; the
//! phonon criterion takes tens of minutes, everything else minutes.

use std::process::Command;

use photon_buffer::analysis::{
    analytic_tau, dark_eigenstate, fit_exponential, optimize_gaussian, storage_hamiltonian,
    FitOptions, GaussianGrid,
};
use photon_buffer::constants::{per_ns_to_per_ps, HBAR_MEV_PS};
use photon_buffer::dynamics::{evolve, IntegratorOptions, TimeGrid};
use photon_buffer::hilbert::{self, DensityMatrix, Level, SpaceDescriptor};
use photon_buffer::linalg;
use photon_buffer::model::{
    lindblad_channels, rotating_frame_hamiltonian, ConstantHamiltonian, ModelParams, SystemSpec,
};
use photon_buffer::phonons::{PhononParams, QuapiConfig};
use photon_buffer::protocol::{
    dark_occupation_after_write, run, run_phonon_grid, sweep_tau, sweep_tau_phonon_grid,
    PhononRun, ProtocolSpec, TauPoint, WriteSettings,
};
use photon_buffer::pulses::designed_rect_write;

/// The effective system of the published parameter studies: Table-1 rates
/// with the flip-flop coupling and splitting set directly.
fn study_system(flip_coupling: f64, delta_eff: f64) -> SystemSpec {
    let mut sys = SystemSpec::from_params(&ModelParams::default()).unwrap();
    sys.flip_coupling = flip_coupling;
    sys.delta_eff = delta_eff;
    sys
}

/// Sweep tolerances: integration at 1e-7 is plenty for percent-level
/// acceptance bands and keeps the suite fast on one core.
fn sweep_spec(sys: &SystemSpec) -> ProtocolSpec {
    let mut spec = ProtocolSpec::designed(sys, 0.0).unwrap();
    spec.integrator.rel_tol = 1e-7;
    spec.integrator.abs_tol = 1e-9;
    spec
}

/// Head cutoff for storage-decay fits: three precession periods.
fn head_cutoff_ns(delta_eff: f64) -> f64 {
    3.0 * 2.0 * std::f64::consts::PI * HBAR_MEV_PS / delta_eff * 1e-3
}

fn fit_c1po(points: &[TauPoint], delta_eff: f64) -> photon_buffer::analysis::FitResult {
    let data: Vec<(f64, f64)> = points.iter().map(|p| (p.tau_ps * 1e-3, p.c1po)).collect();
    fit_exponential(
        &data,
        &FitOptions {
            head_cutoff_ns: Some(head_cutoff_ns(delta_eff)),
            check_span: true,
        },
    )
    .unwrap()
}

fn tau_grid_ns(stop_ns: f64, points: usize) -> Vec<f64> {
    (1..=points).map(|k| stop_ns * 1e3 * k as f64 / points as f64).collect()
}

#[test]
fn criterion_01_derived_couplings() {
    // J = 0.25 meV within 2 %, delta_eff = 1.85 meV within 1 %, from the
    // Table-1 defaults, through the installed binary.
    let output = Command::new(env!("CARGO_BIN_EXE_photon-buffer"))
        .arg("derive")
        .output()
        .expect("running the derive command");
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    let grab = |key: &str| -> f64 {
        text.lines()
            .find(|l| l.starts_with(key))
            .unwrap_or_else(|| panic!("no {key} line in {text}"))
            .split('=')
            .nth(1)
            .unwrap()
            .trim()
            .trim_end_matches(" meV")
            .parse()
            .unwrap()
    };
    let j = grab("J");
    let delta = grab("delta_eff");
    assert!((j - 0.25).abs() / 0.25 < 0.02, "J = {j}");
    assert!((delta - 1.85).abs() / 1.85 < 0.01, "delta_eff = {delta}");
    println!("criterion 1 PASS: J = {j} meV (0.25 ± 2 %), delta_eff = {delta} meV (1.85 ± 1 %)");
}

#[test]
fn criterion_02_ideal_protocol_fidelity() {
    // Phonon-free, loss-free run at tau = 23.5 ps captures >= 99.9 % of
    // the photon (published: 99.95 %).
    let sys = study_system(0.25, 1.85);
    let mut spec = ProtocolSpec::designed(&sys, 23.5).unwrap();
    spec.include_losses = false;
    let res = run(&spec, &sys).unwrap();
    assert!(res.c1po >= 0.999, "ideal C1PO = {}", res.c1po);
    println!("criterion 2 PASS: ideal C1PO(23.5 ps) = {:.5} >= 0.999", res.c1po);
}

#[test]
fn criterion_03_fitted_decay_times() {
    // Lossy, phonon-free tau sweeps: tau* = 45.8 ns ± 10 % at J = 0.25 meV
    // and 95.8 ns ± 10 % at J = 0.05 meV.
    let taus = tau_grid_ns(100.0, 26);
    for (j, expect) in [(0.25, 45.8), (0.05, 95.8)] {
        let sys = study_system(j, 1.85);
        let spec = sweep_spec(&sys);
        let points = sweep_tau(&spec, &sys, &taus).unwrap();
        let fit = fit_c1po(&points, sys.delta_eff);
        assert!(
            (fit.tau_star_ns - expect).abs() / expect < 0.10,
            "J = {j}: tau* = {} vs {expect}",
            fit.tau_star_ns
        );
        println!(
            "criterion 3 PASS: J = {j} meV -> tau* = {:.2} ns ({expect} ± 10 %)",
            fit.tau_star_ns
        );
    }
}

#[test]
fn criterion_04_analytic_numeric_agreement() {
    // Analytic decay time against the fitted one, within 10 % across the
    // splitting grid; and the intrinsic dark lifetime at J -> 0, exactly.
    let taus = tau_grid_ns(100.0, 26);
    for delta in [1.0, 1.5, 1.85, 2.5, 3.0] {
        let sys = study_system(0.25, delta);
        let spec = sweep_spec(&sys);
        let points = sweep_tau(&spec, &sys, &taus).unwrap();
        let fit = fit_c1po(&points, delta);
        let analytic = analytic_tau(0.25, delta, sys.gamma_x, sys.gamma_d).unwrap();
        let rel = (analytic - fit.tau_star_ns).abs() / fit.tau_star_ns;
        assert!(
            rel < 0.10,
            "delta_eff = {delta}: fitted {} vs analytic {analytic}",
            fit.tau_star_ns
        );
        println!(
            "criterion 4 PASS: delta_eff = {delta} meV -> fitted {:.2} ns, analytic {:.2} ns ({:.1} %)",
            fit.tau_star_ns,
            analytic,
            rel * 100.0
        );
    }
    let limit = analytic_tau(0.0, 1.85, 2.4, 0.01).unwrap();
    assert_eq!(limit, 100.0);
    println!("criterion 4 PASS: analytic_tau(J -> 0) = {limit} ns exactly");
}

#[test]
fn criterion_05_write_read_loss_band() {
    // Merged-pulse capture at tau = 0 within [0.80, 0.90] across the
    // splitting grid: write/readout losses of 10-20 %.
    for delta in [1.0, 1.5, 1.85, 2.5, 3.0] {
        let sys = study_system(0.25, delta);
        let mut spec = sweep_spec(&sys);
        spec.buffer_time = 0.0;
        let res = run(&spec, &sys).unwrap();
        assert!(
            (0.80..=0.90).contains(&res.c1po),
            "delta_eff = {delta}: C1PO(0) = {}",
            res.c1po
        );
        println!(
            "criterion 5 PASS: delta_eff = {delta} meV -> C1PO(0) = {:.4} in [0.80, 0.90]",
            res.c1po
        );
    }
}

#[test]
fn criterion_06_two_photon_storage() {
    // Initial |G,2>: the captured 2-photon occupation decays at the cavity
    // rate (kappa ± 5 %), the 1-photon occupation on the dark-state scale
    // (tau* in [10, 40] ns) at delta_eff = 0.95 meV, J = 0.25 meV.
    let sys = study_system(0.25, 0.95);
    let mut spec = sweep_spec(&sys);
    spec.initial_photons = 2;
    spec.write_pulse = designed_rect_write(&sys, 10.0, 2).unwrap();

    // C2PO: sample commensurately with the dark-bright precession so the
    // retrieval oscillation hits the same phase at every point, and skip
    // one cavity lifetime of unstored-remnant transient.
    let t_prec = 2.0 * std::f64::consts::PI * HBAR_MEV_PS
        / (sys.delta_eff.powi(2) + sys.flip_coupling.powi(2)).sqrt();
    let taus: Vec<f64> = (1..=30).map(|k| 6.0 * t_prec * k as f64).collect();
    let points = sweep_tau(&spec, &sys, &taus).unwrap();
    let c2: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.tau_ps * 1e-3, p.c2po.unwrap()))
        .collect();
    let fit = fit_exponential(
        &c2,
        &FitOptions {
            head_cutoff_ns: Some(0.1),
            check_span: true,
        },
    )
    .unwrap();
    let rate = 1.0 / fit.tau_star_ns;
    assert!(
        (rate - 8.5).abs() / 8.5 < 0.05,
        "C2PO rate = {rate} ns^-1 vs kappa = 8.5"
    );
    println!("criterion 6 PASS: C2PO decay rate = {rate:.3} ns^-1 (kappa = 8.5 ± 5 %)");

    // C1PO: the stored photon's dark-state lifetime.
    let taus = tau_grid_ns(20.0, 26);
    let points = sweep_tau(&spec, &sys, &taus).unwrap();
    let fit = fit_c1po(&points, sys.delta_eff);
    assert!(
        (10.0..=40.0).contains(&fit.tau_star_ns),
        "C1PO tau* = {}",
        fit.tau_star_ns
    );
    println!(
        "criterion 6 PASS: two-photon C1PO tau* = {:.2} ns in [10, 40] ns",
        fit.tau_star_ns
    );
}

#[test]
fn criterion_07_integrator_properties() {
    // Vacuum-Rabi closed form to 1e-6; cavity-only decay to 1e-4; trace,
    // Hermiticity, and positivity monitored on a driven lossy run.
    let mut sys = study_system(0.25, 1.85).lossless();
    sys.flip_coupling = 0.0;
    let space = SpaceDescriptor::new(1).unwrap();
    let h = ConstantHamiltonian(rotating_frame_hamiltonian(&space, &sys, 0.0));
    let rho0 = DensityMatrix::pure(space, Level::G, 1).unwrap();
    let grid = TimeGrid::uniform(0.0, 20.7, 0.1, 0.5).unwrap();
    let series = evolve(&rho0, &h, &[], &grid, &IntegratorOptions::default()).unwrap();
    let g = sys.vacuum_rabi_frequency();
    let mut worst: f64 = 0.0;
    for (k, &t) in series.times.iter().enumerate() {
        worst = worst.max((series.pop_x[k] - (g * t).sin().powi(2)).abs());
    }
    assert!(worst < 1e-6, "vacuum Rabi deviation {worst}");
    println!("criterion 7 PASS: vacuum-Rabi closed form matched to {worst:.2e} (< 1e-6)");

    let kappa = 8.5;
    let channels = vec![(hilbert::annihilation(&space), kappa)];
    let zero = ConstantHamiltonian(ndarray::Array2::zeros((space.dim(), space.dim())));
    let grid = TimeGrid::uniform(0.0, 118.0, 1.0, 1.0).unwrap();
    let series = evolve(&rho0, &zero, &channels, &grid, &IntegratorOptions::default()).unwrap();
    let mut worst: f64 = 0.0;
    for (k, &t) in series.times.iter().enumerate() {
        worst = worst.max((series.photon[1][k] - (-per_ns_to_per_ps(kappa) * t).exp()).abs());
    }
    assert!(worst < 1e-4, "cavity decay deviation {worst}");
    println!("criterion 7 PASS: kappa-only decay matched to {worst:.2e} (< 1e-4)");

    // State-validity monitors run inside evolve() at every sample of every
    // run in this suite; a lossy driven protocol run exercises them here.
    let sys = study_system(0.25, 1.85);
    let spec = ProtocolSpec::designed(&sys, 23.5).unwrap();
    let res = run(&spec, &sys).unwrap();
    assert!(res.c1po > 0.0);
    println!("criterion 7 PASS: trace/Hermiticity/positivity monitors clean on the lossy run");
}

#[test]
fn criterion_08_phonon_module_properties() {
    let params = ModelParams::default();
    let sys = study_system(0.25, 0.95);

    // (a) Zero coupling: the path integral reduces to the master equation
    // within 1e-6 on the storage example at dt = 0.05 ps.
    let bath_off = PhononParams {
        d_e: 0.0,
        d_h: 0.0,
        ..PhononParams::from_model(&params)
    };
    let mut spec = ProtocolSpec::designed(&sys, 23.5).unwrap();
    spec.n_max = Some(2);
    spec.phonons = Some(PhononRun {
        params: bath_off,
        config: QuapiConfig {
            dt: 0.05,
            n_mem: 2,
            ..Default::default()
        },
    });
    let quapi_run = run(&spec, &sys).unwrap();
    spec.phonons = None;
    let direct_run = run(&spec, &sys).unwrap();
    // Compare occupations on the common sample times.
    let mut worst: f64 = 0.0;
    let mut matched = 0usize;
    for (k, &t) in quapi_run.series.times.iter().enumerate() {
        let Some(di) = direct_run
            .series
            .times
            .iter()
            .position(|&td| (td - t).abs() < 1e-9)
        else {
            continue;
        };
        matched += 1;
        worst = worst
            .max((quapi_run.series.pop_g[k] - direct_run.series.pop_g[di]).abs())
            .max((quapi_run.series.pop_x[k] - direct_run.series.pop_x[di]).abs())
            .max((quapi_run.series.pop_d[k] - direct_run.series.pop_d[di]).abs())
            .max((quapi_run.series.photon[1][k] - direct_run.series.photon[1][di]).abs());
    }
    assert!(matched > 100, "only {matched} common sample times");
    assert!(worst < 1e-6, "zero-coupling deviation {worst}");
    println!("criterion 8a PASS: zero-coupling path integral matches Lindblad to {worst:.2e}");

    // (b) Convergence at T = 4 K: doubling the memory and halving the step
    // (at fixed memory time) each move C1PO by less than 1e-3.
    let bath = PhononParams {
        temperature: 4.0,
        ..PhononParams::from_model(&params)
    };
    let mut probe = ProtocolSpec::designed(&sys, 23.5).unwrap();
    probe.n_max = Some(2);
    probe.integrator.rel_tol = 1e-8;
    probe.integrator.abs_tol = 1e-10;
    let configs = [(0.5, 4), (0.5, 8), (0.25, 8)];
    let runs: Vec<PhononRun> = configs
        .iter()
        .map(|&(dt, n_mem)| PhononRun {
            params: bath,
            config: QuapiConfig {
                dt,
                n_mem,
                ..Default::default()
            },
        })
        .collect();
    let results = run_phonon_grid(&probe, &sys, &runs).unwrap();
    let base = results[0].c1po;
    let doubled_mem = results[1].c1po;
    let halved_dt = results[2].c1po;
    assert!(
        (doubled_mem - base).abs() < 1e-3,
        "n_mem doubling moved C1PO by {}",
        (doubled_mem - base).abs()
    );
    assert!(
        (halved_dt - doubled_mem).abs() < 1e-3,
        "dt halving moved C1PO by {}",
        (halved_dt - doubled_mem).abs()
    );
    println!(
        "criterion 8b PASS: C1PO = {base:.5}; n_mem doubling moves it {:.1e}, dt halving {:.1e} (< 1e-3)",
        (doubled_mem - base).abs(),
        (halved_dt - doubled_mem).abs()
    );

    // (c) + (d): fitted decay times strictly decreasing in temperature,
    // and the 4 K value within 15 % of the phonon-free one.
    let mut storage = sweep_spec(&sys);
    storage.n_max = Some(2);
    let taus: Vec<f64> = (1..=26).map(|k| 400.0 * k as f64).collect();
    let baths: Vec<PhononRun> = [4.0, 20.0, 50.0, 77.0]
        .iter()
        .map(|&temperature| PhononRun {
            params: PhononParams {
                temperature,
                ..PhononParams::from_model(&params)
            },
            config: QuapiConfig {
                dt: 0.5,
                n_mem: 4,
                ..Default::default()
            },
        })
        .collect();
    storage.phonons = Some(baths[0].clone());
    let tables = sweep_tau_phonon_grid(&storage, &sys, &taus, &baths).unwrap();
    let mut fitted = Vec::new();
    for (bath, points) in baths.iter().zip(&tables) {
        let fit = fit_c1po(points, sys.delta_eff);
        println!(
            "criterion 8c: T = {:>2} K -> tau* = {:.2} ns",
            bath.params.temperature, fit.tau_star_ns
        );
        fitted.push(fit.tau_star_ns);
    }
    for pair in fitted.windows(2) {
        assert!(pair[1] < pair[0], "tau*(T) not strictly decreasing: {fitted:?}");
    }
    println!("criterion 8c PASS: tau*(T) strictly decreasing over 4, 20, 50, 77 K");

    storage.phonons = None;
    let free_points = sweep_tau(&storage, &sys, &taus).unwrap();
    let free = fit_c1po(&free_points, sys.delta_eff).tau_star_ns;
    let rel = (fitted[0] - free).abs() / free;
    assert!(rel < 0.15, "tau*(4 K) = {} vs phonon-free {free}", fitted[0]);
    println!(
        "criterion 8d PASS: tau*(4 K) = {:.2} ns within {:.1} % of phonon-free {free:.2} ns (< 15 %)",
        fitted[0],
        rel * 100.0
    );
}

#[test]
fn criterion_09_pulse_shape_comparison() {
    // Phonon-free: the designed rectangular pulse prepares the dark state
    // at least as well as the best Gaussian, within 10 percentage points.
    let sys = study_system(0.25, 0.95);
    let rect = designed_rect_write(&sys, 10.0, 1).unwrap();
    let settings = WriteSettings::default();
    let dark_rect = dark_occupation_after_write(&rect, &sys, &settings).unwrap();

    let grid = GaussianGrid::linear_fwhm(
        (20.0 * std::f64::consts::PI, 45.0 * std::f64::consts::PI, 6),
        (4.0, 10.0, 6),
        (11.0, 19.0, 5),
    );
    let best = optimize_gaussian(&sys, &grid, &settings, 2).unwrap();
    assert!(
        dark_rect >= best.dark_occupation,
        "rect {dark_rect} vs gauss {}",
        best.dark_occupation
    );
    assert!(
        dark_rect - best.dark_occupation <= 0.10,
        "gap = {}",
        dark_rect - best.dark_occupation
    );
    println!(
        "criterion 9 PASS: rect dark occupation {dark_rect:.4} >= gauss {:.4}, gap {:.1} pp (<= 10)",
        best.dark_occupation,
        (dark_rect - best.dark_occupation) * 100.0
    );
}

#[test]
fn criterion_09_stretch_gaussian_optimum_with_phonons() {
    // Stretch, non-gating: with phonons at 4 K, a grid bracketing the
    // published optimum (theta = 33.77 pi, FWHM = 7.14 ps, t0 = 15.01 ps)
    // should find its maximum within one cell of it. A miss is reported,
    // not failed.
    let params = ModelParams::default();
    let sys = study_system(0.25, 0.95);
    let bath = PhononParams {
        temperature: 4.0,
        ..PhononParams::from_model(&params)
    };
    let quapi = QuapiConfig {
        dt: 0.5,
        n_mem: 4,
        accuracy: photon_buffer::phonons::WindowAccuracy::Midpoint,
        ..Default::default()
    };
    let settings = WriteSettings {
        phonons: Some(PhononRun {
            params: bath,
            config: quapi,
        }),
        n_max: 2,
        sample_dt: 0.5,
        ..Default::default()
    };
    let grid = GaussianGrid::linear_fwhm(
        (30.0 * std::f64::consts::PI, 38.0 * std::f64::consts::PI, 5),
        (5.0, 9.0, 5),
        (13.0, 17.0, 5),
    );
    let best = optimize_gaussian(&sys, &grid, &settings, 0).unwrap();
    let theta_pi = best.theta / std::f64::consts::PI;
    let fwhm = photon_buffer::pulses::gaussian_fwhm(best.sigma);
    // One grid cell: 2 pi in theta, 1 ps in FWHM and t0.
    let hit = (theta_pi - 33.77).abs() <= 2.0
        && (fwhm - 7.14).abs() <= 1.0
        && (best.t0 - 15.01).abs() <= 1.0;
    println!(
        "criterion 9 stretch {}: optimum theta = {theta_pi:.2} pi, FWHM = {fwhm:.2} ps, \
         t0 = {:.2} ps, dark = {:.4} (published: 33.77 pi, 7.14 ps, 15.01 ps)",
        if hit { "PASS" } else { "MISS (non-gating)" },
        best.t0,
        best.dark_occupation
    );
}

#[test]
fn criterion_10_appendix_oracle() {
    // Closed-form storage eigenstate against a brute-force eigensolve of
    // the 3x3 storage Hamiltonian, to 1e-3 in the amplitudes.
    let closed = dark_eigenstate(0.25, 1.85, 2.4, 0.01).unwrap();
    let (evals, evecs) = linalg::hermitian_eigen(&storage_hamiltonian(0.25, 1.85, 0.1));
    let anchor = evecs[[0, 0]];
    let phase = anchor / num_complex::Complex64::new(anchor.norm(), 0.0);
    let v_d = (evecs[[0, 0]] / phase).re;
    let v_x = (evecs[[1, 0]] / phase).re;
    assert!((v_d - closed.c_d).abs() < 1e-3, "c_d {} vs {v_d}", closed.c_d);
    assert!((v_x - closed.c_x).abs() < 1e-3, "c_x {} vs {v_x}", closed.c_x);
    assert!((evals[0] - closed.energy).abs() < 1e-3);
    println!(
        "criterion 10 PASS: (c_D, c_X) = ({:.5}, {:.5}) vs eigensolve ({v_d:.5}, {v_x:.5}), \
         E_d = {:.5} meV vs {:.5} meV",
        closed.c_d, closed.c_x, closed.energy, evals[0]
    );
}
