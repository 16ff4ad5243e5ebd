//! Command implementations: derive, simulate, figure datasets, sweeps,
//! pulse optimization, and exponential fits.

use anyhow::{bail, Context};

use photon_buffer::analysis::{analytic_tau, fit_exponential, FitOptions, FitResult};
use photon_buffer::constants::HBAR_MEV_PS;
use photon_buffer::model::derive;
use photon_buffer::phonons::PhononParams;
use photon_buffer::protocol::{
    run, sweep_tau, sweep_tau_phonon_grid, PhononRun, TauPoint, WriteSettings,
};
use photon_buffer::pulses::{gaussian_fwhm, PulseSpec};

use crate::config::ExperimentConfig;
use crate::output::{sweep_rows, time_series_rows, OutputDir};

/// Head-cutoff rule for storage-decay fits: skip the residual-oscillation
/// band, three precession periods of the effective splitting.
fn default_head_cutoff_ns(delta_eff: f64) -> f64 {
    3.0 * 2.0 * std::f64::consts::PI * HBAR_MEV_PS / delta_eff * 1e-3
}

pub fn cmd_derive(config: &ExperimentConfig) -> anyhow::Result<()> {
    let params = config.model.resolve();
    let couplings = derive(&params)?;
    println!("j_e      = {:>12.6} meV", couplings.j_e_site);
    println!("j_h      = {:>12.6} meV", couplings.j_h_site);
    println!("J        = {:>12.6} meV", couplings.flip_coupling);
    println!("delta_eff = {:>11.6} meV", couplings.delta_eff);
    Ok(())
}

pub fn cmd_simulate(config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    let params = config.model.resolve();
    let sys = config.system.resolve(&params)?;
    let spec = config.protocol.resolve(&sys, &params, &config.quapi)?;
    let result = run(&spec, &sys)?;
    let read = spec
        .write_pulse
        .shifted(spec.write_pulse.read_shift(spec.buffer_time)?);
    let sequence = PulseSpec::Sequence(vec![spec.write_pulse.clone(), read]);
    let (header, rows) = time_series_rows(&result.series, &sequence);
    let path = out.write_csv("timeseries.csv", &header, &rows, &manifest_params(config))?;
    println!("wrote {}", path.display());
    println!(
        "c1po = {:.6}{}  max_dark_after_write = {:.6}",
        result.c1po,
        result
            .c2po
            .map(|c2| format!("  c2po = {c2:.6}"))
            .unwrap_or_default(),
        result.max_dark_after_write
    );
    Ok(())
}

pub fn cmd_sweep(config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    let params = config.model.resolve();
    let sys = config.system.resolve(&params)?;
    let spec = config.protocol.resolve(&sys, &params, &config.quapi)?;
    let taus = config.sweep.grid()?;
    let points = sweep_tau(&spec, &sys, &taus)?;
    let with_c2 = points.iter().all(|p| p.c2po.is_some());
    let header = if with_c2 {
        "tau_ns,c1po,c2po"
    } else {
        "tau_ns,c1po"
    };
    let path = out.write_csv(
        "sweep.csv",
        header,
        &sweep_rows(&points, None),
        &manifest_params(config),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_optimize_pulse(config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    let params = config.model.resolve();
    let sys = config.system.resolve(&params)?;
    let grid = config.optimize.grid();
    let settings = WriteSettings {
        initial_photons: config.protocol.initial_photons,
        include_losses: config.protocol.losses,
        phonons: config
            .optimize
            .phonons
            .then(|| config.quapi.resolve_run(&params))
            .transpose()?,
        n_max: config.protocol.n_max.unwrap_or(3),
        sample_dt: if config.optimize.phonons {
            config.quapi.dt_ps
        } else {
            0.02
        },
        integrator: Default::default(),
    };
    let best = photon_buffer::analysis::optimize_gaussian(
        &sys,
        &grid,
        &settings,
        config.optimize.refine,
    )?;
    println!(
        "optimum: theta = {:.4} pi, fwhm = {:.4} ps, t0 = {:.4} ps, dark occupation = {:.6}",
        best.theta / std::f64::consts::PI,
        gaussian_fwhm(best.sigma),
        best.t0,
        best.dark_occupation
    );
    let rows = vec![vec![
        best.theta / std::f64::consts::PI,
        gaussian_fwhm(best.sigma),
        best.t0,
        best.dark_occupation,
    ]];
    let path = out.write_csv(
        "optimize.csv",
        "theta_pi,fwhm_ps,t0_ps,dark_occupation",
        &rows,
        &manifest_params(config),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_fit(
    input: &str,
    column: &str,
    head_cutoff_ns: Option<f64>,
    out: &OutputDir,
) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {input}"))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty CSV")?;
    let columns: Vec<&str> = header.split(',').collect();
    let tau_idx = columns
        .iter()
        .position(|c| *c == "tau_ns")
        .with_context(|| format!("no tau_ns column in {:?}", columns))?;
    let val_idx = columns
        .iter()
        .position(|c| *c == column)
        .with_context(|| format!("no {column} column in {:?}", columns))?;
    let mut points = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            bail!(
                "row {} has {} fields, header has {}",
                k + 2,
                fields.len(),
                columns.len()
            );
        }
        let tau: f64 = fields[tau_idx].parse().context("parsing tau_ns")?;
        let value: f64 = fields[val_idx].parse().context("parsing value")?;
        points.push((tau, value));
    }
    let fit = fit_exponential(
        &points,
        &FitOptions {
            head_cutoff_ns,
            check_span: true,
        },
    )?;
    print_fit(&fit);
    let rows = vec![vec![fit.amplitude, fit.tau_star_ns, fit.rms]];
    let path = out.write_csv(
        "fit.csv",
        "c,tau_star_ns,rms",
        &rows,
        &format!("input = {input:?}\ncolumn = {column:?}\n"),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn print_fit(fit: &FitResult) {
    println!(
        "fit: c = {:.6}, tau* = {:.4} ns, rms = {:.3e}, points = {}{}",
        fit.amplitude,
        fit.tau_star_ns,
        fit.rms,
        fit.points_used,
        fit.head_cutoff_ns
            .map(|h| format!(", head cutoff {h:.4} ns"))
            .unwrap_or_default()
    );
}

/// Figure datasets. Each writes one CSV per curve plus manifests.
pub fn cmd_fig(name: &str, config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    match name {
        "fig2" => fig2(config, out),
        "fig3" => fig3(config, out),
        "fig4a" => fig4a(config, out),
        "fig4b" => fig4b(config, out),
        "fig4cd" => fig4cd(config, out),
        "fig5a" => fig5a(config, out),
        "fig5b" => fig5b(config, out),
        "fig6" => fig6(config, out),
        other => bail!(
            "unknown figure {other:?}; expected one of fig2, fig3, fig4a, fig4b, fig4cd, \
             fig5a, fig5b, fig6"
        ),
    }
}

/// The single-photon storage example: occupations against time for the
/// ideal and the lossy case at the published buffer time.
fn fig2(config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    let params = config.model.resolve();
    let mut sys = config.system.resolve(&params)?;
    sys.flip_coupling = config.system.flip_coupling.unwrap_or(0.25);
    sys.delta_eff = config.system.delta_eff.unwrap_or(1.85);
    let mut spec = config.protocol.resolve(&sys, &params, &config.quapi)?;
    for (name, losses) in [("fig2_ideal.csv", false), ("fig2_lossy.csv", true)] {
        spec.include_losses = losses;
        let result = run(&spec, &sys)?;
        let read = spec
            .write_pulse
            .shifted(spec.write_pulse.read_shift(spec.buffer_time)?);
        let sequence = PulseSpec::Sequence(vec![spec.write_pulse.clone(), read]);
        let (header, rows) = time_series_rows(&result.series, &sequence);
        let path = out.write_csv(name, &header, &rows, &manifest_params(config))?;
        println!("wrote {} (c1po = {:.6})", path.display(), result.c1po);
    }
    Ok(())
}

/// Captured occupation against buffer time for three flip-flop couplings.
fn fig3(config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    let params = config.model.resolve();
    let taus = config.sweep.grid()?;
    let mut rows = Vec::new();
    for j in [0.05, 0.25, 0.4] {
        let mut sys = config.system.resolve(&params)?;
        sys.flip_coupling = j;
        sys.delta_eff = config.system.delta_eff.unwrap_or(1.85);
        let spec = config.protocol.resolve(&sys, &params, &config.quapi)?;
        let points = sweep_tau(&spec, &sys, &taus)?;
        let fit = fit_storage_decay(&points, sys.delta_eff)?;
        println!("J = {j} meV: tau* = {:.2} ns, c = {:.4}", fit.tau_star_ns, fit.amplitude);
        rows.extend(sweep_rows(&points, Some(j)).into_iter().map(|r| r[..3].to_vec()));
    }
    let path = out.write_csv("fig3.csv", "J_meV,tau_ns,c1po", &rows, &manifest_params(config))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn fit_storage_decay(points: &[TauPoint], delta_eff: f64) -> anyhow::Result<FitResult> {
    let data: Vec<(f64, f64)> = points.iter().map(|p| (p.tau_ps * 1e-3, p.c1po)).collect();
    Ok(fit_exponential(
        &data,
        &FitOptions {
            head_cutoff_ns: Some(default_head_cutoff_ns(delta_eff)),
            check_span: true,
        },
    )?)
}

/// Storage decay time against the effective splitting, with the analytic
/// prediction alongside.
fn fig4a(config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    let params = config.model.resolve();
    let taus = config.sweep.grid()?;
    let mut rows = Vec::new();
    for k in 0..9 {
        let delta = 1.0 + 0.25 * k as f64;
        let mut sys = config.system.resolve(&params)?;
        sys.flip_coupling = config.system.flip_coupling.unwrap_or(0.25);
        sys.delta_eff = delta;
        let spec = config.protocol.resolve(&sys, &params, &config.quapi)?;
        let points = sweep_tau(&spec, &sys, &taus)?;
        let fit = fit_storage_decay(&points, delta)?;
        let analytic = analytic_tau(sys.flip_coupling, delta, sys.gamma_x, sys.gamma_d)?;
        println!(
            "delta_eff = {delta} meV: tau* = {:.2} ns (analytic {:.2} ns)",
            fit.tau_star_ns, analytic
        );
        rows.push(vec![delta, fit.tau_star_ns, fit.amplitude, analytic]);
    }
    let path = out.write_csv(
        "fig4a.csv",
        "delta_eff_meV,tau_star_ns,c_fit,analytic_tau_ns",
        &rows,
        &manifest_params(config),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Write/readout losses: captured occupation at zero buffer time against
/// the effective splitting.
fn fig4b(config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    let params = config.model.resolve();
    let mut rows = Vec::new();
    for k in 0..9 {
        let delta = 1.0 + 0.25 * k as f64;
        let mut sys = config.system.resolve(&params)?;
        sys.flip_coupling = config.system.flip_coupling.unwrap_or(0.25);
        sys.delta_eff = delta;
        let mut spec = config.protocol.resolve(&sys, &params, &config.quapi)?;
        spec.buffer_time = 0.0;
        let result = run(&spec, &sys)?;
        println!("delta_eff = {delta} meV: c1po(0) = {:.4}", result.c1po);
        rows.push(vec![delta, result.c1po]);
    }
    let path = out.write_csv(
        "fig4b.csv",
        "delta_eff_meV,c1po_tau0",
        &rows,
        &manifest_params(config),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Temperature dependence of the storage decay with phonons; the
/// long-running dataset.
fn fig4cd(config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    println!("note: fig4cd runs the path integral per temperature; expect tens of minutes");
    let params = config.model.resolve();
    let mut sys = config.system.resolve(&params)?;
    sys.flip_coupling = config.system.flip_coupling.unwrap_or(0.25);
    sys.delta_eff = config.system.delta_eff.unwrap_or(0.95);
    let mut spec = config.protocol.resolve(&sys, &params, &config.quapi)?;
    spec.n_max = Some(spec.n_max.unwrap_or(2));

    let temperatures = [4.0, 20.0, 50.0, 77.0];
    let baths: Vec<PhononRun> = temperatures
        .iter()
        .map(|&temperature| -> anyhow::Result<PhononRun> {
            let p = PhononParams {
                temperature,
                ..PhononParams::from_model(&params)
            };
            Ok(PhononRun {
                params: p,
                config: config.quapi.resolve()?,
            })
        })
        .collect::<anyhow::Result<_>>()?;

    let taus = config.sweep.grid()?;
    spec.phonons = Some(baths[0].clone());
    let tables = sweep_tau_phonon_grid(&spec, &sys, &taus, &baths)?;

    let mut rows = Vec::new();
    for (temperature, points) in temperatures.iter().zip(&tables) {
        let fit = fit_storage_decay(points, sys.delta_eff)?;
        // Zero-buffer capture needs its own merged-pulse run.
        let mut zero = spec.clone();
        zero.buffer_time = 0.0;
        zero.phonons = Some(PhononRun {
            params: PhononParams {
                temperature: *temperature,
                ..PhononParams::from_model(&params)
            },
            config: config.quapi.resolve()?,
        });
        let c1po_zero = run(&zero, &sys)?.c1po;
        println!(
            "T = {temperature} K: tau* = {:.2} ns, c1po(0) = {:.4}",
            fit.tau_star_ns, c1po_zero
        );
        rows.push(vec![*temperature, fit.tau_star_ns, c1po_zero]);
    }
    let path = out.write_csv(
        "fig4cd.csv",
        "temperature_K,tau_star_ns,c1po_tau0",
        &rows,
        &manifest_params(config),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Two-photon initial state: occupations against time.
fn fig5a(config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    let params = config.model.resolve();
    let mut sys = config.system.resolve(&params)?;
    sys.flip_coupling = config.system.flip_coupling.unwrap_or(0.25);
    sys.delta_eff = config.system.delta_eff.unwrap_or(0.95);
    let mut section = config.protocol.clone();
    section.initial_photons = 2;
    section.tau_ps = 15.5;
    let mut spec = section.resolve(&sys, &params, &config.quapi)?;
    for (name, losses) in [("fig5a_ideal.csv", false), ("fig5a_lossy.csv", true)] {
        spec.include_losses = losses;
        let result = run(&spec, &sys)?;
        let read = spec
            .write_pulse
            .shifted(spec.write_pulse.read_shift(spec.buffer_time)?);
        let sequence = PulseSpec::Sequence(vec![spec.write_pulse.clone(), read]);
        let (header, rows) = time_series_rows(&result.series, &sequence);
        let path = out.write_csv(name, &header, &rows, &manifest_params(config))?;
        println!("wrote {} (c2po = {:?})", path.display(), result.c2po);
    }
    Ok(())
}

/// Captured one- and two-photon occupations against buffer time for the
/// two-photon initial state. Phonons on by default as published; disable
/// with protocol.phonons = false for the quick variant.
fn fig5b(config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    let params = config.model.resolve();
    let mut sys = config.system.resolve(&params)?;
    sys.flip_coupling = config.system.flip_coupling.unwrap_or(0.25);
    sys.delta_eff = config.system.delta_eff.unwrap_or(0.95);
    let mut section = config.protocol.clone();
    section.initial_photons = 2;
    if section.phonons {
        println!("note: fig5b with phonons runs the path integral; expect tens of minutes");
    }
    let spec = section.resolve(&sys, &params, &config.quapi)?;
    let taus = config.sweep.grid()?;
    let points = sweep_tau(&spec, &sys, &taus)?;
    let path = out.write_csv(
        "fig5b.csv",
        "tau_ns,c1po,c2po",
        &sweep_rows(&points, None),
        &manifest_params(config),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Pulse-shape comparison: maximum dark occupation after the write pulse
/// for rectangular and grid-optimized Gaussian envelopes against
/// temperature. Long-running with phonons.
fn fig6(config: &ExperimentConfig, out: &OutputDir) -> anyhow::Result<()> {
    println!("note: fig6 optimizes Gaussian pulses per temperature; expect tens of minutes");
    let params = config.model.resolve();
    let mut sys = config.system.resolve(&params)?;
    sys.flip_coupling = config.system.flip_coupling.unwrap_or(0.25);
    sys.delta_eff = config.system.delta_eff.unwrap_or(0.95);
    let rect = photon_buffer::pulses::designed_rect_write(
        &sys,
        config.protocol.alpha_per_ps,
        config.protocol.initial_photons,
    )?;
    let mut quapi = config.quapi.resolve()?;
    // Gaussian envelopes have no stationary stretch; midpoint windows keep
    // the per-candidate cost workable at the same Trotter order.
    quapi.accuracy = photon_buffer::phonons::WindowAccuracy::Midpoint;

    let mut rows = Vec::new();
    for temperature in [4.0, 10.0, 20.0, 30.0] {
        let bath = PhononParams {
            temperature,
            ..PhononParams::from_model(&params)
        };
        let settings = WriteSettings {
            initial_photons: config.protocol.initial_photons,
            include_losses: config.protocol.losses,
            phonons: Some(PhononRun {
                params: bath,
                config: quapi,
            }),
            n_max: 2,
            sample_dt: quapi.dt,
            integrator: Default::default(),
        };
        let dark_rect =
            photon_buffer::protocol::dark_occupation_after_write(&rect, &sys, &settings)?;
        let best = photon_buffer::analysis::optimize_gaussian(
            &sys,
            &config.optimize.grid(),
            &settings,
            config.optimize.refine,
        )?;
        println!(
            "T = {temperature} K: rect = {:.4}, gauss = {:.4} (theta = {:.2} pi, fwhm = {:.2} ps, t0 = {:.2} ps)",
            dark_rect,
            best.dark_occupation,
            best.theta / std::f64::consts::PI,
            gaussian_fwhm(best.sigma),
            best.t0
        );
        rows.push(vec![
            temperature,
            dark_rect,
            best.dark_occupation,
            best.theta / std::f64::consts::PI,
            gaussian_fwhm(best.sigma),
            best.t0,
        ]);
    }
    let path = out.write_csv(
        "fig6.csv",
        "temperature_K,dark_rect,dark_gauss,theta_opt_pi,fwhm_opt_ps,t0_opt_ps",
        &rows,
        &manifest_params(config),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Resolved parameter snapshot for the manifest.
pub fn manifest_params(config: &ExperimentConfig) -> String {
    let resolved = toml::to_string_pretty(config).unwrap_or_default();
    let params = config.model.resolve();
    let derived = derive(&params)
        .map(|d| {
            format!(
                "derived_j_meV = {}\nderived_delta_eff_meV = {}\n",
                d.flip_coupling, d.delta_eff
            )
        })
        .unwrap_or_default();
    format!("{derived}\n{resolved}")
}
