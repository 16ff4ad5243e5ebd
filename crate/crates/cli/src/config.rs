//! Experiment configuration: a single TOML file with flat dotted keys
//! (`model.kappa = 8.5`), fully validated — unknown keys are rejected.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use photon_buffer::analysis::GaussianGrid;
use photon_buffer::dynamics::IntegratorOptions;
use photon_buffer::model::{ModelParams, SystemSpec};
use photon_buffer::phonons::{PhononParams, QuapiConfig, WindowAccuracy};
use photon_buffer::protocol::{PhononRun, ProtocolSpec};
use photon_buffer::pulses::{designed_rect_write, gaussian_sigma_from_fwhm, PulseSpec};

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub system: SystemSection,
    pub protocol: ProtocolSection,
    pub quapi: QuapiSection,
    pub sweep: SweepSection,
    pub optimize: OptimizeSection,
    pub fit: FitSection,
    pub output: OutputSection,
}

/// Physical constants; unset keys fall back to the published values.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub j_e: Option<f64>,
    pub j_h: Option<f64>,
    pub delta_xd: Option<f64>,
    pub g_mn: Option<f64>,
    pub g_e: Option<f64>,
    pub hbar_g: Option<f64>,
    pub kappa: Option<f64>,
    pub gamma_x: Option<f64>,
    pub gamma_d: Option<f64>,
    pub d_e: Option<f64>,
    pub d_h: Option<f64>,
    pub rho_d: Option<f64>,
    pub c_s: Option<f64>,
    pub a_e: Option<f64>,
    pub a_ratio: Option<f64>,
    pub mn_position: Option<[f64; 3]>,
    pub box_dims: Option<[f64; 3]>,
    pub b_z: Option<f64>,
    pub hbar_detuning: Option<f64>,
    pub temperature: Option<f64>,
}

impl ModelSection {
    pub fn resolve(&self) -> ModelParams {
        let d = ModelParams::default();
        ModelParams {
            j_e: self.j_e.unwrap_or(d.j_e),
            j_h: self.j_h.unwrap_or(d.j_h),
            delta_xd: self.delta_xd.unwrap_or(d.delta_xd),
            g_mn: self.g_mn.unwrap_or(d.g_mn),
            g_e: self.g_e.unwrap_or(d.g_e),
            hbar_g: self.hbar_g.unwrap_or(d.hbar_g),
            kappa: self.kappa.unwrap_or(d.kappa),
            gamma_x: self.gamma_x.unwrap_or(d.gamma_x),
            gamma_d: self.gamma_d.unwrap_or(d.gamma_d),
            d_e: self.d_e.unwrap_or(d.d_e),
            d_h: self.d_h.unwrap_or(d.d_h),
            rho_d: self.rho_d.unwrap_or(d.rho_d),
            c_s: self.c_s.unwrap_or(d.c_s),
            a_e: self.a_e.unwrap_or(d.a_e),
            a_ratio: self.a_ratio.unwrap_or(d.a_ratio),
            mn_position: self.mn_position.unwrap_or(d.mn_position),
            box_dims: self.box_dims.unwrap_or(d.box_dims),
            b_z: self.b_z.unwrap_or(d.b_z),
            hbar_detuning: self.hbar_detuning.unwrap_or(d.hbar_detuning),
            temperature: self.temperature.unwrap_or(d.temperature),
        }
    }
}

/// Direct overrides of the effective Λ-system, for parameter studies that
/// set J and δ_eff instead of deriving them from the Mn position.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub flip_coupling: Option<f64>,
    pub delta_eff: Option<f64>,
}

impl SystemSection {
    pub fn resolve(&self, params: &ModelParams) -> anyhow::Result<SystemSpec> {
        let mut sys = SystemSpec::from_params(params)?;
        if let Some(j) = self.flip_coupling {
            sys.flip_coupling = j;
        }
        if let Some(delta) = self.delta_eff {
            sys.delta_eff = delta;
        }
        Ok(sys)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub initial_photons: usize,
    pub tau_ps: f64,
    pub losses: bool,
    pub phonons: bool,
    /// "rect" or "gauss".
    pub pulse: String,
    pub alpha_per_ps: f64,
    /// Gaussian pulse area in units of π.
    pub theta_pi: f64,
    pub fwhm_ps: f64,
    pub t0_ps: f64,
    pub horizon_ps: Option<f64>,
    pub n_max: Option<usize>,
    pub sample_dt_ps: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            initial_photons: 1,
            tau_ps: 23.5,
            losses: true,
            phonons: false,
            pulse: "rect".into(),
            alpha_per_ps: 10.0,
            theta_pi: 33.77,
            fwhm_ps: 7.14,
            t0_ps: 15.01,
            horizon_ps: None,
            n_max: None,
            sample_dt_ps: 0.05,
            rel_tol: 1e-9,
            abs_tol: 1e-11,
        }
    }
}

impl ProtocolSection {
    pub fn write_pulse(&self, sys: &SystemSpec) -> anyhow::Result<PulseSpec> {
        match self.pulse.as_str() {
            "rect" => Ok(designed_rect_write(sys, self.alpha_per_ps, self.initial_photons)?),
            "gauss" => Ok(PulseSpec::Gauss {
                theta: self.theta_pi * std::f64::consts::PI,
                sigma: gaussian_sigma_from_fwhm(self.fwhm_ps),
                t0: self.t0_ps,
            }),
            other => bail!("unknown pulse kind {other:?}; expected \"rect\" or \"gauss\""),
        }
    }

    pub fn resolve(
        &self,
        sys: &SystemSpec,
        params: &ModelParams,
        quapi: &QuapiSection,
    ) -> anyhow::Result<ProtocolSpec> {
        let spec = ProtocolSpec {
            initial_photons: self.initial_photons,
            write_pulse: self.write_pulse(sys)?,
            buffer_time: self.tau_ps,
            horizon: self.horizon_ps,
            include_losses: self.losses,
            phonons: self
                .phonons
                .then(|| quapi.resolve_run(params))
                .transpose()?,
            n_max: self.n_max,
            sample_dt: self.sample_dt_ps,
            dt_max: 0.5,
            integrator: IntegratorOptions {
                rel_tol: self.rel_tol,
                abs_tol: self.abs_tol,
                ..Default::default()
            },
        };
        Ok(spec)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuapiSection {
    pub dt_ps: f64,
    pub n_mem: usize,
    pub adm_bytes_cap: usize,
    /// "exact" or "midpoint".
    pub accuracy: String,
}

impl Default for QuapiSection {
    fn default() -> Self {
        let d = QuapiConfig::default();
        QuapiSection {
            dt_ps: d.dt,
            n_mem: d.n_mem,
            adm_bytes_cap: d.adm_bytes_cap,
            accuracy: "exact".into(),
        }
    }
}

impl QuapiSection {
    pub fn resolve(&self) -> anyhow::Result<QuapiConfig> {
        let accuracy = match self.accuracy.as_str() {
            "exact" => WindowAccuracy::Exact,
            "midpoint" => WindowAccuracy::Midpoint,
            other => bail!("unknown quapi accuracy {other:?}; expected \"exact\" or \"midpoint\""),
        };
        Ok(QuapiConfig {
            dt: self.dt_ps,
            n_mem: self.n_mem,
            adm_bytes_cap: self.adm_bytes_cap,
            accuracy,
        })
    }

    pub fn resolve_run(&self, params: &ModelParams) -> anyhow::Result<PhononRun> {
        Ok(PhononRun {
            params: PhononParams::from_model(params),
            config: self.resolve()?,
        })
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub tau_start_ps: f64,
    pub tau_stop_ps: f64,
    pub points: usize,
    /// Explicit grid; wins over start/stop/points when non-empty.
    pub values_ps: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            tau_start_ps: 0.0,
            tau_stop_ps: 100_000.0,
            points: 26,
            values_ps: Vec::new(),
        }
    }
}

impl SweepSection {
    pub fn grid(&self) -> anyhow::Result<Vec<f64>> {
        if !self.values_ps.is_empty() {
            return Ok(self.values_ps.clone());
        }
        if self.points < 2 || self.tau_stop_ps <= self.tau_start_ps {
            bail!("sweep needs points >= 2 and tau_stop_ps > tau_start_ps");
        }
        let n = self.points;
        Ok((0..n)
            .map(|k| {
                self.tau_start_ps
                    + (self.tau_stop_ps - self.tau_start_ps) * k as f64 / (n - 1) as f64
            })
            .collect())
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    /// Inclusive ranges [lo, hi] with point counts.
    pub theta_pi: [f64; 2],
    pub theta_points: usize,
    pub fwhm_ps: [f64; 2],
    pub fwhm_points: usize,
    pub t0_ps: [f64; 2],
    pub t0_points: usize,
    pub refine: usize,
    pub phonons: bool,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        OptimizeSection {
            theta_pi: [20.0, 45.0],
            theta_points: 7,
            fwhm_ps: [4.0, 10.0],
            fwhm_points: 7,
            t0_ps: [11.0, 19.0],
            t0_points: 7,
            refine: 2,
            phonons: false,
        }
    }
}

impl OptimizeSection {
    pub fn grid(&self) -> GaussianGrid {
        GaussianGrid::linear_fwhm(
            (
                self.theta_pi[0] * std::f64::consts::PI,
                self.theta_pi[1] * std::f64::consts::PI,
                self.theta_points,
            ),
            (self.fwhm_ps[0], self.fwhm_ps[1], self.fwhm_points),
            (self.t0_ps[0], self.t0_ps[1], self.t0_points),
        )
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub head_cutoff_ns: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

/// Load a config file (optional) and apply `--set key=value` overrides.
pub fn load(path: Option<&str>, sets: &[String]) -> anyhow::Result<ExperimentConfig> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config file {p}"))?;
            text.parse()
                .with_context(|| format!("parsing config file {p}"))?
        }
        None => toml::Table::new(),
    };
    for set in sets {
        let (key, value) = set
            .split_once('=')
            .with_context(|| format!("override {set:?} is not of the form key=value"))?;
        apply_override(&mut table, key.trim(), value.trim())
            .with_context(|| format!("applying override {set:?}"))?;
    }
    let config: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .context("validating configuration (unknown keys are rejected)")?;
    Ok(config)
}

fn apply_override(table: &mut toml::Table, dotted: &str, raw: &str) -> anyhow::Result<()> {
    // Parse the value through a one-line TOML document so numbers, arrays,
    // booleans, and strings all work.
    let parsed: toml::Table = format!("value = {raw}")
        .parse()
        .or_else(|_| format!("value = \"{raw}\"").parse())
        .context("parsing override value")?;
    let value = parsed.get("value").unwrap().clone();

    let mut parts = dotted.split('.').peekable();
    let mut current = table;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            current.insert(part.to_string(), value);
            return Ok(());
        }
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("key {part} is not a table"))?;
    }
    bail!("empty override key")
}
