//! CSV and run-manifest writers. Column labels carry units; numeric
//! formatting is the shortest round-trip form, so identical configs
//! produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use photon_buffer::dynamics::TimeSeries;
use photon_buffer::protocol::TauPoint;
use photon_buffer::pulses::PulseSpec;

pub struct OutputDir {
    dir: PathBuf,
    command: String,
}

/// The documented buffer-time endpoint convention, recorded with every
/// dataset because the published protocol does not define it.
pub const TAU_CONVENTION: &str = "rect: tau is the gap between the write plateau end and the \
     read plateau start (half-maximum points) plus the 0.1 ps retrieval-phase anchor; \
     gauss: read center = write center + tau + 2 FWHM";

impl OutputDir {
    pub fn new(dir: &str, command: &str) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {dir}"))?;
        Ok(OutputDir {
            dir: PathBuf::from(dir),
            command: command.to_string(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_file(&self, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Write a CSV and its manifest; returns the CSV path.
    pub fn write_csv(
        &self,
        name: &str,
        header: &str,
        rows: &[Vec<f64>],
        manifest_params: &str,
    ) -> anyhow::Result<PathBuf> {
        let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
        text.push_str(header);
        text.push('\n');
        for row in rows {
            let mut first = true;
            for value in row {
                if !first {
                    text.push(',');
                }
                first = false;
                text.push_str(&format!("{value}"));
            }
            text.push('\n');
        }
        let path = self.write_file(name, &text)?;
        self.write_manifest(&path, manifest_params)?;
        Ok(path)
    }

    /// One manifest per CSV: tool version, timing, the τ convention, and
    /// the resolved parameter snapshot.
    fn write_manifest(&self, csv: &Path, params: &str) -> anyhow::Result<()> {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = format!(
            "tool = \"photon-buffer {}\"\ncommand = {:?}\ncsv = {:?}\ncreated_unix_s = {stamp}\n\
             tau_convention = {:?}\n\n[params]\n{params}",
            env!("CARGO_PKG_VERSION"),
            self.command,
            csv.file_name().unwrap().to_string_lossy(),
            TAU_CONVENTION,
        );
        let name = format!("{}.manifest.toml", csv.file_stem().unwrap().to_string_lossy());
        self.write_file(&name, &manifest)?;
        Ok(())
    }
}

/// Time-series CSV: t_ps, P_G, P_X, P_D, P_photon_0.., envelope_per_ps.
pub fn time_series_rows(series: &TimeSeries, pulse: &PulseSpec) -> (String, Vec<Vec<f64>>) {
    let n_max = series.photon.len() - 1;
    let mut header = String::from("t_ps,P_G,P_X,P_D");
    for n in 0..=n_max {
        header.push_str(&format!(",P_photon_{n}"));
    }
    header.push_str(",envelope_per_ps");
    let rows = (0..series.len())
        .map(|k| {
            let t = series.times[k];
            let mut row = vec![t, series.pop_g[k], series.pop_x[k], series.pop_d[k]];
            for n in 0..=n_max {
                row.push(series.photon[n][k]);
            }
            row.push(pulse.envelope(t));
            row
        })
        .collect();
    (header, rows)
}

/// Sweep CSV rows: optional leading swept-variable column, then tau_ns,
/// c1po, and c2po when present.
pub fn sweep_rows(points: &[TauPoint], lead: Option<f64>) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            let mut row = Vec::with_capacity(4);
            if let Some(value) = lead {
                row.push(value);
            }
            row.push(p.tau_ps * 1e-3);
            row.push(p.c1po);
            if let Some(c2) = p.c2po {
                row.push(c2);
            }
            row
        })
        .collect()
}
