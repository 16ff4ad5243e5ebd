//! Config-driven experiment runner for the photon-buffer simulator.
//!
//! Exit codes: 0 success, 2 configuration or validation errors,
//! 3 integration failures, 4 resource-cap violations.

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use photon_buffer::Error as CoreError;

#[derive(Parser)]
#[command(name = "photon-buffer", version, about = "Single-photon buffering in a Mn-doped quantum-dot cavity: protocol simulation and paper datasets")]
struct Cli {
    /// TOML configuration file with flat dotted keys (model.kappa = 8.5).
    #[arg(long, global = true)]
    config: Option<String>,

    /// Override a config key, e.g. --set model.kappa=8.5 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the exchange couplings and effective splitting derived from
    /// the Mn position.
    Derive {
        /// Magnetic field in Faraday configuration, T.
        #[arg(long)]
        bz: Option<f64>,
        /// Mn position as fractions of the box, e.g. 0.3,0.3,0.13.
        #[arg(long)]
        mn: Option<String>,
    },
    /// Run the write/store/read protocol once and export the time series.
    Simulate,
    /// Reproduce a published dataset: fig2, fig3, fig4a, fig4b, fig4cd,
    /// fig5a, fig5b, or fig6.
    Fig { name: String },
    /// Sweep the buffer time and export (tau_ns, c1po[, c2po]).
    Sweep,
    /// Grid-search the Gaussian write pulse for maximum dark occupation.
    OptimizePulse,
    /// Fit c*exp(-tau/tau*) to a sweep CSV column.
    Fit {
        /// Input CSV with a tau_ns column.
        #[arg(long)]
        input: String,
        /// Column to fit.
        #[arg(long, default_value = "c1po")]
        column: String,
        /// Discard points below this buffer time, ns.
        #[arg(long)]
        head_cutoff_ns: Option<f64>,
    },
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    });
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Integration { .. }
                | CoreError::Quadrature(_)
                | CoreError::FitDidNotConverge(_) => 3,
                CoreError::ResourceCap { .. } => 4,
                _ => 2,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 2;
        }
    }
    // Unclassified (I/O and similar).
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut sets = cli.sets.clone();
    // Dedicated flags mirror config keys.
    if let Command::Derive { bz, mn } = &cli.command {
        if let Some(bz) = bz {
            sets.push(format!("model.b_z={bz}"));
        }
        if let Some(mn) = mn {
            let parts: Vec<&str> = mn.split(',').collect();
            anyhow::ensure!(parts.len() == 3, "--mn needs three comma-separated fractions");
            sets.push(format!(
                "model.mn_position=[{}, {}, {}]",
                parts[0], parts[1], parts[2]
            ));
        }
    }
    if let Some(dir) = &cli.out {
        sets.push(format!("output.dir=\"{dir}\""));
    }
    let config = config::load(cli.config.as_deref(), &sets)?;

    let command_name = match &cli.command {
        Command::Derive { .. } => "derive".to_string(),
        Command::Simulate => "simulate".to_string(),
        Command::Fig { name } => format!("fig {name}"),
        Command::Sweep => "sweep".to_string(),
        Command::OptimizePulse => "optimize-pulse".to_string(),
        Command::Fit { .. } => "fit".to_string(),
    };

    match &cli.command {
        Command::Derive { .. } => commands::cmd_derive(&config),
        Command::Simulate => {
            let out = output::OutputDir::new(&config.output.dir, &command_name)?;
            commands::cmd_simulate(&config, &out)
        }
        Command::Fig { name } => {
            let out = output::OutputDir::new(&config.output.dir, &command_name)?;
            commands::cmd_fig(name, &config, &out)
        }
        Command::Sweep => {
            let out = output::OutputDir::new(&config.output.dir, &command_name)?;
            commands::cmd_sweep(&config, &out)
        }
        Command::OptimizePulse => {
            let out = output::OutputDir::new(&config.output.dir, &command_name)?;
            commands::cmd_optimize_pulse(&config, &out)
        }
        Command::Fit {
            input,
            column,
            head_cutoff_ns,
        } => {
            let out = output::OutputDir::new(&config.output.dir, &command_name)?;
            commands::cmd_fit(input, column, *head_cutoff_ns, &out)
        }
    }
}
