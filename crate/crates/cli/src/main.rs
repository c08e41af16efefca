//! `hom`: simulate two-atom photon interference, compute mode overlaps,
//! and fit zero-delay peaks and displacement scans.

mod commands;
mod config;
mod error;
mod output;
mod units;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hom_core::experiment_sim::Configuration;
use hom_core::spatial_mode::AlignmentKind;
use serde_json::{json, Value};

use crate::config::AmplitudeChoice;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "hom", version, about)]
struct Cli {
    /// Worker threads for simulation (default: number of processors).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config, or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config field by dotted path, e.g. `detection.jitter_sigma=0.3ns`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Output directory; for `fit`, the result file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate mixer and separator histograms and the normalized signal.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Spatial overlap K.
        #[arg(long)]
        k: Option<f64>,
        /// Atom temperature for the thermal frequency model, e.g. `180uK`.
        #[arg(long, allow_hyphen_values = true)]
        temperature: Option<String>,
        /// Simulate one configuration only.
        #[arg(long, value_parser = parse_configuration)]
        configuration: Option<Configuration>,
        #[arg(long)]
        loads: Option<usize>,
    },
    /// Print the mode overlap K and the alignment budget.
    Overlap {
        #[command(flatten)]
        common: Common,
        /// Waist of the base mode, e.g. `90um`.
        #[arg(long)]
        waist: Option<String>,
        /// Transverse offset of the second image, e.g. `90um`.
        #[arg(long, allow_hyphen_values = true)]
        offset: Option<String>,
        /// Fractional waist mismatch, e.g. `0.16` or `16%`.
        #[arg(long)]
        waist_mismatch: Option<String>,
        /// Focal shift along the axis, e.g. `5mm`.
        #[arg(long, allow_hyphen_values = true)]
        focal_shift: Option<String>,
        /// Axis tilt, e.g. `2mrad`.
        #[arg(long, allow_hyphen_values = true)]
        tilt: Option<String>,
    },
    /// Fit a histogram, normalized signal, zero-peak samples or scan CSV.
    Fit {
        input: PathBuf,
        /// Separator histogram, when INPUT is a mixer histogram.
        #[arg(long)]
        separator: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Half-width of the zero-delay fit window, e.g. `100ns`.
        #[arg(long)]
        window: Option<String>,
        #[arg(long, value_enum)]
        amplitude: Option<AmplitudeChoice>,
    },
    /// Zero-delay ratio against transverse displacement, with a K_max fit.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kmax: Option<f64>,
        /// Comma-separated displacements, e.g. `-150um,0,150um`.
        #[arg(long, allow_hyphen_values = true)]
        offsets: Option<String>,
        /// Simulate each point instead of using the closed form.
        #[arg(long)]
        simulate: bool,
        /// Loads per simulated point.
        #[arg(long)]
        loads: Option<usize>,
    },
}

fn parse_configuration(s: &str) -> Result<Configuration, String> {
    s.parse().map_err(|e: hom_core::Error| e.to_string())
}

fn quantity(text: &str) -> Result<f64, CliError> {
    units::parse_quantity(text, false).map_err(CliError::Config)
}

fn document(common: &Common, extra: Vec<(&str, Value)>) -> Result<Value, CliError> {
    let mut doc = config::load_document(common.config.as_deref())?;
    for o in &common.overrides {
        config::apply_override(&mut doc, o)?;
    }
    if let Some(seed) = common.seed {
        config::set_value(&mut doc, "seed", json!(seed))?;
    }
    if let Some(out) = &common.out {
        config::set_value(&mut doc, "output.dir", json!(out))?;
    }
    for (path, value) in extra {
        config::set_value(&mut doc, path, value)?;
    }
    Ok(doc)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.parallelism {
        if n == 0 {
            return Err(CliError::Config("--parallelism must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate {
            common,
            k,
            temperature,
            configuration,
            loads,
        } => {
            let mut extra = Vec::new();
            if let Some(k) = k {
                extra.push(("physics.overlap", json!(k)));
            }
            if let Some(n) = loads {
                extra.push(("n_loads", json!(n)));
            }
            let mut doc = document(&common, extra)?;
            if let Some(t) = temperature {
                let eta = doc
                    .pointer("/physics/frequency/differential_shift_factor")
                    .cloned()
                    .unwrap_or(json!(1.0));
                let model =
                    json!({ "mode": "thermal", "temperature": quantity(&t)?, "differential_shift_factor": eta });
                config::set_value(&mut doc, "physics.frequency", model)?;
            }
            commands::simulate(&config::resolve(doc)?, configuration)
        }
        Command::Overlap {
            common,
            waist,
            offset,
            waist_mismatch,
            focal_shift,
            tilt,
        } => {
            let mut extra = Vec::new();
            if let Some(w) = &waist {
                extra.push(("modes.base.waist", json!(quantity(w)?)));
            }
            let mut cfg = config::resolve(document(&common, extra)?)?;
            let base = cfg.modes.base;
            let given = [
                (AlignmentKind::WaistMismatch, waist_mismatch, 1.0),
                (AlignmentKind::TransverseOffset, offset, base.waist),
                (AlignmentKind::FocalShift, focal_shift, base.rayleigh_range()),
                (AlignmentKind::AxisTilt, tilt, base.divergence()),
            ];
            for (kind, text, scale) in given {
                if let Some(text) = text {
                    let magnitude = (quantity(&text)? / scale).abs();
                    cfg.modes
                        .errors
                        .push(hom_core::spatial_mode::AlignmentError::new(kind, magnitude)?);
                }
            }
            commands::overlap_report(&cfg)
        }
        Command::Fit {
            input,
            separator,
            common,
            window,
            amplitude,
        } => {
            let mut extra = Vec::new();
            if let Some(w) = &window {
                extra.push(("analysis.zero_window", json!(quantity(w)?)));
            }
            if let Some(a) = amplitude {
                extra.push(("analysis.amplitude", json!(a)));
            }
            let out = common.out.clone();
            let mut common = common;
            common.out = None;
            let cfg = config::resolve(document(&common, extra)?)?;
            commands::fit(&cfg, &input, separator.as_deref(), out.as_deref())
        }
        Command::Scan {
            common,
            kmax,
            offsets,
            simulate,
            loads,
        } => {
            let mut extra = Vec::new();
            if let Some(k) = kmax {
                extra.push(("scan.k_max", json!(k)));
            }
            if let Some(list) = offsets {
                let values = list
                    .split(',')
                    .map(|s| quantity(s.trim()))
                    .collect::<Result<Vec<f64>, _>>()?;
                extra.push(("scan.offsets", json!(values)));
            }
            if simulate {
                extra.push(("scan.simulate", json!(true)));
            }
            if let Some(n) = loads {
                extra.push(("scan.n_loads", json!(n)));
            }
            commands::scan(&config::resolve(document(&common, extra)?)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hom: {e}");
            e.exit_code()
        }
    }
}
