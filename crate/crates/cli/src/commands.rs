use std::path::{Path, PathBuf};

use hom_core::experiment_sim::{
    derive_seed, extract_zero_peak, normalize, normalize_batches, run_both_configurations_batches, run_experiment,
    CoincidenceHistogram, Configuration, DetectionConfig, ExperimentPhysics, FrequencyModel, NormalizedSignal,
};
use hom_core::inference::{fit_displacement_scan, fit_zero_peak, Amplitude, DataPoint, FitResult, ZeroPeakFitOptions};
use hom_core::io;
use hom_core::spatial_mode::{alignment_budget, displacement_scan, overlap, AlignmentError};
use serde::Serialize;
use serde_json::json;

use crate::config::{AmplitudeChoice, RunConfig};
use crate::error::CliError;
use crate::output::{render, to_json_pretty, write_atomic, OutputSet};

fn merge_batches(batches: &[CoincidenceHistogram]) -> Result<CoincidenceHistogram, CliError> {
    let (first, rest) = batches
        .split_first()
        .ok_or_else(|| CliError::Config("no batches to merge".into()))?;
    let mut total = first.clone();
    for b in rest {
        total.merge(b)?;
    }
    Ok(total)
}

fn simulate_signal(
    cfg: &RunConfig,
    physics: &ExperimentPhysics,
    n_loads: usize,
    seed: u64,
) -> Result<(CoincidenceHistogram, CoincidenceHistogram, NormalizedSignal), CliError> {
    let (m, s) = run_both_configurations_batches(&cfg.sequence, &cfg.detection, physics, n_loads, seed, cfg.batches)?;
    let sig = normalize_batches(
        &m,
        &s,
        cfg.sequence.pulse_period,
        cfg.detection.rebin_factor,
        physics.emitter.decay_rate(),
        cfg.analysis.height_mode,
    )?;
    Ok((merge_batches(&m)?, merge_batches(&s)?, sig))
}

pub fn simulate(cfg: &RunConfig, only: Option<Configuration>) -> Result<(), CliError> {
    let seed = cfg.require_seed()?;
    let mut out = OutputSet::new(&cfg.output.dir);
    let summary = if let Some(configuration) = only {
        let det = DetectionConfig {
            configuration,
            ..cfg.detection
        };
        let hist = run_experiment(&cfg.sequence, &det, &cfg.physics, cfg.n_loads, seed)?;
        let name = format!("{}_histogram.csv", configuration.tag());
        out.write(&name, &render(|w| io::write_histogram_csv(&hist, w))?)?;
        json!({ "configuration": configuration.tag(), "total_counts": hist.counts.iter().sum::<u64>() })
    } else {
        let (mixer, separator, sig) = simulate_signal(cfg, &cfg.physics, cfg.n_loads, seed)?;
        out.write("mixer_histogram.csv", &render(|w| io::write_histogram_csv(&mixer, w))?)?;
        out.write(
            "separator_histogram.csv",
            &render(|w| io::write_histogram_csv(&separator, w))?,
        )?;
        out.write("normalized.csv", &render(|w| io::write_normalized_csv(&sig, w))?)?;
        json!({
            "zero_delay_ratio": sig.zero_delay_ratio,
            "zero_delay_sigma": sig.zero_delay_sigma,
            "reference_height": sig.reference_height,
        })
    };
    let manifest = out.finish("simulate", cfg)?;
    print!(
        "{}",
        to_json_pretty(&json!({ "summary": summary, "manifest": manifest }))
    );
    Ok(())
}

#[derive(Serialize)]
struct BudgetEntry {
    #[serde(flatten)]
    error: AlignmentError,
    overlap: f64,
}

pub fn overlap_report(cfg: &RunConfig) -> Result<(), CliError> {
    let base = cfg.modes.base;
    let budget = alignment_budget(&base, &cfg.modes.errors)?;
    let k = budget.exact;
    let report = json!({
        "K": k,
        "convention": "K is the normalized field-amplitude overlap |<f1|f2>| of the two collected modes; \
                       the zero-delay coincidence ratio is (1 - K^2)/2",
        "zero_delay_ratio": 0.5 * (1.0 - k * k),
        "budget": budget.factors.iter().map(|&(error, overlap)| BudgetEntry { error, overlap }).collect::<Vec<_>>(),
        "product_of_factors": budget.product,
        "discrepancy": budget.discrepancy,
    });
    print!("{}", to_json_pretty(&report));
    Ok(())
}

fn header_of(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split(',').map(|h| h.trim().to_string()).collect())
        .unwrap_or_default()
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn in_file(path: &Path) -> impl Fn(hom_core::Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn zero_peak_options(cfg: &RunConfig, bin_width: Option<f64>, poisson_gain: Option<f64>) -> ZeroPeakFitOptions {
    let differential_shift_factor = match cfg.physics.frequency {
        FrequencyModel::Thermal {
            differential_shift_factor,
            ..
        }
        | FrequencyModel::TrapMonteCarlo {
            differential_shift_factor,
            ..
        } => differential_shift_factor,
    };
    ZeroPeakFitOptions {
        decay_rate: cfg.physics.emitter.decay_rate(),
        differential_shift_factor,
        amplitude: match cfg.analysis.amplitude {
            AmplitudeChoice::Fixed => Amplitude::default(),
            AmplitudeChoice::Profiled => Amplitude::Profiled,
        },
        bin_width,
        poisson_gain,
    }
}

fn fit_signal(cfg: &RunConfig, sig: &NormalizedSignal) -> Result<FitResult, CliError> {
    let opts = zero_peak_options(cfg, Some(sig.bin_width), None);
    let zp = extract_zero_peak(sig, cfg.analysis.zero_window, opts.decay_rate)?;
    let opts = ZeroPeakFitOptions {
        poisson_gain: zp.fit_options(sig.bin_width).poisson_gain,
        ..opts
    };
    Ok(fit_zero_peak(&zp.points(), &opts)?)
}

/// Fit a histogram pair, a normalized signal, zero-peak samples or a
/// displacement scan, chosen by the CSV header.
pub fn fit(cfg: &RunConfig, input: &Path, separator: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let text = read_text(input)?;
    let header = header_of(&text);
    let has = |c: &str| header.iter().any(|h| h == c);
    let result = if has("bin_start_ns") {
        let sep_path = separator.ok_or_else(|| {
            CliError::Config("a histogram input needs the separator histogram as well (--separator)".into())
        })?;
        let mixer = io::read_histogram_csv(text.as_bytes()).map_err(in_file(input))?;
        let sep = io::read_histogram_csv(read_text(sep_path)?.as_bytes()).map_err(in_file(sep_path))?;
        let sig = normalize(
            &mixer,
            &sep,
            cfg.sequence.pulse_period,
            cfg.detection.rebin_factor,
            cfg.physics.emitter.decay_rate(),
            cfg.analysis.height_mode,
        )?;
        fit_signal(cfg, &sig)?
    } else if has("tau_ns") {
        let sig = io::read_normalized_csv(text.as_bytes(), cfg.sequence.pulse_period).map_err(in_file(input))?;
        let span = sig.centers.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        if span <= 0.5 * sig.period {
            // Samples of the zero peak alone.
            let points: Vec<DataPoint> = (0..sig.centers.len())
                .map(|i| DataPoint::new(sig.centers[i], sig.values[i], sig.sigma[i]))
                .collect();
            let gain = sig
                .count_unit
                .is_finite()
                .then_some(sig.count_unit * sig.dispersion.powi(2));
            fit_zero_peak(&points, &zero_peak_options(cfg, Some(sig.bin_width), gain))?
        } else {
            fit_signal(cfg, &sig)?
        }
    } else if has("d_um") {
        let points = io::read_points_csv(text.as_bytes(), "d_um", "R", "sigma").map_err(in_file(input))?;
        fit_displacement_scan(&points, cfg.modes.base.waist)?
    } else {
        return Err(CliError::Config(format!(
            "{}: unrecognized CSV header {:?}; expected bin_start_ns, tau_ns or d_um columns",
            input.display(),
            header
        )));
    };
    let text = to_json_pretty(&result);
    if let Some(path) = out {
        write_atomic(path, text.as_bytes())?;
    }
    print!("{text}");
    if !result.converged {
        return Err(CliError::Numerical("fit did not converge".into()));
    }
    Ok(())
}

const MIN_SCAN_FIT_POINTS: usize = 4;

pub fn scan(cfg: &RunConfig) -> Result<(), CliError> {
    let offsets = &cfg.scan.offsets;
    if offsets.len() < 2 {
        return Err(CliError::Config(format!(
            "a scan needs at least two displacements, got {}",
            offsets.len()
        )));
    }
    let mode = cfg.modes.base;
    // Closed-form rows carry no uncertainty and are fitted with unit weights.
    let rows: Vec<[f64; 3]> = if cfg.scan.simulate {
        let seed = cfg.require_seed()?;
        offsets
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let k = cfg.scan.k_max * overlap(&mode, &mode.translated(d, 0.0, 0.0))?;
                let physics = ExperimentPhysics {
                    overlap: k,
                    ..cfg.physics
                };
                let (_, _, sig) = simulate_signal(cfg, &physics, cfg.scan.n_loads, derive_seed(seed, i as u64))?;
                // The window ratio is lowered by broadening; the central
                // bins are not.
                let zp = extract_zero_peak(&sig, cfg.analysis.zero_window, physics.emitter.decay_rate())?;
                let (r, sigma) = zp.central_value(sig.bin_width, physics.emitter.decay_rate(), 1.5 * sig.bin_width)?;
                Ok([d, r, sigma])
            })
            .collect::<Result<_, CliError>>()?
    } else {
        displacement_scan(&mode, cfg.scan.k_max, offsets)?
            .iter()
            .map(|p| [p.offset, p.ratio, 1.0])
            .collect()
    };
    let points: Vec<DataPoint> = rows.iter().map(|r| DataPoint::new(r[0], r[1], r[2])).collect();
    let fit = if points.len() >= MIN_SCAN_FIT_POINTS {
        Some(fit_displacement_scan(&points, mode.waist)?)
    } else {
        eprintln!(
            "warning: {} displacements are too few for a K_max fit (need {MIN_SCAN_FIT_POINTS})",
            points.len()
        );
        None
    };

    let mut out = OutputSet::new(&cfg.output.dir);
    let csv = if cfg.scan.simulate {
        let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] * 1e6, r[1], r[2]]).collect();
        render(|w| io::write_table_csv(&["d_um", "R", "sigma"], &table, w))?
    } else {
        let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] * 1e6, r[1]]).collect();
        render(|w| io::write_table_csv(&["d_um", "R"], &table, w))?
    };
    out.write("scan.csv", &csv)?;
    if let Some(fit) = &fit {
        out.write("scan_fit.json", to_json_pretty(fit).as_bytes())?;
    }
    let manifest: PathBuf = out.finish("scan", cfg)?;
    print!("{}", to_json_pretty(&json!({ "fit": fit, "manifest": manifest })));
    if fit.is_some_and(|f| !f.converged) {
        return Err(CliError::Numerical("displacement fit did not converge".into()));
    }
    Ok(())
}
