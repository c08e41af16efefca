//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hom_core::coincidence_model::{
    averaged_interference_factor, broadened_signal, dip_half_width, peak_ratio, BroadeningParams,
};
use hom_core::constants::{DEFAULT_DECAY_RATE, HBAR, K_B, MICROKELVIN};
use hom_core::experiment_sim::{
    extract_zero_peak, normalize_batches, peak_heights, run_both_configurations, run_both_configurations_batches,
    run_experiment, CoincidenceHistogram, DetectionConfig, ExperimentPhysics, FrequencyModel, HeightMode,
    NormalizedSignal, PeakLayout, SequenceConfig,
};
use hom_core::inference::{displacement_model, fit_displacement_scan, fit_zero_peak, DataPoint};
use hom_core::photon_field::{coincidence_density_closed, coincidence_density_integral, PhotonWavepacket};
use hom_core::spatial_mode::{displacement_scan, overlap, GaussianMode};
use hom_core::trap_dynamics::{
    lightshift_distribution, simulate_ensemble, EmitterConstants, MotionSettings, TrapConfig,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

const PERIOD: f64 = 200e-9;
const WINDOW: f64 = 100e-9;
const BATCHES: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn zero_window_events(h: &[CoincidenceHistogram]) -> u64 {
    h.iter()
        .map(|h| {
            h.centers()
                .iter()
                .zip(&h.counts)
                .filter(|(t, _)| t.abs() < WINDOW)
                .map(|(_, &c)| c)
                .sum::<u64>()
        })
        .sum()
}

fn simulate(phys: &ExperimentPhysics, det: &DetectionConfig, loads: usize, seed: u64) -> (NormalizedSignal, u64) {
    let seq = SequenceConfig::default();
    let (m, s) = run_both_configurations_batches(&seq, det, phys, loads, seed, BATCHES).unwrap();
    let sig = normalize_batches(&m, &s, PERIOD, det.rebin_factor, DEFAULT_DECAY_RATE, HeightMode::Area).unwrap();
    (sig, zero_window_events(&m))
}

fn cold(k: f64) -> ExperimentPhysics {
    ExperimentPhysics {
        overlap: k,
        frequency: FrequencyModel::thermal(0.0),
        ..ExperimentPhysics::default()
    }
}

fn ratio_law() -> Outcome {
    let exact = [0.0, 0.3, 0.5, 0.78, 1.0]
        .iter()
        .all(|&k| peak_ratio(k).unwrap() == 0.5 * (1.0 - k * k));
    // Enough loads that the K = 0 zero-delay window collects over 10⁴ events.
    let loads = 200_000;
    let det = DetectionConfig::default();
    let mut pass = exact;
    let mut parts = Vec::new();
    for (i, k) in [0.0, 0.5, 0.78, 1.0].into_iter().enumerate() {
        let t0 = Instant::now();
        let (sig, events) = simulate(&cold(k), &det, loads, 100 + i as u64);
        let elapsed = t0.elapsed();
        let want = 0.5 * (1.0 - k * k);
        let ok = (sig.zero_delay_ratio - want).abs() <= 0.02 && elapsed <= Duration::from_secs(60);
        if k == 0.0 {
            pass &= events >= 10_000;
        }
        pass &= ok;
        parts.push(format!(
            "K={k}: {:.4}±{:.4} (want {want:.4}, {events} window events, {:.1}s)",
            sig.zero_delay_ratio,
            sig.zero_delay_sigma,
            elapsed.as_secs_f64()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn displacement() -> Outcome {
    let w = 90e-6;
    let k_max = 0.78;
    let mode = GaussianMode::with_waist(w).unwrap();
    let offsets: Vec<f64> = (-6..=6).map(|i| i as f64 * 25e-6).collect();
    let analytic = displacement_scan(&mode, k_max, &offsets).unwrap();
    let formula_err = analytic
        .iter()
        .map(|p| (p.ratio - displacement_model(p.offset, k_max, 0.0, w)).abs())
        .fold(0.0, f64::max);
    let det = DetectionConfig::default();
    let mut points = Vec::new();
    for (i, &d) in offsets.iter().enumerate() {
        let k = k_max * overlap(&mode, &mode.translated(d, 0.0, 0.0)).unwrap();
        let (sig, _) = simulate(&cold(k), &det, 60_000, 200 + i as u64);
        points.push(DataPoint::new(d, sig.zero_delay_ratio, sig.zero_delay_sigma));
    }
    let fit = fit_displacement_scan(&points, w).unwrap();
    let k = fit.param("K_max");
    outcome(
        formula_err <= 1e-12 && (k - k_max).abs() <= 0.05,
        format!(
            "analytic vs formula {formula_err:.1e}; simulated K_max = {k:.4} ± {:.4}, centre {:.1} µm",
            fit.sigma("K_max"),
            fit.param("center") * 1e6
        ),
    )
}

fn broadening() -> Outcome {
    let params = BroadeningParams::at_temperature(180.0 * MICROKELVIN).unwrap();
    let g = Gamma::new(3.0, 0.5 * K_B * params.temperature).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let dw: Vec<f64> = (0..1_000_000)
        .map(|_| params.differential_shift_factor * (g.sample(&mut rng) - g.sample(&mut rng)) / HBAR)
        .collect();
    let t_star = 2.0 * HBAR / (K_B * params.temperature);
    let worst = (0..100)
        .map(|i| {
            let tau = i as f64 * 3.0 * t_star / 99.0;
            let mc = dw.iter().map(|w| (w * tau).cos()).sum::<f64>() / dw.len() as f64;
            (mc - averaged_interference_factor(tau, &params).unwrap()).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        worst <= 0.01,
        format!("max |MC − C(τ)| = {worst:.4} over 100 τ, 10⁶ pairs"),
    )
}

fn fit_recovery() -> Outcome {
    let phys = ExperimentPhysics::default();
    let det = DetectionConfig::default();
    let trials = 500;
    // About 6600 zero-delay-window events per trial at K = 0.7, T = 180 µK.
    let loads = 100_000;
    let (mut good, mut k_cover, mut t_cover, mut events) = (0, 0, 0, 0u64);
    for i in 0..trials {
        let (sig, ev) = simulate(&phys, &det, loads, 10_000 + i as u64);
        events += ev;
        let z = extract_zero_peak(&sig, WINDOW, DEFAULT_DECAY_RATE).unwrap();
        let fit = fit_zero_peak(&z.points(), &z.fit_options(sig.bin_width)).unwrap();
        let (k, t) = (fit.param("K"), fit.param("T_uK"));
        good += usize::from((k - 0.7).abs() <= 0.05 && (t - 180.0).abs() <= 20.0);
        k_cover += usize::from((k - 0.7).abs() <= fit.sigma("K"));
        let (lo, hi) = fit.intervals["T_uK"];
        t_cover += usize::from((lo..=hi).contains(&180.0));
    }
    let frac = good as f64 / trials as f64;
    outcome(
        frac >= 0.68,
        format!(
            "{good}/{trials} trials within ±0.05 in K and ±20 µK in T ({:.0} window events per trial; 68% intervals cover K {:.0}%, T {:.0}%)",
            events as f64 / trials as f64,
            100.0 * k_cover as f64 / trials as f64,
            100.0 * t_cover as f64 / trials as f64,
        ),
    )
}

fn dip() -> Outcome {
    let zero_at_origin = [0.0, 100.0, 200.0].iter().all(|&t| {
        let p = BroadeningParams::at_temperature(t * MICROKELVIN).unwrap();
        broadened_signal(0.0, 1.0, &p).unwrap() == 0.0
    });
    let widths: Vec<f64> = [50.0, 100.0, 150.0, 200.0, 300.0, 400.0]
        .iter()
        .map(|&t| dip_half_width(1.0, &BroadeningParams::at_temperature(t * MICROKELVIN).unwrap()).unwrap())
        .collect();
    let decreasing = widths.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = widths.iter().map(|w| format!("{:.1}", w * 1e9)).collect();
    outcome(
        zero_at_origin && decreasing,
        format!(
            "signal(0) = 0 at 0/100/200 µK: {zero_at_origin}; dip half-widths 50–400 µK [{}] ns",
            shown.join(", ")
        ),
    )
}

fn heating() -> Outcome {
    let t0 = Instant::now();
    let burst = simulate_ensemble(
        &TrapConfig::default(),
        &EmitterConstants::default(),
        &SequenceConfig::default(),
        &MotionSettings::default(),
        120.0 * MICROKELVIN,
        10_000,
        61,
    )
    .unwrap();
    let dt = burst.temperature_rise() / MICROKELVIN;
    let elapsed = t0.elapsed();
    outcome(
        (40.0..=80.0).contains(&dt) && elapsed <= Duration::from_secs(300),
        format!(
            "ΔT = {dt:.1} µK over 575 pulses, 10⁴ atoms, {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn lightshift_temperature() -> Outcome {
    let d = lightshift_distribution(
        &TrapConfig::default(),
        &EmitterConstants::default(),
        &SequenceConfig::default(),
        &MotionSettings::default(),
        120.0 * MICROKELVIN,
        4000,
        71,
    )
    .unwrap();
    let t = d.t_eff / MICROKELVIN;
    outcome(
        (150.0..=210.0).contains(&t),
        format!("T_eff = {t:.1} ± {:.1} µK", d.t_eff_sigma / MICROKELVIN),
    )
}

fn determinism() -> Outcome {
    let seq = SequenceConfig::default();
    let det = DetectionConfig::default();
    let phys = ExperimentPhysics::default();
    let a = run_experiment(&seq, &det, &phys, 5000, 7).unwrap();
    let b = run_experiment(&seq, &det, &phys, 5000, 7).unwrap();
    let identical = a == b;

    let base_phys = cold(0.5);
    let (base, _) = simulate(&base_phys, &det, 100_000, 81);
    let doubled = DetectionConfig {
        efficiency_per_detector: 2.0 * det.efficiency_per_detector,
        ..det
    };
    let (eff, _) = simulate(&base_phys, &doubled, 100_000, 82);
    let (long, _) = simulate(&base_phys, &det, 200_000, 83);
    let agree = |x: &NormalizedSignal| {
        let s = (x.zero_delay_sigma.powi(2) + base.zero_delay_sigma.powi(2)).sqrt();
        ((x.zero_delay_ratio - base.zero_delay_ratio) / s).abs()
    };
    let (pe, pl) = (agree(&eff), agree(&long));

    let (m, s) = run_both_configurations(&seq, &det, &phys, 60_000, 84).unwrap();
    // Centroids over one lifetime around each grid point; the full window
    // would let the neighbours' tails and the background dominate the spread.
    let layout = PeakLayout {
        half_window: 1.0 / DEFAULT_DECAY_RATE,
        ..PeakLayout::for_period(PERIOD, det.rebin_factor)
    };
    let off: Vec<String> = [&m, &s]
        .iter()
        .flat_map(|h| {
            peak_heights(h, &layout)
                .unwrap()
                .into_iter()
                .map(|p| (h.configuration, p))
        })
        .filter(|(_, p)| (p.center - p.index as f64 * PERIOD).abs() > m.bin_width)
        .map(|(c, p)| {
            format!(
                "{c:?} #{} at {:+.2} ns ({} counts)",
                p.index,
                (p.center - p.index as f64 * PERIOD) * 1e9,
                p.area
            )
        })
        .collect();
    let off_grid = off.len();
    outcome(
        identical && pe < 3.0 && pl < 3.0 && off_grid == 0,
        format!(
            "bit-identical: {identical}; efficiency ×2 off by {pe:.2}σ, duration ×2 off by {pl:.2}σ; peaks off the 200 ns grid: {off_grid} {off:?}"
        ),
    )
}

fn grid_overlap(m1: &GaussianMode, m2: &GaussianMode) -> f64 {
    let n = 512;
    let half = 5.0 * m1.waist.max(m2.waist);
    let cx = 0.5 * (m1.focus[0] + m2.focus[0]);
    let cy = 0.5 * (m1.focus[1] + m2.focus[1]);
    let z = 0.5 * (m1.focus[2] + m2.focus[2]);
    let h = 2.0 * half / n as f64;
    let (mut cross, mut n1, mut n2) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
    for i in 0..n {
        let x = cx - half + (i as f64 + 0.5) * h;
        for j in 0..n {
            let y = cy - half + (j as f64 + 0.5) * h;
            let (f1, f2) = (m1.field(x, y, z), m2.field(x, y, z));
            cross += f1.conj() * f2;
            n1 += f1.norm_sqr();
            n2 += f2.norm_sqr();
        }
    }
    cross.norm() / (n1 * n2).sqrt()
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut worst_density = 0.0f64;
    for _ in 0..100 {
        let gamma = DEFAULT_DECAY_RATE * rng.random_range(0.5..2.0);
        let k = rng.random_range(0.0..=1.0);
        let dw = 2.0 * std::f64::consts::PI * rng.random_range(-20e6..20e6);
        let tau = rng.random_range(-100e-9..100e-9);
        let w1 = PhotonWavepacket::new(gamma, dw, 0.0).unwrap();
        let w2 = PhotonWavepacket::new(gamma, 0.0, 0.0).unwrap();
        let num = coincidence_density_integral(&w1, &w2, k, tau).unwrap();
        let exact = coincidence_density_closed(tau, k, dw, gamma).unwrap();
        let scale = exact.abs().max(1e-3 * (-gamma * tau.abs()).exp());
        worst_density = worst_density.max((num - exact).abs() / scale);
    }
    let w = 90e-6;
    let base = GaussianMode::with_waist(w).unwrap();
    let cases = [
        base.translated(w, 0.0, 0.0),
        base.translated(0.4 * w, 0.3 * w, 0.0),
        GaussianMode {
            waist: 1.16 * w,
            ..base
        },
        base.translated(0.0, 0.0, 0.5 * base.rayleigh_range()),
    ];
    let worst_overlap = cases
        .iter()
        .map(|m| (overlap(&base, m).unwrap() - grid_overlap(&base, m)).abs())
        .fold(0.0, f64::max);
    outcome(
        worst_density <= 1e-6 && worst_overlap <= 1e-6,
        format!("density quadrature vs closed form {worst_density:.1e} relative; overlap vs grid {worst_overlap:.1e}"),
    )
}

/// Name, check and runtime limit in seconds.
type Criterion = (&'static str, fn() -> Outcome, Option<u64>);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("ratio law", ratio_law, None),
        ("displacement scan", displacement, Some(300)),
        ("broadening closed form", broadening, Some(60)),
        ("zero-peak fit recovery", fit_recovery, Some(900)),
        ("dip at unit overlap", dip, None),
        ("recoil heating", heating, Some(300)),
        ("lightshift temperature", lightshift_temperature, None),
        ("determinism and invariance", determinism, None),
        ("oracle equivalence", oracles, None),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let o = run();
        let elapsed = t0.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= Duration::from_secs(l));
        let pass = o.pass && in_time;
        println!(
            "criterion {n} ({name}): {} [{:.1}s{}] {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over the time limit" },
            o.detail
        );
        failed += usize::from(!pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
