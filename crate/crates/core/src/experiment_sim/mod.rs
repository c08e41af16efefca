//! Event-level simulation of the two-atom coalescence experiment.
//!
//! A run is a series of loads. Each load holds one atom in each trap and
//! drives both through `bursts_per_load` bursts of excitation pulses
//! separated by cooling periods. Per pulse each atom emits at most one
//! photon; detected photons are routed to the two detectors according to
//! the optical configuration, and a start-stop correlator histograms the
//! delay from each start (detector A) to the next stop (detector B).
//!
//! In the 50/50 configuration the two photons of one pulse are routed
//! jointly: they leave by different ports with probability
//! `½(1 − K² cos Δω δt)`, `δt` being their emission-time difference. Only
//! detected photons are generated, by drawing geometric gaps between
//! detections, since detection is independent of routing when both
//! detectors have the same efficiency.

mod histogram;
mod normalize;

pub use histogram::{peak_heights, CoincidenceHistogram, Configuration, Peak, PeakLayout};
pub use normalize::{extract_zero_peak, normalize, normalize_batches, HeightMode, NormalizedSignal, ZeroPeak};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coincidence_model::{peak_ratio, BroadeningParams};
use crate::constants::{HBAR, K_B};
use crate::error::{Error, Result};
use crate::trap_dynamics::{
    atom_rng, sample_thermal_state, simulate_pulse_train, EmitterConstants, MotionSettings, TrapConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceConfig {
    /// s.
    pub pulse_period: f64,
    pub pulses_per_burst: usize,
    /// s.
    pub burst_duration: f64,
    /// s.
    pub cooling_duration: f64,
    pub bursts_per_load: usize,
    /// Mean wait for a new atom pair, s. Enters only the wall-clock estimate.
    pub reload_delay_mean: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            pulse_period: 200e-9,
            pulses_per_burst: 575,
            burst_duration: 115e-6,
            cooling_duration: 885e-6,
            bursts_per_load: 15,
            reload_delay_mean: 0.3,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pulse_period", self.pulse_period),
            ("burst_duration", self.burst_duration),
            ("cooling_duration", self.cooling_duration),
            ("reload_delay_mean", self.reload_delay_mean),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("sequence {name} must be positive, got {v}")));
            }
        }
        if self.pulses_per_burst == 0 || self.bursts_per_load == 0 {
            return Err(Error::domain("sequence needs at least one pulse and one burst"));
        }
        let mismatch = (self.pulses_per_burst as f64 * self.pulse_period - self.burst_duration).abs();
        if mismatch > self.pulse_period * (1.0 + 1e-9) {
            return Err(Error::domain(format!(
                "{} pulses of {:e} s do not fill a {:e} s burst",
                self.pulses_per_burst, self.pulse_period, self.burst_duration
            )));
        }
        Ok(())
    }

    /// Wall-clock duration of one load including the mean reload delay, s.
    pub fn load_duration(&self) -> f64 {
        self.bursts_per_load as f64 * (self.burst_duration + self.cooling_duration) + self.reload_delay_mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Overall collection and detection efficiency of each detector.
    pub efficiency_per_detector: f64,
    /// Raw histogram bin width, s.
    pub bin_width: f64,
    /// Presentation rebin factor (odd).
    pub rebin_factor: usize,
    /// Dark-count rate of each detector during bursts, 1/s.
    pub background_rate: f64,
    /// Gaussian timing jitter of each detection, s.
    pub jitter_sigma: f64,
    pub configuration: Configuration,
    /// Minimum histogram half-range, s. The correlator's stop delay equals
    /// the actual half-span after rounding to whole rebinned bins.
    pub histogram_range: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            efficiency_per_detector: 0.006,
            bin_width: 1.2e-9,
            rebin_factor: 3,
            background_rate: 200.0,
            jitter_sigma: 0.3e-9,
            configuration: Configuration::Mixer50_50,
            histogram_range: 700e-9,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        let e = self.efficiency_per_detector;
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::domain(format!(
                "detection efficiency must lie in [0, 1], got {e}"
            )));
        }
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) {
            return Err(Error::domain("bin width must be positive"));
        }
        if self.rebin_factor == 0 || self.rebin_factor.is_multiple_of(2) {
            return Err(Error::domain("rebin factor must be odd"));
        }
        if !(self.background_rate.is_finite() && self.background_rate >= 0.0) {
            return Err(Error::domain("background rate must be non-negative"));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(Error::domain("jitter must be non-negative"));
        }
        if !(self.histogram_range.is_finite() && self.histogram_range > 0.0) {
            return Err(Error::domain("histogram range must be positive"));
        }
        Ok(())
    }

    pub fn empty_histogram(&self) -> Result<CoincidenceHistogram> {
        CoincidenceHistogram::centered(
            self.bin_width,
            self.histogram_range,
            self.rebin_factor,
            self.configuration,
        )
    }
}

/// Source of the emission-frequency spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FrequencyModel {
    /// Lightshifts drawn independently per photon from `U² e^{−2U/k_B T}`.
    Thermal {
        temperature: f64,
        #[serde(default = "unit_factor")]
        differential_shift_factor: f64,
    },
    /// Lightshifts read from trap Monte-Carlo bursts. Each burst of each
    /// atom replays a burst drawn from a pool simulated from a fresh
    /// thermal state, which is what the cooling period between bursts
    /// produces.
    TrapMonteCarlo {
        #[serde(default)]
        trap: TrapConfig,
        #[serde(default)]
        motion: MotionSettings,
        initial_temperature: f64,
        #[serde(default = "unit_factor")]
        differential_shift_factor: f64,
        #[serde(default = "default_pool_size")]
        pool_size: usize,
    },
}

fn unit_factor() -> f64 {
    1.0
}

fn default_pool_size() -> usize {
    2000
}

impl FrequencyModel {
    pub fn thermal(temperature: f64) -> Self {
        FrequencyModel::Thermal {
            temperature,
            differential_shift_factor: 1.0,
        }
    }

    fn differential_shift_factor(&self) -> f64 {
        match *self {
            FrequencyModel::Thermal {
                differential_shift_factor,
                ..
            }
            | FrequencyModel::TrapMonteCarlo {
                differential_shift_factor,
                ..
            } => differential_shift_factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPhysics {
    /// Spatial overlap K of the two collected modes.
    pub overlap: f64,
    pub emitter: EmitterConstants,
    pub frequency: FrequencyModel,
    /// Probability that an atom survives one burst; `None` disables loss.
    pub burst_survival: Option<f64>,
}

impl Default for ExperimentPhysics {
    fn default() -> Self {
        ExperimentPhysics {
            overlap: 0.7,
            emitter: EmitterConstants::default(),
            frequency: FrequencyModel::thermal(180e-6),
            burst_survival: Some(default_burst_survival()),
        }
    }
}

/// Per-burst survival that leaves 65% of atoms after 15 bursts.
pub fn default_burst_survival() -> f64 {
    0.65f64.powf(1.0 / 15.0)
}

impl ExperimentPhysics {
    pub fn validate(&self) -> Result<()> {
        peak_ratio(self.overlap)?;
        self.emitter.validate()?;
        match self.frequency {
            FrequencyModel::Thermal {
                temperature,
                differential_shift_factor,
            } => {
                BroadeningParams::new(temperature, differential_shift_factor, self.emitter.decay_rate())?;
            }
            FrequencyModel::TrapMonteCarlo {
                trap,
                initial_temperature,
                differential_shift_factor,
                pool_size,
                ..
            } => {
                trap.validate(self.emitter.mass)?;
                BroadeningParams::new(
                    initial_temperature,
                    differential_shift_factor,
                    self.emitter.decay_rate(),
                )?;
                if pool_size == 0 {
                    return Err(Error::domain("trap Monte-Carlo pool must not be empty"));
                }
            }
        }
        if let Some(s) = self.burst_survival {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::domain(format!("burst survival must lie in (0, 1], got {s}")));
            }
        }
        Ok(())
    }

    /// Mean number of same-pulse pairs with both photons detected per load.
    pub fn expected_pairs_per_load(&self, seq: &SequenceConfig, det: &DetectionConfig) -> f64 {
        let q = self.emitter.excitation_probability * det.efficiency_per_detector;
        let s2 = self.burst_survival.unwrap_or(1.0).powi(2);
        let alive: f64 = (0..seq.bursts_per_load).map(|b| s2.powi(b as i32)).sum();
        seq.pulses_per_burst as f64 * q * q * alive
    }

    /// Loads needed for `target` expected zero-delay pair events.
    pub fn loads_for_pair_events(&self, target: f64, seq: &SequenceConfig, det: &DetectionConfig) -> usize {
        (target / self.expected_pairs_per_load(seq, det)).ceil().max(1.0) as usize
    }
}

/// One recorded emission burst of a single atom from the trap pool.
#[derive(Debug, Clone)]
struct PoolBurst {
    /// Lightshift at each excited pulse, indexed by pulse; `None` if not excited.
    shifts: Vec<Option<f64>>,
    escaped_at: Option<usize>,
}

fn build_pool(physics: &ExperimentPhysics, seq: &SequenceConfig, seed: u64) -> Result<Vec<PoolBurst>> {
    let FrequencyModel::TrapMonteCarlo {
        trap,
        motion,
        initial_temperature,
        pool_size,
        ..
    } = physics.frequency
    else {
        return Ok(Vec::new());
    };
    let one = |i: usize| -> Result<PoolBurst> {
        let mut rng = atom_rng(seed ^ 0x005e_ed0f_7aa9, i as u64);
        let start = sample_thermal_state(&trap, physics.emitter.mass, initial_temperature, &mut rng)?;
        let r = simulate_pulse_train(&start, &trap, &physics.emitter, seq, &motion, &mut rng)?;
        let mut shifts = vec![None; seq.pulses_per_burst];
        for rec in r.lightshifts {
            shifts[rec.pulse_index] = Some(rec.lightshift);
        }
        Ok(PoolBurst {
            shifts,
            escaped_at: r.escaped_at,
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..pool_size).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..pool_size).map(one).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Photon {
    pulse: usize,
    /// Emission time within the burst, s.
    time: f64,
    /// Lightshift of the emitting atom, J.
    shift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Detector {
    A,
    B,
}

struct LoadSampler<'a> {
    seq: &'a SequenceConfig,
    det: &'a DetectionConfig,
    physics: &'a ExperimentPhysics,
    pool: &'a [PoolBurst],
    emission: Exp<f64>,
    jitter: Option<Normal<f64>>,
    gamma_shift: Option<Gamma<f64>>,
    /// `1 / ln(1 − q)` for inversion sampling of the pulses skipped
    /// between detections, `q` the per-pulse detection probability.
    inv_log_miss: Option<f64>,
    /// `e^{−μ}` for the dark count number `μ` per detector per burst.
    dark_zero: Option<f64>,
    eta_over_hbar: f64,
    k2: f64,
}

impl<'a> LoadSampler<'a> {
    fn new(
        seq: &'a SequenceConfig,
        det: &'a DetectionConfig,
        physics: &'a ExperimentPhysics,
        pool: &'a [PoolBurst],
    ) -> Result<Self> {
        let decay_rate = physics.emitter.decay_rate();
        let q = physics.emitter.excitation_probability * det.efficiency_per_detector;
        let gamma_shift = match physics.frequency {
            FrequencyModel::Thermal { temperature, .. } if temperature > 0.0 => {
                Some(Gamma::new(3.0, 0.5 * K_B * temperature).map_err(|e| Error::domain(e.to_string()))?)
            }
            _ => None,
        };
        let dark_mean = det.background_rate * seq.pulses_per_burst as f64 * seq.pulse_period;
        Ok(LoadSampler {
            seq,
            det,
            physics,
            pool,
            emission: Exp::new(decay_rate).map_err(|e| Error::domain(e.to_string()))?,
            jitter: if det.jitter_sigma > 0.0 {
                Some(Normal::new(0.0, det.jitter_sigma).map_err(|e| Error::domain(e.to_string()))?)
            } else {
                None
            },
            gamma_shift,
            inv_log_miss: if q >= 1.0 {
                Some(0.0)
            } else if q > 0.0 {
                Some(1.0 / (-q).ln_1p())
            } else {
                None
            },
            dark_zero: (dark_mean > 0.0).then(|| (-dark_mean).exp()),
            eta_over_hbar: physics.frequency.differential_shift_factor() / HBAR,
            k2: physics.overlap * physics.overlap,
        })
    }

    /// Detected photons of one atom during one burst, in pulse order.
    /// Returns the photons and whether the atom escaped during the burst.
    fn atom_burst(&self, rng: &mut ChaCha8Rng, out: &mut Vec<Photon>) -> bool {
        out.clear();
        let period = self.seq.pulse_period;
        if self.pool.is_empty() {
            let Some(inv) = self.inv_log_miss else { return false };
            let gap = |rng: &mut ChaCha8Rng| -> usize {
                let u: f64 = 1.0 - rng.random::<f64>();
                let g = (u.ln() * inv).floor();
                if g < 1e15 {
                    g as usize
                } else {
                    usize::MAX / 2
                }
            };
            let mut pulse = gap(rng);
            while pulse < self.seq.pulses_per_burst {
                let shift = self.gamma_shift.as_ref().map_or(0.0, |g| g.sample(rng));
                out.push(Photon {
                    pulse,
                    time: pulse as f64 * period + self.emission.sample(rng),
                    shift,
                });
                pulse += 1 + gap(rng);
            }
            false
        } else {
            let burst = &self.pool[rng.random_range(0..self.pool.len())];
            let eff = self.det.efficiency_per_detector;
            let end = burst.escaped_at.unwrap_or(self.seq.pulses_per_burst);
            for (pulse, shift) in burst.shifts[..end].iter().enumerate() {
                if let Some(u) = shift {
                    if rng.random::<f64>() < eff {
                        out.push(Photon {
                            pulse,
                            time: pulse as f64 * period + self.emission.sample(rng),
                            shift: *u,
                        });
                    }
                }
            }
            burst.escaped_at.is_some()
        }
    }

    fn detect(&self, rng: &mut ChaCha8Rng, t: f64) -> f64 {
        match &self.jitter {
            Some(j) => t + j.sample(rng),
            None => t,
        }
    }

    fn route(&self, rng: &mut ChaCha8Rng, photons: [&[Photon]; 2], starts: &mut Vec<f64>, stops: &mut Vec<f64>) {
        let mut push = |rng: &mut ChaCha8Rng, d: Detector, t: f64| {
            let t = self.detect(rng, t);
            match d {
                Detector::A => starts.push(t),
                Detector::B => stops.push(t),
            }
        };
        match self.det.configuration {
            Configuration::Separator => {
                for p in photons[0] {
                    push(rng, Detector::A, p.time);
                }
                for p in photons[1] {
                    push(rng, Detector::B, p.time);
                }
            }
            Configuration::Mixer50_50 => {
                let coin = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { Detector::A } else { Detector::B };
                let (mut i, mut j) = (0, 0);
                let (a, b) = (photons[0], photons[1]);
                while i < a.len() || j < b.len() {
                    let pa = a.get(i).map_or(usize::MAX, |p| p.pulse);
                    let pb = b.get(j).map_or(usize::MAX, |p| p.pulse);
                    if pa == pb {
                        let (p1, p2) = (a[i], b[j]);
                        let dw = self.eta_over_hbar * (p1.shift - p2.shift);
                        let dt = p1.time - p2.time;
                        let split = 0.5 * (1.0 - self.k2 * (dw * dt).cos());
                        if rng.random::<f64>() < split {
                            let first = coin(rng);
                            let second = if first == Detector::A { Detector::B } else { Detector::A };
                            push(rng, first, p1.time);
                            push(rng, second, p2.time);
                        } else {
                            let d = coin(rng);
                            push(rng, d, p1.time);
                            push(rng, d, p2.time);
                        }
                        i += 1;
                        j += 1;
                    } else if pa < pb {
                        let d = coin(rng);
                        push(rng, d, a[i].time);
                        i += 1;
                    } else {
                        let d = coin(rng);
                        push(rng, d, b[j].time);
                        j += 1;
                    }
                }
            }
        }
    }

    fn add_dark_counts(&self, rng: &mut ChaCha8Rng, events: &mut Vec<f64>) {
        if let Some(zero) = self.dark_zero {
            let span = self.seq.pulses_per_burst as f64 * self.seq.pulse_period;
            let mut prod = rng.random::<f64>();
            while prod > zero {
                events.push(rng.random::<f64>() * span);
                prod *= rng.random::<f64>();
            }
        }
    }

    fn run_load(&self, rng: &mut ChaCha8Rng, hist: &mut CoincidenceHistogram, scratch: &mut Scratch) {
        let mut alive = [true, true];
        let survival = self.physics.burst_survival;
        for _burst in 0..self.seq.bursts_per_load {
            if !alive[0] && !alive[1] {
                break;
            }
            let mut escaped = [false, false];
            for k in 0..2 {
                if alive[k] {
                    escaped[k] = self.atom_burst(rng, &mut scratch.photons[k]);
                } else {
                    scratch.photons[k].clear();
                }
            }
            scratch.starts.clear();
            scratch.stops.clear();
            self.route(
                rng,
                [&scratch.photons[0], &scratch.photons[1]],
                &mut scratch.starts,
                &mut scratch.stops,
            );
            self.add_dark_counts(rng, &mut scratch.starts);
            self.add_dark_counts(rng, &mut scratch.stops);
            start_stop(&mut scratch.starts, &mut scratch.stops, hist);
            for k in 0..2 {
                if escaped[k] {
                    alive[k] = false;
                }
                if let Some(s) = survival {
                    if alive[k] && rng.random::<f64>() >= s {
                        alive[k] = false;
                    }
                }
            }
        }
        hist.total_pulse_cycles += (self.seq.bursts_per_load * self.seq.pulses_per_burst) as u64;
    }
}

#[derive(Default)]
struct Scratch {
    photons: [Vec<Photon>; 2],
    starts: Vec<f64>,
    stops: Vec<f64>,
}

/// Start-stop correlation: each start is paired with the first stop at or
/// after `start + first_edge` (the stop channel is delayed by the
/// histogram's negative half-span), and the delay is histogrammed if it
/// falls inside the histogram.
fn start_stop(starts: &mut [f64], stops: &mut [f64], hist: &mut CoincidenceHistogram) {
    if starts.is_empty() || stops.is_empty() {
        return;
    }
    starts.sort_unstable_by(f64::total_cmp);
    stops.sort_unstable_by(f64::total_cmp);
    let offset = hist.first_edge;
    let mut j = 0;
    for &t in starts.iter() {
        while j < stops.len() && stops[j] - t < offset {
            j += 1;
        }
        if let Some(&s) = stops.get(j) {
            hist.record(s - t);
        }
    }
}

/// Stable hash of any serializable configuration, hex-encoded.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).unwrap_or_default();
    let digest = Sha256::digest(json.as_bytes());
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed for sub-task `tag` of a run with master seed `seed` (SplitMix64).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed.wrapping_add(tag.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const LOAD_CHUNK: usize = 64;

/// Simulate `n_loads` atom-pair loads and return the start-stop histogram.
///
/// Loads are split into fixed chunks with per-load random streams, and
/// chunk histograms are merged by integer addition, so the result depends
/// only on the inputs and `seed`, never on thread scheduling.
pub fn run_experiment(
    seq: &SequenceConfig,
    det: &DetectionConfig,
    physics: &ExperimentPhysics,
    n_loads: usize,
    seed: u64,
) -> Result<CoincidenceHistogram> {
    let (template, parts) = run_load_ranges(seq, det, physics, n_loads, seed, seed, chunk_ranges(n_loads))?;
    merged(template, &parts)
}

/// As [`run_experiment`], but return `n_batches` histograms over
/// contiguous load ranges. Their sum equals the single-histogram run.
pub fn run_experiment_batches(
    seq: &SequenceConfig,
    det: &DetectionConfig,
    physics: &ExperimentPhysics,
    n_loads: usize,
    seed: u64,
    n_batches: usize,
) -> Result<Vec<CoincidenceHistogram>> {
    let ranges = batch_ranges(n_loads, n_batches)?;
    Ok(run_load_ranges(seq, det, physics, n_loads, seed, seed, ranges)?.1)
}

fn batch_ranges(n_loads: usize, n_batches: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if n_batches == 0 || n_batches > n_loads {
        return Err(Error::domain(format!(
            "batch count {n_batches} must lie between 1 and the number of loads {n_loads}"
        )));
    }
    Ok((0..n_batches)
        .map(|b| b * n_loads / n_batches..(b + 1) * n_loads / n_batches)
        .collect())
}

fn chunk_ranges(n_loads: usize) -> Vec<std::ops::Range<usize>> {
    (0..n_loads.div_ceil(LOAD_CHUNK))
        .map(|c| c * LOAD_CHUNK..((c + 1) * LOAD_CHUNK).min(n_loads))
        .collect()
}

fn merged(template: CoincidenceHistogram, parts: &[CoincidenceHistogram]) -> Result<CoincidenceHistogram> {
    let mut total = template;
    for p in parts {
        total.merge(p)?;
    }
    Ok(total)
}

fn run_load_ranges(
    seq: &SequenceConfig,
    det: &DetectionConfig,
    physics: &ExperimentPhysics,
    n_loads: usize,
    seed: u64,
    pool_seed: u64,
    ranges: Vec<std::ops::Range<usize>>,
) -> Result<(CoincidenceHistogram, Vec<CoincidenceHistogram>)> {
    seq.validate()?;
    det.validate()?;
    physics.validate()?;
    let mut template = det.empty_histogram()?;
    template.seed = seed;
    template.config_hash = config_hash(&(seq, det, physics, n_loads));
    if det.efficiency_per_detector == 0.0 {
        eprintln!("warning: detection efficiency is zero; the histogram will be empty");
    }

    let pool = build_pool(physics, seq, pool_seed)?;
    let sampler = LoadSampler::new(seq, det, physics, &pool)?;
    let run_range = |range: std::ops::Range<usize>| -> CoincidenceHistogram {
        let mut hist = template.clone();
        let mut scratch = Scratch::default();
        for load in range {
            let mut rng = atom_rng(seed, load as u64);
            sampler.run_load(&mut rng, &mut hist, &mut scratch);
        }
        hist
    };
    #[cfg(feature = "parallel")]
    let parts = {
        use rayon::prelude::*;
        ranges.into_par_iter().map(run_range).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts = ranges.into_iter().map(run_range).collect();
    Ok((template, parts))
}

/// Mixer and separator histograms from independent load streams of one
/// seed. Both draw from the same trap Monte-Carlo burst pool.
pub fn run_both_configurations(
    seq: &SequenceConfig,
    det: &DetectionConfig,
    physics: &ExperimentPhysics,
    n_loads: usize,
    seed: u64,
) -> Result<(CoincidenceHistogram, CoincidenceHistogram)> {
    let (mixer, separator) = both_configurations(det);
    let run = |d: &DetectionConfig, tag: u64| -> Result<CoincidenceHistogram> {
        let (template, parts) = run_load_ranges(
            seq,
            d,
            physics,
            n_loads,
            derive_seed(seed, tag),
            seed,
            chunk_ranges(n_loads),
        )?;
        merged(template, &parts)
    };
    Ok((run(&mixer, 1)?, run(&separator, 2)?))
}

/// Batched form of [`run_both_configurations`]; the merged batches equal
/// its output.
pub fn run_both_configurations_batches(
    seq: &SequenceConfig,
    det: &DetectionConfig,
    physics: &ExperimentPhysics,
    n_loads: usize,
    seed: u64,
    n_batches: usize,
) -> Result<(Vec<CoincidenceHistogram>, Vec<CoincidenceHistogram>)> {
    let (mixer, separator) = both_configurations(det);
    let run = |d: &DetectionConfig, tag: u64| -> Result<Vec<CoincidenceHistogram>> {
        let ranges = batch_ranges(n_loads, n_batches)?;
        Ok(run_load_ranges(seq, d, physics, n_loads, derive_seed(seed, tag), seed, ranges)?.1)
    };
    Ok((run(&mixer, 1)?, run(&separator, 2)?))
}

fn both_configurations(det: &DetectionConfig) -> (DetectionConfig, DetectionConfig) {
    (
        DetectionConfig {
            configuration: Configuration::Mixer50_50,
            ..*det
        },
        DetectionConfig {
            configuration: Configuration::Separator,
            ..*det
        },
    )
}
