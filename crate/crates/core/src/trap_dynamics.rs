//! Classical Monte-Carlo of one atom in a tightly focused dipole trap under
//! pulsed excitation.
//!
//! The trap beam propagates along `z`; the excitation beam, and therefore
//! the absorption recoil, points along `x`. Between pulses the atom moves in
//! the full Gaussian-beam potential, integrated with a fourth-order
//! symplectic (Yoshida) splitting. At each pulse the atom is excited with the
//! configured probability, receives the absorption and emission kicks, and
//! the lightshift at its position is recorded as the shift felt by the
//! emitted photon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constants::{EXCITED_LIFETIME, HBAR, K_B, PI, RB87_D2_WAVELENGTH, RB87_MASS};
use crate::error::{Error, Result};
use crate::experiment_sim::SequenceConfig;

/// Relative mismatch allowed between the nominal pulse-axis trap frequency
/// and the one implied by depth and waist.
pub const FREQUENCY_CONSISTENCY: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialShape {
    /// Full Gaussian-beam optical potential.
    Gaussian,
    /// Harmonic expansion about the trap bottom.
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapConfig {
    /// Trap depth U0, J.
    pub depth: f64,
    /// Trap-beam waist, m.
    pub waist: f64,
    /// Trap-laser wavelength, m. Sets the Rayleigh range and the
    /// longitudinal frequency.
    pub wavelength: f64,
    /// Nominal oscillation frequency along the excitation axis, Hz.
    pub pulse_axis_frequency: f64,
    pub potential: PotentialShape,
}

impl Default for TrapConfig {
    fn default() -> Self {
        TrapConfig {
            depth: K_B * 1.5e-3,
            waist: 1e-6,
            wavelength: 810e-9,
            pulse_axis_frequency: 120e3,
            potential: PotentialShape::Gaussian,
        }
    }
}

impl TrapConfig {
    pub fn validate(&self, mass: f64) -> Result<()> {
        for (name, v) in [
            ("depth", self.depth),
            ("waist", self.waist),
            ("wavelength", self.wavelength),
            ("pulse_axis_frequency", self.pulse_axis_frequency),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("trap {name} must be positive, got {v}")));
            }
        }
        let derived = self.harmonic_frequencies(mass)[0];
        let rel = (derived - self.pulse_axis_frequency).abs() / self.pulse_axis_frequency;
        if rel > FREQUENCY_CONSISTENCY {
            return Err(Error::domain(format!(
                "pulse-axis frequency {:.1} Hz is inconsistent with depth and waist ({derived:.1} Hz)",
                self.pulse_axis_frequency
            )));
        }
        Ok(())
    }

    pub fn rayleigh_range(&self) -> f64 {
        PI * self.waist * self.waist / self.wavelength
    }

    /// Angular frequencies (x, y, z) of the harmonic expansion, rad/s.
    pub fn angular_frequencies(&self, mass: f64) -> [f64; 3] {
        let radial = (4.0 * self.depth / (mass * self.waist * self.waist)).sqrt();
        let zr = self.rayleigh_range();
        let longitudinal = (2.0 * self.depth / (mass * zr * zr)).sqrt();
        [radial, radial, longitudinal]
    }

    /// Harmonic frequencies (x, y, z), Hz.
    pub fn harmonic_frequencies(&self, mass: f64) -> [f64; 3] {
        self.angular_frequencies(mass).map(|w| w / (2.0 * PI))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoilModel {
    /// Absorption kick along the excitation beam plus isotropic emission kick.
    TwoKick,
    /// Isotropic emission kick only.
    SingleKick,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitterConstants {
    /// kg.
    pub mass: f64,
    /// Wavelength of the emitted photon, m.
    pub wavelength: f64,
    pub excitation_probability: f64,
    /// s.
    pub lifetime: f64,
    pub recoil: RecoilModel,
}

impl Default for EmitterConstants {
    fn default() -> Self {
        EmitterConstants {
            mass: RB87_MASS,
            wavelength: RB87_D2_WAVELENGTH,
            excitation_probability: 0.95,
            lifetime: EXCITED_LIFETIME,
            recoil: RecoilModel::TwoKick,
        }
    }
}

impl EmitterConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mass", self.mass),
            ("wavelength", self.wavelength),
            ("lifetime", self.lifetime),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("emitter {name} must be positive, got {v}")));
            }
        }
        let p = self.excitation_probability;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::domain(format!(
                "excitation probability must lie in (0, 1], got {p}"
            )));
        }
        Ok(())
    }

    /// Recoil velocity ħk/m, m/s.
    pub fn recoil_velocity(&self) -> f64 {
        HBAR * 2.0 * PI / (self.wavelength * self.mass)
    }

    /// ħ²k²/2m, J.
    pub fn recoil_energy(&self) -> f64 {
        0.5 * self.mass * self.recoil_velocity().powi(2)
    }

    pub fn decay_rate(&self) -> f64 {
        1.0 / self.lifetime
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AtomState {
    /// m, relative to the trap focus.
    pub position: [f64; 3],
    /// m/s.
    pub velocity: [f64; 3],
}

impl AtomState {
    pub fn kinetic_energy(&self, mass: f64) -> f64 {
        0.5 * mass * self.velocity.iter().map(|v| v * v).sum::<f64>()
    }

    /// Kinetic plus potential energy, measured from the trap bottom, J.
    pub fn energy(&self, trap: &TrapConfig, mass: f64) -> f64 {
        self.kinetic_energy(mass) + potential_energy(&self.position, trap, mass)
    }

    pub fn is_trapped(&self, trap: &TrapConfig, mass: f64) -> bool {
        self.energy(trap, mass) <= trap.depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightshiftRecord {
    pub pulse_index: usize,
    /// J.
    pub lightshift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub pulse_index: usize,
    pub lightshift: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrainResult {
    /// State at every pulse, before the kicks; empty unless requested.
    pub trajectory: Vec<TrajectoryPoint>,
    pub lightshifts: Vec<LightshiftRecord>,
    pub final_state: AtomState,
    /// Pulse index at which the atom was found above the trap depth.
    pub escaped_at: Option<usize>,
}

/// Boltzmann sample in the harmonic approximation; the focus at rest for `T = 0`.
pub fn sample_thermal_state<R: Rng + ?Sized>(
    trap: &TrapConfig,
    mass: f64,
    temperature: f64,
    rng: &mut R,
) -> Result<AtomState> {
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(Error::domain(format!(
            "temperature must be non-negative, got {temperature}"
        )));
    }
    if temperature == 0.0 {
        return Ok(AtomState::default());
    }
    let kt = K_B * temperature;
    let omegas = trap.angular_frequencies(mass);
    let sigma_v = (kt / mass).sqrt();
    let mut s = AtomState::default();
    for i in 0..3 {
        let sigma_x = (kt / mass).sqrt() / omegas[i];
        let nx: f64 = StandardNormal.sample(rng);
        let nv: f64 = StandardNormal.sample(rng);
        s.position[i] = sigma_x * nx;
        s.velocity[i] = sigma_v * nv;
    }
    Ok(s)
}

/// Rethermalization by the cooling light: a fresh sample at `t0`,
/// independent of the incoming state.
pub fn cooling_reset<R: Rng + ?Sized>(
    _state: &AtomState,
    trap: &TrapConfig,
    mass: f64,
    t0: f64,
    rng: &mut R,
) -> Result<AtomState> {
    sample_thermal_state(trap, mass, t0, rng)
}

/// Local lightshift (positive trap depth at the atom), J.
pub fn lightshift(position: &[f64; 3], trap: &TrapConfig, mass: f64) -> f64 {
    match trap.potential {
        PotentialShape::Gaussian => {
            let [x, y, z] = *position;
            let zr = trap.rayleigh_range();
            let u = 1.0 + (z / zr).powi(2);
            let rho2 = x * x + y * y;
            trap.depth / u * (-2.0 * rho2 / (trap.waist * trap.waist * u)).exp()
        }
        PotentialShape::Harmonic => (trap.depth - harmonic_energy(position, trap, mass)).max(0.0),
    }
}

fn harmonic_energy(position: &[f64; 3], trap: &TrapConfig, mass: f64) -> f64 {
    let w = trap.angular_frequencies(mass);
    0.5 * mass * (0..3).map(|i| (w[i] * position[i]).powi(2)).sum::<f64>()
}

/// Potential energy above the trap bottom, J.
pub fn potential_energy(position: &[f64; 3], trap: &TrapConfig, mass: f64) -> f64 {
    match trap.potential {
        PotentialShape::Gaussian => trap.depth - lightshift(position, trap, mass),
        PotentialShape::Harmonic => harmonic_energy(position, trap, mass),
    }
}

fn acceleration(position: &[f64; 3], trap: &TrapConfig, mass: f64) -> [f64; 3] {
    match trap.potential {
        PotentialShape::Gaussian => {
            let [x, y, z] = *position;
            let zr = trap.rayleigh_range();
            let w2 = trap.waist * trap.waist;
            let u = 1.0 + (z / zr).powi(2);
            let rho2 = x * x + y * y;
            let l = trap.depth / u * (-2.0 * rho2 / (w2 * u)).exp();
            let radial = -4.0 * l / (w2 * u) / mass;
            let du_dz = 2.0 * z / (zr * zr);
            let az = l * (-1.0 / u + 2.0 * rho2 / (w2 * u * u)) * du_dz / mass;
            [radial * x, radial * y, az]
        }
        PotentialShape::Harmonic => {
            let w = trap.angular_frequencies(mass);
            [
                -w[0] * w[0] * position[0],
                -w[1] * w[1] * position[1],
                -w[2] * w[2] * position[2],
            ]
        }
    }
}

/// Fourth-order symplectic integrator (Yoshida's triple-jump of leapfrog).
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub dt: f64,
}

const CBRT2: f64 = 1.259_921_049_894_873_2;
const YOSHIDA_W1: f64 = 1.0 / (2.0 - CBRT2);
const YOSHIDA_W0: f64 = -CBRT2 / (2.0 - CBRT2);
const DRIFT: [f64; 4] = [
    0.5 * YOSHIDA_W1,
    0.5 * (YOSHIDA_W0 + YOSHIDA_W1),
    0.5 * (YOSHIDA_W0 + YOSHIDA_W1),
    0.5 * YOSHIDA_W1,
];
const KICK: [f64; 3] = [YOSHIDA_W1, YOSHIDA_W0, YOSHIDA_W1];

impl Integrator {
    pub fn step(&self, state: &mut AtomState, trap: &TrapConfig, mass: f64) {
        let dt = self.dt;
        for stage in 0..4 {
            for i in 0..3 {
                state.position[i] += DRIFT[stage] * dt * state.velocity[i];
            }
            if stage < 3 {
                let a = acceleration(&state.position, trap, mass);
                for i in 0..3 {
                    state.velocity[i] += KICK[stage] * dt * a[i];
                }
            }
        }
    }

    pub fn advance(&self, state: &mut AtomState, trap: &TrapConfig, mass: f64, steps: usize) {
        for _ in 0..steps {
            self.step(state, trap, mass);
        }
    }
}

/// Integration parameters for one pulse train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSettings {
    /// Integrator steps per pulse period.
    pub substeps_per_pulse: usize,
    pub record_trajectory: bool,
}

impl Default for MotionSettings {
    fn default() -> Self {
        MotionSettings {
            substeps_per_pulse: 16,
            record_trajectory: false,
        }
    }
}

impl MotionSettings {
    /// Checks the step against `1/(50 f_max)`.
    pub fn validate(&self, trap: &TrapConfig, mass: f64, period: f64) -> Result<()> {
        if self.substeps_per_pulse == 0 {
            return Err(Error::domain("at least one integrator step per pulse is required"));
        }
        let f_max = trap.harmonic_frequencies(mass).into_iter().fold(0.0, f64::max);
        let dt = period / self.substeps_per_pulse as f64;
        if dt > 1.0 / (50.0 * f_max) {
            return Err(Error::domain(format!(
                "integrator step {dt:e} s exceeds 1/(50 f_max) = {:e} s",
                1.0 / (50.0 * f_max)
            )));
        }
        Ok(())
    }
}

fn isotropic_unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let cos_t: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    [sin_t * phi.cos(), sin_t * phi.sin(), cos_t]
}

fn apply_recoil<R: Rng + ?Sized>(state: &mut AtomState, constants: &EmitterConstants, rng: &mut R) {
    let vr = constants.recoil_velocity();
    match constants.recoil {
        RecoilModel::Off => {}
        RecoilModel::SingleKick => {
            let e = isotropic_unit(rng);
            for i in 0..3 {
                state.velocity[i] += vr * e[i];
            }
        }
        RecoilModel::TwoKick => {
            state.velocity[0] += vr;
            let e = isotropic_unit(rng);
            for i in 0..3 {
                state.velocity[i] += vr * e[i];
            }
        }
    }
}

/// One burst of pulses. Emission lightshifts are recorded at the pulse
/// instant; the 26 ns emission delay is short against the trap period.
pub fn simulate_pulse_train<R: Rng + ?Sized>(
    initial: &AtomState,
    trap: &TrapConfig,
    constants: &EmitterConstants,
    seq: &SequenceConfig,
    motion: &MotionSettings,
    rng: &mut R,
) -> Result<PulseTrainResult> {
    constants.validate()?;
    trap.validate(constants.mass)?;
    seq.validate()?;
    motion.validate(trap, constants.mass, seq.pulse_period)?;
    Ok(run_pulse_train(initial, trap, constants, seq, motion, rng, |_, _| {}))
}

/// Core loop; `observe` sees every pulse's pre-kick state of a trapped atom.
fn run_pulse_train<R: Rng + ?Sized, F: FnMut(usize, &AtomState)>(
    initial: &AtomState,
    trap: &TrapConfig,
    constants: &EmitterConstants,
    seq: &SequenceConfig,
    motion: &MotionSettings,
    rng: &mut R,
    mut observe: F,
) -> PulseTrainResult {
    let mass = constants.mass;
    let integrator = Integrator {
        dt: seq.pulse_period / motion.substeps_per_pulse as f64,
    };
    let mut state = *initial;
    let mut lightshifts = Vec::with_capacity(seq.pulses_per_burst);
    let mut trajectory = Vec::new();
    let mut escaped_at = None;
    for pulse in 0..seq.pulses_per_burst {
        if !state.is_trapped(trap, mass) {
            escaped_at = Some(pulse);
            break;
        }
        let shift = lightshift(&state.position, trap, mass);
        observe(pulse, &state);
        if motion.record_trajectory {
            trajectory.push(TrajectoryPoint {
                pulse_index: pulse,
                lightshift: shift,
                position: state.position,
                velocity: state.velocity,
            });
        }
        if rng.random::<f64>() < constants.excitation_probability {
            lightshifts.push(LightshiftRecord {
                pulse_index: pulse,
                lightshift: shift,
            });
            apply_recoil(&mut state, constants, rng);
        }
        integrator.advance(&mut state, trap, mass, motion.substeps_per_pulse);
    }
    if escaped_at.is_none() && !state.is_trapped(trap, mass) {
        escaped_at = Some(seq.pulses_per_burst);
    }
    PulseTrainResult {
        trajectory,
        lightshifts,
        final_state: state,
        escaped_at,
    }
}

/// Random stream for atom `index` under `master_seed`. Streams are
/// independent of evaluation order, so parallel and serial runs agree bit
/// for bit.
pub fn atom_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Per-pulse statistics of a thermal ensemble driven through one burst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleBurst {
    /// `m⟨v²⟩/3k_B` over trapped atoms at each pulse, K.
    pub kinetic_temperature: Vec<f64>,
    /// `⟨E⟩/3k_B` with E measured from the trap bottom, K.
    pub energy_temperature: Vec<f64>,
    /// Atoms still trapped at each pulse.
    pub trapped: Vec<usize>,
    pub n_atoms: usize,
    /// Atoms lost before the end of the burst.
    pub escaped: usize,
    /// Emission lightshifts of all atoms, J, in atom order then pulse order.
    pub lightshifts: Vec<f64>,
    /// Pulse index of each entry in `lightshifts`.
    pub pulse_indices: Vec<u32>,
    /// Mean energy above the trap bottom before the burst, J.
    pub mean_initial_energy: f64,
    /// Mean energy after the burst, J; escaped atoms count with their energy at escape.
    pub mean_final_energy: f64,
}

impl EnsembleBurst {
    /// Heating over the burst as `Δ⟨E⟩/3k_B`, K.
    ///
    /// Kinetic temperature is a poor gauge here: the fixed-axis absorption
    /// kicks drive a coherent oscillation of the whole ensemble, and the
    /// anharmonic trap shifts energy between kinetic and potential parts.
    pub fn temperature_rise(&self) -> f64 {
        (self.mean_final_energy - self.mean_initial_energy) / (3.0 * K_B)
    }

    /// Mean of `kinetic_temperature` over consecutive blocks of `block` pulses.
    pub fn block_kinetic_temperature(&self, block: usize) -> Vec<f64> {
        self.kinetic_temperature
            .chunks_exact(block.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn survival_fraction(&self) -> f64 {
        1.0 - self.escaped as f64 / self.n_atoms as f64
    }
}

#[derive(Default)]
struct PulseSums {
    kinetic: Vec<f64>,
    energy: Vec<f64>,
    trapped: Vec<usize>,
    escaped: usize,
    lightshifts: Vec<f64>,
    pulse_indices: Vec<u32>,
    initial_energy: f64,
    final_energy: f64,
}

impl PulseSums {
    fn new(pulses: usize) -> Self {
        PulseSums {
            kinetic: vec![0.0; pulses],
            energy: vec![0.0; pulses],
            trapped: vec![0; pulses],
            ..Default::default()
        }
    }

    fn merge(&mut self, other: PulseSums) {
        for i in 0..self.kinetic.len() {
            self.kinetic[i] += other.kinetic[i];
            self.energy[i] += other.energy[i];
            self.trapped[i] += other.trapped[i];
        }
        self.escaped += other.escaped;
        self.initial_energy += other.initial_energy;
        self.final_energy += other.final_energy;
        self.lightshifts.extend(other.lightshifts);
        self.pulse_indices.extend(other.pulse_indices);
    }
}

const ENSEMBLE_CHUNK: usize = 128;

/// Drive `n_atoms` atoms, each sampled at `temperature`, through one burst.
pub fn simulate_ensemble(
    trap: &TrapConfig,
    constants: &EmitterConstants,
    seq: &SequenceConfig,
    motion: &MotionSettings,
    temperature: f64,
    n_atoms: usize,
    master_seed: u64,
) -> Result<EnsembleBurst> {
    constants.validate()?;
    trap.validate(constants.mass)?;
    seq.validate()?;
    motion.validate(trap, constants.mass, seq.pulse_period)?;
    if n_atoms == 0 {
        return Err(Error::domain("ensemble needs at least one atom"));
    }
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(Error::domain(format!(
            "temperature must be non-negative, got {temperature}"
        )));
    }
    let pulses = seq.pulses_per_burst;
    let mass = constants.mass;
    let motion = MotionSettings {
        record_trajectory: false,
        ..*motion
    };

    let run_chunk = |chunk: usize| -> PulseSums {
        let mut sums = PulseSums::new(pulses);
        let lo = chunk * ENSEMBLE_CHUNK;
        let hi = (lo + ENSEMBLE_CHUNK).min(n_atoms);
        for atom in lo..hi {
            let mut rng = atom_rng(master_seed, atom as u64);
            let start = sample_thermal_state(trap, mass, temperature, &mut rng).expect("temperature validated above");
            let result = run_pulse_train(&start, trap, constants, seq, &motion, &mut rng, |p, s| {
                sums.kinetic[p] += s.kinetic_energy(mass);
                sums.energy[p] += s.energy(trap, mass);
                sums.trapped[p] += 1;
            });
            if result.escaped_at.is_some() {
                sums.escaped += 1;
            }
            sums.initial_energy += start.energy(trap, mass);
            sums.final_energy += result.final_state.energy(trap, mass);
            for r in result.lightshifts {
                sums.lightshifts.push(r.lightshift);
                sums.pulse_indices.push(r.pulse_index as u32);
            }
        }
        sums
    };

    let n_chunks = n_atoms.div_ceil(ENSEMBLE_CHUNK);
    let chunks: Vec<PulseSums> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..n_chunks).into_par_iter().map(run_chunk).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n_chunks).map(run_chunk).collect()
        }
    };
    let mut total = PulseSums::new(pulses);
    for c in chunks {
        total.merge(c);
    }

    let to_temperature = |sum: f64, n: usize| {
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64 / (1.5 * K_B)
        }
    };
    Ok(EnsembleBurst {
        kinetic_temperature: (0..pulses)
            .map(|p| to_temperature(total.kinetic[p], total.trapped[p]))
            .collect(),
        energy_temperature: (0..pulses)
            .map(|p| to_temperature(total.energy[p], total.trapped[p]) / 2.0)
            .collect(),
        trapped: total.trapped,
        n_atoms,
        escaped: total.escaped,
        lightshifts: total.lightshifts,
        pulse_indices: total.pulse_indices,
        mean_initial_energy: total.initial_energy / n_atoms as f64,
        mean_final_energy: total.final_energy / n_atoms as f64,
    })
}

/// Pooled emission lightshifts with a fit to `D² e^{−2D/k_B T}`, where
/// `D = U0 − U` is the reduction from the full trap depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightshiftDistribution {
    pub depth: f64,
    /// Histogram edges of D, J.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_samples: usize,
    /// ⟨D⟩, J.
    pub mean_deficit: f64,
    /// Fitted temperature of the shape-3 gamma law, K.
    pub t_eff: f64,
    pub t_eff_sigma: f64,
    /// Pearson χ² of the histogram against the fitted law.
    pub chi2: f64,
    pub dof: usize,
    /// Fraction of atoms still trapped at the end of the burst.
    pub survival: f64,
}

/// Regularized lower incomplete gamma function for shape 3.
fn gamma3_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-x).exp() * (1.0 + x + 0.5 * x * x)
    }
}

impl LightshiftDistribution {
    /// Build from deficits `D` (J). `T_eff` is the maximum-likelihood
    /// estimate under the shape-3 law, `2⟨D⟩/3k_B`.
    pub fn from_deficits(deficits: &[f64], depth: f64, n_bins: usize, survival: f64) -> Self {
        let n = deficits.len();
        let mean = if n == 0 {
            0.0
        } else {
            deficits.iter().sum::<f64>() / n as f64
        };
        let t_eff = 2.0 * mean / (3.0 * K_B);
        let t_eff_sigma = if n == 0 {
            f64::NAN
        } else {
            t_eff / (3.0 * n as f64).sqrt()
        };

        let upper = deficits.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let width = upper / n_bins as f64;
        let bin_edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 * width).collect();
        let mut counts = vec![0u64; n_bins];
        for &d in deficits {
            let i = ((d / width) as usize).min(n_bins - 1);
            counts[i] += 1;
        }

        let (mut chi2, mut used) = (0.0, 0usize);
        let scale = 0.5 * K_B * t_eff;
        if scale > 0.0 {
            for i in 0..n_bins {
                let p = gamma3_cdf(bin_edges[i + 1] / scale) - gamma3_cdf(bin_edges[i] / scale);
                let expected = p * n as f64;
                if expected >= 5.0 {
                    chi2 += (counts[i] as f64 - expected).powi(2) / expected;
                    used += 1;
                }
            }
        }
        LightshiftDistribution {
            depth,
            bin_edges,
            counts,
            n_samples: n,
            mean_deficit: mean,
            t_eff,
            t_eff_sigma,
            chi2,
            dof: used.saturating_sub(1),
            survival,
        }
    }
}

/// Full-ensemble lightshift distribution for one burst started at `temperature`.
pub fn lightshift_distribution(
    trap: &TrapConfig,
    constants: &EmitterConstants,
    seq: &SequenceConfig,
    motion: &MotionSettings,
    temperature: f64,
    n_atoms: usize,
    master_seed: u64,
) -> Result<LightshiftDistribution> {
    let burst = simulate_ensemble(trap, constants, seq, motion, temperature, n_atoms, master_seed)?;
    let deficits: Vec<f64> = burst.lightshifts.iter().map(|u| trap.depth - u).collect();
    Ok(LightshiftDistribution::from_deficits(
        &deficits,
        trap.depth,
        60,
        burst.survival_fraction(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::MICROKELVIN;

    fn harmonic() -> TrapConfig {
        TrapConfig {
            potential: PotentialShape::Harmonic,
            ..TrapConfig::default()
        }
    }

    #[test]
    fn default_trap_is_consistent() {
        let trap = TrapConfig::default();
        trap.validate(RB87_MASS).unwrap();
        let f = trap.harmonic_frequencies(RB87_MASS);
        assert!((f[0] - 120e3).abs() / 120e3 < 0.01, "{f:?}");
        assert!(f[2] < f[0]);
        let bad = TrapConfig {
            pulse_axis_frequency: 60e3,
            ..trap
        };
        assert!(bad.validate(RB87_MASS).is_err());
    }

    #[test]
    fn lightshift_profile() {
        let trap = TrapConfig::default();
        let u0 = lightshift(&[0.0; 3], &trap, RB87_MASS);
        assert_eq!(u0, K_B * 1.5e-3);
        let at_waist = lightshift(&[trap.waist, 0.0, 0.0], &trap, RB87_MASS);
        assert!((at_waist / u0 - (-2.0f64).exp()).abs() < 1e-14);
        assert!(lightshift(&[1e-4, 0.0, 0.0], &trap, RB87_MASS) < 1e-300);
    }

    #[test]
    fn force_is_gradient_of_lightshift() {
        let trap = TrapConfig::default();
        let p = [0.21e-6, -0.13e-6, 0.9e-6];
        let a = acceleration(&p, &trap, RB87_MASS);
        let h = 1e-12;
        for i in 0..3 {
            let mut lo = p;
            let mut hi = p;
            lo[i] -= h;
            hi[i] += h;
            let grad = (lightshift(&hi, &trap, RB87_MASS) - lightshift(&lo, &trap, RB87_MASS)) / (2.0 * h);
            let expect = grad / RB87_MASS;
            assert!(
                (a[i] - expect).abs() <= 1e-5 * expect.abs().max(1.0),
                "{i}: {} vs {expect}",
                a[i]
            );
        }
    }

    #[test]
    fn zero_temperature_sample_is_at_rest() {
        let mut rng = atom_rng(1, 0);
        let s = sample_thermal_state(&TrapConfig::default(), RB87_MASS, 0.0, &mut rng).unwrap();
        assert_eq!(s, AtomState::default());
        assert!(sample_thermal_state(&TrapConfig::default(), RB87_MASS, -1.0, &mut rng).is_err());
        let r = cooling_reset(&s, &TrapConfig::default(), RB87_MASS, 0.0, &mut rng).unwrap();
        assert_eq!(r, AtomState::default());
    }

    #[test]
    fn thermal_sample_obeys_equipartition() {
        let trap = harmonic();
        let t = 120.0 * MICROKELVIN;
        let mut rng = atom_rng(7, 0);
        let n = 100_000;
        let (mut e, mut pe) = (0.0, 0.0);
        for _ in 0..n {
            let s = sample_thermal_state(&trap, RB87_MASS, t, &mut rng).unwrap();
            e += s.energy(&trap, RB87_MASS);
            pe += potential_energy(&s.position, &trap, RB87_MASS);
        }
        let kt = K_B * t;
        assert!((e / n as f64 / (3.0 * kt) - 1.0).abs() < 0.02);
        assert!((pe / n as f64 / (1.5 * kt) - 1.0).abs() < 0.02);
    }

    #[test]
    fn cold_atom_without_recoil_stays_put() {
        let constants = EmitterConstants {
            recoil: RecoilModel::Off,
            ..Default::default()
        };
        let mut rng = atom_rng(3, 0);
        let r = simulate_pulse_train(
            &AtomState::default(),
            &TrapConfig::default(),
            &constants,
            &SequenceConfig::default(),
            &MotionSettings::default(),
            &mut rng,
        )
        .unwrap();
        assert!(r.escaped_at.is_none());
        assert!(!r.lightshifts.is_empty());
        assert!(r.lightshifts.iter().all(|l| l.lightshift == K_B * 1.5e-3));
    }

    #[test]
    fn harmonic_orbit_matches_analytic_solution() {
        let trap = harmonic();
        let w = trap.angular_frequencies(RB87_MASS);
        let mut s = AtomState {
            position: [50e-9, -30e-9, 200e-9],
            velocity: [0.02, 0.01, -0.015],
        };
        let s0 = s;
        let seq = SequenceConfig::default();
        let steps = MotionSettings::default().substeps_per_pulse;
        let integ = Integrator {
            dt: seq.pulse_period / steps as f64,
        };
        let e0 = s.energy(&trap, RB87_MASS);
        for pulse in 1..=200 {
            integ.advance(&mut s, &trap, RB87_MASS, steps);
            let e = s.energy(&trap, RB87_MASS);
            assert!(((e - e0) / e0).abs() <= 1e-6, "pulse {pulse}: {}", (e - e0) / e0);
            let t = pulse as f64 * seq.pulse_period;
            for i in 0..3 {
                let x = s0.position[i] * (w[i] * t).cos() + s0.velocity[i] / w[i] * (w[i] * t).sin();
                let amp = (s0.position[i].powi(2) + (s0.velocity[i] / w[i]).powi(2)).sqrt();
                assert!((s.position[i] - x).abs() <= 1e-5 * amp, "axis {i}");
            }
        }
    }

    #[test]
    fn halving_the_step_barely_moves_the_energy() {
        let trap = harmonic();
        let start = AtomState {
            position: [80e-9, 40e-9, -300e-9],
            velocity: [-0.03, 0.02, 0.01],
        };
        let seq = SequenceConfig::default();
        let n = MotionSettings::default().substeps_per_pulse;
        let run = |steps: usize| {
            let mut s = start;
            let integ = Integrator {
                dt: seq.pulse_period / steps as f64,
            };
            integ.advance(&mut s, &trap, RB87_MASS, steps * 575);
            s.energy(&trap, RB87_MASS)
        };
        let e1 = run(n);
        let e2 = run(2 * n);
        assert!(((e1 - e2) / e2).abs() <= 1e-8, "{}", (e1 - e2) / e2);
    }

    #[test]
    fn recoil_energy_of_rubidium() {
        let c = EmitterConstants::default();
        let t_rec = c.recoil_energy() / K_B;
        assert!((t_rec - 181e-9).abs() < 2e-9, "{t_rec}");
    }

    #[test]
    fn step_limit_is_enforced() {
        let m = MotionSettings {
            substeps_per_pulse: 1,
            record_trajectory: false,
        };
        assert!(m.validate(&TrapConfig::default(), RB87_MASS, 200e-9).is_err());
    }

    #[test]
    fn lightshifts_stay_within_depth() {
        let burst = simulate_ensemble(
            &TrapConfig::default(),
            &EmitterConstants::default(),
            &SequenceConfig::default(),
            &MotionSettings::default(),
            300.0 * MICROKELVIN,
            200,
            11,
        )
        .unwrap();
        let u0 = TrapConfig::default().depth;
        assert!(burst.lightshifts.iter().all(|&u| (0.0..=u0).contains(&u)));
    }

    #[test]
    fn ensemble_is_deterministic() {
        let run = || {
            simulate_ensemble(
                &TrapConfig::default(),
                &EmitterConstants::default(),
                &SequenceConfig::default(),
                &MotionSettings::default(),
                120.0 * MICROKELVIN,
                300,
                99,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn delta_distribution_without_motion() {
        let constants = EmitterConstants {
            recoil: RecoilModel::Off,
            ..Default::default()
        };
        let d = lightshift_distribution(
            &TrapConfig::default(),
            &constants,
            &SequenceConfig::default(),
            &MotionSettings::default(),
            0.0,
            4,
            5,
        )
        .unwrap();
        assert_eq!(d.mean_deficit, 0.0);
        assert_eq!(d.t_eff, 0.0);
    }
}
