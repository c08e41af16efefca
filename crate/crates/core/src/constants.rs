//! Physical constants (CODATA 2018) and rubidium-87 D2-line values, SI units.

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;
pub const PI: f64 = std::f64::consts::PI;

/// Mass of a rubidium-87 atom, kg.
pub const RB87_MASS: f64 = 1.443_160_648e-25;

/// Vacuum wavelength of the Rb D2 transition, m.
pub const RB87_D2_WAVELENGTH: f64 = 780.241e-9;

/// Excited-state lifetime used throughout, s.
pub const EXCITED_LIFETIME: f64 = 26e-9;

/// Default decay rate 1/lifetime, 1/s.
pub const DEFAULT_DECAY_RATE: f64 = 1.0 / EXCITED_LIFETIME;

pub const MICROKELVIN: f64 = 1e-6;
pub const NANOSECOND: f64 = 1e-9;
pub const MICROMETER: f64 = 1e-6;
