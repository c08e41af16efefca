//! Temporal photon wavepackets and the two-photon coincidence density behind
//! a 50/50 beam splitter.
//!
//! A photon emitted after a short excitation pulse has the amplitude
//! `H(t - t0) exp(-Γ(t - t0)/2) exp(iω(t - t0))`. Two such photons meeting on
//! a beam splitter give a coincidence density that is the squared difference
//! of two detection paths. With the spatial modes reduced to their overlap
//! `K`, integrating over both detector surfaces leaves
//!
//! ```text
//! |a|² + |b|² − 2 K² Re(a b*),   a = E₁(t+τ)E₂(t),  b = E₂(t+τ)E₁(t)
//! ```
//!
//! which integrates over `t` to `e^{-Γ|τ|}(1 − K² cos Δωτ)` for identical
//! decay rates. All densities are scaled so that `K = 0, τ = 0` gives 1.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::DEFAULT_DECAY_RATE;
use crate::error::{Error, Result};

/// Number of decay times covered by the coincidence quadrature. The
/// integrand falls as `e^{-2Γt}`, so the neglected tail is below `e^{-40}`.
pub const QUADRATURE_DECAY_TIMES: f64 = 20.0;

/// Absolute tolerance of the coincidence quadrature on the normalized scale.
pub const QUADRATURE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonWavepacket {
    /// Γ, 1/s.
    pub decay_rate: f64,
    /// Carrier offset from the unshifted line, rad/s.
    pub carrier_offset: f64,
    /// t0, s.
    pub emission_time: f64,
}

impl Default for PhotonWavepacket {
    fn default() -> Self {
        PhotonWavepacket {
            decay_rate: DEFAULT_DECAY_RATE,
            carrier_offset: 0.0,
            emission_time: 0.0,
        }
    }
}

impl PhotonWavepacket {
    pub fn new(decay_rate: f64, carrier_offset: f64, emission_time: f64) -> Result<Self> {
        let wp = PhotonWavepacket {
            decay_rate,
            carrier_offset,
            emission_time,
        };
        wp.validate()?;
        Ok(wp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_rate.is_finite() && self.decay_rate > 0.0) {
            return Err(Error::domain(format!(
                "decay rate must be positive and finite, got {}",
                self.decay_rate
            )));
        }
        if !self.carrier_offset.is_finite() || !self.emission_time.is_finite() {
            return Err(Error::domain("wavepacket parameters must be finite"));
        }
        Ok(())
    }

    /// Unnormalized field amplitude at time `t`.
    pub fn amplitude(&self, t: f64) -> Result<Complex64> {
        self.validate()?;
        if !t.is_finite() {
            return Err(Error::domain(format!("time must be finite, got {t}")));
        }
        Ok(self.amplitude_unchecked(t))
    }

    /// Amplitude scaled by `√Γ` so that `∫|E|² dt = 1`.
    pub fn normalized_amplitude(&self, t: f64) -> Result<Complex64> {
        Ok(self.amplitude(t)? * self.decay_rate.sqrt())
    }

    #[inline]
    fn amplitude_unchecked(&self, t: f64) -> Complex64 {
        let s = t - self.emission_time;
        if s < 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar((-0.5 * self.decay_rate * s).exp(), self.carrier_offset * s)
    }
}

/// Free-function form of [`PhotonWavepacket::amplitude`].
pub fn wavepacket_amplitude(wp: &PhotonWavepacket, t: f64) -> Result<Complex64> {
    wp.amplitude(t)
}

fn check_overlap(k: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::domain(format!("overlap K must lie in [0, 1], got {k}")));
    }
    Ok(())
}

/// Closed-form coincidence density `e^{-Γ|τ|}(1 − K² cos Δωτ)`.
pub fn coincidence_density_closed(tau: f64, k: f64, delta_omega: f64, decay_rate: f64) -> Result<f64> {
    check_overlap(k)?;
    if !(decay_rate.is_finite() && decay_rate > 0.0) {
        return Err(Error::domain(format!("decay rate must be positive, got {decay_rate}")));
    }
    if !tau.is_finite() || !delta_omega.is_finite() {
        return Err(Error::domain("delay and frequency difference must be finite"));
    }
    Ok(closed_unchecked(tau, k, delta_omega, decay_rate))
}

#[inline]
pub(crate) fn closed_unchecked(tau: f64, k: f64, delta_omega: f64, decay_rate: f64) -> f64 {
    let value = (-decay_rate * tau.abs()).exp() * (1.0 - k * k * (delta_omega * tau).cos());
    value.max(0.0)
}

/// Numerical evaluation of the two-path coincidence integral.
///
/// Both wavepackets may have their own decay rates and emission times; the
/// result is scaled by `(Γ₁ + Γ₂)/2`, which reproduces the closed form when
/// the decay rates agree.
pub fn coincidence_density_integral(wp1: &PhotonWavepacket, wp2: &PhotonWavepacket, k: f64, tau: f64) -> Result<f64> {
    wp1.validate()?;
    wp2.validate()?;
    check_overlap(k)?;
    if !tau.is_finite() {
        return Err(Error::domain("delay must be finite"));
    }
    let k2 = k * k;
    let scale = 0.5 * (wp1.decay_rate + wp2.decay_rate);
    let integrand = |t: f64| {
        let a = wp1.amplitude_unchecked(t + tau) * wp2.amplitude_unchecked(t);
        let b = wp2.amplitude_unchecked(t + tau) * wp1.amplitude_unchecked(t);
        scale * (a.norm_sqr() + b.norm_sqr() - 2.0 * k2 * (a * b.conj()).re)
    };

    // The integrand switches on at each wavepacket's start, seen from both
    // time arguments; splitting there keeps every piece analytic.
    let mut breaks = [
        wp1.emission_time,
        wp2.emission_time,
        wp1.emission_time - tau,
        wp2.emission_time - tau,
    ];
    breaks.sort_by(|a, b| a.total_cmp(b));
    let start = breaks[0];
    let slowest = wp1.decay_rate.min(wp2.decay_rate);
    let end = breaks[3] + QUADRATURE_DECAY_TIMES / slowest;

    // Sub-intervals of one decay time each keep the oscillatory factor well
    // resolved for the double-exponential rule.
    let mut nodes: Vec<f64> = breaks.iter().copied().filter(|&b| b > start).collect();
    let step = 1.0 / slowest;
    let mut t = start + step;
    while t < end {
        nodes.push(t);
        t += step;
    }
    nodes.push(end);
    nodes.sort_by(|a, b| a.total_cmp(b));
    nodes.dedup_by(|a, b| (*a - *b).abs() <= f64::EPSILON * b.abs().max(1e-30));

    let pieces = nodes.len() as f64;
    let piece_tol = QUADRATURE_TOLERANCE / pieces;
    let mut total = 0.0;
    let mut error = 0.0;
    let mut lo = start;
    for &hi in &nodes {
        if hi <= lo {
            continue;
        }
        let out = quadrature::integrate(integrand, lo, hi, piece_tol);
        total += out.integral;
        error += out.error_estimate;
        lo = hi;
    }
    if !(error <= QUADRATURE_TOLERANCE) || !total.is_finite() {
        return Err(Error::numerical(
            "coincidence quadrature did not converge",
            format!(
                "estimate={total:e} error={error:e} tolerance={QUADRATURE_TOLERANCE:e} tau={tau:e} pieces={pieces}"
            ),
        ));
    }
    Ok(total.max(0.0))
}
