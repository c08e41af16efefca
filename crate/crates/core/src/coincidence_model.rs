//! Temperature-broadened zero-delay coincidence signal.
//!
//! Each atom's lightshift at emission is drawn from `U² e^{−2U/k_B T}`, a
//! gamma law of shape 3 and scale `k_B T/2`. The photon frequency difference
//! is `Δω = η (U₁ − U₂)/ħ`, and the difference of two independent
//! gamma(3, s) variables has characteristic function `(1 + s²t²)^{−3}`. The
//! beat note `cos Δωτ` therefore averages to
//!
//! ```text
//! C(τ) = (1 + (η k_B T τ / 2ħ)²)^{−3}
//! ```
//!
//! and the coincidence density becomes `e^{−Γ|τ|}(1 − K² C(τ))`. This closed
//! form is a reconstruction; the Monte-Carlo checks in the test suite are
//! what tie it back to the lightshift model.

use serde::{Deserialize, Serialize};

use crate::constants::{DEFAULT_DECAY_RATE, HBAR, K_B};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BroadeningParams {
    /// Atom temperature, K.
    pub temperature: f64,
    /// η in `Δω = η ΔU / ħ`.
    pub differential_shift_factor: f64,
    /// Γ, 1/s.
    pub decay_rate: f64,
}

impl Default for BroadeningParams {
    fn default() -> Self {
        BroadeningParams {
            temperature: 0.0,
            differential_shift_factor: 1.0,
            decay_rate: DEFAULT_DECAY_RATE,
        }
    }
}

impl BroadeningParams {
    pub fn new(temperature: f64, differential_shift_factor: f64, decay_rate: f64) -> Result<Self> {
        let p = BroadeningParams {
            temperature,
            differential_shift_factor,
            decay_rate,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn at_temperature(temperature: f64) -> Result<Self> {
        BroadeningParams::new(temperature, 1.0, DEFAULT_DECAY_RATE)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::domain(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        if !(self.differential_shift_factor.is_finite() && self.differential_shift_factor >= 0.0) {
            return Err(Error::domain("differential shift factor must be non-negative"));
        }
        if !(self.decay_rate.is_finite() && self.decay_rate > 0.0) {
            return Err(Error::domain("decay rate must be positive"));
        }
        Ok(())
    }

    /// Scale of the lightshift law, `k_B T / 2`, J.
    pub fn lightshift_scale(&self) -> f64 {
        0.5 * K_B * self.temperature
    }

    /// Angular-frequency scale `η k_B T / 2ħ`, rad/s.
    pub fn frequency_scale(&self) -> f64 {
        self.differential_shift_factor * self.lightshift_scale() / HBAR
    }

    pub fn delta_omega_distribution(&self) -> DeltaOmegaDistribution {
        DeltaOmegaDistribution {
            scale: self.frequency_scale(),
        }
    }
}

/// Distribution of `Δω`: the difference of two independent gamma(3, s)
/// variables with `s = η k_B T / 2ħ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaOmegaDistribution {
    pub scale: f64,
}

impl DeltaOmegaDistribution {
    pub fn characteristic_function(&self, t: f64) -> f64 {
        let x = self.scale * t;
        (1.0 + x * x).powi(-3)
    }

    pub fn variance(&self) -> f64 {
        6.0 * self.scale * self.scale
    }
}

/// Normalized zero-delay ratio `(1 − K²)/2`.
pub fn peak_ratio(k: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::domain(format!("overlap K must lie in [0, 1], got {k}")));
    }
    Ok(0.5 * (1.0 - k * k))
}

/// `E[cos Δωτ]` over the thermal frequency-difference distribution.
pub fn averaged_interference_factor(tau: f64, params: &BroadeningParams) -> Result<f64> {
    params.validate()?;
    Ok(interference_factor_unchecked(tau, params))
}

#[inline]
pub(crate) fn interference_factor_unchecked(tau: f64, params: &BroadeningParams) -> f64 {
    params.delta_omega_distribution().characteristic_function(tau)
}

/// `e^{−Γ|τ|}(1 − K² C(τ))`.
pub fn broadened_signal(tau: f64, k: f64, params: &BroadeningParams) -> Result<f64> {
    peak_ratio(k)?;
    params.validate()?;
    Ok(broadened_unchecked(tau, k, params))
}

#[inline]
pub(crate) fn broadened_unchecked(tau: f64, k: f64, params: &BroadeningParams) -> f64 {
    let c = interference_factor_unchecked(tau, params);
    ((-params.decay_rate * tau.abs()).exp() * (1.0 - k * k * c)).max(0.0)
}

/// Residual coincidence integrated over `|τ| ≤ half_width` (Simpson, 2000 panels).
pub fn integrated_residual(k: f64, params: &BroadeningParams, half_width: f64) -> Result<f64> {
    peak_ratio(k)?;
    params.validate()?;
    let n = 2000;
    let h = half_width / n as f64;
    let mut sum = broadened_unchecked(0.0, k, params) + broadened_unchecked(half_width, k, params);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * broadened_unchecked(i as f64 * h, k, params);
    }
    // Even integrand: double the half-range integral.
    Ok(2.0 * sum * h / 3.0)
}

/// Half-width of the zero-delay dip: the smallest `τ > 0` at which the
/// signal climbs to half of its maximum over `τ ≥ 0`. Only meaningful when
/// the signal vanishes or nearly vanishes at `τ = 0`.
pub fn dip_half_width(k: f64, params: &BroadeningParams) -> Result<f64> {
    peak_ratio(k)?;
    params.validate()?;
    if params.temperature == 0.0 {
        return Err(Error::domain("no dip without thermal broadening"));
    }
    let f = |t: f64| broadened_unchecked(t, k, params);
    // The dip closes on the scale 1/s, the decay envelope on 1/Γ.
    let s = params.frequency_scale();
    let horizon = 20.0 * (1.0 / s).max(1.0 / params.decay_rate);
    let n = 20_000;
    let dt = horizon / n as f64;
    let (mut t_max, mut f_max) = (0.0, f(0.0));
    for i in 1..=n {
        let t = i as f64 * dt;
        let v = f(t);
        if v > f_max {
            f_max = v;
            t_max = t;
        }
    }
    let half = 0.5 * f_max;
    if f(0.0) >= half {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, t_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < half {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::MICROKELVIN;

    #[test]
    fn ratio_values() {
        assert_eq!(peak_ratio(0.0).unwrap(), 0.5);
        assert_eq!(peak_ratio(1.0).unwrap(), 0.0);
        assert!((peak_ratio(0.78).unwrap() - 0.1958).abs() < 1e-12);
        assert!(peak_ratio(1.01).is_err());
        assert!(peak_ratio(-0.01).is_err());
    }

    #[test]
    fn factor_limits() {
        let p = BroadeningParams::at_temperature(180.0 * MICROKELVIN).unwrap();
        assert_eq!(averaged_interference_factor(0.0, &p).unwrap(), 1.0);
        let cold = BroadeningParams::at_temperature(0.0).unwrap();
        for &t in &[1e-9, 50e-9, 1e-6] {
            assert_eq!(averaged_interference_factor(t, &cold).unwrap(), 1.0);
        }
        let tau = 2.0 * HBAR / (K_B * 180.0 * MICROKELVIN);
        assert!((averaged_interference_factor(tau, &p).unwrap() - 0.125).abs() < 1e-12);
        assert!((averaged_interference_factor(-tau, &p).unwrap() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn zero_temperature_signal_is_flat_contrast() {
        let p = BroadeningParams::at_temperature(0.0).unwrap();
        for &t in &[0.0, 5e-9, -30e-9] {
            let v = broadened_signal(t, 0.7, &p).unwrap();
            let expect = (-p.decay_rate * f64::abs(t)).exp() * (1.0 - 0.49);
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_overlap_dips_to_zero() {
        for &t in &[0.0, 100.0, 200.0] {
            let p = BroadeningParams::at_temperature(t * MICROKELVIN).unwrap();
            assert_eq!(broadened_signal(0.0, 1.0, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn dip_narrows_when_hotter() {
        let widths: Vec<f64> = [50.0, 100.0, 150.0, 200.0, 300.0]
            .iter()
            .map(|&t| dip_half_width(1.0, &BroadeningParams::at_temperature(t * MICROKELVIN).unwrap()).unwrap())
            .collect();
        assert!(widths.windows(2).all(|w| w[1] < w[0]), "{widths:?}");
    }

    #[test]
    fn hotter_atoms_fill_the_residual_peak() {
        let k = 0.7;
        let mut last = 0.0;
        for i in 0..20 {
            let p = BroadeningParams::at_temperature(i as f64 * 20.0 * MICROKELVIN).unwrap();
            let r = integrated_residual(k, &p, 26e-9).unwrap();
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn eta_and_temperature_enter_as_product() {
        let a = BroadeningParams::new(180.0 * MICROKELVIN, 1.0, DEFAULT_DECAY_RATE).unwrap();
        let b = BroadeningParams::new(90.0 * MICROKELVIN, 2.0, DEFAULT_DECAY_RATE).unwrap();
        for &t in &[3e-9, 17e-9, 60e-9] {
            let ca = averaged_interference_factor(t, &a).unwrap();
            let cb = averaged_interference_factor(t, &b).unwrap();
            assert!((ca - cb).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_negative_temperature() {
        assert!(BroadeningParams::at_temperature(-1e-6).is_err());
    }
}
