//! Browser bindings for the coincidence and mode-overlap models.
//!
//! The `*_curve` functions sample a model on a uniform grid and return
//! the values as a `Float64Array`. Plain Rust versions are exported
//! alongside for native use and testing.

use hom_core::coincidence_model::{broadened_signal, peak_ratio, BroadeningParams};
use hom_core::constants::MICROKELVIN;
use hom_core::inference::NORMALIZED_ZERO_PEAK_AMPLITUDE;
use hom_core::spatial_mode::{alignment_budget, displacement_scan, AlignmentError, AlignmentKind, GaussianMode};
use wasm_bindgen::prelude::*;

/// `n` points evenly spaced on `[-half, half]`.
pub fn grid(half: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Mixer coincidence signal, in units of a separator peak, at delays
/// spanning `±tau_max_ns`.
pub fn signal_curve(k: f64, temperature_uk: f64, tau_max_ns: f64, n: usize) -> hom_core::Result<Vec<f64>> {
    let params = BroadeningParams::at_temperature(temperature_uk * MICROKELVIN)?;
    grid(tau_max_ns * 1e-9, n)
        .into_iter()
        .map(|tau| Ok(NORMALIZED_ZERO_PEAK_AMPLITUDE * broadened_signal(tau, k, &params)?))
        .collect()
}

/// Zero-delay ratio at displacements spanning `±d_max_um`.
pub fn scan_curve(k_max: f64, waist_um: f64, d_max_um: f64, n: usize) -> hom_core::Result<Vec<f64>> {
    let mode = GaussianMode::with_waist(waist_um * 1e-6)?;
    Ok(displacement_scan(&mode, k_max, &grid(d_max_um * 1e-6, n))?
        .into_iter()
        .map(|p| p.ratio)
        .collect())
}

/// Overlap of a mode with waist `waist_um` and a copy carrying the given
/// imperfections: fractional waist mismatch, transverse offset, focal
/// shift and tilt.
pub fn imperfect_overlap(
    waist_um: f64,
    waist_mismatch: f64,
    offset_um: f64,
    focal_shift_mm: f64,
    tilt_mrad: f64,
) -> hom_core::Result<f64> {
    let base = GaussianMode::with_waist(waist_um * 1e-6)?;
    let errors = [
        AlignmentError::new(AlignmentKind::WaistMismatch, waist_mismatch.abs())?,
        AlignmentError::new(AlignmentKind::TransverseOffset, (offset_um * 1e-6 / base.waist).abs())?,
        AlignmentError::new(
            AlignmentKind::FocalShift,
            (focal_shift_mm * 1e-3 / base.rayleigh_range()).abs(),
        )?,
        AlignmentError::new(AlignmentKind::AxisTilt, (tilt_mrad * 1e-3 / base.divergence()).abs())?,
    ];
    Ok(alignment_budget(&base, &errors)?.exact)
}

fn js(e: hom_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = signalCurve)]
pub fn signal_curve_js(k: f64, temperature_uk: f64, tau_max_ns: f64, n: usize) -> Result<Vec<f64>, JsError> {
    signal_curve(k, temperature_uk, tau_max_ns, n).map_err(js)
}

#[wasm_bindgen(js_name = scanCurve)]
pub fn scan_curve_js(k_max: f64, waist_um: f64, d_max_um: f64, n: usize) -> Result<Vec<f64>, JsError> {
    scan_curve(k_max, waist_um, d_max_um, n).map_err(js)
}

#[wasm_bindgen(js_name = imperfectOverlap)]
pub fn imperfect_overlap_js(
    waist_um: f64,
    waist_mismatch: f64,
    offset_um: f64,
    focal_shift_mm: f64,
    tilt_mrad: f64,
) -> Result<f64, JsError> {
    imperfect_overlap(waist_um, waist_mismatch, offset_um, focal_shift_mm, tilt_mrad).map_err(js)
}

#[wasm_bindgen(js_name = zeroDelayRatio)]
pub fn zero_delay_ratio_js(k: f64) -> Result<f64, JsError> {
    peak_ratio(k).map_err(js)
}
