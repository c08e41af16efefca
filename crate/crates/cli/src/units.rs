//! Unit-suffixed strings in config documents ("100 ns", "180 µK", "90um").
//!
//! Every number in the config is SI. A string made of a number and a
//! known suffix is replaced by the SI value before deserialization.
//! Fields holding an energy (`depth`) also take temperature suffixes,
//! read as `k_B·T`.

use hom_core::constants::K_B;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Dimension {
    Time,
    Length,
    Temperature,
    Frequency,
    Angle,
    Energy,
    Ratio,
}

/// Dimension and decimal exponent of a unit suffix.
fn lookup(suffix: &str) -> Option<(Dimension, i32)> {
    use Dimension::*;
    let s = suffix.replace(['µ', 'μ'], "u");
    Some(match s.as_str() {
        "s" => (Time, 0),
        "ms" => (Time, -3),
        "us" => (Time, -6),
        "ns" => (Time, -9),
        "ps" => (Time, -12),
        "m" => (Length, 0),
        "mm" => (Length, -3),
        "um" => (Length, -6),
        "nm" => (Length, -9),
        "K" => (Temperature, 0),
        "mK" => (Temperature, -3),
        "uK" => (Temperature, -6),
        "nK" => (Temperature, -9),
        "Hz" | "/s" => (Frequency, 0),
        "kHz" => (Frequency, 3),
        "MHz" => (Frequency, 6),
        "GHz" => (Frequency, 9),
        "rad" => (Angle, 0),
        "mrad" => (Angle, -3),
        "urad" => (Angle, -6),
        "J" => (Energy, 0),
        "%" => (Ratio, -2),
        _ => return None,
    })
}

const ENERGY_KEYS: &[&str] = &["depth"];

/// Parse one quantity. `energy` selects the reading of temperature
/// suffixes as energies.
pub fn parse_quantity(text: &str, energy: bool) -> Result<f64, String> {
    let t = text.trim();
    let split = t
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_alphabetic() || matches!(c, '%' | '/'))
        .last()
        .map_or(t.len(), |(i, _)| i);
    let (number, suffix) = (t[..split].trim(), &t[split..]);
    let value: f64 = number
        .parse()
        .map_err(|_| format!("cannot read a number from {text:?}"))?;
    if suffix.is_empty() {
        return Ok(value);
    }
    let (dim, exp) = lookup(suffix).ok_or_else(|| format!("unknown unit {suffix:?} in {text:?}"))?;
    // Dividing by an exact power of ten keeps "100 um" at exactly 1e-4.
    let si = if exp < 0 {
        value / 10f64.powi(-exp)
    } else {
        value * 10f64.powi(exp)
    };
    match (dim, energy) {
        (Dimension::Temperature, true) => Ok(si * K_B),
        (Dimension::Energy, false) => Err(format!("energy unit in {text:?} for a field that is not an energy")),
        (Dimension::Energy, true) => Ok(si),
        (_, true) => Err(format!("{text:?} is not an energy or temperature")),
        _ => Ok(si),
    }
}

fn looks_numeric(s: &str) -> bool {
    s.trim_start()
        .starts_with(|c: char| c.is_ascii_digit() || matches!(c, '-' | '+' | '.'))
}

/// Replace unit strings by SI numbers throughout `value`. Errors name
/// the dotted path of the offending field.
pub fn normalize(value: &mut Value) -> Result<(), String> {
    walk(value, "", false)
}

fn walk(value: &mut Value, path: &str, energy: bool) -> Result<(), String> {
    match value {
        Value::String(s) if looks_numeric(s) => {
            let v = parse_quantity(s, energy).map_err(|e| format!("{}: {e}", display(path)))?;
            *value = serde_json::Number::from_f64(v)
                .map(Value::Number)
                .ok_or_else(|| format!("{}: value {v} is not finite", display(path)))?;
        }
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                walk(v, &join(path, k), ENERGY_KEYS.contains(&k.as_str()))?;
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter_mut().enumerate() {
                walk(v, &join(path, &i.to_string()), energy)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn display(path: &str) -> &str {
    if path.is_empty() {
        "<root>"
    } else {
        path
    }
}
