//! CSV exchange formats for histograms, normalized signals, curves and
//! fit inputs.
//!
//! Times are written in nanoseconds. Metadata travels in leading
//! `# key=value` lines, which the readers collect and otherwise skip.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::constants::{K_B, MICROKELVIN, NANOSECOND};
use crate::error::{Error, Result};
use crate::experiment_sim::{CoincidenceHistogram, Configuration, HeightMode, NormalizedSignal};
use crate::inference::DataPoint;
use crate::trap_dynamics::TrajectoryPoint;

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(e) => io_err(e),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Parsed CSV table: metadata, header and rows tagged with their line number.
struct Table {
    meta: BTreeMap<String, String>,
    header: Vec<String>,
    rows: Vec<(usize, Vec<f64>)>,
}

impl Table {
    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| Error::Parse {
            line: 1 + self.meta.len(),
            message: format!("missing column '{name}' (header: {})", self.header.join(",")),
        })
    }

    fn meta_f64(&self, key: &str) -> Result<Option<f64>> {
        self.meta
            .get(key)
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line: 0,
                    message: format!("metadata '{key}' is not a number: '{v}'"),
                })
            })
            .transpose()
    }
}

fn read_table<R: Read>(mut reader: R) -> Result<Table> {
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(io_err)?;
    let mut meta = BTreeMap::new();
    for line in text.lines() {
        let Some(rest) = line.trim_start().strip_prefix('#') else {
            break;
        };
        if let Some((k, v)) = rest.split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let values = rec
            .iter()
            .enumerate()
            .map(|(i, field)| {
                field.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!(
                        "column '{}': '{field}' is not a number",
                        header.get(i).map_or("?", String::as_str)
                    ),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, values));
    }
    Ok(Table { meta, header, rows })
}

fn write_meta<W: Write>(w: &mut W, entries: &[(&str, String)]) -> Result<()> {
    for (k, v) in entries {
        writeln!(w, "# {k}={v}").map_err(io_err)?;
    }
    Ok(())
}

fn write_rows<W: Write>(w: W, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header).map_err(csv_err)?;
    for r in rows {
        wtr.write_record(&r).map_err(csv_err)?;
    }
    wtr.flush().map_err(io_err)
}

/// `# seed=…`, `# config=…` metadata, then `bin_start_ns,bin_end_ns,counts`.
pub fn write_histogram_csv<W: Write>(hist: &CoincidenceHistogram, mut w: W) -> Result<()> {
    write_meta(
        &mut w,
        &[
            ("seed", hist.seed.to_string()),
            ("config", hist.config_hash.clone()),
            ("configuration", hist.configuration.tag().to_string()),
            ("total_pulse_cycles", hist.total_pulse_cycles.to_string()),
        ],
    )?;
    write_rows(
        w,
        &["bin_start_ns", "bin_end_ns", "counts"],
        (0..hist.n_bins()).map(|i| {
            vec![
                fmt_ns(hist.edge(i)),
                fmt_ns(hist.edge(i + 1)),
                hist.counts[i].to_string(),
            ]
        }),
    )
}

fn fmt_ns(t: f64) -> String {
    // Round away float noise from the edge arithmetic.
    let v = (t / NANOSECOND * 1e9).round() / 1e9;
    format!("{}", if v == 0.0 { 0.0 } else { v })
}

pub fn read_histogram_csv<R: Read>(r: R) -> Result<CoincidenceHistogram> {
    let t = read_table(r)?;
    let (cs, ce, cc) = (
        t.require("bin_start_ns")?,
        t.require("bin_end_ns")?,
        t.require("counts")?,
    );
    if t.rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "histogram has no bins".into(),
        });
    }
    let mut counts = Vec::with_capacity(t.rows.len());
    let first_edge = t.rows[0].1.get(cs).copied().unwrap_or(f64::NAN) * NANOSECOND;
    let bin_width = (t.rows[0].1.get(ce).copied().unwrap_or(f64::NAN) - t.rows[0].1[cs]) * NANOSECOND;
    if !(bin_width > 0.0) {
        return Err(Error::Parse {
            line: t.rows[0].0,
            message: "bin_end_ns must exceed bin_start_ns".into(),
        });
    }
    for (i, (line, row)) in t.rows.iter().enumerate() {
        let get = |c: usize| {
            row.get(c).copied().ok_or_else(|| Error::Parse {
                line: *line,
                message: "row is too short".into(),
            })
        };
        let start = get(cs)? * NANOSECOND;
        let expected = first_edge + i as f64 * bin_width;
        if (start - expected).abs() > 1e-6 * bin_width.max(1e-12) + 1e-15 {
            return Err(Error::Parse {
                line: *line,
                message: format!(
                    "bins are not uniform: start {} ns, expected {} ns",
                    start / NANOSECOND,
                    expected / NANOSECOND
                ),
            });
        }
        let c = get(cc)?;
        if !(c >= 0.0 && c.fract() == 0.0) {
            return Err(Error::Parse {
                line: *line,
                message: format!("count must be a non-negative integer, got {c}"),
            });
        }
        counts.push(c as u64);
    }
    let configuration = match t.meta.get("configuration") {
        Some(s) => s.parse()?,
        None => Configuration::Mixer50_50,
    };
    Ok(CoincidenceHistogram {
        first_edge,
        bin_width,
        counts,
        configuration,
        total_pulse_cycles: t.meta_f64("total_pulse_cycles")?.unwrap_or(0.0) as u64,
        seed: t.meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0),
        config_hash: t.meta.get("config").cloned().unwrap_or_default(),
    })
}

/// Columns `tau_ns,value,sigma`, with the normalization reference in the
/// metadata lines.
pub fn write_normalized_csv<W: Write>(sig: &NormalizedSignal, mut w: W) -> Result<()> {
    let mode = match sig.mode {
        HeightMode::Area => "area",
        HeightMode::Max => "max",
    };
    write_meta(
        &mut w,
        &[
            ("reference_height", sig.reference_height.to_string()),
            ("reference_sigma", sig.reference_sigma.to_string()),
            ("separator_background", sig.separator_background.to_string()),
            ("zero_delay_ratio", sig.zero_delay_ratio.to_string()),
            ("zero_delay_sigma", sig.zero_delay_sigma.to_string()),
            ("dispersion", sig.dispersion.to_string()),
            ("count_unit", sig.count_unit.to_string()),
            ("height_mode", mode.to_string()),
            ("bin_width_ns", (sig.bin_width / NANOSECOND).to_string()),
            ("period_ns", (sig.period / NANOSECOND).to_string()),
        ],
    )?;
    write_rows(
        w,
        &["tau_ns", "value", "sigma"],
        (0..sig.centers.len()).map(|i| {
            vec![
                fmt_ns(sig.centers[i]),
                sig.values[i].to_string(),
                sig.sigma[i].to_string(),
            ]
        }),
    )
}

/// Read a normalized signal. Missing metadata falls back to a bin width
/// taken from the `tau_ns` spacing and `default_period`.
pub fn read_normalized_csv<R: Read>(r: R, default_period: f64) -> Result<NormalizedSignal> {
    let t = read_table(r)?;
    let points = points_from_table(&t, "tau_ns", "value", "sigma")?;
    if points.len() < 2 {
        return Err(Error::Parse {
            line: 0,
            message: "normalized signal needs at least two rows".into(),
        });
    }
    let bin_width = match t.meta_f64("bin_width_ns")? {
        Some(v) => v * NANOSECOND,
        None => points[1].x - points[0].x,
    };
    let mode = match t.meta.get("height_mode").map(String::as_str) {
        Some("max") => HeightMode::Max,
        _ => HeightMode::Area,
    };
    Ok(NormalizedSignal {
        centers: points.iter().map(|p| p.x).collect(),
        values: points.iter().map(|p| p.value).collect(),
        sigma: points.iter().map(|p| p.sigma).collect(),
        reference_height: t.meta_f64("reference_height")?.unwrap_or(1.0),
        reference_sigma: t.meta_f64("reference_sigma")?.unwrap_or(0.0),
        separator_background: t.meta_f64("separator_background")?.unwrap_or(0.0),
        zero_delay_ratio: t.meta_f64("zero_delay_ratio")?.unwrap_or(f64::NAN),
        zero_delay_sigma: t.meta_f64("zero_delay_sigma")?.unwrap_or(f64::NAN),
        dispersion: t.meta_f64("dispersion")?.unwrap_or(1.0),
        count_unit: t.meta_f64("count_unit")?.unwrap_or(f64::NAN),
        mode,
        bin_width,
        period: t.meta_f64("period_ns")?.map_or(default_period, |v| v * NANOSECOND),
    })
}

fn points_from_table(t: &Table, x: &str, value: &str, sigma: &str) -> Result<Vec<DataPoint>> {
    let (cx, cv) = (t.require(x)?, t.require(value)?);
    let cs = t.column(sigma);
    let scale = if x.ends_with("_ns") {
        NANOSECOND
    } else if x.ends_with("_um") {
        1e-6
    } else {
        1.0
    };
    t.rows
        .iter()
        .map(|(line, row)| {
            let get = |c: usize| {
                row.get(c).copied().ok_or_else(|| Error::Parse {
                    line: *line,
                    message: format!("row has {} fields, expected {}", row.len(), t.header.len()),
                })
            };
            let s = match cs {
                Some(c) => get(c)?,
                None => 1.0,
            };
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("sigma must be positive, got {s}"),
                });
            }
            Ok(DataPoint::new(get(cx)? * scale, get(cv)?, s))
        })
        .collect()
}

/// Points `(x, value, sigma)` from a CSV with the named columns. An `x`
/// column ending in `_ns` or `_um` is converted to SI; a missing sigma
/// column gives unit weights.
pub fn read_points_csv<R: Read>(r: R, x: &str, value: &str, sigma: &str) -> Result<Vec<DataPoint>> {
    points_from_table(&read_table(r)?, x, value, sigma)
}

/// Generic numeric table with the given header.
pub fn write_table_csv<W: Write>(header: &[&str], rows: &[Vec<f64>], w: W) -> Result<()> {
    write_rows(
        w,
        header,
        rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect()),
    )
}

/// Trajectory dump: `pulse_index,U_over_kB_uK,x,y,z` with positions in m.
pub fn write_trajectory_csv<W: Write>(points: &[TrajectoryPoint], w: W) -> Result<()> {
    write_rows(
        w,
        &["pulse_index", "U_over_kB_uK", "x", "y", "z"],
        points.iter().map(|p| {
            vec![
                p.pulse_index.to_string(),
                (p.lightshift / K_B / MICROKELVIN).to_string(),
                p.position[0].to_string(),
                p.position[1].to_string(),
                p.position[2].to_string(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_round_trip() {
        let mut h = CoincidenceHistogram::centered(1.2e-9, 700e-9, 3, Configuration::Separator).unwrap();
        for (i, c) in h.counts.iter_mut().enumerate() {
            *c = (i * 7 % 13) as u64;
        }
        h.seed = 42;
        h.config_hash = "abc".into();
        h.total_pulse_cycles = 8625;
        let mut buf = Vec::new();
        write_histogram_csv(&h, &mut buf).unwrap();
        let back = read_histogram_csv(buf.as_slice()).unwrap();
        assert_eq!(back.counts, h.counts);
        assert!(back.same_binning(&h));
        assert_eq!(back.configuration, Configuration::Separator);
        assert_eq!((back.seed, back.total_pulse_cycles), (42, 8625));
        assert_eq!(back.config_hash, "abc");
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "# seed=1\nbin_start_ns,bin_end_ns,counts\n0,1,3\n1,2,x\n";
        match read_histogram_csv(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4, "{message}");
                assert!(message.contains("counts"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column_is_reported() {
        let text = "tau,value\n0,1\n";
        assert!(matches!(
            read_points_csv(text.as_bytes(), "tau_ns", "value", "sigma"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn points_convert_units() {
        let text = "tau_ns,value,sigma\n-3.6,0.1,0.01\n3.6,0.2,0.02\n";
        let p = read_points_csv(text.as_bytes(), "tau_ns", "value", "sigma").unwrap();
        assert!((p[0].x + 3.6e-9).abs() < 1e-21);
        assert_eq!(p[1].sigma, 0.02);
    }
}
