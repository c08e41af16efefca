use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    /// Both detectors see both atoms through a 50/50 beam splitter.
    #[serde(alias = "mixer")]
    Mixer50_50,
    /// Each detector sees one atom.
    Separator,
}

impl Configuration {
    pub fn tag(&self) -> &'static str {
        match self {
            Configuration::Mixer50_50 => "mixer",
            Configuration::Separator => "separator",
        }
    }
}

impl std::str::FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mixer" | "mixer50_50" | "mixer_50_50" | "beamsplitter" => Ok(Configuration::Mixer50_50),
            "separator" => Ok(Configuration::Separator),
            other => Err(Error::Config(format!("unknown configuration '{other}'"))),
        }
    }
}

/// Start-stop delay histogram on uniform bins.
///
/// Bin `i` covers `[first_edge + i w, first_edge + (i+1) w)`. Histograms
/// built by the simulator are symmetric with a bin centred on zero delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub first_edge: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub configuration: Configuration,
    pub total_pulse_cycles: u64,
    pub seed: u64,
    pub config_hash: String,
}

impl CoincidenceHistogram {
    /// Zero-centred histogram covering at least `±range` whose bin count is
    /// divisible by the odd `rebin_factor`, with the central group on zero.
    pub fn centered(bin_width: f64, range: f64, rebin_factor: usize, configuration: Configuration) -> Result<Self> {
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::domain(format!("bin width must be positive, got {bin_width}")));
        }
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::domain(format!("histogram range must be positive, got {range}")));
        }
        if rebin_factor == 0 || rebin_factor.is_multiple_of(2) {
            return Err(Error::domain(format!("rebin factor must be odd, got {rebin_factor}")));
        }
        let group = rebin_factor as f64 * bin_width;
        let groups_per_side = (range / group).ceil() as usize;
        let half_bins = rebin_factor * groups_per_side + (rebin_factor - 1) / 2;
        Ok(CoincidenceHistogram {
            first_edge: -(half_bins as f64 + 0.5) * bin_width,
            bin_width,
            counts: vec![0; 2 * half_bins + 1],
            configuration,
            total_pulse_cycles: 0,
            seed: 0,
            config_hash: String::new(),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn last_edge(&self) -> f64 {
        self.first_edge + self.n_bins() as f64 * self.bin_width
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.first_edge + i as f64 * self.bin_width
    }

    pub fn center(&self, i: usize) -> f64 {
        self.first_edge + (i as f64 + 0.5) * self.bin_width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|i| self.center(i)).collect()
    }

    pub fn bin_of(&self, delay: f64) -> Option<usize> {
        let x = (delay - self.first_edge) / self.bin_width;
        if x >= 0.0 && x < self.n_bins() as f64 {
            Some(x as usize)
        } else {
            None
        }
    }

    pub fn record(&mut self, delay: f64) {
        if let Some(i) = self.bin_of(delay) {
            self.counts[i] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn same_binning(&self, other: &Self) -> bool {
        self.n_bins() == other.n_bins()
            && (self.bin_width - other.bin_width).abs() <= 1e-9 * self.bin_width
            && (self.first_edge - other.first_edge).abs() <= 1e-6 * self.bin_width
    }

    /// Add another histogram's counts; associative and commutative.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if !self.same_binning(other) {
            return Err(Error::domain("cannot merge histograms with different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_pulse_cycles += other.total_pulse_cycles;
        Ok(())
    }

    /// Sum groups of `factor` consecutive bins. Trailing bins that do not
    /// fill a group are dropped.
    pub fn rebin(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::domain("rebin factor must be positive"));
        }
        let counts = self.counts.chunks_exact(factor).map(|c| c.iter().sum()).collect();
        Ok(CoincidenceHistogram {
            bin_width: self.bin_width * factor as f64,
            counts,
            ..self.clone()
        })
    }
}

/// Where to look for peaks in a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakLayout {
    /// Peak spacing, s.
    pub period: f64,
    /// Half-width of the window assigned to each peak, s.
    pub half_window: f64,
    /// Rebin factor applied before taking the maximum bin.
    pub rebin_factor: usize,
}

impl PeakLayout {
    pub fn for_period(period: f64, rebin_factor: usize) -> Self {
        PeakLayout {
            period,
            half_window: 0.5 * period,
            rebin_factor,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && self.half_window > 0.0 && self.half_window <= 0.5 * self.period) {
            return Err(Error::domain(format!(
                "peak window ±{:e} s must be positive and at most half the period {:e} s",
                self.half_window, self.period
            )));
        }
        if self.rebin_factor == 0 {
            return Err(Error::domain("rebin factor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Index on the pulse grid (delay ≈ index · period).
    pub index: i64,
    /// Count-weighted centroid of the window, or the grid position when empty, s.
    pub center: f64,
    /// Maximum rebinned bin in the window.
    pub height: u64,
    /// Counts in the window.
    pub area: u64,
}

/// Peaks on the pulse grid whose full window lies inside the histogram.
pub fn peak_heights(hist: &CoincidenceHistogram, layout: &PeakLayout) -> Result<Vec<Peak>> {
    layout.validate()?;
    if hist.total() == 0 {
        return Err(Error::domain("histogram is empty; no peaks to locate"));
    }
    let rebinned = hist.rebin(layout.rebin_factor)?;
    let lo = hist.first_edge;
    let hi = hist.last_edge();
    let kmin = ((lo + layout.half_window) / layout.period).ceil() as i64;
    let kmax = ((hi - layout.half_window) / layout.period).floor() as i64;
    let mut peaks = Vec::new();
    for k in kmin..=kmax {
        let grid = k as f64 * layout.period;
        let (a, b) = (grid - layout.half_window, grid + layout.half_window);
        let mut area = 0u64;
        let mut moment = 0.0;
        for i in 0..hist.n_bins() {
            let c = hist.center(i);
            if c >= a && c < b {
                area += hist.counts[i];
                moment += hist.counts[i] as f64 * c;
            }
        }
        let height = (0..rebinned.n_bins())
            .filter(|&i| {
                let c = rebinned.center(i);
                c >= a && c < b
            })
            .map(|i| rebinned.counts[i])
            .max()
            .unwrap_or(0);
        let center = if area > 0 { moment / area as f64 } else { grid };
        peaks.push(Peak {
            index: k,
            center,
            height,
            area,
        });
    }
    if peaks.iter().all(|p| p.area == 0) {
        return Err(Error::domain("no peaks found on the pulse grid"));
    }
    Ok(peaks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_layout() {
        let h = CoincidenceHistogram::centered(1.2e-9, 700e-9, 3, Configuration::Separator).unwrap();
        assert_eq!(h.n_bins() % 3, 0);
        let mid = h.n_bins() / 2;
        assert!(h.center(mid).abs() < 1e-18);
        assert!(h.last_edge() >= 700e-9 && -h.first_edge >= 700e-9);
        let r = h.rebin(3).unwrap();
        assert!(r.center(r.n_bins() / 2).abs() < 1e-18);
        assert!((r.bin_width - 3.6e-9).abs() < 1e-20);
    }

    #[test]
    fn rejects_even_rebin() {
        assert!(CoincidenceHistogram::centered(1e-9, 1e-7, 2, Configuration::Mixer50_50).is_err());
    }

    #[test]
    fn delta_peaks_are_found_exactly() {
        let mut h = CoincidenceHistogram::centered(2e-9, 700e-9, 1, Configuration::Separator).unwrap();
        for &(d, n) in &[(0.0, 40u64), (200e-9, 100), (-200e-9, 90), (400e-9, 10)] {
            for _ in 0..n {
                h.record(d);
            }
        }
        let peaks = peak_heights(&h, &PeakLayout::for_period(200e-9, 1)).unwrap();
        let find = |k: i64| peaks.iter().find(|p| p.index == k).unwrap();
        assert!(find(0).center.abs() < 1e-15);
        assert!((find(1).center - 200e-9).abs() < 1e-15);
        assert!((find(-1).center + 200e-9).abs() < 1e-15);
        assert_eq!(find(1).height, 100);
        assert_eq!(find(-1).area, 90);
        assert_eq!(find(2).area, 10);
        assert_eq!(find(-2).area, 0);
    }

    #[test]
    fn empty_histogram_has_no_peaks() {
        let h = CoincidenceHistogram::centered(1.2e-9, 700e-9, 3, Configuration::Separator).unwrap();
        assert!(peak_heights(&h, &PeakLayout::for_period(200e-9, 3)).is_err());
    }

    #[test]
    fn merge_requires_matching_bins() {
        let mut a = CoincidenceHistogram::centered(1.2e-9, 700e-9, 3, Configuration::Separator).unwrap();
        let b = CoincidenceHistogram::centered(1.0e-9, 700e-9, 3, Configuration::Separator).unwrap();
        assert!(a.merge(&b).is_err());
    }

    #[test]
    fn configuration_parses() {
        assert_eq!("mixer".parse::<Configuration>().unwrap(), Configuration::Mixer50_50);
        assert_eq!("Separator".parse::<Configuration>().unwrap(), Configuration::Separator);
        assert!("prism".parse::<Configuration>().is_err());
    }
}
