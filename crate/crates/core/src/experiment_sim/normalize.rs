use serde::{Deserialize, Serialize};

use super::histogram::{peak_heights, CoincidenceHistogram, PeakLayout};
use crate::error::{Error, Result};
use crate::inference::{DataPoint, ZeroPeakFitOptions};
use crate::linalg::invert;

/// How the reference peak height is taken from the separator histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeightMode {
    /// Peak amplitude inferred from the window area assuming a periodic
    /// train of `e^{−Γ|τ|}` peaks.
    #[default]
    Area,
    /// Largest rebinned bin of each peak.
    Max,
}

/// Mixer histogram in units of the mean non-zero separator peak height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSignal {
    /// Rebinned bin centres, s.
    pub centers: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Separator reference in counts per rebinned bin.
    pub reference_height: f64,
    pub reference_sigma: f64,
    /// Flat separator background per rebinned bin, counts, already
    /// removed from the reference.
    pub separator_background: f64,
    /// Mixer zero-delay peak over mean separator peak (areas or heights).
    pub zero_delay_ratio: f64,
    pub zero_delay_sigma: f64,
    /// Factor by which `sigma` exceeds counting statistics, from the
    /// spread between batches; 1 for a single histogram.
    pub dispersion: f64,
    /// Value of one raw mixer count; NaN when unknown.
    pub count_unit: f64,
    pub mode: HeightMode,
    /// Rebinned bin width, s.
    pub bin_width: f64,
    pub period: f64,
}

/// Normalize a mixer histogram by the mean non-zero-delay separator peak.
///
/// The flat background of each histogram, from a fit of a constant plus
/// the peak train, is removed from the peak sizes entering the reference
/// and the zero-delay ratio. The per-bin values keep their background.
///
/// Mixer counts are first scaled by the ratio of recorded pulse cycles, so
/// runs of different length compare directly. Bin errors are Poisson with
/// a floor of one count.
pub fn normalize(
    mixer: &CoincidenceHistogram,
    separator: &CoincidenceHistogram,
    period: f64,
    rebin_factor: usize,
    decay_rate: f64,
    mode: HeightMode,
) -> Result<NormalizedSignal> {
    if !mixer.same_binning(separator) {
        return Err(Error::domain("mixer and separator histograms use different binning"));
    }
    if mixer.total_pulse_cycles == 0 || separator.total_pulse_cycles == 0 {
        return Err(Error::domain("histogram records no pulse cycles"));
    }
    if !(decay_rate > 0.0) {
        return Err(Error::domain("decay rate must be positive"));
    }
    let layout = PeakLayout::for_period(period, rebin_factor);
    let sep_peaks: Vec<_> = peak_heights(separator, &layout)?
        .into_iter()
        .filter(|p| p.index != 0 && p.area > 0)
        .collect();
    if sep_peaks.is_empty() {
        return Err(Error::domain("separator histogram has no non-zero-delay peaks"));
    }
    let n = sep_peaks.len() as f64;
    let (sep_bg, sep_bg_var) = flat_background(separator, period, rebin_factor, decay_rate)?;
    let bins_per_window = period / (separator.bin_width * rebin_factor as f64);
    let mean_area = sep_peaks.iter().map(|p| p.area as f64).sum::<f64>() / n - sep_bg * bins_per_window;
    let mean_max = sep_peaks.iter().map(|p| p.height as f64).sum::<f64>() / n - sep_bg;
    let rebinned = mixer.rebin(rebin_factor)?;
    let bin_width = rebinned.bin_width;
    // In a periodic train each window collects exactly one full peak, 2h/Γ.
    let area_to_height = 0.5 * decay_rate * bin_width;
    let area_var = mean_area / n + sep_bg_var * bins_per_window * bins_per_window;
    let max_var = mean_max / n + sep_bg_var;
    let (reference_height, reference_sigma) = match mode {
        HeightMode::Area => (mean_area * area_to_height, area_var.sqrt() * area_to_height),
        HeightMode::Max => (mean_max, max_var.sqrt()),
    };
    if !(reference_height > 0.0) {
        return Err(Error::domain("separator reference height is zero"));
    }

    let scale = separator.total_pulse_cycles as f64 / mixer.total_pulse_cycles as f64;
    let values = rebinned
        .counts
        .iter()
        .map(|&c| c as f64 * scale / reference_height)
        .collect();
    let sigma = rebinned
        .counts
        .iter()
        .map(|&c| (c.max(1) as f64).sqrt() * scale / reference_height)
        .collect();

    let zero = zero_window(&rebinned, period, decay_rate)?;
    // A separator peak keeps 1 − e^{−ΓW} of its area inside the zero window's span.
    let inside = 1.0 - (-decay_rate * zero.half_width).exp();
    let (num, num_var, den, den_rel) = match mode {
        HeightMode::Area => (
            zero.area,
            zero.raw.max(1.0) + zero.area_model_variance,
            mean_area * inside,
            area_var.sqrt() / mean_area,
        ),
        HeightMode::Max => (
            zero.height,
            zero.height.max(1.0) + zero.height_model_variance,
            mean_max,
            max_var.sqrt() / mean_max,
        ),
    };
    let zero_delay_ratio = num * scale / den;
    let num_sigma = num_var.sqrt();
    let zero_delay_sigma = ((num_sigma * scale / den).powi(2) + (zero_delay_ratio * den_rel).powi(2)).sqrt();

    Ok(NormalizedSignal {
        centers: rebinned.centers(),
        values,
        sigma,
        reference_height,
        reference_sigma,
        separator_background: sep_bg,
        zero_delay_ratio,
        zero_delay_sigma,
        dispersion: 1.0,
        count_unit: scale / reference_height,
        mode,
        bin_width,
        period,
    })
}

/// Normalize matched batches of mixer and separator histograms.
///
/// The result equals [`normalize`] on the summed histograms, except that
/// the reference and zero-delay errors come from a delete-one-batch
/// jackknife (never below counting statistics). Bin errors are inflated
/// by the same factor as the zero-delay error.
pub fn normalize_batches(
    mixer: &[CoincidenceHistogram],
    separator: &[CoincidenceHistogram],
    period: f64,
    rebin_factor: usize,
    decay_rate: f64,
    mode: HeightMode,
) -> Result<NormalizedSignal> {
    let m = mixer.len();
    if m < 2 || separator.len() != m {
        return Err(Error::domain(format!(
            "need at least two matched batches, got {m} mixer and {} separator",
            separator.len()
        )));
    }
    let sum = |parts: &[CoincidenceHistogram]| -> Result<CoincidenceHistogram> {
        let mut total = parts[0].clone();
        for p in &parts[1..] {
            total.merge(p)?;
        }
        Ok(total)
    };
    let (mix, sep) = (sum(mixer)?, sum(separator)?);
    let mut base = normalize(&mix, &sep, period, rebin_factor, decay_rate, mode)?;
    let mut ratios = Vec::with_capacity(m);
    let mut refs = Vec::with_capacity(m);
    for i in 0..m {
        let s = normalize(
            &without(&mix, &mixer[i]),
            &without(&sep, &separator[i]),
            period,
            rebin_factor,
            decay_rate,
            mode,
        )?;
        ratios.push(s.zero_delay_ratio);
        refs.push(s.reference_height);
    }
    let jackknife = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / m as f64;
        ((m - 1) as f64 / m as f64 * v.iter().map(|x| (x - mean).powi(2)).sum::<f64>()).sqrt()
    };
    let zero_sigma = jackknife(&ratios);
    base.dispersion = (zero_sigma / base.zero_delay_sigma).max(1.0);
    base.zero_delay_sigma = base.zero_delay_sigma.max(zero_sigma);
    base.reference_sigma = base.reference_sigma.max(jackknife(&refs));
    for s in &mut base.sigma {
        *s *= base.dispersion;
    }
    Ok(base)
}

fn without(total: &CoincidenceHistogram, part: &CoincidenceHistogram) -> CoincidenceHistogram {
    let mut out = total.clone();
    for (a, b) in out.counts.iter_mut().zip(&part.counts) {
        *a -= b;
    }
    out.total_pulse_cycles -= part.total_pulse_cycles;
    out
}

/// Zero-delay peak after removing the background and the tails of the
/// neighbouring peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroPeak {
    pub tau: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
    pub background: f64,
    pub background_sigma: f64,
    /// Variance per unit of value for the scaled Poisson counts, NaN when
    /// the signal does not record its count unit.
    pub poisson_gain: f64,
}

impl ZeroPeak {
    /// Fit options for these samples: bin-averaged model over `bin_width`
    /// and Poisson reweighting when the count unit is known.
    pub fn fit_options(&self, bin_width: f64) -> ZeroPeakFitOptions {
        ZeroPeakFitOptions {
            bin_width: Some(bin_width),
            poisson_gain: self.poisson_gain.is_finite().then_some(self.poisson_gain),
            ..ZeroPeakFitOptions::default()
        }
    }

    /// Zero-delay value and its σ from the bins with `|τ| < half_width`:
    /// their sum over the sum of the bin-averaged `e^{−Γ|τ|}`. Broadening
    /// enters only through `C(τ)` across those few bins.
    pub fn central_value(&self, bin_width: f64, decay_rate: f64, half_width: f64) -> Result<(f64, f64)> {
        let (mut num, mut var, mut den) = (0.0, 0.0, 0.0);
        for ((&t, &v), &s) in self.tau.iter().zip(&self.values).zip(&self.sigma) {
            if t.abs() < half_width {
                num += v;
                var += s * s;
                den += bin_averaged_exp(t, 0.0, bin_width, decay_rate);
            }
        }
        if den == 0.0 {
            return Err(Error::domain(format!("no bins within {half_width:e} s of zero delay")));
        }
        Ok((num / den, var.sqrt() / den))
    }

    /// Samples as fit input with `x = τ`.
    pub fn points(&self) -> Vec<DataPoint> {
        self.tau
            .iter()
            .zip(&self.values)
            .zip(&self.sigma)
            .map(|((&x, &v), &s)| DataPoint::new(x, v, s))
            .collect()
    }
}

/// Mean of `e^{−Γ|τ−c|}` over the bin `[t − w/2, t + w/2]`.
fn bin_averaged_exp(t: f64, c: f64, w: f64, gamma: f64) -> f64 {
    let (a, b) = (t - 0.5 * w - c, t + 0.5 * w - c);
    // ∫ e^{−Γ|x|} dx as an odd antiderivative.
    let prim = |x: f64| x.signum() * (1.0 - (-gamma * x.abs()).exp()) / gamma;
    (prim(b) - prim(a)) / w
}

/// Weighted least-squares fit of a flat background plus one bin-averaged
/// `e^{−Γ|τ−kP|}` peak per grid index, over the bins accepted by `use_bin`.
struct PeakTrainFit {
    ks: Vec<i64>,
    period: f64,
    bin_width: f64,
    decay_rate: f64,
    coef: Vec<f64>,
    /// Coefficient covariance, row-major.
    cov: Vec<f64>,
}

impl PeakTrainFit {
    fn row(&self, t: f64) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(
                self.ks
                    .iter()
                    .map(|&k| bin_averaged_exp(t, k as f64 * self.period, self.bin_width, self.decay_rate)),
            )
            .collect()
    }

    /// Variance of `g · coef`.
    fn variance_of(&self, g: &[f64]) -> f64 {
        let n = self.coef.len();
        (0..n)
            .map(|i| (0..n).map(|j| g[i] * self.cov[i * n + j] * g[j]).sum::<f64>())
            .sum::<f64>()
            .max(0.0)
    }
}

/// `count_unit` is the value of one raw count. When given, the data-based
/// `sigma` is treated as Poisson and the fit is repeated with variances
/// taken from the model instead of the data, which removes the downward
/// bias of count-weighted fits at low counts.
#[allow(clippy::too_many_arguments)]
fn fit_peak_train(
    centers: &[f64],
    values: &[f64],
    sigma: &[f64],
    period: f64,
    bin_width: f64,
    decay_rate: f64,
    use_bin: impl Fn(f64) -> bool,
    count_unit: Option<f64>,
) -> Result<PeakTrainFit> {
    let (lo, hi) = match (centers.first(), centers.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::domain("signal is empty")),
    };
    let kmin = (lo / period).round() as i64;
    let kmax = (hi / period).round() as i64;
    let mut fit = PeakTrainFit {
        ks: (kmin..=kmax).collect(),
        period,
        bin_width,
        decay_rate,
        coef: Vec::new(),
        cov: Vec::new(),
    };
    let n_par = 1 + fit.ks.len();
    let rows: Vec<(usize, Vec<f64>)> = centers
        .iter()
        .enumerate()
        .filter(|&(i, &t)| use_bin(t) && sigma[i] > 0.0)
        .map(|(i, &t)| (i, fit.row(t)))
        .collect();
    if rows.len() <= n_par {
        return Err(Error::domain("too few bins outside the window to model the background"));
    }
    let mut variance: Vec<f64> = rows.iter().map(|&(i, _)| sigma[i] * sigma[i]).collect();
    let passes = if count_unit.is_some() { 4 } else { 1 };
    for pass in 0..passes {
        let mut ata = vec![0.0; n_par * n_par];
        let mut atb = vec![0.0; n_par];
        for ((i, r), &var) in rows.iter().zip(&variance) {
            let wt = 1.0 / var;
            for a in 0..n_par {
                atb[a] += wt * r[a] * values[*i];
                for b in 0..n_par {
                    ata[a * n_par + b] += wt * r[a] * r[b];
                }
            }
        }
        fit.cov = invert(&ata, n_par)?;
        fit.coef = (0..n_par)
            .map(|a| (0..n_par).map(|b| fit.cov[a * n_par + b] * atb[b]).sum())
            .collect();
        if let (Some(u), true) = (count_unit, pass + 1 < passes) {
            for ((i, r), var) in rows.iter().zip(variance.iter_mut()) {
                let model: f64 = r.iter().zip(&fit.coef).map(|(x, c)| x * c).sum();
                *var = sigma[*i] * sigma[*i] * model.max(u) / values[*i].max(u);
            }
        }
    }
    Ok(fit)
}

/// Flat background of a histogram in counts per bin of `hist` after
/// rebinning by `rebin_factor`, from a peak-train fit over the whole range,
/// with its variance.
fn flat_background(
    hist: &CoincidenceHistogram,
    period: f64,
    rebin_factor: usize,
    decay_rate: f64,
) -> Result<(f64, f64)> {
    let r = hist.rebin(rebin_factor)?;
    let values: Vec<f64> = r.counts.iter().map(|&c| c as f64).collect();
    let sigma: Vec<f64> = r.counts.iter().map(|&c| (c.max(1) as f64).sqrt()).collect();
    let fit = fit_peak_train(
        &r.centers(),
        &values,
        &sigma,
        period,
        r.bin_width,
        decay_rate,
        |_| true,
        Some(1.0),
    )?;
    Ok((fit.coef[0].max(0.0), fit.cov[0]))
}

/// Zero-delay peak of a rebinned histogram inside `|τ| < P/2`, in counts,
/// with the flat background and the tails of the neighbouring peaks
/// removed.
struct ZeroWindow {
    area: f64,
    height: f64,
    /// Raw counts in the window.
    raw: f64,
    /// Variances of the background and tails subtracted from `area` and `height`.
    area_model_variance: f64,
    height_model_variance: f64,
    /// Half-width actually covered by the window's bins, s.
    half_width: f64,
}

fn zero_window(rebinned: &CoincidenceHistogram, period: f64, decay_rate: f64) -> Result<ZeroWindow> {
    let half = 0.5 * period;
    let centers = rebinned.centers();
    let values: Vec<f64> = rebinned.counts.iter().map(|&c| c as f64).collect();
    let sigma: Vec<f64> = values.iter().map(|&c| c.max(1.0).sqrt()).collect();
    let fit = fit_peak_train(
        &centers,
        &values,
        &sigma,
        period,
        rebinned.bin_width,
        decay_rate,
        |t| t.abs() >= half,
        Some(1.0),
    )?;
    let zero_col = 1 + fit
        .ks
        .iter()
        .position(|&k| k == 0)
        .ok_or_else(|| Error::domain("histogram does not contain the zero-delay window"))?;
    let mut out = ZeroWindow {
        area: 0.0,
        height: 0.0,
        raw: 0.0,
        area_model_variance: 0.0,
        height_model_variance: 0.0,
        half_width: 0.0,
    };
    let mut grad = vec![0.0; fit.coef.len()];
    let mut peak = f64::NEG_INFINITY;
    for (&t, &y) in centers.iter().zip(&values).filter(|(t, _)| t.abs() < half) {
        let r = fit.row(t);
        let others: f64 = (0..r.len())
            .filter(|&i| i != zero_col)
            .map(|i| fit.coef[i] * r[i])
            .sum();
        for (i, g) in grad.iter_mut().enumerate().filter(|&(i, _)| i != zero_col) {
            *g += r[i];
        }
        out.area += y - others;
        out.raw += y;
        out.half_width = out.half_width.max(t.abs() + 0.5 * rebinned.bin_width);
        if y > peak {
            peak = y;
            out.height = y - others;
            let mut g = r;
            g[zero_col] = 0.0;
            out.height_model_variance = fit.variance_of(&g);
        }
    }
    out.area_model_variance = fit.variance_of(&grad);
    Ok(out)
}

/// Cut out `|τ| < window` after subtracting a flat background and the
/// exponential tails of the non-zero peaks.
///
/// Outside the window the signal is fitted by weighted linear least
/// squares with a constant plus one bin-averaged `e^{−Γ|τ−kP|}` term per
/// peak, including the zero-delay peak's own tail.
pub fn extract_zero_peak(signal: &NormalizedSignal, window: f64, decay_rate: f64) -> Result<ZeroPeak> {
    if !(window > 0.0 && window <= 0.5 * signal.period) {
        return Err(Error::domain(format!(
            "zero-peak window {window:e} s must be positive and at most half the period {:e} s",
            signal.period
        )));
    }
    if !(decay_rate > 0.0) {
        return Err(Error::domain("decay rate must be positive"));
    }
    let fit = fit_peak_train(
        &signal.centers,
        &signal.values,
        &signal.sigma,
        signal.period,
        signal.bin_width,
        decay_rate,
        |t| t.abs() >= window,
        signal.count_unit.is_finite().then_some(signal.count_unit),
    )?;
    let (ks, coef, cov) = (&fit.ks, &fit.coef, &fit.cov);
    let n_par = coef.len();
    let row = |t: f64| fit.row(t);
    let zero_col = 1 + ks.iter().position(|&k| k == 0).unwrap_or(usize::MAX - 1);

    let mut out = ZeroPeak {
        tau: Vec::new(),
        values: Vec::new(),
        sigma: Vec::new(),
        background: coef[0],
        background_sigma: cov[0].max(0.0).sqrt(),
        poisson_gain: signal.count_unit * signal.dispersion * signal.dispersion,
    };
    for ((&t, &y), &s) in signal.centers.iter().zip(&signal.values).zip(&signal.sigma) {
        if t.abs() >= window {
            continue;
        }
        let r = row(t);
        let model: f64 = (0..n_par).filter(|&i| i != zero_col).map(|i| coef[i] * r[i]).sum();
        out.tau.push(t);
        out.values.push(y - model);
        out.sigma.push(s);
    }
    if out.tau.is_empty() {
        return Err(Error::domain("window contains no bins"));
    }
    Ok(out)
}
