//! Least-squares extraction of `(K, T)` from the zero-delay peak and of
//! `(K_max, centre)` from a displacement scan.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coincidence_model::{broadened_unchecked, BroadeningParams};
use crate::constants::{DEFAULT_DECAY_RATE, MICROKELVIN};
use crate::error::{Error, Result};
use crate::linalg::invert;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: BTreeMap<String, f64>,
    pub sigmas: BTreeMap<String, f64>,
    pub chi2: f64,
    pub dof: usize,
    pub converged: bool,
    pub residuals: Vec<f64>,
    /// Parameters that ended on a bound of their allowed range.
    #[serde(default)]
    pub at_boundary: Vec<String>,
    /// One-sided 95% upper limits for parameters pinned at zero.
    #[serde(default)]
    pub upper_bounds: BTreeMap<String, f64>,
    /// 68% profile-likelihood intervals (Δχ² = 1), where computed.
    #[serde(default)]
    pub intervals: BTreeMap<String, (f64, f64)>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.sigmas.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn reduced_chi2(&self) -> f64 {
        self.chi2 / self.dof as f64
    }
}

/// A data point `(x, value, σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub value: f64,
    pub sigma: f64,
}

impl DataPoint {
    pub fn new(x: f64, value: f64, sigma: f64) -> Self {
        DataPoint { x, value, sigma }
    }
}

fn check_points(points: &[DataPoint], min: usize) -> Result<()> {
    if points.len() < min {
        return Err(Error::Precondition(format!(
            "fit needs at least {min} points, got {}",
            points.len()
        )));
    }
    for (i, p) in points.iter().enumerate() {
        if !(p.x.is_finite() && p.value.is_finite()) {
            return Err(Error::Precondition(format!("point {i} is not finite")));
        }
        if !(p.sigma.is_finite() && p.sigma > 0.0) {
            return Err(Error::Precondition(format!(
                "point {i} has non-positive uncertainty {}",
                p.sigma
            )));
        }
    }
    Ok(())
}

/// Bounded Nelder–Mead. Vertices are clamped to the box after each move.
struct NelderMead {
    lower: Vec<f64>,
    upper: Vec<f64>,
    max_iter: usize,
    tolerance: f64,
}

struct Minimum {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

impl NelderMead {
    fn clamp(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    fn minimize(&self, f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: &[f64]) -> Minimum {
        let n = start.len();
        let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
        for i in 0..n {
            let mut v = start.to_vec();
            v[i] += step[i];
            if v[i] > self.upper[i] {
                v[i] = start[i] - step[i];
            }
            self.clamp(&mut v);
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iter {
            iterations += 1;
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let size = (1..=n)
                .flat_map(|j| (0..n).map(move |i| (j, i)))
                .map(|(j, i)| ((simplex[j][i] - simplex[0][i]) / step[i]).abs())
                .fold(0.0, f64::max);
            if spread <= self.tolerance * values[0].abs() + 1e-14 && size < 1e-7 {
                converged = true;
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|i| simplex[..n].iter().map(|v| v[i]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                let mut v: Vec<f64> = (0..n)
                    .map(|i| centroid[i] + t * (simplex[n][i] - centroid[i]))
                    .collect();
                self.clamp(&mut v);
                v
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < values[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
            } else if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
            } else {
                let (xc, fc) = if fr < values[n] {
                    let x = along(-0.5);
                    let v = f(&x);
                    (x, v)
                } else {
                    let x = along(0.5);
                    let v = f(&x);
                    (x, v)
                };
                if fc < values[n].min(fr) {
                    simplex[n] = xc;
                    values[n] = fc;
                } else {
                    for j in 1..=n {
                        for i in 0..n {
                            simplex[j][i] = simplex[0][i] + 0.5 * (simplex[j][i] - simplex[0][i]);
                        }
                        values[j] = f(&simplex[j]);
                    }
                }
            }
        }
        let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
        Minimum {
            x: simplex[best].clone(),
            f: values[best],
            iterations,
            converged,
        }
    }
}

/// Height of the mixer zero peak relative to a separator peak for fully
/// distinguishable photons. Normalized data from
/// [`crate::experiment_sim::normalize`] carries this amplitude.
pub const NORMALIZED_ZERO_PEAK_AMPLITUDE: f64 = 0.5;

/// How the overall amplitude of the zero-peak model is handled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Amplitude {
    /// Free nuisance parameter, solved in closed form at every `(K, T)`.
    Profiled,
    Fixed(f64),
}

impl Default for Amplitude {
    fn default() -> Self {
        Amplitude::Fixed(NORMALIZED_ZERO_PEAK_AMPLITUDE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroPeakFitOptions {
    /// Γ, 1/s.
    pub decay_rate: f64,
    /// η of the frequency-difference model.
    pub differential_shift_factor: f64,
    pub amplitude: Amplitude,
    /// Average the model over bins of this width, s.
    pub bin_width: Option<f64>,
    /// Variance added per unit increase of the expected value when the
    /// data are scaled Poisson counts. When set, the errors are
    /// recomputed from the fitted model and the fit repeated, instead of
    /// trusting errors taken from the observed counts.
    #[serde(default)]
    pub poisson_gain: Option<f64>,
}

impl Default for ZeroPeakFitOptions {
    fn default() -> Self {
        ZeroPeakFitOptions {
            decay_rate: DEFAULT_DECAY_RATE,
            differential_shift_factor: 1.0,
            amplitude: Amplitude::default(),
            bin_width: None,
            poisson_gain: None,
        }
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1], five points.
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn gauss_mean(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    0.5 * GL5.iter().map(|&(x, w)| w * f(m + h * x)).sum::<f64>()
}

/// Unit-amplitude zero-peak shape, optionally bin-averaged. `product` is
/// `η·T` in kelvin.
pub fn zero_peak_shape(tau: f64, k: f64, product: f64, decay_rate: f64, bin_width: Option<f64>) -> f64 {
    let params = BroadeningParams {
        temperature: product,
        differential_shift_factor: 1.0,
        decay_rate,
    };
    let f = |t: f64| broadened_unchecked(t, k, &params);
    match bin_width {
        None => f(tau),
        Some(w) => {
            let (a, b) = (tau - 0.5 * w, tau + 0.5 * w);
            // Split at the cusp so each panel is smooth.
            if a < 0.0 && b > 0.0 {
                (gauss_mean(&f, a, 0.0) * (-a) + gauss_mean(&f, 0.0, b) * b) / w
            } else {
                gauss_mean(&f, a, b)
            }
        }
    }
}

struct ZeroPeakProblem<'a> {
    points: &'a [DataPoint],
    opts: ZeroPeakFitOptions,
}

impl ZeroPeakProblem<'_> {
    fn shapes(&self, k: f64, product_uk: f64) -> Vec<f64> {
        let product = product_uk * MICROKELVIN;
        self.points
            .iter()
            .map(|p| zero_peak_shape(p.x, k, product, self.opts.decay_rate, self.opts.bin_width))
            .collect()
    }

    fn amplitude(&self, shapes: &[f64]) -> f64 {
        match self.opts.amplitude {
            Amplitude::Fixed(a) => a,
            Amplitude::Profiled => {
                let (mut num, mut den) = (0.0, 0.0);
                for (p, s) in self.points.iter().zip(shapes) {
                    let w = 1.0 / (p.sigma * p.sigma);
                    num += w * s * p.value;
                    den += w * s * s;
                }
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            }
        }
    }

    fn chi2(&self, x: &[f64]) -> f64 {
        let shapes = self.shapes(x[0], x[1]);
        let a = self.amplitude(&shapes);
        self.points
            .iter()
            .zip(&shapes)
            .map(|(p, s)| ((p.value - a * s) / p.sigma).powi(2))
            .sum()
    }

    /// χ² minimized over K at fixed `η·T`, searched from each of `starts`.
    fn profile_over_k(&self, product_uk: f64, starts: &[f64]) -> f64 {
        let nm = NelderMead {
            lower: vec![0.0, product_uk],
            upper: vec![1.0, product_uk],
            max_iter: 400,
            tolerance: 1e-12,
        };
        let f = |x: &[f64]| self.chi2(&[x[0], product_uk]);
        starts
            .iter()
            .map(|&k0| nm.minimize(&f, &[k0, product_uk], &[0.05, 1.0]).f)
            .fold(f64::INFINITY, f64::min)
    }

    /// Where the K-profiled χ² crosses `target` between `inside` (below
    /// target) and `outside` (above).
    fn profile_crossing(&self, target: f64, inside: f64, outside: f64, k_start: f64) -> f64 {
        let (mut a, mut b) = (inside, outside);
        while (b - a).abs() > 1e-6 * (1.0 + a.abs()) {
            let mid = 0.5 * (a + b);
            if self.profile_over_k(mid, &[k_start]) < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

/// Upper end of the search range for `η·T`, µK.
const MAX_PRODUCT_UK: f64 = 1e5;

/// Fit `A · broadened_signal(τ; K, T)` to zero-delay peak samples with `x = τ` in seconds.
///
/// K and `η·T` are fitted on the box `[0, 1] × [0, 10⁵ µK]` from a 3×3
/// start grid; the reported temperature is `(η·T)/η`, so rescaling η
/// rescales T and nothing else. Uncertainties come from the curvature of
/// χ² including the amplitude. When T sits at zero a 95% upper bound is
/// reported from the profile likelihood.
///
/// With [`ZeroPeakFitOptions::poisson_gain`] set, each point's variance is
/// moved from its observed value to the fitted one,
/// `σ² + g·(model − value)` with a floor at the smallest input variance,
/// over three reweighting passes.
pub fn fit_zero_peak(points: &[DataPoint], opts: &ZeroPeakFitOptions) -> Result<FitResult> {
    let Some(gain) = opts.poisson_gain else {
        return fit_zero_peak_weighted(points, opts);
    };
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::domain(format!("Poisson gain must be positive, got {gain}")));
    }
    check_points(points, 8)?;
    let floor = points.iter().map(|p| p.sigma * p.sigma).fold(f64::INFINITY, f64::min);
    let mut current = points.to_vec();
    let mut fit = fit_zero_peak_weighted(&current, opts)?;
    for _ in 0..3 {
        for ((c, p), r) in current.iter_mut().zip(points).zip(&fit.residuals) {
            // The residual is value − model.
            c.sigma = (p.sigma * p.sigma - gain * r).max(floor).sqrt();
        }
        fit = fit_zero_peak_weighted(&current, opts)?;
    }
    Ok(fit)
}

fn fit_zero_peak_weighted(points: &[DataPoint], opts: &ZeroPeakFitOptions) -> Result<FitResult> {
    check_points(points, 8)?;
    if !(opts.decay_rate > 0.0) {
        return Err(Error::domain("decay rate must be positive"));
    }
    if !(opts.differential_shift_factor > 0.0) {
        return Err(Error::domain("differential shift factor must be positive"));
    }
    if let Some(w) = opts.bin_width {
        if !(w > 0.0) {
            return Err(Error::domain("bin width must be positive"));
        }
    }
    let eta = opts.differential_shift_factor;
    let problem = ZeroPeakProblem { points, opts: *opts };
    let f = |x: &[f64]| problem.chi2(x);
    let nm = NelderMead {
        lower: vec![0.0, 0.0],
        upper: vec![1.0, MAX_PRODUCT_UK],
        max_iter: 2000,
        tolerance: 1e-13,
    };

    let mut trace = Vec::new();
    let mut best: Option<Minimum> = None;
    for &k0 in &[0.2, 0.5, 0.8] {
        for &t0 in &[50.0, 150.0, 300.0] {
            let m = nm.minimize(&f, &[k0, t0], &[0.1, 40.0]);
            trace.push(format!(
                "start (K={k0}, ηT={t0} µK) -> (K={:.6}, ηT={:.4} µK) χ²={:.6} iter={} converged={}",
                m.x[0], m.x[1], m.f, m.iterations, m.converged
            ));
            if best.as_ref().is_none_or(|b| m.f < b.f) {
                best = Some(m);
            }
        }
    }
    let mut best = best.expect("start grid is non-empty");
    // A final restart from the best vertex shakes off a collapsed simplex.
    let polish = nm.minimize(&f, &best.x, &[0.02, 5.0]);
    if polish.f <= best.f {
        best = Minimum {
            converged: polish.converged,
            ..polish
        };
    }
    if !best.converged {
        return Err(Error::numerical("zero-peak fit did not converge", trace.join("\n")));
    }

    let (k, product_uk) = (best.x[0], best.x[1]);
    let shapes = problem.shapes(k, product_uk);
    let amp = problem.amplitude(&shapes);
    let residuals: Vec<f64> = points.iter().zip(&shapes).map(|(p, s)| p.value - amp * s).collect();

    // Curvature from a finite-difference Jacobian of the full model.
    let profiled = matches!(opts.amplitude, Amplitude::Profiled);
    let model = |k: f64, t: f64, a: f64| -> Vec<f64> {
        problem
            .shapes(k.clamp(0.0, 1.0), t.max(0.0))
            .into_iter()
            .map(|s| a * s)
            .collect()
    };
    let hk = 1e-6;
    let ht = 1e-6 * product_uk.max(1.0);
    let diff = |plus: Vec<f64>, minus: Vec<f64>, h: f64| -> Vec<f64> {
        plus.iter().zip(&minus).map(|(p, m)| (p - m) / h).collect()
    };
    let (k_lo, k_hi) = ((k - hk).max(0.0), (k + hk).min(1.0));
    let (t_lo, t_hi) = ((product_uk - ht).max(0.0), product_uk + ht);
    let mut cols = vec![
        diff(model(k_hi, product_uk, amp), model(k_lo, product_uk, amp), k_hi - k_lo),
        diff(model(k, t_hi, amp), model(k, t_lo, amp), t_hi - t_lo),
    ];
    if profiled {
        cols.push(shapes.clone());
    }
    let np = cols.len();
    let mut jtj = vec![0.0; np * np];
    for (r, p) in points.iter().enumerate() {
        let w = 1.0 / (p.sigma * p.sigma);
        for i in 0..np {
            for j in 0..np {
                jtj[i * np + j] += w * cols[i][r] * cols[j][r];
            }
        }
    }
    let cov = invert(&jtj, np).unwrap_or_else(|_| vec![f64::NAN; np * np]);

    let mut at_boundary = Vec::new();
    let mut upper_bounds = BTreeMap::new();
    if k <= 1e-9 || k >= 1.0 - 1e-9 {
        at_boundary.push("K".to_string());
    }
    if product_uk <= 1e-6 {
        at_boundary.push("T_uK".to_string());
        let target = best.f + 2.71;
        let starts = [0.2, 0.5, 0.8];
        let (mut lo, mut hi) = (0.0, 50.0);
        while problem.profile_over_k(hi, &starts) < target && hi < MAX_PRODUCT_UK {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if problem.profile_over_k(mid, &starts) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        upper_bounds.insert("T_uK".to_string(), 0.5 * (lo + hi) / eta);
    }

    // The K–T correlation makes the χ² surface skewed in T, so its
    // interval comes from the profile rather than the curvature.
    let target = best.f + 1.0;
    let curvature_sigma = cov[np + 1].max(0.0).sqrt();
    let step = if curvature_sigma.is_finite() && curvature_sigma > 0.0 {
        curvature_sigma
    } else {
        product_uk.max(10.0)
    };
    let t_lo = if product_uk <= 0.0 || problem.profile_over_k(0.0, &[k]) < target {
        0.0
    } else {
        problem.profile_crossing(target, product_uk, 0.0, k)
    };
    let mut outside = product_uk + step;
    while problem.profile_over_k(outside, &[k]) < target && outside < MAX_PRODUCT_UK {
        outside += 2.0 * (outside - product_uk);
    }
    let t_hi = problem.profile_crossing(target, product_uk, outside.min(MAX_PRODUCT_UK), k);
    let mut intervals = BTreeMap::new();
    intervals.insert("T_uK".to_string(), (t_lo / eta, t_hi / eta));

    let dof = points.len() - np;
    let mut params = BTreeMap::new();
    let mut sigmas = BTreeMap::new();
    params.insert("K".to_string(), k);
    params.insert("T_uK".to_string(), product_uk / eta);
    params.insert("amplitude".to_string(), amp);
    sigmas.insert("K".to_string(), cov[0].max(0.0).sqrt());
    sigmas.insert("T_uK".to_string(), 0.5 * (t_hi - t_lo) / eta);
    sigmas.insert(
        "amplitude".to_string(),
        if profiled {
            cov[np * np - 1].max(0.0).sqrt()
        } else {
            0.0
        },
    );
    Ok(FitResult {
        params,
        sigmas,
        chi2: best.f,
        dof,
        converged: true,
        residuals,
        at_boundary,
        upper_bounds,
        intervals,
    })
}

/// `(1 − K_max² e^{−(d−c)²/w²})/2`.
pub fn displacement_model(d: f64, k_max: f64, center: f64, waist: f64) -> f64 {
    0.5 * (1.0 - k_max * k_max * (-((d - center) / waist).powi(2)).exp())
}

/// Fit `K_max` and the centre of a displacement scan with the waist held
/// fixed. `x` is the displacement.
///
/// For a given centre the model is linear in `K_max²`, which is solved in
/// closed form; the centre is found by a grid search refined by golden
/// section.
pub fn fit_displacement_scan(points: &[DataPoint], waist: f64) -> Result<FitResult> {
    check_points(points, 4)?;
    if !(waist.is_finite() && waist > 0.0) {
        return Err(Error::domain(format!("waist must be positive, got {waist}")));
    }
    let (dmin, dmax) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
    if dmax - dmin <= 1e-12 * waist {
        return Err(Error::Precondition(
            "degenerate scan: all displacements are equal".into(),
        ));
    }

    let solve_u = |c: f64| -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for p in points {
            let g = 0.5 * (-((p.x - c) / waist).powi(2)).exp();
            let w = 1.0 / (p.sigma * p.sigma);
            num += w * g * (0.5 - p.value);
            den += w * g * g;
        }
        let u = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };
        let chi2 = points
            .iter()
            .map(|p| ((p.value - displacement_model(p.x, u.sqrt(), c, waist)) / p.sigma).powi(2))
            .sum();
        (u, chi2)
    };

    let (lo, hi) = (dmin - waist, dmax + waist);
    let n_grid = 801;
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| lo + (hi - lo) * i as f64 / (n_grid - 1) as f64)
        .collect();
    let best_i = (0..n_grid)
        .min_by(|&a, &b| solve_u(grid[a]).1.total_cmp(&solve_u(grid[b]).1))
        .unwrap_or(0);
    let (mut a, mut b) = (grid[best_i.saturating_sub(1)], grid[(best_i + 1).min(n_grid - 1)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c1 = b - phi * (b - a);
        let c2 = a + phi * (b - a);
        if solve_u(c1).1 <= solve_u(c2).1 {
            b = c2;
        } else {
            a = c1;
        }
    }
    let center = 0.5 * (a + b);
    let (u, chi2) = solve_u(center);
    let k_max = u.sqrt();

    let residuals: Vec<f64> = points
        .iter()
        .map(|p| p.value - displacement_model(p.x, k_max, center, waist))
        .collect();
    // Analytic Jacobian in (K_max, centre).
    let mut jtj = [0.0; 4];
    for p in points {
        let e = (-((p.x - center) / waist).powi(2)).exp();
        let dk = -k_max * e;
        let dc = -0.5 * k_max * k_max * e * 2.0 * (p.x - center) / (waist * waist);
        let w = 1.0 / (p.sigma * p.sigma);
        jtj[0] += w * dk * dk;
        jtj[1] += w * dk * dc;
        jtj[2] += w * dc * dk;
        jtj[3] += w * dc * dc;
    }
    let cov = invert(&jtj, 2).unwrap_or_else(|_| vec![f64::NAN; 4]);

    let mut at_boundary = Vec::new();
    if u <= 0.0 || u >= 1.0 {
        at_boundary.push("K_max".to_string());
    }
    let mut params = BTreeMap::new();
    let mut sigmas = BTreeMap::new();
    params.insert("K_max".to_string(), k_max);
    params.insert("center".to_string(), center);
    sigmas.insert("K_max".to_string(), cov[0].max(0.0).sqrt());
    sigmas.insert("center".to_string(), cov[3].max(0.0).sqrt());
    Ok(FitResult {
        params,
        sigmas,
        chi2,
        dof: points.len() - 2,
        converged: true,
        residuals,
        at_boundary,
        upper_bounds: BTreeMap::new(),
        intervals: BTreeMap::new(),
    })
}
