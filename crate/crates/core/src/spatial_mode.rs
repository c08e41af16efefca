//! Gaussian spatial modes of the collected fluorescence and their field overlap.
//!
//! Each beam is a fundamental Gaussian mode defined by its waist, focus
//! position and propagation direction. The overlap is taken in the plane
//! transverse to `z` at the mean focus position, with the complex beam
//! parameter `q = Δz + i z_R` carrying wavefront curvature and a linear phase
//! `exp(i k θ x)` for a tilted axis. In that plane both fields are Gaussians
//! in `x` and `y` separately, so the overlap integral factorizes and has a
//! closed form.
//!
//! Alignment errors are measured against natural scales of the reference beam:
//!
//! | kind                | magnitude `m` means                    |
//! |---------------------|----------------------------------------|
//! | `WaistMismatch`     | second waist is `w (1 + m)`            |
//! | `TransverseOffset`  | focus moved by `m w` along `x`         |
//! | `FocalShift`        | focus moved by `m z_R` along `z`       |
//! | `AxisTilt`          | axis tilted by `m λ/(π w)` toward `x`  |

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coincidence_model::peak_ratio;
use crate::constants::{PI, RB87_D2_WAVELENGTH};
use crate::error::{Error, Result};

/// Largest axis angle from `z` accepted by [`overlap`], rad.
pub const MAX_PARAXIAL_TILT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianMode {
    /// 1/e² intensity radius at the focus, m.
    pub waist: f64,
    /// Focus position (x, y, z), m.
    pub focus: [f64; 3],
    /// Unit propagation direction.
    pub direction: [f64; 3],
    /// Vacuum wavelength, m.
    pub wavelength: f64,
}

impl Default for GaussianMode {
    /// The image of one atom in the cut-mirror plane.
    fn default() -> Self {
        GaussianMode {
            waist: 90e-6,
            focus: [0.0; 3],
            direction: [0.0, 0.0, 1.0],
            wavelength: RB87_D2_WAVELENGTH,
        }
    }
}

impl GaussianMode {
    pub fn new(waist: f64, focus: [f64; 3], direction: [f64; 3], wavelength: f64) -> Result<Self> {
        let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::domain("propagation direction must be a non-zero vector"));
        }
        let mode = GaussianMode {
            waist,
            focus,
            direction: direction.map(|d| d / norm),
            wavelength,
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn with_waist(waist: f64) -> Result<Self> {
        GaussianMode::new(waist, [0.0; 3], [0.0, 0.0, 1.0], RB87_D2_WAVELENGTH)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.waist.is_finite() && self.waist > 0.0) {
            return Err(Error::domain(format!("waist must be positive, got {}", self.waist)));
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(Error::domain(format!(
                "wavelength must be positive, got {}",
                self.wavelength
            )));
        }
        if self.focus.iter().any(|f| !f.is_finite()) {
            return Err(Error::domain("focus position must be finite"));
        }
        let norm = self.direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("direction must be a unit vector, |d| = {norm}")));
        }
        if self.direction[2] <= 0.0 {
            return Err(Error::domain("modes must propagate toward +z"));
        }
        Ok(())
    }

    pub fn rayleigh_range(&self) -> f64 {
        PI * self.waist * self.waist / self.wavelength
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Far-field divergence half-angle `λ/(π w)`.
    pub fn divergence(&self) -> f64 {
        self.wavelength / (PI * self.waist)
    }

    /// Tilt of the axis from `z`, as the small angles (θx, θy).
    pub fn tilt(&self) -> (f64, f64) {
        let [dx, dy, dz] = self.direction;
        (dx / dz, dy / dz)
    }

    fn axis_angle(&self) -> f64 {
        let [dx, dy, dz] = self.direction;
        (dx * dx + dy * dy).sqrt().atan2(dz)
    }

    pub fn translated(&self, dx: f64, dy: f64, dz: f64) -> Self {
        let mut m = *self;
        m.focus[0] += dx;
        m.focus[1] += dy;
        m.focus[2] += dz;
        m
    }

    /// The same beam with its axis rotated by `angle` in the x-z plane.
    pub fn tilted_x(&self, angle: f64) -> Self {
        let (tx, ty) = self.tilt();
        let tx = (tx.atan() + angle).tan();
        let norm = (1.0 + tx * tx + ty * ty).sqrt();
        let mut m = *self;
        m.direction = [tx / norm, ty / norm, 1.0 / norm];
        m
    }

    /// Complex field in the plane `z = plane_z`, up to a constant prefactor.
    pub fn field(&self, x: f64, y: f64, plane_z: f64) -> Complex64 {
        let p = self.plane_profile(plane_z);
        p.x.at(x) * p.y.at(y)
    }

    fn plane_profile(&self, plane_z: f64) -> PlaneProfile {
        let k = self.wavenumber();
        let dz = plane_z - self.focus[2];
        let q = Complex64::new(dz, self.rayleigh_range());
        let a = Complex64::i() * k / (2.0 * q);
        let (tx, ty) = self.tilt();
        PlaneProfile {
            x: Gauss1d {
                a,
                center: self.focus[0] + tx * dz,
                slope: k * tx,
            },
            y: Gauss1d {
                a,
                center: self.focus[1] + ty * dz,
                slope: k * ty,
            },
        }
    }
}

/// `exp(-a (x - c)² + i g x)` along one transverse axis.
#[derive(Debug, Clone, Copy)]
struct Gauss1d {
    a: Complex64,
    center: f64,
    slope: f64,
}

impl Gauss1d {
    fn at(&self, x: f64) -> Complex64 {
        let d = x - self.center;
        (-self.a * d * d + Complex64::i() * self.slope * x).exp()
    }

    /// `ln ∫|u|² dx`.
    fn ln_norm(&self) -> f64 {
        0.5 * (PI / (2.0 * self.a.re)).ln()
    }

    /// `ln |∫ u₁* u₂ dx|`.
    fn ln_abs_overlap(&self, other: &Gauss1d) -> f64 {
        let a1 = self.a.conj();
        let a2 = other.a;
        let big_a = a1 + a2;
        let big_b = 2.0 * a1 * self.center + 2.0 * a2 * other.center + Complex64::i() * (other.slope - self.slope);
        let big_c = a1 * self.center * self.center + a2 * other.center * other.center;
        0.5 * (PI / big_a.norm()).ln() + (big_b * big_b / (4.0 * big_a) - big_c).re
    }
}

struct PlaneProfile {
    x: Gauss1d,
    y: Gauss1d,
}

/// Field-amplitude overlap `|∫ f₁* f₂| / √(∫|f₁|² ∫|f₂|²)`.
pub fn overlap(m1: &GaussianMode, m2: &GaussianMode) -> Result<f64> {
    m1.validate()?;
    m2.validate()?;
    for m in [m1, m2] {
        let angle = m.axis_angle();
        if angle > MAX_PARAXIAL_TILT {
            return Err(Error::domain(format!(
                "axis tilt {angle:.4} rad exceeds the paraxial limit {MAX_PARAXIAL_TILT} rad"
            )));
        }
    }
    let plane_z = common_plane(m1, m2);
    let p1 = m1.plane_profile(plane_z);
    let p2 = m2.plane_profile(plane_z);
    let ln_k = p1.x.ln_abs_overlap(&p2.x) + p1.y.ln_abs_overlap(&p2.y)
        - 0.5 * (p1.x.ln_norm() + p2.x.ln_norm() + p1.y.ln_norm() + p2.y.ln_norm());
    // The integral is symmetric; clamp only the rounding excess above one.
    Ok(ln_k.exp().min(1.0))
}

/// Plane in which [`overlap`] evaluates the fields.
pub fn common_plane(m1: &GaussianMode, m2: &GaussianMode) -> f64 {
    0.5 * (m1.focus[2] + m2.focus[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentKind {
    WaistMismatch,
    TransverseOffset,
    FocalShift,
    AxisTilt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentError {
    pub kind: AlignmentKind,
    pub magnitude: f64,
}

impl AlignmentError {
    pub fn new(kind: AlignmentKind, magnitude: f64) -> Result<Self> {
        if !(magnitude.is_finite() && magnitude >= 0.0) {
            return Err(Error::domain(format!(
                "alignment error magnitude must be non-negative, got {magnitude}"
            )));
        }
        Ok(AlignmentError { kind, magnitude })
    }

    /// Apply this error to `mode`, measured against the scales of `reference`.
    pub fn apply(&self, mode: &GaussianMode, reference: &GaussianMode) -> GaussianMode {
        let m = self.magnitude;
        match self.kind {
            AlignmentKind::WaistMismatch => {
                let mut out = *mode;
                out.waist *= 1.0 + m;
                out
            }
            AlignmentKind::TransverseOffset => mode.translated(m * reference.waist, 0.0, 0.0),
            AlignmentKind::FocalShift => mode.translated(0.0, 0.0, m * reference.rayleigh_range()),
            AlignmentKind::AxisTilt => mode.tilted_x(m * reference.divergence()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentBudget {
    /// Overlap with each error applied on its own.
    pub factors: Vec<(AlignmentError, f64)>,
    /// Product of the individual factors.
    pub product: f64,
    /// Overlap with all errors applied together.
    pub exact: f64,
    /// `product - exact`.
    pub discrepancy: f64,
}

pub fn alignment_budget(base: &GaussianMode, errors: &[AlignmentError]) -> Result<AlignmentBudget> {
    let mut factors = Vec::with_capacity(errors.len());
    let mut combined = *base;
    for e in errors {
        let k = overlap(base, &e.apply(base, base))?;
        factors.push((*e, k));
        combined = e.apply(&combined, base);
    }
    let product = factors.iter().map(|(_, k)| k).product::<f64>();
    let exact = overlap(base, &combined)?;
    Ok(AlignmentBudget {
        factors,
        product,
        exact,
        discrepancy: product - exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    /// Transverse displacement, m.
    pub offset: f64,
    /// Predicted normalized zero-delay ratio.
    pub ratio: f64,
}

/// Predicted zero-delay ratio `(1 − K_max² e^{−d²/w²})/2` for each
/// transverse displacement of one image relative to the other.
pub fn displacement_scan(mode: &GaussianMode, k_max: f64, offsets: &[f64]) -> Result<Vec<ScanPoint>> {
    mode.validate()?;
    peak_ratio(k_max)?;
    let w2 = mode.waist * mode.waist;
    offsets
        .iter()
        .map(|&d| {
            if !d.is_finite() {
                return Err(Error::domain(format!("displacement must be finite, got {d}")));
            }
            let ratio = 0.5 * (1.0 - k_max * k_max * (-d * d / w2).exp());
            Ok(ScanPoint { offset: d, ratio })
        })
        .collect()
}

/// The same scan computed through the full overlap integral and the
/// ratio law, for beams with `mode`'s shape displaced along `x`.
pub fn displacement_scan_from_overlap(mode: &GaussianMode, k_max: f64, offsets: &[f64]) -> Result<Vec<ScanPoint>> {
    offsets
        .iter()
        .map(|&d| {
            let k = k_max * overlap(mode, &mode.translated(d, 0.0, 0.0))?;
            Ok(ScanPoint {
                offset: d,
                ratio: peak_ratio(k)?,
            })
        })
        .collect()
}
