use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::field::DepthIntegrator;
use crate::lm::{fit_curve, CurveModel, LmOptions};
use crate::recon::map::FieldMap;

pub const MIN_PROFILE_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub x_um: f64,
    pub field_ut: f64,
    /// Valid pixels averaged into this point.
    pub n_valid: usize,
}

/// Averages each column of the map over its valid pixels, i.e. along the
/// wire. Columns without valid pixels are omitted.
pub fn profile_across_wire(map: &FieldMap) -> Vec<ProfilePoint> {
    (0..map.width_v)
        .filter_map(|c| {
            let (sum, n) = (0..map.height_v)
                .filter_map(|r| map.value(r, c))
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            (n > 0).then(|| ProfilePoint { x_um: map.x_um[c], field_ut: sum / n as f64, n_valid: n })
        })
        .collect()
}

/// Wire geometry and current recovered from a field profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireFit {
    pub d_hat_um: f64,
    pub i_hat_a: f64,
    pub x0_hat_um: f64,
    pub d_stderr_um: f64,
    pub i_stderr_a: f64,
    pub x0_stderr_um: f64,
    pub residual_rms_ut: f64,
    pub iterations: usize,
}

/// Raw columns averaged into one profile sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelAperture {
    pub bin_factor: usize,
    pub pixel_pitch_um: f64,
}

impl PixelAperture {
    /// Point sampling at the profile abscissae.
    pub fn point() -> Self {
        Self { bin_factor: 1, pixel_pitch_um: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        ensure(self.bin_factor > 0, "bin_factor", "must be > 0")?;
        ensure(self.pixel_pitch_um >= 0.0, "pixel_pitch_um", "must be >= 0")
    }

    /// Raw-column centres relative to the virtual-pixel centre.
    fn offsets(&self) -> Vec<f64> {
        let b = self.bin_factor as f64;
        (0..self.bin_factor).map(|j| (j as f64 + 0.5 - 0.5 * b) * self.pixel_pitch_um).collect()
    }
}

struct WireModel {
    integrator: DepthIntegrator,
    offsets: Vec<f64>,
}

impl WireModel {
    fn new(thickness_um: f64, aperture: &PixelAperture) -> Self {
        Self { integrator: DepthIntegrator::new(thickness_um), offsets: aperture.offsets() }
    }

    fn unit_field(&self, x: f64, d: f64, x0: f64) -> f64 {
        let n = self.offsets.len() as f64;
        self.offsets.iter().map(|o| self.integrator.average(x + o, d, x0, 1.0)).sum::<f64>() / n
    }
}

// Parameter order: d, current, x0.
impl CurveModel<3> for WireModel {
    fn eval(&self, x: f64, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let n = self.offsets.len() as f64;
        let (mut f, mut grad) = (0.0, Vector3::zeros());
        for o in &self.offsets {
            let g = self.integrator.average_with_gradient(x + o, p[0], p[2], p[1]);
            f += g.field_ut;
            grad += Vector3::new(g.d_field_d_d, g.d_field_d_current, g.d_field_d_x0);
        }
        (f / n, grad / n)
    }

    fn admissible(&self, p: &Vector3<f64>) -> bool {
        p[0] > 0.0
    }
}

fn sign_change(points: &[ProfilePoint], lo: usize, hi: usize) -> Option<f64> {
    (lo..hi).find_map(|i| {
        let (a, b) = (&points[i], &points[i + 1]);
        if a.field_ut == 0.0 {
            Some(a.x_um)
        } else if a.field_ut.signum() != b.field_ut.signum() {
            let t = a.field_ut / (a.field_ut - b.field_ut);
            Some(a.x_um + t * (b.x_um - a.x_um))
        } else {
            None
        }
    })
}

/// Fits `(d, I, x0)` of the depth-averaged wire field to a profile sorted by
/// `x`, each sample averaged over `aperture`. The initial `x0` is the zero
/// crossing between the extrema and the initial `d` solves `x*² = d(d + T)`
/// for the mean extremum distance `x*`.
pub fn fit_wire_profile(profile: &[ProfilePoint], thickness_um: f64, aperture: &PixelAperture) -> Result<WireFit> {
    ensure(thickness_um > 0.0, "thickness_um", "must be > 0")?;
    aperture.validate()?;
    ensure(
        profile.len() >= MIN_PROFILE_POINTS,
        "profile",
        format!("need at least {MIN_PROFILE_POINTS} points, got {}", profile.len()),
    )?;
    ensure(
        profile.windows(2).all(|w| w[0].x_um < w[1].x_um),
        "profile",
        "x must be strictly increasing",
    )?;
    let by_field = |a: &&ProfilePoint, b: &&ProfilePoint| a.field_ut.total_cmp(&b.field_ut);
    let imax = (0..profile.len()).max_by(|&a, &b| by_field(&&profile[a], &&profile[b])).unwrap_or(0);
    let imin = (0..profile.len()).min_by(|&a, &b| by_field(&&profile[a], &&profile[b])).unwrap_or(0);
    if profile[imax].field_ut <= 0.0 || profile[imin].field_ut >= 0.0 {
        return Err(Error::SignAmbiguity);
    }
    let (lo, hi) = (imax.min(imin), imax.max(imin));
    let x0 = sign_change(profile, lo, hi).ok_or(Error::SignAmbiguity)?;
    let x_star = 0.5 * (profile[hi].x_um - profile[lo].x_um);
    let t = thickness_um;
    let d = 0.5 * (-t + (t * t + 4.0 * x_star * x_star).sqrt());
    let d = d.max(1e-3 * t);

    let model = WireModel::new(thickness_um, aperture);
    // Positive current puts the positive extremum at x > x0.
    let sign = if imax == hi { 1.0 } else { -1.0 };
    let peak = 0.5 * (profile[imax].field_ut - profile[imin].field_ut);
    let unit = model.unit_field(x0 + x_star, d, x0);
    let current = sign * peak / unit;

    let xs: Vec<f64> = profile.iter().map(|p| p.x_um).collect();
    let ys: Vec<f64> = profile.iter().map(|p| p.field_ut).collect();
    let sol = fit_curve(&model, &xs, &ys, Vector3::new(d, current, x0), &LmOptions::default())?;
    Ok(WireFit {
        d_hat_um: sol.params[0],
        i_hat_a: sol.params[1],
        x0_hat_um: sol.params[2],
        d_stderr_um: sol.stderr(0),
        i_stderr_a: sol.stderr(1),
        x0_stderr_um: sol.stderr(2),
        residual_rms_ut: sol.residual_rms(xs.len()),
        iterations: sol.iterations,
    })
}

/// Known field-per-current pattern against which a measured profile is scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurrentReference {
    /// Geometry from a prior wire fit.
    Wire { fit: WireFit, thickness_um: f64, aperture: PixelAperture },
    /// Profile measured at a known current; interpolated linearly in `x`.
    Profile { points: Vec<ProfilePoint>, current_a: f64 },
}

impl CurrentReference {
    /// Field per ampere at `x_um`, or `None` outside a reference profile.
    fn unit_field(&self, x_um: f64, model: Option<&WireModel>) -> Option<f64> {
        match self {
            CurrentReference::Wire { fit, .. } => model.map(|m| m.unit_field(x_um, fit.d_hat_um, fit.x0_hat_um)),
            CurrentReference::Profile { points, current_a } => {
                let k = points.partition_point(|p| p.x_um < x_um);
                let value = if k < points.len() && points[k].x_um == x_um {
                    points[k].field_ut
                } else if k == 0 || k == points.len() {
                    return None;
                } else {
                    let (a, b) = (&points[k - 1], &points[k]);
                    a.field_ut + (x_um - a.x_um) / (b.x_um - a.x_um) * (b.field_ut - a.field_ut)
                };
                Some(value / current_a)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            CurrentReference::Wire { fit, thickness_um, aperture } => {
                ensure(*thickness_um > 0.0, "thickness_um", "must be > 0")?;
                aperture.validate()?;
                ensure(fit.d_hat_um > 0.0, "d_hat_um", "must be > 0")
            }
            CurrentReference::Profile { points, current_a } => {
                ensure(*current_a != 0.0, "current_a", "must be nonzero")?;
                ensure(points.len() >= 2, "points", "need at least 2 reference points")?;
                ensure(
                    points.windows(2).all(|w| w[0].x_um < w[1].x_um),
                    "points",
                    "x must be strictly increasing",
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentEstimate {
    pub current_ma: f64,
    pub stderr_ma: f64,
    pub points_used: usize,
}

/// Least-squares current `Î = Σ mᵢyᵢ / Σ mᵢ²` for a measured profile `y`
/// against the reference field per ampere `m`.
pub fn infer_pulse_current(measured: &[ProfilePoint], reference: Option<&CurrentReference>) -> Result<CurrentEstimate> {
    let reference = reference.ok_or(Error::NoReference)?;
    reference.validate()?;
    let model = match reference {
        CurrentReference::Wire { thickness_um, aperture, .. } => Some(WireModel::new(*thickness_um, aperture)),
        CurrentReference::Profile { .. } => None,
    };
    let pairs: Vec<(f64, f64)> = measured
        .iter()
        .filter_map(|p| reference.unit_field(p.x_um, model.as_ref()).map(|m| (m, p.field_ut)))
        .collect();
    ensure(pairs.len() >= 2, "measured", "fewer than 2 points overlap the reference")?;
    let smm: f64 = pairs.iter().map(|(m, _)| m * m).sum();
    ensure(smm > 0.0, "reference", "carries no field at the measured positions")?;
    let current = pairs.iter().map(|(m, y)| m * y).sum::<f64>() / smm;
    let rss: f64 = pairs.iter().map(|(m, y)| (y - current * m).powi(2)).sum();
    let stderr = (rss / (pairs.len() - 1) as f64 / smm).sqrt();
    Ok(CurrentEstimate { current_ma: current * 1e3, stderr_ma: stderr * 1e3, points_used: pairs.len() })
}
