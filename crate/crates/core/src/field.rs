//! Magnetostatics of a straight wire above the sensor slab.
//!
//! The wire runs along +y at horizontal position `x0`. Positive current
//! flows in +y and gives a positive sensed field (projection on the bias
//! axis) at `x − x0 > 0`. Lengths are in µm, currents in A and fields in µT
//! unless a name says otherwise.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::quadrature::GaussLegendre;

/// μ₀/2π in T·m/A.
pub const MU0_OVER_2PI: f64 = 2e-7;

/// μ₀/2π expressed as µT·µm/A.
const MU0_OVER_2PI_UT_UM: f64 = MU0_OVER_2PI * 1e12;

pub const DEFAULT_THICKNESS_UM: f64 = 300.0;
pub const DEFAULT_PIXEL_PITCH_UM: f64 = 3.0;
pub const DEFAULT_WIDTH_PX: usize = 512;
pub const DEFAULT_HEIGHT_PX: usize = 542;

/// Gauss–Legendre panels and nodes per panel for the depth average.
pub const DEPTH_PANELS: usize = 16;
pub const DEPTH_NODES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireAxis {
    #[default]
    AlongY,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireGeometry {
    /// Wire radius; the fitted value also absorbs any air gap.
    pub radius_um: f64,
    pub x0_um: f64,
    #[serde(default)]
    pub axis: WireAxis,
    #[serde(default)]
    pub standoff_um: f64,
}

impl WireGeometry {
    pub fn new(radius_um: f64, x0_um: f64) -> Self {
        Self { radius_um, x0_um, axis: WireAxis::AlongY, standoff_um: 0.0 }
    }

    /// Distance from the wire axis to the sensor surface.
    pub fn d_um(&self) -> f64 {
        self.radius_um + self.standoff_um
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.radius_um > 0.0, "radius_um", "must be > 0")?;
        ensure(self.standoff_um >= 0.0, "standoff_um", "must be >= 0")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSlab {
    pub thickness_um: f64,
    /// Raw camera pixel size projected on the sample plane.
    pub pixel_pitch_um: f64,
    pub width_px: usize,
    pub height_px: usize,
}

impl Default for SensorSlab {
    fn default() -> Self {
        Self {
            thickness_um: DEFAULT_THICKNESS_UM,
            pixel_pitch_um: DEFAULT_PIXEL_PITCH_UM,
            width_px: DEFAULT_WIDTH_PX,
            height_px: DEFAULT_HEIGHT_PX,
        }
    }
}

impl SensorSlab {
    pub fn validate(&self) -> Result<()> {
        ensure(self.thickness_um > 0.0, "thickness_um", "must be > 0")?;
        ensure(self.pixel_pitch_um > 0.0, "pixel_pitch_um", "must be > 0")?;
        ensure(self.width_px > 0, "width_px", "must be > 0")?;
        ensure(self.height_px > 0, "height_px", "must be > 0")
    }

    /// Sample-plane x of a raw column centre.
    pub fn column_x_um(&self, col: usize) -> f64 {
        (col as f64 + 0.5) * self.pixel_pitch_um
    }

    pub fn row_y_um(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * self.pixel_pitch_um
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformKind {
    Dc,
    Pulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentWaveform {
    pub kind: WaveformKind,
    pub amplitude_ma: f64,
    #[serde(default)]
    pub t_start_ms: f64,
    #[serde(default)]
    pub duration_ms: f64,
}

impl CurrentWaveform {
    pub fn dc(amplitude_ma: f64) -> Self {
        Self { kind: WaveformKind::Dc, amplitude_ma, t_start_ms: 0.0, duration_ms: 0.0 }
    }

    pub fn pulse(amplitude_ma: f64, t_start_ms: f64, duration_ms: f64) -> Self {
        Self { kind: WaveformKind::Pulse, amplitude_ma, t_start_ms, duration_ms }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == WaveformKind::Pulse {
            ensure(self.duration_ms > 0.0, "duration_ms", "must be > 0 for a pulse")?;
        }
        Ok(())
    }

    /// Current in A at time `t_ms`; the pulse window is `[t_start, t_start + duration)`.
    pub fn current_a(&self, t_ms: f64) -> f64 {
        match self.kind {
            WaveformKind::Dc => self.amplitude_ma * 1e-3,
            WaveformKind::Pulse => {
                if t_ms >= self.t_start_ms && t_ms < self.t_start_ms + self.duration_ms {
                    self.amplitude_ma * 1e-3
                } else {
                    0.0
                }
            }
        }
    }
}

/// `|B| = μ₀|I|/(2πr)` in tesla for current in A and distance in m.
pub fn wire_field_magnitude(current_a: f64, r_m: f64) -> Result<f64> {
    if r_m <= 0.0 || r_m.is_nan() {
        return Err(Error::DegenerateGeometry(r_m));
    }
    Ok(MU0_OVER_2PI * current_a.abs() / r_m)
}

/// Field projected on the bias axis at horizontal position `x_um` and depth `h_um`.
pub fn sensing_field_at(x_um: f64, h_um: f64, geom: &WireGeometry, current_a: f64) -> f64 {
    kernel(x_um - geom.x0_um, geom.d_um() + h_um) * current_a
}

#[inline]
fn kernel(x_rel: f64, depth: f64) -> f64 {
    MU0_OVER_2PI_UT_UM * x_rel / (depth * depth + x_rel * x_rel)
}

/// Precomputed depth quadrature for one slab thickness.
#[derive(Debug, Clone)]
pub struct DepthIntegrator {
    thickness_um: f64,
    points: Vec<(f64, f64)>,
}

/// Depth average and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldGradient {
    pub field_ut: f64,
    pub d_field_d_d: f64,
    pub d_field_d_x0: f64,
    pub d_field_d_current: f64,
}

impl DepthIntegrator {
    pub fn new(thickness_um: f64) -> Self {
        Self::with_rule(thickness_um, DEPTH_PANELS, DEPTH_NODES)
    }

    pub fn with_rule(thickness_um: f64, panels: usize, nodes: usize) -> Self {
        let rule = GaussLegendre::new(nodes);
        Self { thickness_um, points: rule.composite(0.0, thickness_um, panels) }
    }

    pub fn thickness_um(&self) -> f64 {
        self.thickness_um
    }

    /// `(1/T) ∫₀ᵀ B_sens(x, h) dh` for wire offset `d_um` and position `x0_um`.
    pub fn average(&self, x_um: f64, d_um: f64, x0_um: f64, current_a: f64) -> f64 {
        let x_rel = x_um - x0_um;
        if x_rel == 0.0 {
            return 0.0;
        }
        let sum: f64 = self.points.iter().map(|&(h, w)| w * kernel(x_rel, d_um + h)).sum();
        sum / self.thickness_um * current_a
    }

    pub fn average_with_gradient(&self, x_um: f64, d_um: f64, x0_um: f64, current_a: f64) -> FieldGradient {
        let x_rel = x_um - x0_um;
        let (mut f, mut dd, mut dx0) = (0.0, 0.0, 0.0);
        for &(h, w) in &self.points {
            let a = d_um + h;
            let den = a * a + x_rel * x_rel;
            f += w * x_rel / den;
            dd += w * (-2.0 * x_rel * a) / (den * den);
            // ∂/∂x0 = −∂/∂x'
            dx0 -= w * (a * a - x_rel * x_rel) / (den * den);
        }
        let scale = MU0_OVER_2PI_UT_UM / self.thickness_um;
        FieldGradient {
            field_ut: scale * f * current_a,
            d_field_d_d: scale * dd * current_a,
            d_field_d_x0: scale * dx0 * current_a,
            d_field_d_current: scale * f,
        }
    }
}

/// Depth-averaged sensed field at `x_um` across the slab thickness.
pub fn depth_averaged_field(x_um: f64, geom: &WireGeometry, slab: &SensorSlab, current_a: f64) -> f64 {
    DepthIntegrator::new(slab.thickness_um).average(x_um, geom.d_um(), geom.x0_um, current_a)
}

/// Depth-averaged field sampled at every raw pixel centre, indexed `[row, col]`.
/// Rows run along the wire, so every column is constant.
pub fn rasterize_field(geom: &WireGeometry, slab: &SensorSlab, current_a: f64) -> Array2<f64> {
    let integrator = DepthIntegrator::new(slab.thickness_um);
    let columns: Vec<f64> = (0..slab.width_px)
        .map(|c| integrator.average(slab.column_x_um(c), geom.d_um(), geom.x0_um, current_a))
        .collect();
    Array2::from_shape_fn((slab.height_px, slab.width_px), |(_, c)| columns[c])
}
