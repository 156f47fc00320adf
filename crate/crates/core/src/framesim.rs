//! Synthetic lock-in camera frame stacks.
//!
//! A frame holds the demodulated in-phase and quadrature planes, i.e. the
//! half-cycle differences `I⁺ − I⁻` and `Q⁺ − Q⁻` integrated over
//! `n_cycle` modulation cycles and averaged over `n_sequences` triggered
//! repetitions. Planes are indexed `[frame, row, col]`, row-major with the
//! origin at the top-left pixel; rows run along the wire.

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::field::{rasterize_field, CurrentWaveform, SensorSlab, WaveformKind, WireGeometry};
use crate::rng::CounterRng;
use crate::spin::{am_response, single_fm_response, ProtocolKind, SensingProtocol, SpinSystem};

const PLANE_I: u64 = 0;
const PLANE_Q: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub mod_freq_hz: f64,
    pub n_cycle: u32,
    pub n_frames: u32,
    pub n_sequences: u32,
    #[serde(default)]
    pub trigger_delay_ms: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { mod_freq_hz: 2000.0, n_cycle: 100, n_frames: 40, n_sequences: 1, trigger_delay_ms: 0.0 }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.mod_freq_hz > 0.0, "mod_freq_hz", "must be > 0")?;
        ensure(self.n_cycle > 0, "n_cycle", "must be > 0")?;
        ensure(self.n_frames > 0, "n_frames", "must be > 0")?;
        ensure(self.n_sequences > 0, "n_sequences", "must be > 0")?;
        ensure(self.trigger_delay_ms >= 0.0, "trigger_delay_ms", "must be >= 0")
    }

    pub fn frame_period_ms(&self) -> f64 {
        self.n_cycle as f64 / self.mod_freq_hz * 1e3
    }

    pub fn acquisition_ms(&self) -> f64 {
        self.n_frames as f64 * self.frame_period_ms()
    }

    /// Frame midpoint on the acquisition clock.
    pub fn frame_time_ms(&self, frame: usize) -> f64 {
        (frame as f64 + 0.5) * self.frame_period_ms()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// White-noise standard deviation of one modulation cycle, per raw pixel.
    pub sigma_per_cycle: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        ensure(self.sigma_per_cycle >= 0.0, "sigma_per_cycle", "must be >= 0")
    }

    /// Per-frame standard deviation after cycle integration and sequence averaging.
    pub fn frame_sigma(&self, timing: &TimingConfig) -> f64 {
        self.sigma_per_cycle / (timing.n_cycle as f64 * timing.n_sequences as f64).sqrt()
    }
}

/// Baseline drift from a modulation/demodulation frequency mismatch. The
/// residual carrier of amplitude `A` rotates by `φ = 2π·Δf·(t − t_trigger)`,
/// adding `A(1 − cos φ)` to I and `A·sin φ` to Q.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftArtifact {
    pub enabled: bool,
    #[serde(default)]
    pub delta_f_hz: f64,
    #[serde(default)]
    pub amplitude: f64,
}

impl DriftArtifact {
    /// `(ΔI, ΔQ)` at `t_ms`; zero before the trigger.
    pub fn offset(&self, t_ms: f64, t_trigger_ms: f64) -> (f64, f64) {
        if !self.enabled || t_ms < t_trigger_ms {
            return (0.0, 0.0);
        }
        let phi = std::f64::consts::TAU * self.delta_f_hz * (t_ms - t_trigger_ms) * 1e-3;
        (self.amplitude * (1.0 - phi.cos()), self.amplitude * phi.sin())
    }
}

/// Rectangle in sample coordinates (µm) where the microwave drive reaches the
/// sensor; outside it microwave protocols carry no signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x_min_um: f64,
    pub x_max_um: f64,
    pub y_min_um: f64,
    pub y_max_um: f64,
}

impl Region {
    pub fn contains(&self, x_um: f64, y_um: f64) -> bool {
        x_um >= self.x_min_um && x_um < self.x_max_um && y_um >= self.y_min_um && y_um < self.y_max_um
    }
}

/// Physical scene: wire, sensor, current and bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub wire: WireGeometry,
    pub slab: SensorSlab,
    pub current: CurrentWaveform,
    pub bias_mt: f64,
    #[serde(default)]
    pub mw_region: Option<Region>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.wire.validate()?;
        self.slab.validate()?;
        self.current.validate()?;
        ensure(self.bias_mt >= 0.0, "bias_mt", "must be >= 0")
    }

    /// Time at which the drift phase starts accumulating: the pulse trigger.
    pub fn trigger_time_ms(&self) -> f64 {
        match self.current.kind {
            WaveformKind::Pulse => self.current.t_start_ms,
            WaveformKind::Dc => 0.0,
        }
    }

    /// Per-pixel microwave coupling (1 inside the drive region, 0 outside).
    fn coupling(&self, protocol: ProtocolKind) -> Array2<f64> {
        let slab = &self.slab;
        Array2::from_shape_fn((slab.height_px, slab.width_px), |(r, c)| match (protocol, self.mw_region) {
            (ProtocolKind::Gslac, _) | (_, None) => 1.0,
            (_, Some(region)) => {
                if region.contains(slab.column_x_um(c), slab.row_y_um(r)) {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Spectrum,
    Timeseries,
}

/// Description of how a stack was produced, carried with the planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackMeta {
    pub acquisition: AcquisitionKind,
    pub protocol: ProtocolKind,
    pub frame_period_ms: f64,
    pub pixel_pitch_um: f64,
    pub seed: u64,
    pub drift_enabled: bool,
    /// Drive frequency of each frame for spectrum stacks.
    #[serde(default)]
    pub sweep_mhz: Vec<f64>,
    #[serde(default)]
    pub timing: Option<TimingConfig>,
}

/// Demodulated I/Q image sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub i_planes: Array3<f32>,
    pub q_planes: Array3<f32>,
    pub timestamps_ms: Vec<f64>,
    pub meta: StackMeta,
}

impl FrameStack {
    pub fn new(i_planes: Array3<f32>, q_planes: Array3<f32>, timestamps_ms: Vec<f64>, meta: StackMeta) -> Result<Self> {
        if i_planes.dim() != q_planes.dim() {
            return Err(Error::ShapeMismatch(format!(
                "I planes {:?} vs Q planes {:?}",
                i_planes.dim(),
                q_planes.dim()
            )));
        }
        if timestamps_ms.len() != i_planes.dim().0 {
            return Err(Error::ShapeMismatch(format!(
                "{} timestamps for {} frames",
                timestamps_ms.len(),
                i_planes.dim().0
            )));
        }
        ensure(
            timestamps_ms.windows(2).all(|w| w[0] < w[1]),
            "timestamps_ms",
            "must be strictly increasing",
        )?;
        Ok(Self { i_planes, q_planes, timestamps_ms, meta })
    }

    pub fn n_frames(&self) -> usize {
        self.i_planes.dim().0
    }

    pub fn height(&self) -> usize {
        self.i_planes.dim().1
    }

    pub fn width(&self) -> usize {
        self.i_planes.dim().2
    }
}

/// Lock-in demodulation `I = I⁺ − I⁻`, `Q = Q⁺ − Q⁻`.
pub fn demodulate(
    i_plus: &Array2<f64>,
    i_minus: &Array2<f64>,
    q_plus: &Array2<f64>,
    q_minus: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let shape = i_plus.dim();
    for (name, a) in [("i_minus", i_minus), ("q_plus", q_plus), ("q_minus", q_minus)] {
        if a.dim() != shape {
            return Err(Error::ShapeMismatch(format!("{name} is {:?}, expected {:?}", a.dim(), shape)));
        }
    }
    Ok((i_plus - i_minus, q_plus - q_minus))
}

/// Frequency-swept acquisition modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumProtocol {
    /// Microwave on/off: peak-shaped spectra.
    Am,
    /// Square-wave frequency modulation: derivative-shaped spectra.
    Fm { fm_depth_mhz: f64 },
}

impl SpectrumProtocol {
    pub fn kind(&self) -> ProtocolKind {
        match self {
            SpectrumProtocol::Am => ProtocolKind::SingleAm,
            SpectrumProtocol::Fm { .. } => ProtocolKind::SingleFm,
        }
    }
}

/// One frame per drive frequency in `sweep_mhz`. Each pixel sees
/// `B₀ + B_sens` from the depth-averaged wire field at the waveform's DC
/// value. `timing.n_frames` is ignored in favour of the sweep length.
pub fn synth_spectrum_stack(
    scene: &Scene,
    spin: &SpinSystem,
    sweep_mhz: &[f64],
    protocol: SpectrumProtocol,
    timing: &TimingConfig,
    noise: &NoiseModel,
) -> Result<FrameStack> {
    scene.validate()?;
    spin.validate()?;
    noise.validate()?;
    ensure(!sweep_mhz.is_empty(), "sweep_mhz", "must not be empty")?;
    ensure(
        sweep_mhz.windows(2).all(|w| w[0] < w[1]),
        "sweep_mhz",
        "must be strictly increasing",
    )?;
    let timing = TimingConfig { n_frames: sweep_mhz.len() as u32, ..*timing };
    timing.validate()?;

    let current = scene.current.current_a(0.0);
    let field = rasterize_field(&scene.wire, &scene.slab, 1.0);
    let columns: Vec<f64> = field.row(0).iter().map(|b| scene.bias_mt + b * current * 1e-3).collect();
    let coupling = scene.coupling(protocol.kind());

    let signal = |frame: usize, col: usize| {
        let drive = sweep_mhz[frame];
        match protocol {
            SpectrumProtocol::Am => am_response(spin, drive, columns[col]),
            SpectrumProtocol::Fm { fm_depth_mhz } => single_fm_response(spin, drive, columns[col], fm_depth_mhz),
        }
    };
    let meta = StackMeta {
        acquisition: AcquisitionKind::Spectrum,
        protocol: protocol.kind(),
        frame_period_ms: timing.frame_period_ms(),
        pixel_pitch_um: scene.slab.pixel_pitch_um,
        seed: noise.seed,
        drift_enabled: false,
        sweep_mhz: sweep_mhz.to_vec(),
        timing: Some(timing),
    };
    render(scene, &timing, noise, &coupling, signal, |_| (0.0, 0.0), meta)
}

/// Time-resolved acquisition with fixed drives. Each frame uses the current
/// at the frame midpoint.
pub fn synth_timeseries_stack(
    scene: &Scene,
    spin: &SpinSystem,
    protocol: &SensingProtocol,
    timing: &TimingConfig,
    noise: &NoiseModel,
    drift: &DriftArtifact,
) -> Result<FrameStack> {
    scene.validate()?;
    spin.validate()?;
    protocol.validate()?;
    timing.validate()?;
    noise.validate()?;

    let unit_field = rasterize_field(&scene.wire, &scene.slab, 1.0);
    let unit_columns: Vec<f64> = unit_field.row(0).to_vec();
    let coupling = scene.coupling(protocol.kind());
    let currents: Vec<f64> = (0..timing.n_frames as usize)
        .map(|k| scene.current.current_a(timing.frame_time_ms(k)))
        .collect();
    // Columns repeat along the wire; evaluate the response once per (frame, column).
    let table: Vec<Vec<f64>> = currents
        .iter()
        .map(|&i| {
            unit_columns
                .iter()
                .map(|b| protocol.response(spin, scene.bias_mt + b * i * 1e-3))
                .collect()
        })
        .collect();
    let trigger = scene.trigger_time_ms();
    let meta = StackMeta {
        acquisition: AcquisitionKind::Timeseries,
        protocol: protocol.kind(),
        frame_period_ms: timing.frame_period_ms(),
        pixel_pitch_um: scene.slab.pixel_pitch_um,
        seed: noise.seed,
        drift_enabled: drift.enabled,
        sweep_mhz: Vec::new(),
        timing: Some(*timing),
    };
    render(
        scene,
        timing,
        noise,
        &coupling,
        |frame, col| table[frame][col],
        |frame| drift.offset(timing.frame_time_ms(frame), trigger),
        meta,
    )
}

fn render(
    scene: &Scene,
    timing: &TimingConfig,
    noise: &NoiseModel,
    coupling: &Array2<f64>,
    signal: impl Fn(usize, usize) -> f64 + Sync,
    offset: impl Fn(usize) -> (f64, f64) + Sync,
    meta: StackMeta,
) -> Result<FrameStack> {
    let (h, w) = (scene.slab.height_px, scene.slab.width_px);
    let n = timing.n_frames as usize;
    let sigma = noise.frame_sigma(timing);
    let rng = CounterRng::new(noise.seed);
    let plane_len = h * w;
    let mut i_data = vec![0f32; n * plane_len];
    let mut q_data = vec![0f32; n * plane_len];
    i_data
        .par_chunks_mut(plane_len)
        .zip(q_data.par_chunks_mut(plane_len))
        .enumerate()
        .for_each(|(frame, (i_plane, q_plane))| {
            let column_signal: Vec<f64> = (0..w).map(|c| signal(frame, c)).collect();
            let (di, dq) = offset(frame);
            for r in 0..h {
                for c in 0..w {
                    let px = r * w + c;
                    let mut i_val = coupling[[r, c]] * column_signal[c] + di;
                    let mut q_val = dq;
                    if sigma > 0.0 {
                        i_val += sigma * rng.normal(PLANE_I, frame as u64, px as u64);
                        q_val += sigma * rng.normal(PLANE_Q, frame as u64, px as u64);
                    }
                    i_plane[px] = i_val as f32;
                    q_plane[px] = q_val as f32;
                }
            }
        });
    let timestamps = (0..n).map(|k| timing.frame_time_ms(k)).collect();
    let i_planes = Array3::from_shape_vec((n, h, w), i_data).expect("plane buffer sized from dims");
    let q_planes = Array3::from_shape_vec((n, h, w), q_data).expect("plane buffer sized from dims");
    FrameStack::new(i_planes, q_planes, timestamps, meta)
}
