//! Run configuration: one JSON document per experiment.

use std::path::Path;

use qscm_core::calibration::InversionMode;
use qscm_core::field::SensorSlab;
use qscm_core::framesim::{DriftArtifact, NoiseModel, Scene, SpectrumProtocol, TimingConfig};
use qscm_core::recon::{MaskThresholds, Roi, SpectrumShape};
use qscm_core::spin::{GslacModel, ProtocolKind, Satellite, SensingProtocol, SpinSystem, DEFAULT_FM_DEPTH_MHZ};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "QSCM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scene: Scene,
    #[serde(default)]
    pub spin: SpinSystem,
    pub protocol: ProtocolConfig,
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub drift: DriftArtifact,
    #[serde(default)]
    pub recon: ReconConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

/// Readout protocol. Drives sit at the resonances of `reference_field_mt`
/// (default: the scene bias) shifted by the detunings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolConfig {
    SingleAm {
        #[serde(default)]
        detune_mhz: f64,
        #[serde(default)]
        reference_field_mt: Option<f64>,
    },
    SingleFm {
        #[serde(default = "default_fm_depth")]
        fm_depth_mhz: f64,
        #[serde(default)]
        detune_mhz: f64,
        #[serde(default)]
        reference_field_mt: Option<f64>,
    },
    DualFm {
        #[serde(default = "default_fm_depth")]
        fm_depth_mhz: f64,
        #[serde(default)]
        detune1_mhz: f64,
        #[serde(default)]
        detune2_mhz: f64,
        #[serde(default)]
        reference_field_mt: Option<f64>,
    },
    /// Unset fields fall back to the model derived from `spin`.
    Gslac {
        #[serde(default)]
        b_anticross_mt: Option<f64>,
        #[serde(default)]
        sigma_b_ut: Option<f64>,
        #[serde(default)]
        contrast: Option<f64>,
        #[serde(default)]
        mod_depth_b_ut: Option<f64>,
        #[serde(default)]
        satellites: Vec<Satellite>,
    },
}

fn default_fm_depth() -> f64 {
    DEFAULT_FM_DEPTH_MHZ
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AcquisitionConfig {
    /// One frame per drive frequency `start + k·step`, `k < points`.
    Spectrum { sweep_start_mhz: f64, sweep_step_mhz: f64, sweep_points: usize },
    /// Fixed drives, `timing.n_frames` frames.
    Timeseries,
}

/// Noise settings. The seed is optional here so that `--seed` and the
/// environment can supply it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub sigma_per_cycle: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconConfig {
    #[serde(default = "default_bin")]
    pub bin_factor: usize,
    #[serde(default)]
    pub roi: Option<Roi>,
    #[serde(default)]
    pub thresholds: MaskThresholds,
    #[serde(default)]
    pub mode: InversionMode,
}

fn default_bin() -> usize {
    10
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { bin_factor: default_bin(), roi: None, thresholds: MaskThresholds::default(), mode: InversionMode::default() }
    }
}

/// Field-offset sweep used to sample the calibration curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub sweep_lo_ut: f64,
    pub sweep_hi_ut: f64,
    pub n_samples: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { sweep_lo_ut: -400.0, sweep_hi_ut: 400.0, n_samples: 801 }
    }
}

fn at(path: &str, r: qscm_core::Result<()>) -> CliResult<()> {
    r.map_err(|e| match e {
        qscm_core::Error::InvalidParameter { name, reason } => {
            CliError::Config { path: format!("{path}.{name}"), reason }
        }
        other => CliError::Config { path: path.to_string(), reason: other.to_string() },
    })
}

fn check(cond: bool, path: &str, reason: &str) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config { path: path.to_string(), reason: reason.to_string() })
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config { path, reason: e.into_inner().to_string() }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        at("scene.wire", self.scene.wire.validate())?;
        at("scene.slab", self.scene.slab.validate())?;
        at("scene.current", self.scene.current.validate())?;
        check(self.scene.bias_mt >= 0.0, "scene.bias_mt", "must be >= 0")?;
        at("spin", self.spin.validate())?;
        at("timing", self.timing.validate())?;
        at("noise", NoiseModel { sigma_per_cycle: self.noise.sigma_per_cycle, seed: 0 }.validate())?;
        if let Some(b) = self.reference_field_override() {
            check(b >= 0.0, "protocol.reference_field_mt", "must be >= 0")?;
        }
        at("protocol", self.sensing_protocol().validate())?;
        if let AcquisitionConfig::Spectrum { sweep_step_mhz, sweep_points, sweep_start_mhz } = self.acquisition {
            check(sweep_start_mhz > 0.0, "acquisition.sweep_start_mhz", "must be > 0")?;
            check(sweep_step_mhz > 0.0, "acquisition.sweep_step_mhz", "must be > 0")?;
            check(sweep_points >= 5, "acquisition.sweep_points", "must be at least 5")?;
            check(
                self.spectrum_protocol().is_some(),
                "acquisition.kind",
                "spectrum acquisition needs a single_am or single_fm protocol",
            )?;
        }
        check(self.recon.bin_factor > 0, "recon.bin_factor", "must be > 0")?;
        at("recon.thresholds", self.recon.thresholds.validate())?;
        if let Some(roi) = self.recon.roi {
            let slab: &SensorSlab = &self.scene.slab;
            check(roi.width > 0 && roi.height > 0, "recon.roi", "must not be empty")?;
            check(
                roi.x + roi.width <= slab.width_px && roi.y + roi.height <= slab.height_px,
                "recon.roi",
                "must lie inside the pixel raster",
            )?;
        }
        check(
            self.calibration.sweep_lo_ut < self.calibration.sweep_hi_ut,
            "calibration.sweep_hi_ut",
            "must exceed sweep_lo_ut",
        )?;
        check(self.calibration.n_samples >= 16, "calibration.n_samples", "must be at least 16")
    }

    fn reference_field_override(&self) -> Option<f64> {
        match self.protocol {
            ProtocolConfig::SingleAm { reference_field_mt, .. }
            | ProtocolConfig::SingleFm { reference_field_mt, .. }
            | ProtocolConfig::DualFm { reference_field_mt, .. } => reference_field_mt,
            ProtocolConfig::Gslac { .. } => None,
        }
    }

    /// Field at which the drives are placed and around which the
    /// calibration curve is sampled.
    pub fn reference_field_mt(&self) -> f64 {
        match self.protocol {
            ProtocolConfig::Gslac { .. } => self.scene.bias_mt,
            _ => self.reference_field_override().unwrap_or(self.scene.bias_mt),
        }
    }

    pub fn protocol_kind(&self) -> ProtocolKind {
        match self.protocol {
            ProtocolConfig::SingleAm { .. } => ProtocolKind::SingleAm,
            ProtocolConfig::SingleFm { .. } => ProtocolKind::SingleFm,
            ProtocolConfig::DualFm { .. } => ProtocolKind::DualFm,
            ProtocolConfig::Gslac { .. } => ProtocolKind::Gslac,
        }
    }

    pub fn sensing_protocol(&self) -> SensingProtocol {
        let b0 = self.reference_field_mt();
        let (nu1, _) = self.spin.odmr_frequencies(b0);
        match &self.protocol {
            ProtocolConfig::SingleAm { detune_mhz, .. } => SensingProtocol::SingleAm { drive_mhz: nu1 + detune_mhz },
            ProtocolConfig::SingleFm { fm_depth_mhz, detune_mhz, .. } => {
                SensingProtocol::single_fm_at(&self.spin, b0, *detune_mhz, *fm_depth_mhz)
            }
            ProtocolConfig::DualFm { fm_depth_mhz, detune1_mhz, detune2_mhz, .. } => {
                SensingProtocol::dual_fm_at(&self.spin, b0, *detune1_mhz, *detune2_mhz, *fm_depth_mhz)
            }
            ProtocolConfig::Gslac { b_anticross_mt, sigma_b_ut, contrast, mod_depth_b_ut, satellites } => {
                let base = GslacModel::from_spin(&self.spin);
                SensingProtocol::Gslac(GslacModel {
                    b_anticross_mt: b_anticross_mt.unwrap_or(base.b_anticross_mt),
                    sigma_b_ut: sigma_b_ut.unwrap_or(base.sigma_b_ut),
                    contrast: contrast.unwrap_or(base.contrast),
                    mod_depth_b_ut: mod_depth_b_ut.unwrap_or(base.mod_depth_b_ut),
                    satellites: satellites.clone(),
                })
            }
        }
    }

    pub fn spectrum_protocol(&self) -> Option<SpectrumProtocol> {
        match self.protocol {
            ProtocolConfig::SingleAm { .. } => Some(SpectrumProtocol::Am),
            ProtocolConfig::SingleFm { fm_depth_mhz, .. } => Some(SpectrumProtocol::Fm { fm_depth_mhz }),
            _ => None,
        }
    }

    pub fn spectrum_shape(&self) -> Option<SpectrumShape> {
        self.spectrum_protocol().map(|p| match p {
            SpectrumProtocol::Am => SpectrumShape::Peak,
            SpectrumProtocol::Fm { fm_depth_mhz } => SpectrumShape::FmDifference { fm_depth_mhz },
        })
    }

    pub fn sweep_mhz(&self) -> Option<Vec<f64>> {
        match self.acquisition {
            AcquisitionConfig::Spectrum { sweep_start_mhz, sweep_step_mhz, sweep_points } => {
                Some((0..sweep_points).map(|k| sweep_start_mhz + sweep_step_mhz * k as f64).collect())
            }
            AcquisitionConfig::Timeseries => None,
        }
    }

    /// Seed precedence: explicit override, then the config, then
    /// `QSCM_SEED`, then 0.
    pub fn resolve_seed(&self, cli_seed: Option<u64>) -> CliResult<u64> {
        if let Some(s) = cli_seed.or(self.noise.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn noise_model(&self, seed: u64) -> NoiseModel {
        NoiseModel { sigma_per_cycle: self.noise.sigma_per_cycle, seed }
    }
}
