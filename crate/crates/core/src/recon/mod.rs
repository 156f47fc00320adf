//! Inverse pipeline: binning, per-pixel fits, field maps, profiles, wire
//! fits, calibration-based time series and sensitivity.

mod binning;
mod fit;
mod map;
mod profile;
mod sensitivity;
mod timeseries;

pub use binning::{bin_frames, BinnedStack, Roi};
pub use fit::{fit_gaussian, FitResult, SpectrumShape};
pub use map::{fit_grid, map_from_fits, threshold_mask, FieldMap, FitGrid, MaskThresholds};
pub use profile::{
    fit_wire_profile, infer_pulse_current, profile_across_wire, CurrentEstimate, CurrentReference, PixelAperture,
    ProfilePoint, WireFit,
};
pub use sensitivity::{noise_floor, sensitivity_report};
pub use timeseries::{reconstruct_timeseries, TimeseriesRecon};
