use ndarray::{s, Array2, Array3};
use rayon::prelude::*;

use crate::calibration::{CalibrationCurve, InversionMode};
use crate::error::{Error, Result};
use crate::recon::binning::{BinnedStack, Roi};
use crate::recon::map::FieldMap;

/// Field traces of every virtual pixel, indexed `[frame, row, col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeseriesRecon {
    pub fields_ut: Array3<f64>,
    pub clipped: Array3<bool>,
    /// Pixels reconstructed; the others hold NaN.
    pub mask: Array2<bool>,
    pub timestamps_ms: Vec<f64>,
    pub bin_factor: usize,
    pub roi: Roi,
    pub x_um: Vec<f64>,
    pub y_um: Vec<f64>,
}

impl TimeseriesRecon {
    pub fn n_frames(&self) -> usize {
        self.fields_ut.dim().0
    }

    pub fn trace(&self, row: usize, col: usize) -> Vec<f64> {
        self.fields_ut.slice(s![.., row, col]).to_vec()
    }

    pub fn clipped_trace(&self, row: usize, col: usize) -> Vec<bool> {
        self.clipped.slice(s![.., row, col]).to_vec()
    }

    /// Field map of one frame. Pixels outside the mask stay excluded.
    pub fn frame_map(&self, frame: usize) -> Result<FieldMap> {
        if frame >= self.n_frames() {
            return Err(Error::InvalidParameter {
                name: "frame",
                reason: format!("index {frame} out of {} frames", self.n_frames()),
            });
        }
        FieldMap::new(
            self.fields_ut.slice(s![frame, .., ..]).to_owned(),
            self.mask.clone(),
            self.clipped.slice(s![frame, .., ..]).to_owned(),
            self.bin_factor,
            self.roi,
            self.x_um.clone(),
            self.y_um.clone(),
        )
    }
}

/// Inverts each frame's in-phase signal through the calibration curve. In
/// strict mode the first out-of-range sample aborts the reconstruction.
pub fn reconstruct_timeseries(
    binned: &BinnedStack,
    curve: &CalibrationCurve,
    mode: InversionMode,
    mask: Option<&Array2<bool>>,
) -> Result<TimeseriesRecon> {
    if binned.meta.protocol != curve.protocol {
        return Err(Error::ProtocolMismatch {
            stack: binned.meta.protocol.to_string(),
            curve: curve.protocol.to_string(),
        });
    }
    let (n, h, w) = binned.i_planes.dim();
    let mask = match mask {
        Some(m) if m.dim() != (h, w) => {
            return Err(Error::ShapeMismatch(format!("mask {:?} for {h}x{w} virtual pixels", m.dim())));
        }
        Some(m) => m.clone(),
        None => Array2::from_elem((h, w), true),
    };
    let flat: Vec<(f64, bool)> = (0..n * h * w)
        .into_par_iter()
        .map(|idx| {
            let (frame, px) = (idx / (h * w), idx % (h * w));
            let (r, c) = (px / w, px % w);
            if !mask[[r, c]] {
                return Ok((f64::NAN, false));
            }
            curve.invert(binned.i_planes[[frame, r, c]], mode).map(|inv| (inv.field_ut, inv.clipped))
        })
        .collect::<Result<_>>()?;
    let (fields, clipped): (Vec<f64>, Vec<bool>) = flat.into_iter().unzip();
    Ok(TimeseriesRecon {
        fields_ut: Array3::from_shape_vec((n, h, w), fields).expect("one value per sample"),
        clipped: Array3::from_shape_vec((n, h, w), clipped).expect("one flag per sample"),
        mask,
        timestamps_ms: binned.timestamps_ms.clone(),
        bin_factor: binned.bin_factor,
        roi: binned.roi,
        x_um: (0..w).map(|c| binned.column_x_um(c)).collect(),
        y_um: (0..h).map(|r| binned.row_y_um(r)).collect(),
    })
}
