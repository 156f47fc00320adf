use ndarray::{Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::framesim::{FrameStack, StackMeta};

/// Rectangle of raw pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Stack of virtual pixels, each the mean of `bin_factor²` raw pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedStack {
    pub bin_factor: usize,
    /// Region actually binned, after cropping to a multiple of `bin_factor`.
    pub roi: Roi,
    /// Raw columns and rows dropped from the requested ROI.
    pub cropped_cols: usize,
    pub cropped_rows: usize,
    pub i_planes: Array3<f64>,
    pub q_planes: Array3<f64>,
    pub timestamps_ms: Vec<f64>,
    pub meta: StackMeta,
}

impl BinnedStack {
    pub fn n_frames(&self) -> usize {
        self.i_planes.dim().0
    }

    pub fn height(&self) -> usize {
        self.i_planes.dim().1
    }

    pub fn width(&self) -> usize {
        self.i_planes.dim().2
    }

    pub fn column_x_um(&self, vcol: usize) -> f64 {
        let b = self.bin_factor as f64;
        (self.roi.x as f64 + vcol as f64 * b + 0.5 * b) * self.meta.pixel_pitch_um
    }

    pub fn row_y_um(&self, vrow: usize) -> f64 {
        let b = self.bin_factor as f64;
        (self.roi.y as f64 + vrow as f64 * b + 0.5 * b) * self.meta.pixel_pitch_um
    }

    /// I-plane spectrum (one value per frame) of a virtual pixel.
    pub fn i_series(&self, row: usize, col: usize) -> Vec<f64> {
        self.i_planes.slice(ndarray::s![.., row, col]).to_vec()
    }
}

/// Averages `bin_factor × bin_factor` blocks of the raw planes inside `roi`
/// (the whole frame when `None`). Trailing rows/columns that do not fill a
/// block are cropped and recorded.
pub fn bin_frames(stack: &FrameStack, bin_factor: usize, roi: Option<Roi>) -> Result<BinnedStack> {
    ensure(bin_factor > 0, "bin_factor", "must be > 0")?;
    let requested = roi.unwrap_or(Roi { x: 0, y: 0, width: stack.width(), height: stack.height() });
    if requested.width == 0 || requested.height == 0 {
        return Err(Error::EmptyRoi);
    }
    ensure(
        requested.x + requested.width <= stack.width() && requested.y + requested.height <= stack.height(),
        "roi",
        format!("exceeds the {}x{} frame", stack.width(), stack.height()),
    )?;
    let (vw, vh) = (requested.width / bin_factor, requested.height / bin_factor);
    if vw == 0 || vh == 0 {
        return Err(Error::EmptyRoi);
    }
    let roi = Roi { width: vw * bin_factor, height: vh * bin_factor, ..requested };
    let bin_plane = |planes: &Array3<f32>| -> Array3<f64> {
        let frames: Vec<Vec<f64>> = (0..planes.dim().0)
            .into_par_iter()
            .map(|k| {
                let plane = planes.index_axis(Axis(0), k);
                let mut out = vec![0.0; vw * vh];
                for vr in 0..vh {
                    for vc in 0..vw {
                        let mut sum = 0.0;
                        for r in 0..bin_factor {
                            for c in 0..bin_factor {
                                sum += plane[[roi.y + vr * bin_factor + r, roi.x + vc * bin_factor + c]] as f64;
                            }
                        }
                        out[vr * vw + vc] = sum / (bin_factor * bin_factor) as f64;
                    }
                }
                out
            })
            .collect();
        let n = frames.len();
        Array3::from_shape_vec((n, vh, vw), frames.concat()).expect("binned buffer sized from dims")
    };
    Ok(BinnedStack {
        bin_factor,
        roi,
        cropped_cols: requested.width - roi.width,
        cropped_rows: requested.height - roi.height,
        i_planes: bin_plane(&stack.i_planes),
        q_planes: bin_plane(&stack.q_planes),
        timestamps_ms: stack.timestamps_ms.clone(),
        meta: stack.meta.clone(),
    })
}
