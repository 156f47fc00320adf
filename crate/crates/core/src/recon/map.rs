use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::recon::binning::{BinnedStack, Roi};
use crate::recon::fit::{fit_gaussian, FitResult, SpectrumShape};
use crate::spin::SpinSystem;

/// Per-virtual-pixel spectral fits, indexed `[row, col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitGrid {
    pub fits: Array2<FitResult>,
    pub bin_factor: usize,
    pub roi: Roi,
    /// Sample-plane centres of the virtual columns and rows.
    pub x_um: Vec<f64>,
    pub y_um: Vec<f64>,
}

impl FitGrid {
    pub fn height(&self) -> usize {
        self.fits.dim().0
    }

    pub fn width(&self) -> usize {
        self.fits.dim().1
    }
}

/// Fits every virtual pixel's I-plane spectrum against the stack's sweep.
/// Pixels whose fit fails are recorded as [`FitResult::failed`].
pub fn fit_grid(binned: &BinnedStack, shape: SpectrumShape) -> Result<FitGrid> {
    let sweep = &binned.meta.sweep_mhz;
    if sweep.len() != binned.n_frames() {
        return Err(Error::ShapeMismatch(format!(
            "{} sweep frequencies for {} frames",
            sweep.len(),
            binned.n_frames()
        )));
    }
    let (h, w) = (binned.height(), binned.width());
    let fits: Vec<FitResult> = (0..h * w)
        .into_par_iter()
        .map(|px| {
            let spectrum = binned.i_series(px / w, px % w);
            fit_gaussian(sweep, &spectrum, shape).unwrap_or_else(|_| FitResult::failed())
        })
        .collect();
    Ok(FitGrid {
        fits: Array2::from_shape_vec((h, w), fits).expect("one fit per virtual pixel"),
        bin_factor: binned.bin_factor,
        roi: binned.roi,
        x_um: (0..w).map(|c| binned.column_x_um(c)).collect(),
        y_um: (0..h).map(|r| binned.row_y_um(r)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskThresholds {
    /// Minimum `|amplitude| / residual_rms`.
    pub snr_min: f64,
    pub stderr_max_mhz: f64,
}

impl Default for MaskThresholds {
    fn default() -> Self {
        Self { snr_min: 3.0, stderr_max_mhz: 2.0 }
    }
}

impl MaskThresholds {
    pub fn validate(&self) -> Result<()> {
        ensure(self.snr_min >= 0.0, "snr_min", "must be >= 0")?;
        ensure(self.stderr_max_mhz > 0.0, "stderr_max_mhz", "must be > 0")
    }

    pub fn accepts(&self, fit: &FitResult) -> bool {
        fit.converged && fit.snr() >= self.snr_min && fit.center_stderr_mhz <= self.stderr_max_mhz
    }
}

/// `true` marks a valid pixel.
pub fn threshold_mask(grid: &FitGrid, thresholds: &MaskThresholds) -> Array2<bool> {
    grid.fits.map(|fit| thresholds.accepts(fit))
}

/// Sensed-field image on virtual pixels, indexed `[row, col]`. Excluded
/// pixels hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub width_v: usize,
    pub height_v: usize,
    pub values_ut: Array2<f64>,
    pub mask: Array2<bool>,
    pub clipped: Array2<bool>,
    pub bin_factor: usize,
    pub roi: Roi,
    pub x_um: Vec<f64>,
    pub y_um: Vec<f64>,
}

impl FieldMap {
    /// Assembles a map, clearing values of excluded pixels.
    pub fn new(
        mut values_ut: Array2<f64>,
        mask: Array2<bool>,
        clipped: Array2<bool>,
        bin_factor: usize,
        roi: Roi,
        x_um: Vec<f64>,
        y_um: Vec<f64>,
    ) -> Result<Self> {
        let (h, w) = values_ut.dim();
        if mask.dim() != (h, w) || clipped.dim() != (h, w) || x_um.len() != w || y_um.len() != h {
            return Err(Error::ShapeMismatch(format!(
                "values {:?}, mask {:?}, clipped {:?}, {} x and {} y coordinates",
                values_ut.dim(),
                mask.dim(),
                clipped.dim(),
                x_um.len(),
                y_um.len()
            )));
        }
        values_ut.zip_mut_with(&mask, |v, &ok| {
            if !ok {
                *v = f64::NAN;
            }
        });
        Ok(Self { width_v: w, height_v: h, values_ut, mask, clipped, bin_factor, roi, x_um, y_um })
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        self.mask[[row, col]].then(|| self.values_ut[[row, col]])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&v| v).count()
    }
}

/// Converts fitted ν₁ centres to `B − B₀` against the reference frequency.
pub fn map_from_fits(grid: &FitGrid, mask: &Array2<bool>, spin: &SpinSystem, nu1_ref_mhz: f64) -> Result<FieldMap> {
    let values = grid.fits.map(|fit| spin.frequency_to_sensed_field(fit.center_mhz, nu1_ref_mhz));
    let clipped = Array2::from_elem(grid.fits.dim(), false);
    FieldMap::new(values, mask.clone(), clipped, grid.bin_factor, grid.roi, grid.x_um.clone(), grid.y_um.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CurrentWaveform, SensorSlab, WireGeometry};
    use crate::framesim::{synth_spectrum_stack, NoiseModel, Region, Scene, SpectrumProtocol, TimingConfig};
    use crate::recon::binning::bin_frames;
    use proptest::prelude::*;

    fn sweep() -> Vec<f64> {
        (0..20).map(|k| 385.0 + 2.8 * k as f64).collect()
    }

    fn scene(current_ma: f64, mw_region: Option<Region>) -> Scene {
        Scene {
            wire: WireGeometry::new(220.0, 240.0),
            slab: SensorSlab { width_px: 160, height_px: 60, ..SensorSlab::default() },
            current: CurrentWaveform::dc(current_ma),
            bias_mt: 17.1964,
            mw_region,
        }
    }

    fn grid_for(scene: &Scene, sigma: f64) -> FitGrid {
        let stack = synth_spectrum_stack(
            scene,
            &SpinSystem::default(),
            &sweep(),
            SpectrumProtocol::Am,
            &TimingConfig::default(),
            &NoiseModel { sigma_per_cycle: sigma, seed: 5 },
        )
        .unwrap();
        fit_grid(&bin_frames(&stack, 10, None).unwrap(), SpectrumShape::Peak).unwrap()
    }

    #[test]
    fn noiseless_map_matches_forward_field() {
        let spin = SpinSystem::default();
        let sc = scene(1000.0, None);
        let grid = grid_for(&sc, 0.0);
        let mask = threshold_mask(&grid, &MaskThresholds::default());
        assert!(mask.iter().all(|&v| v));
        let nu1 = spin.odmr_frequencies(sc.bias_mt).0;
        let map = map_from_fits(&grid, &mask, &spin, nu1).unwrap();
        for (c, &x) in map.x_um.iter().enumerate() {
            // Column mean of the raw forward field over the bin.
            let truth: f64 = (0..10)
                .map(|k| {
                    let xr = sc.slab.column_x_um(c * 10 + k);
                    crate::field::depth_averaged_field(xr, &sc.wire, &sc.slab, 1.0)
                })
                .sum::<f64>()
                / 10.0;
            let got = map.value(0, c).unwrap();
            // A binned spectrum is a mixture of shifted lines; its centre is
            // close to, not exactly, the mean field.
            assert!((got - truth).abs() < 2.0, "x={x}: {got} vs {truth}");
        }
    }

    #[test]
    fn all_noise_stack_is_excluded() {
        let empty = Region { x_min_um: 0.0, x_max_um: 0.0, y_min_um: 0.0, y_max_um: 0.0 };
        let sc = Scene { slab: SensorSlab { width_px: 300, height_px: 300, ..SensorSlab::default() }, ..scene(0.0, Some(empty)) };
        let grid = grid_for(&sc, 1.0);
        // Twenty-point noise spectra occasionally fit a 3σ feature; the
        // default threshold admits well under 2% of them.
        let loose = threshold_mask(&grid, &MaskThresholds::default());
        assert!((loose.iter().filter(|&&v| v).count() as f64) < 0.02 * loose.len() as f64);
        let strict = threshold_mask(&grid, &MaskThresholds { snr_min: 5.0, ..MaskThresholds::default() });
        assert!(strict.iter().all(|&v| !v));
    }

    #[test]
    fn excluded_region_is_the_complement_of_the_waveguide() {
        let region = Region { x_min_um: 0.0, x_max_um: 480.0, y_min_um: 60.0, y_max_um: 150.0 };
        let grid = grid_for(&scene(0.0, Some(region)), 0.02);
        let mask = threshold_mask(&grid, &MaskThresholds { snr_min: 5.0, ..MaskThresholds::default() });
        for r in 0..grid.height() {
            let inside = region.contains(grid.x_um[0], grid.y_um[r]);
            for c in 0..grid.width() {
                assert_eq!(mask[[r, c]], inside, "row {r} col {c}");
            }
        }
        let valid_rows: Vec<usize> = (0..grid.height()).filter(|&r| mask[[r, 0]]).collect();
        assert!(!valid_rows.is_empty());
        assert_eq!(valid_rows.last().unwrap() - valid_rows[0] + 1, valid_rows.len());
    }

    #[test]
    fn zero_current_map_is_flat() {
        let spin = SpinSystem::default();
        let sc = scene(0.0, None);
        let grid = grid_for(&sc, 0.05);
        let mask = threshold_mask(&grid, &MaskThresholds::default());
        let map = map_from_fits(&grid, &mask, &spin, spin.odmr_frequencies(sc.bias_mt).0).unwrap();
        let stderr_ut: Vec<f64> = grid
            .fits
            .iter()
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|(f, _)| f.center_stderr_mhz / spin.gamma_mhz_per_mt * 1e3)
            .collect();
        let n = stderr_ut.len() as f64;
        assert!(n > 0.0);
        let mean: f64 = map.values_ut.iter().filter(|v| !v.is_nan()).sum::<f64>() / n;
        // Standard error of the mean of independent pixels.
        let bound = 3.0 * (stderr_ut.iter().map(|s| s * s).sum::<f64>()).sqrt() / n;
        assert!(mean.abs() < bound, "{mean} vs {bound}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn raising_snr_min_never_unexcludes(a in 0.0f64..50.0, b in 0.0f64..50.0, seed in 0u64..4) {
            let grid = {
                let stack = synth_spectrum_stack(
                    &Scene { slab: SensorSlab { width_px: 40, height_px: 20, ..SensorSlab::default() }, ..scene(0.0, None) },
                    &SpinSystem::default(),
                    &sweep(),
                    SpectrumProtocol::Am,
                    &TimingConfig::default(),
                    &NoiseModel { sigma_per_cycle: 2.0, seed },
                )
                .unwrap();
                fit_grid(&bin_frames(&stack, 5, None).unwrap(), SpectrumShape::Peak).unwrap()
            };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let loose = threshold_mask(&grid, &MaskThresholds { snr_min: lo, ..MaskThresholds::default() });
            let strict = threshold_mask(&grid, &MaskThresholds { snr_min: hi, ..MaskThresholds::default() });
            for (s, l) in strict.iter().zip(loose.iter()) {
                prop_assert!(!s || *l);
            }
        }
    }
}
