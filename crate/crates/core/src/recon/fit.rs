use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::lm::{fit_curve, CurveModel, LmOptions};

pub const MIN_SPECTRUM_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumShape {
    Peak,
    FmDifference { fm_depth_mhz: f64 },
}

/// Gaussian fit of one ODMR line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub center_mhz: f64,
    pub sigma_mhz: f64,
    pub amplitude: f64,
    pub baseline: f64,
    pub center_stderr_mhz: f64,
    pub converged: bool,
    pub residual_rms: f64,
}

impl FitResult {
    pub fn failed() -> Self {
        Self {
            center_mhz: f64::NAN,
            sigma_mhz: f64::NAN,
            amplitude: f64::NAN,
            baseline: f64::NAN,
            center_stderr_mhz: f64::NAN,
            converged: false,
            residual_rms: f64::NAN,
        }
    }

    /// Feature amplitude over residual RMS.
    pub fn snr(&self) -> f64 {
        if self.residual_rms == 0.0 {
            f64::INFINITY
        } else {
            self.amplitude.abs() / self.residual_rms
        }
    }
}

struct GaussianModel {
    shape: SpectrumShape,
    span: (f64, f64),
}

// Parameter order: center, sigma, amplitude, baseline.
impl CurveModel<4> for GaussianModel {
    fn eval(&self, x: f64, p: &Vector4<f64>) -> (f64, Vector4<f64>) {
        let (c, s, a, b) = (p[0], p[1], p[2], p[3]);
        let term = |nu: f64| {
            let u = (nu - c) / s;
            let e = (-0.5 * u * u).exp();
            (e, e * u / s, e * u * u / s)
        };
        match self.shape {
            SpectrumShape::Peak => {
                let (e, dc, ds) = term(x);
                (b + a * e, Vector4::new(a * dc, a * ds, e, 1.0))
            }
            SpectrumShape::FmDifference { fm_depth_mhz } => {
                let (ep, dcp, dsp) = term(x + fm_depth_mhz);
                let (em, dcm, dsm) = term(x - fm_depth_mhz);
                (b + a * (ep - em), Vector4::new(a * (dcp - dcm), a * (dsp - dsm), ep - em, 1.0))
            }
        }
    }

    fn admissible(&self, p: &Vector4<f64>) -> bool {
        let width = self.span.1 - self.span.0;
        p[1] > 0.0 && p[1] < 10.0 * width && p[0] > self.span.0 - width && p[0] < self.span.1 + width
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn argmax(ys: &[f64]) -> usize {
    (0..ys.len()).max_by(|&a, &b| ys[a].total_cmp(&ys[b])).unwrap_or(0)
}

fn argmin(ys: &[f64]) -> usize {
    (0..ys.len()).min_by(|&a, &b| ys[a].total_cmp(&ys[b])).unwrap_or(0)
}

/// Half-maximum crossing distance on either side of `peak`, or `None`.
fn half_width(xs: &[f64], ys: &[f64], peak: usize, level: f64) -> Option<f64> {
    let above = |i: usize| ys[i] > level;
    let right = (peak + 1..xs.len()).find(|&i| !above(i)).map(|i| xs[i] - xs[peak]);
    let left = (0..peak).rev().find(|&i| !above(i)).map(|i| xs[peak] - xs[i]);
    match (left, right) {
        (Some(l), Some(r)) => Some(0.5 * (l + r)),
        (a, b) => a.or(b),
    }
}

fn initial_guess(xs: &[f64], ys: &[f64], shape: SpectrumShape) -> Vector4<f64> {
    let span = xs[xs.len() - 1] - xs[0];
    let spacing = span / (xs.len() - 1) as f64;
    match shape {
        SpectrumShape::Peak => {
            let med = median(ys);
            let (imax, imin) = (argmax(ys), argmin(ys));
            let positive = ys[imax] - med >= med - ys[imin];
            let (ipk, base) = if positive { (imax, ys[imin]) } else { (imin, ys[imax]) };
            let amp = ys[ipk] - base;
            let flipped: Vec<f64> = ys.iter().map(|y| if positive { *y } else { -*y }).collect();
            let level = if positive { base + 0.5 * amp } else { -(base + 0.5 * amp) };
            let hwhm = half_width(xs, &flipped, ipk, level).unwrap_or(span / 4.0);
            let sigma = (hwhm / (2.0 * std::f64::consts::LN_2).sqrt()).max(spacing);
            Vector4::new(xs[ipk], sigma, amp, base)
        }
        SpectrumShape::FmDifference { fm_depth_mhz } => {
            let base = 0.5 * (ys[0] + ys[ys.len() - 1]);
            let (imax, imin) = (argmax(ys), argmin(ys));
            let (lo, hi) = (imax.min(imin), imax.max(imin));
            let centered = |i: usize| ys[i] - base;
            let center = (lo..hi)
                .find(|&i| centered(i).signum() != centered(i + 1).signum())
                .map(|i| {
                    let t = centered(i) / (centered(i) - centered(i + 1));
                    xs[i] + t * (xs[i + 1] - xs[i])
                })
                .unwrap_or(0.5 * (xs[imax] + xs[imin]));
            let sigma = (0.5 * (xs[hi] - xs[lo])).max(spacing);
            // Unit-amplitude lobe height at the estimated extremum.
            let lobe = |x: f64| {
                let g = |u: f64| (-0.5 * (u / sigma).powi(2)).exp();
                g(x + fm_depth_mhz) - g(x - fm_depth_mhz)
            };
            let unit = lobe(-sigma).abs().max(1e-6);
            // Positive amplitude puts the positive lobe below the centre.
            let sign = if imax < imin { 1.0 } else { -1.0 };
            let amp = sign * 0.5 * (ys[imax] - ys[imin]) / unit;
            Vector4::new(center, sigma, amp, base)
        }
    }
}

/// Least-squares Gaussian fit of a spectrum sampled at increasing drive
/// frequencies. The covariance is scaled by the residual variance.
pub fn fit_gaussian(freqs_mhz: &[f64], signal: &[f64], shape: SpectrumShape) -> Result<FitResult> {
    ensure(freqs_mhz.len() == signal.len(), "signal", "length differs from frequencies")?;
    ensure(
        freqs_mhz.len() >= MIN_SPECTRUM_POINTS,
        "freqs_mhz",
        format!("need at least {MIN_SPECTRUM_POINTS} points"),
    )?;
    ensure(
        freqs_mhz.windows(2).all(|w| w[0] < w[1]),
        "freqs_mhz",
        "must be strictly increasing",
    )?;
    if let SpectrumShape::FmDifference { fm_depth_mhz } = shape {
        ensure(fm_depth_mhz > 0.0, "fm_depth_mhz", "must be > 0")?;
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSpectrum);
    }
    let (lo, hi) = signal.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateSpectrum);
    }

    let span = (freqs_mhz[0], freqs_mhz[freqs_mhz.len() - 1]);
    let model = GaussianModel { shape, span };
    let init = initial_guess(freqs_mhz, signal, shape);
    let sol = fit_curve(&model, freqs_mhz, signal, init, &LmOptions::default())?;
    // Unbiased noise estimate: RSS over the residual degrees of freedom.
    let residual_rms = (sol.rss / (signal.len() - 4) as f64).sqrt();
    let p = sol.params;
    if p[2].abs() < residual_rms {
        return Err(Error::DegenerateSpectrum);
    }
    let center_stderr = sol.stderr(0);
    // A line narrower than the sample spacing or wider than the sweep is not resolved.
    let spacing = (span.1 - span.0) / (freqs_mhz.len() - 1) as f64;
    let converged = p[1] >= spacing
        && p[1] <= span.1 - span.0
        && p[0] >= span.0
        && p[0] <= span.1
        && center_stderr.is_finite()
        && center_stderr > 0.0;
    Ok(FitResult {
        center_mhz: p[0],
        sigma_mhz: p[1],
        amplitude: p[2],
        baseline: p[3],
        center_stderr_mhz: center_stderr,
        converged,
        residual_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use crate::spin::Lineshape;

    fn sweep(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn noiseless_peak_recovers_all_parameters() {
        let xs = sweep(20, 395.0, 450.0);
        let line = Lineshape::gaussian_peak(422.0, 8.0, 3e-3);
        let ys: Vec<f64> = xs.iter().map(|&x| line.eval(x) + 1e-4).collect();
        let fit = fit_gaussian(&xs, &ys, SpectrumShape::Peak).unwrap();
        assert!((fit.center_mhz - 422.0).abs() < 1e-6);
        assert!(((fit.sigma_mhz - 8.0) / 8.0).abs() < 1e-6);
        assert!(((fit.amplitude - 3e-3) / 3e-3).abs() < 1e-6);
        assert!(((fit.baseline - 1e-4) / 1e-4).abs() < 1e-6);
        assert!(fit.converged);
    }

    #[test]
    fn noiseless_fm_recovers_all_parameters() {
        let xs = sweep(40, 380.0, 440.0);
        let line = Lineshape::fm_difference(411.5, 8.0, 3e-3, 4.0);
        let ys: Vec<f64> = xs.iter().map(|&x| line.eval(x) - 2e-5).collect();
        let fit = fit_gaussian(&xs, &ys, SpectrumShape::FmDifference { fm_depth_mhz: 4.0 }).unwrap();
        assert!((fit.center_mhz - 411.5).abs() < 1e-6);
        assert!(((fit.sigma_mhz - 8.0) / 8.0).abs() < 1e-6);
        assert!(((fit.amplitude - 3e-3) / 3e-3).abs() < 1e-6);
        assert!(((fit.baseline + 2e-5) / 2e-5).abs() < 1e-6);
    }

    #[test]
    fn flat_spectrum_is_degenerate() {
        let xs = sweep(20, 395.0, 450.0);
        assert_eq!(fit_gaussian(&xs, &[0.5; 20], SpectrumShape::Peak), Err(Error::DegenerateSpectrum));
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            fit_gaussian(&[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 0.0, 0.0], SpectrumShape::Peak),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn realistic_noise_gives_sub_mhz_stderr() {
        let xs = sweep(20, 390.0, 455.0);
        let line = Lineshape::gaussian_peak(422.0, 8.0, 3e-3);
        let rng = CounterRng::new(11);
        let ys: Vec<f64> = xs.iter().enumerate().map(|(k, &x)| line.eval(x) + 2e-4 * rng.normal(0, 0, k as u64)).collect();
        let fit = fit_gaussian(&xs, &ys, SpectrumShape::Peak).unwrap();
        assert!(fit.converged);
        assert!(fit.center_stderr_mhz > 0.1 && fit.center_stderr_mhz < 1.0, "{}", fit.center_stderr_mhz);
        assert!((fit.center_mhz - 422.0).abs() < 5.0 * fit.center_stderr_mhz);
    }

    #[test]
    fn negative_peak_is_fitted() {
        let xs = sweep(25, 395.0, 450.0);
        let line = Lineshape::gaussian_peak(420.0, 6.0, -2e-3);
        let ys: Vec<f64> = xs.iter().map(|&x| line.eval(x)).collect();
        let fit = fit_gaussian(&xs, &ys, SpectrumShape::Peak).unwrap();
        assert!((fit.center_mhz - 420.0).abs() < 1e-6);
        assert!(fit.amplitude < 0.0);
    }
}
