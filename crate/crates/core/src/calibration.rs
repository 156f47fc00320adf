//! Signal-vs-field calibration curves and their inversion.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::spin::{ProtocolKind, SensingProtocol, SpinSystem};

pub const MIN_CALIBRATION_SAMPLES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub b_rel_ut: f64,
    pub signal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMode {
    Strict,
    #[default]
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub field_ut: f64,
    pub clipped: bool,
}

/// Sampled lock-in response versus field offset from the operating bias,
/// together with the monotone sensing interval `[sensing_lo, sensing_hi]`
/// around the operating zero crossing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationCurve {
    pub protocol: ProtocolKind,
    pub samples: Vec<CalibrationSample>,
    pub sensing_lo_ut: f64,
    pub sensing_hi_ut: f64,
}

/// Samples `protocol` at `b0 + δ` for `n_samples` offsets evenly spread over
/// `[sweep_lo_ut, sweep_hi_ut]` and locates the sensing interval.
pub fn build_calibration(
    protocol: &SensingProtocol,
    spin: &SpinSystem,
    b0_mt: f64,
    sweep_lo_ut: f64,
    sweep_hi_ut: f64,
    n_samples: usize,
) -> Result<CalibrationCurve> {
    ensure(
        n_samples >= MIN_CALIBRATION_SAMPLES,
        "n_samples",
        format!("must be at least {MIN_CALIBRATION_SAMPLES}"),
    )?;
    ensure(sweep_lo_ut < sweep_hi_ut, "sweep_hi_ut", "must exceed sweep_lo_ut")?;
    let step = (sweep_hi_ut - sweep_lo_ut) / (n_samples - 1) as f64;
    let samples = (0..n_samples)
        .map(|k| {
            let b_rel_ut = sweep_lo_ut + step * k as f64;
            CalibrationSample { b_rel_ut, signal: protocol.response(spin, b0_mt + b_rel_ut * 1e-3) }
        })
        .collect();
    CalibrationCurve::from_samples(protocol.kind(), samples)
}

impl CalibrationCurve {
    /// Builds a curve from pre-sampled data sorted by field offset.
    pub fn from_samples(protocol: ProtocolKind, samples: Vec<CalibrationSample>) -> Result<Self> {
        ensure(
            samples.len() >= MIN_CALIBRATION_SAMPLES,
            "samples",
            format!("need at least {MIN_CALIBRATION_SAMPLES}"),
        )?;
        ensure(
            samples.windows(2).all(|w| w[0].b_rel_ut < w[1].b_rel_ut),
            "samples",
            "field offsets must be strictly increasing",
        )?;
        let (lo, hi) = sensing_interval(&samples).ok_or(Error::NoMonotoneInterval)?;
        Ok(Self {
            protocol,
            sensing_lo_ut: samples[lo].b_rel_ut,
            sensing_hi_ut: samples[hi].b_rel_ut,
            samples,
        })
    }

    /// Samples inside the sensing interval.
    pub fn monotone_samples(&self) -> &[CalibrationSample] {
        let start = self.samples.partition_point(|s| s.b_rel_ut < self.sensing_lo_ut);
        let end = self.samples.partition_point(|s| s.b_rel_ut <= self.sensing_hi_ut);
        &self.samples[start..end]
    }

    pub fn width_ut(&self) -> f64 {
        self.sensing_hi_ut - self.sensing_lo_ut
    }

    /// Sweep spacing of the stored samples.
    pub fn resolution_ut(&self) -> f64 {
        let n = self.samples.len();
        (self.samples[n - 1].b_rel_ut - self.samples[0].b_rel_ut) / (n - 1) as f64
    }

    /// Signal values at `(sensing_lo, sensing_hi)`.
    pub fn edge_signals(&self) -> (f64, f64) {
        let m = self.monotone_samples();
        (m[0].signal, m[m.len() - 1].signal)
    }

    /// Field offset where the monotone branch crosses zero signal.
    pub fn zero_crossing_ut(&self) -> f64 {
        self.invert(0.0, InversionMode::Clamp).map(|i| i.field_ut).unwrap_or(f64::NAN)
    }

    /// Piecewise-linear inverse of the monotone branch.
    pub fn invert(&self, signal: f64, mode: InversionMode) -> Result<Inversion> {
        ensure(!signal.is_nan(), "signal", "is NaN")?;
        let m = self.monotone_samples();
        let increasing = m[m.len() - 1].signal > m[0].signal;
        // Orientation-free key: increasing in index for both slopes.
        let key = |s: &CalibrationSample| if increasing { s.signal } else { -s.signal };
        let target = if increasing { signal } else { -signal };
        let (first, last) = (&m[0], &m[m.len() - 1]);
        if target < key(first) || target > key(last) {
            if mode == InversionMode::Strict {
                let (a, b) = (first.signal, last.signal);
                return Err(Error::OutOfRange { signal, lo: a.min(b), hi: a.max(b) });
            }
            let edge = if target < key(first) { first } else { last };
            return Ok(Inversion { field_ut: edge.b_rel_ut, clipped: true });
        }
        let idx = m.partition_point(|s| key(s) < target);
        if idx == 0 {
            return Ok(Inversion { field_ut: first.b_rel_ut, clipped: false });
        }
        let (a, b) = (&m[idx - 1], &m[idx]);
        let t = (target - key(a)) / (key(b) - key(a));
        Ok(Inversion { field_ut: a.b_rel_ut + t * (b.b_rel_ut - a.b_rel_ut), clipped: false })
    }
}

/// Index bounds of the largest strictly monotone run containing the sign
/// change closest to zero field offset.
fn sensing_interval(samples: &[CalibrationSample]) -> Option<(usize, usize)> {
    let crossing = samples
        .windows(2)
        .enumerate()
        .filter(|(_, w)| {
            (w[0].signal < 0.0 && w[1].signal >= 0.0) || (w[0].signal > 0.0 && w[1].signal <= 0.0)
        })
        .map(|(i, w)| {
            let t = w[0].signal / (w[0].signal - w[1].signal);
            let at = w[0].b_rel_ut + t * (w[1].b_rel_ut - w[0].b_rel_ut);
            (i, at)
        })
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?
        .0;
    let rising = samples[crossing + 1].signal > samples[crossing].signal;
    let steps_with_trend = |i: usize| {
        let d = samples[i + 1].signal - samples[i].signal;
        if rising {
            d > 0.0
        } else {
            d < 0.0
        }
    };
    let mut lo = crossing;
    while lo > 0 && steps_with_trend(lo - 1) {
        lo -= 1;
    }
    let mut hi = crossing + 1;
    while hi + 1 < samples.len() && steps_with_trend(hi) {
        hi += 1;
    }
    Some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::GslacModel;
    use proptest::prelude::*;

    fn reference_dual() -> (SpinSystem, SensingProtocol, f64) {
        let spin = SpinSystem { linewidth_sigma_mhz: 5.9, ..SpinSystem::default() };
        let b0 = 15.375;
        (spin, SensingProtocol::dual_fm_at(&spin, b0, 4.27, 4.27, 4.0), b0)
    }

    #[test]
    fn dual_fm_range_is_asymmetric() {
        let (spin, p, b0) = reference_dual();
        let curve = build_calibration(&p, &spin, b0, -800.0, 1100.0, 3801).unwrap();
        assert!((curve.sensing_lo_ut + 75.0).abs() < 3.0, "{}", curve.sensing_lo_ut);
        assert!((curve.sensing_hi_ut - 380.0).abs() < 3.0, "{}", curve.sensing_hi_ut);
        assert!((curve.zero_crossing_ut() - 4.27 / 28.0 * 1e3).abs() < 0.5);
    }

    #[test]
    fn gslac_default_range() {
        let spin = SpinSystem::default();
        let model = GslacModel::from_spin(&spin);
        let b0 = model.b_anticross_mt;
        let curve = build_calibration(&SensingProtocol::Gslac(model), &spin, b0, -200.0, 200.0, 4001).unwrap();
        assert!((curve.sensing_lo_ut + 39.0).abs() <= 0.2);
        assert!((curve.sensing_hi_ut - 39.0).abs() <= 0.2);
        let width_mhz = spin.gamma_mhz_per_mt * curve.width_ut() * 1e-3;
        assert!((width_mhz - 2.2).abs() / 2.2 < 0.05);
    }

    #[test]
    fn symmetric_single_fm_range() {
        let spin = SpinSystem::default();
        let b0 = 17.2;
        let p = SensingProtocol::single_fm_at(&spin, b0, 0.0, 4.0);
        let curve = build_calibration(&p, &spin, b0, -1000.0, 1000.0, 2001).unwrap();
        // Brute-force oracle: walk outward from the central sample while the
        // sampled curve keeps its central trend.
        let ys: Vec<f64> = curve.samples.iter().map(|s| s.signal).collect();
        let mid = ys.len() / 2;
        let trend = (ys[mid + 1] - ys[mid - 1]).signum();
        let mut l = mid;
        while l > 0 && (ys[l] - ys[l - 1]) * trend > 0.0 {
            l -= 1;
        }
        let mut r = mid;
        while r + 1 < ys.len() && (ys[r + 1] - ys[r]) * trend > 0.0 {
            r += 1;
        }
        assert_eq!(curve.sensing_lo_ut, curve.samples[l].b_rel_ut);
        assert_eq!(curve.sensing_hi_ut, curve.samples[r].b_rel_ut);
        assert!((curve.sensing_lo_ut + curve.sensing_hi_ut).abs() <= curve.resolution_ut() + 1e-9);
    }

    #[test]
    fn am_has_no_monotone_interval() {
        let spin = SpinSystem::default();
        let (nu1, _) = spin.odmr_frequencies(17.2);
        let p = SensingProtocol::SingleAm { drive_mhz: nu1 };
        assert_eq!(
            build_calibration(&p, &spin, 17.2, -300.0, 300.0, 101),
            Err(Error::NoMonotoneInterval)
        );
    }

    #[test]
    fn too_few_samples() {
        let spin = SpinSystem::default();
        let p = SensingProtocol::single_fm_at(&spin, 17.2, 0.0, 4.0);
        assert!(matches!(
            build_calibration(&p, &spin, 17.2, -300.0, 300.0, 15),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn inversion_at_zero_crossing_and_edges() {
        let (spin, p, b0) = reference_dual();
        let curve = build_calibration(&p, &spin, b0, -800.0, 1100.0, 1901).unwrap();
        let zc = curve.invert(0.0, InversionMode::Clamp).unwrap();
        assert!(!zc.clipped);
        assert!((zc.field_ut - 152.5).abs() < 1.0);

        let (s_lo, s_hi) = curve.edge_signals();
        let beyond = s_lo + 0.1 * (s_lo - s_hi);
        let c = curve.invert(beyond, InversionMode::Clamp).unwrap();
        assert_eq!(c, Inversion { field_ut: curve.sensing_lo_ut, clipped: true });
        assert!(matches!(curve.invert(beyond, InversionMode::Strict), Err(Error::OutOfRange { .. })));
        let beyond_hi = s_hi + 0.1 * (s_hi - s_lo);
        let c = curve.invert(beyond_hi, InversionMode::Clamp).unwrap();
        assert_eq!(c, Inversion { field_ut: curve.sensing_hi_ut, clipped: true });
    }

    #[test]
    fn mid_range_inversion_matches_bisection() {
        let (spin, p, b0) = reference_dual();
        let curve = build_calibration(&p, &spin, b0, -800.0, 1100.0, 1901).unwrap();
        for truth in [-50.0, 10.0, 100.0, 250.0, 350.0] {
            let signal = p.response(&spin, b0 + truth * 1e-3);
            // Oracle: bisection on the forward response within the interval.
            let f = |x: f64| p.response(&spin, b0 + x * 1e-3) - signal;
            let (mut a, mut b) = (curve.sensing_lo_ut, curve.sensing_hi_ut);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if f(a).signum() == f(m).signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            let oracle = 0.5 * (a + b);
            let got = curve.invert(signal, InversionMode::Strict).unwrap().field_ut;
            assert!((got - oracle).abs() <= 0.01 * oracle.abs().max(1.0), "{got} vs {oracle}");
        }
    }

    #[test]
    fn clamp_is_monotone_in_signal() {
        let (spin, p, b0) = reference_dual();
        let curve = build_calibration(&p, &spin, b0, -800.0, 1100.0, 801).unwrap();
        let (a, b) = curve.edge_signals();
        let rising = b > a;
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=2000 {
            let s = a.min(b) * 1.5 + (a.max(b) - a.min(b)) * 2.0 * k as f64 / 2000.0;
            let s = if rising { s } else { -s };
            let f = curve.invert(s, InversionMode::Clamp).unwrap().field_ut;
            assert!(f >= prev);
            prev = f;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn round_trip_within_interpolation_bound(seed in any::<u64>(), n in 64usize..1024) {
            let (spin, p, b0) = reference_dual();
            let curve = build_calibration(&p, &spin, b0, -800.0, 1100.0, n).unwrap();
            let bound = (1900.0) / n as f64;
            let mut state = seed;
            for _ in 0..1000 {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let u = (state >> 11) as f64 / (1u64 << 53) as f64;
                let truth = curve.sensing_lo_ut + (curve.width_ut()) * (0.001 + 0.998 * u);
                // The true extremum lies between samples, so signals within one
                // step of an edge may exceed the sampled edge value and clamp.
                let got = curve.invert(p.response(&spin, b0 + truth * 1e-3), InversionMode::Clamp).unwrap();
                prop_assert!((got.field_ut - truth).abs() <= bound, "{} vs {}", got.field_ut, truth);
            }
        }
    }
}
