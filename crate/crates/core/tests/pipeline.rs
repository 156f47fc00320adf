use qscm_core::calibration::{build_calibration, InversionMode};
use qscm_core::field::{CurrentWaveform, SensorSlab, WireGeometry};
use qscm_core::framesim::{
    synth_spectrum_stack, synth_timeseries_stack, DriftArtifact, NoiseModel, Scene, SpectrumProtocol, TimingConfig,
};
use qscm_core::recon::{
    bin_frames, fit_gaussian, fit_grid, fit_wire_profile, map_from_fits, profile_across_wire, reconstruct_timeseries,
    threshold_mask, MaskThresholds, PixelAperture, SpectrumShape,
};
use qscm_core::rng::CounterRng;
use qscm_core::spin::{Lineshape, SensingProtocol, SpinSystem};

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn normalized_errors(shape: SpectrumShape, trials: u64) -> Vec<f64> {
    let xs: Vec<f64> = (0..20).map(|k| 385.0 + 3.5 * k as f64).collect();
    let line = match shape {
        SpectrumShape::Peak => Lineshape::gaussian_peak(418.0, 8.0, 3e-3),
        SpectrumShape::FmDifference { fm_depth_mhz } => Lineshape::fm_difference(418.0, 8.0, 3e-3, fm_depth_mhz),
    };
    let rng = CounterRng::new(2024);
    (0..trials)
        .filter_map(|t| {
            let ys: Vec<f64> =
                xs.iter().enumerate().map(|(k, &x)| line.eval(x) + 2e-4 * rng.normal(0, t, k as u64)).collect();
            let fit = fit_gaussian(&xs, &ys, shape).ok()?;
            fit.converged.then(|| (fit.center_mhz - 418.0) / fit.center_stderr_mhz)
        })
        .collect()
}

#[test]
fn center_stderr_is_calibrated() {
    for shape in [SpectrumShape::Peak, SpectrumShape::FmDifference { fm_depth_mhz: 4.0 }] {
        let z = normalized_errors(shape, 400);
        assert!(z.len() >= 390, "{shape:?}: only {} converged", z.len());
        let s = std_dev(&z);
        assert!((0.7..=1.4).contains(&s), "{shape:?}: std {s}");
    }
}

fn small_scene(current: CurrentWaveform) -> Scene {
    Scene {
        wire: WireGeometry::new(220.0, 768.0),
        slab: SensorSlab { height_px: 20, ..SensorSlab::default() },
        current,
        bias_mt: 17.1964,
        mw_region: None,
    }
}

#[test]
fn doubling_sequences_halves_frame_mean_variance() {
    let scene = Scene { slab: SensorSlab { width_px: 16, height_px: 16, ..SensorSlab::default() }, ..small_scene(CurrentWaveform::dc(0.0)) };
    let spin = SpinSystem::default();
    let protocol = SensingProtocol::single_fm_at(&spin, scene.bias_mt, 0.0, 4.0);
    let frame_means = |n_sequences: u32| -> Vec<f64> {
        (0..100u64)
            .flat_map(|rep| {
                let timing = TimingConfig { n_sequences, ..TimingConfig::default() };
                let noise = NoiseModel { sigma_per_cycle: 1.0, seed: rep * 7 + n_sequences as u64 };
                let stack = synth_timeseries_stack(&scene, &spin, &protocol, &timing, &noise, &DriftArtifact::default())
                    .unwrap();
                (0..stack.n_frames())
                    .map(|k| stack.i_planes.index_axis(ndarray::Axis(0), k).iter().map(|&v| v as f64).sum::<f64>() / 256.0)
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let v1 = std_dev(&frame_means(1)).powi(2);
    let v2 = std_dev(&frame_means(2)).powi(2);
    assert!((v1 / v2 / 2.0 - 1.0).abs() < 0.1, "ratio {}", v1 / v2);
}

#[test]
fn zero_noise_wire_round_trip() {
    let spin = SpinSystem::default();
    let scene = small_scene(CurrentWaveform::dc(-1000.0));
    let sweep: Vec<f64> = (0..20).map(|k| 380.0 + 3.5 * k as f64).collect();
    let stack = synth_spectrum_stack(&scene, &spin, &sweep, SpectrumProtocol::Am, &TimingConfig::default(), &NoiseModel::default())
        .unwrap();
    let binned = bin_frames(&stack, 10, None).unwrap();
    let grid = fit_grid(&binned, SpectrumShape::Peak).unwrap();
    let mask = threshold_mask(&grid, &MaskThresholds::default());
    let map = map_from_fits(&grid, &mask, &spin, spin.odmr_frequencies(scene.bias_mt).0).unwrap();
    let profile: Vec<_> = profile_across_wire(&map);
    // The column straddling the wire mixes both signs and fits poorly; it is
    // still a valid spectrum, so all columns survive.
    assert_eq!(profile.len(), 51);
    let aperture = PixelAperture { bin_factor: 10, pixel_pitch_um: scene.slab.pixel_pitch_um };
    let fit = fit_wire_profile(&profile, scene.slab.thickness_um, &aperture).unwrap();
    assert!((fit.i_hat_a + 1.0).abs() < 1e-3, "{fit:?}");
    assert!((fit.d_hat_um / 220.0 - 1.0).abs() < 1e-3, "{fit:?}");
    assert!((fit.x0_hat_um - 768.0).abs() < 1.0, "{fit:?}");
}

#[test]
fn dc_timeseries_frames_are_identical_and_pulse_aligns() {
    let spin = SpinSystem::default();
    let protocol = SensingProtocol::dual_fm_at(&spin, 17.1964, 0.0, 0.0, 4.0);
    let timing = TimingConfig::default();
    let dc = synth_timeseries_stack(
        &small_scene(CurrentWaveform::dc(35.0)),
        &spin,
        &protocol,
        &timing,
        &NoiseModel::default(),
        &DriftArtifact::default(),
    )
    .unwrap();
    for k in 1..dc.n_frames() {
        assert_eq!(dc.i_planes.index_axis(ndarray::Axis(0), k), dc.i_planes.index_axis(ndarray::Axis(0), 0));
    }

    // Pulse starting mid-frame: the first frame whose midpoint lies inside
    // the window is the first to show more than half the step.
    let scene = small_scene(CurrentWaveform::pulse(35.0, 410.0, 100.0));
    let stack = synth_timeseries_stack(&scene, &spin, &protocol, &timing, &NoiseModel::default(), &DriftArtifact::default())
        .unwrap();
    let curve = build_calibration(&protocol, &spin, scene.bias_mt, -300.0, 300.0, 601).unwrap();
    let recon = reconstruct_timeseries(&bin_frames(&stack, 10, None).unwrap(), &curve, InversionMode::Clamp, None).unwrap();
    let trace = recon.trace(0, 30);
    let step = trace.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
    let first = trace.iter().position(|v| v.abs() > 0.5 * step.abs()).unwrap();
    let first_inside = (0..timing.n_frames as usize)
        .find(|&k| {
            let t = timing.frame_time_ms(k);
            (410.0..510.0).contains(&t)
        })
        .unwrap();
    assert_eq!(first, first_inside);
}
