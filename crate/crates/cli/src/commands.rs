use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qscm_core::calibration::{build_calibration, CalibrationCurve};
use qscm_core::framesim::{synth_spectrum_stack, synth_timeseries_stack, AcquisitionKind, FrameStack};
use qscm_core::recon::{
    bin_frames, fit_gaussian, fit_grid, fit_wire_profile, infer_pulse_current, map_from_fits, noise_floor,
    profile_across_wire, reconstruct_timeseries, sensitivity_report, threshold_mask, BinnedStack, CurrentReference,
    FieldMap, FitResult, PixelAperture, ProfilePoint, TimeseriesRecon,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::format::{
    encode_map_csv, encode_sidecar, encode_traces_csv, read_map, read_stack, read_traces, sidecar_path, write_atomic,
    write_map, write_stack, MapSidecar, Provenance, TracesSidecar,
};

#[derive(Debug, Parser)]
#[command(name = "qscm", version, about = "Lock-in camera magnetometry: simulate, reconstruct, fit")]
pub struct Cli {
    /// Worker threads for simulation and reconstruction (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a frame stack from a run configuration.
    Synth(SynthArgs),
    /// Extract and fit the spectrum of one virtual pixel.
    Spectrum(SpectrumArgs),
    /// Fit every virtual pixel of a spectrum stack into a field map.
    Fitmap(FitmapArgs),
    /// Sample the protocol response into a calibration curve.
    Calibrate(CalibrateArgs),
    /// Reconstruct field traces from a time-series stack.
    Recon(ReconArgs),
    /// Fit wire geometry and current to a map, or scale a pulse against a reference.
    FitCurrent(FitCurrentArgs),
    /// Normalise a noise floor to a 1 Hz bandwidth.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed and QSCM_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub stack: PathBuf,
    /// Virtual-pixel row.
    #[arg(long)]
    pub row: usize,
    /// Virtual-pixel column.
    #[arg(long)]
    pub col: usize,
    /// JSON output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitmapArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub stack: PathBuf,
    /// Map CSV; the sidecar goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional 8-bit PGM rendering.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Half-range of the PGM gray scale in µT (default: largest |B| in the map).
    #[arg(long)]
    pub pgm_range_ut: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long)]
    pub curve: PathBuf,
    /// Receives `traces.csv` and one `frame_NNNN.csv` per requested frame.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Frames to export as maps, e.g. `0,9,20` or `8-9`.
    #[arg(long, value_parser = parse_frames)]
    pub frames: Option<FrameList>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["map", "traces"])))]
pub struct FitCurrentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Field map: fit depth, current and wire position.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Traces: scale the pulse response against `--reference`.
    #[arg(long, requires_all = ["reference", "pulse_frames"])]
    pub traces: Option<PathBuf>,
    /// Output of a previous map fit.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Frames carrying the current.
    #[arg(long, value_parser = parse_frames)]
    pub pulse_frames: Option<FrameList>,
    /// Frames without current, subtracted from the pulse frames (omit for DC).
    #[arg(long, value_parser = parse_frames)]
    pub baseline_frames: Option<FrameList>,
    /// JSON output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("floor").required(true).args(["noise", "traces"])))]
pub struct ReportArgs {
    /// Per-frame noise floor in µT.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Measure the floor from these traces instead.
    #[arg(long, requires = "frames")]
    pub traces: Option<PathBuf>,
    /// Frames used for the measured floor.
    #[arg(long, value_parser = parse_frames)]
    pub frames: Option<FrameList>,
    /// Integration time per lock-in cycle (one frame) in ms.
    #[arg(long)]
    pub cycle_ms: f64,
    #[arg(long)]
    pub sequences: u32,
}

/// Frame indices given on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameList(pub Vec<usize>);

/// Parses `3`, `0-7` (inclusive) and comma-separated mixtures.
pub fn parse_frames(s: &str) -> Result<FrameList, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad frame index {t:?}"));
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range {item:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(item)?),
        }
    }
    if out.is_empty() {
        return Err("no frames given".into());
    }
    Ok(FrameList(out))
}

/// Inverse of [`parse_frames`], collapsing consecutive runs.
pub fn format_frames(frames: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < frames.len() {
        let mut j = i;
        while j + 1 < frames.len() && frames[j + 1] == frames[j] + 1 {
            j += 1;
        }
        parts.push(if j > i { format!("{}-{}", frames[i], frames[j]) } else { frames[i].to_string() });
        i = j + 1;
    }
    parts.join(",")
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Spectrum(a) => spectrum(&a),
        Command::Fitmap(a) => fitmap(&a),
        Command::Calibrate(a) => calibrate(&a),
        Command::Recon(a) => recon(&a),
        Command::FitCurrent(a) => fit_current(&a),
        Command::Report(a) => report(&a),
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("output serializes");
    v.push(b'\n');
    v
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes).map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// Stack described by `config`, with the given noise seed.
pub fn synthesize(config: &RunConfig, seed: u64) -> CliResult<FrameStack> {
    let noise = config.noise_model(seed);
    Ok(match config.sweep_mhz() {
        Some(sweep) => synth_spectrum_stack(
            &config.scene,
            &config.spin,
            &sweep,
            config.spectrum_protocol().expect("validated"),
            &config.timing,
            &noise,
        )?,
        None => synth_timeseries_stack(
            &config.scene,
            &config.spin,
            &config.sensing_protocol(),
            &config.timing,
            &noise,
            &config.drift,
        )?,
    })
}

fn synth(args: &SynthArgs) -> CliResult<()> {
    let config = RunConfig::load(&args.config)?;
    let seed = config.resolve_seed(args.seed)?;
    let stack = synthesize(&config, seed)?;
    let mut resolved = config.clone();
    resolved.noise.seed = Some(seed);
    let provenance = Provenance::here(Some(serde_json::to_value(&resolved).expect("config serializes")));
    write_stack(&args.out, &stack, &provenance)?;
    println!(
        "{}: {}x{} px, {} frames, frame period {} ms, seed {}",
        args.out.display(),
        stack.width(),
        stack.height(),
        stack.n_frames(),
        stack.meta.frame_period_ms,
        seed
    );
    Ok(())
}

/// Reads a stack, checks it against the config and bins it.
fn load_binned(config: &RunConfig, path: &Path, acquisition: AcquisitionKind) -> CliResult<BinnedStack> {
    let (stack, _): (FrameStack, _) = read_stack(path)?;
    if stack.meta.protocol != config.protocol_kind() {
        return Err(CliError::Mismatch(format!(
            "protocol mismatch: stack is `{}`, config is `{}`",
            stack.meta.protocol,
            config.protocol_kind()
        )));
    }
    if stack.meta.acquisition != acquisition {
        return Err(CliError::Mismatch(format!(
            "{} holds a {:?} acquisition, this command needs {:?}",
            path.display(),
            stack.meta.acquisition,
            acquisition
        )));
    }
    Ok(bin_frames(&stack, config.recon.bin_factor, config.recon.roi)?)
}

#[derive(Serialize)]
struct SpectrumOutput {
    row: usize,
    col: usize,
    x_um: f64,
    y_um: f64,
    sweep_mhz: Vec<f64>,
    signal: Vec<f64>,
    fit: Option<FitResult>,
    fit_error: Option<String>,
}

fn spectrum(args: &SpectrumArgs) -> CliResult<()> {
    let config = RunConfig::load(&args.config)?;
    let binned = load_binned(&config, &args.stack, AcquisitionKind::Spectrum)?;
    if args.row >= binned.height() || args.col >= binned.width() {
        return Err(CliError::Usage(format!(
            "pixel ({}, {}) outside the {}x{} virtual grid",
            args.row,
            args.col,
            binned.height(),
            binned.width()
        )));
    }
    let signal = binned.i_series(args.row, args.col);
    let shape = config.spectrum_shape().expect("spectrum protocol");
    let (fit, fit_error) = match fit_gaussian(&binned.meta.sweep_mhz, &signal, shape) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let out = SpectrumOutput {
        row: args.row,
        col: args.col,
        x_um: binned.column_x_um(args.col),
        y_um: binned.row_y_um(args.row),
        sweep_mhz: binned.meta.sweep_mhz.clone(),
        signal,
        fit,
        fit_error,
    };
    emit(args.out.as_deref(), &to_json(&out))
}

/// Linear gray scale: excluded pixels are 0; `b` maps to
/// `1 + round(254 · (b + R) / 2R)` clamped to `1..=255`, so −R is 1, 0 is
/// 128 and +R is 255.
pub fn render_pgm(map: &FieldMap, range_ut: Option<f64>) -> Vec<u8> {
    let range = range_ut.unwrap_or_else(|| {
        let m = map.values_ut.iter().filter(|v| v.is_finite()).fold(0.0f64, |a, v| a.max(v.abs()));
        if m > 0.0 {
            m
        } else {
            1.0
        }
    });
    let mut out = format!("P5\n{} {}\n255\n", map.width_v, map.height_v).into_bytes();
    for r in 0..map.height_v {
        for c in 0..map.width_v {
            out.push(match map.value(r, c) {
                Some(b) => (1.0 + (254.0 * (b + range) / (2.0 * range)).round()).clamp(1.0, 255.0) as u8,
                None => 0,
            });
        }
    }
    out
}

fn fitmap(args: &FitmapArgs) -> CliResult<()> {
    let config = RunConfig::load(&args.config)?;
    if let Some(r) = args.pgm_range_ut {
        if !(r > 0.0) {
            return Err(CliError::Usage("--pgm-range-ut must be > 0".into()));
        }
    }
    let binned = load_binned(&config, &args.stack, AcquisitionKind::Spectrum)?;
    let grid = fit_grid(&binned, config.spectrum_shape().expect("spectrum protocol"))?;
    let mask = threshold_mask(&grid, &config.recon.thresholds);
    let nu1_ref = config.spin.odmr_frequencies(config.reference_field_mt()).0;
    let map = map_from_fits(&grid, &mask, &config.spin, nu1_ref)?;
    let sidecar = MapSidecar {
        width_v: map.width_v,
        height_v: map.height_v,
        bin_factor: map.bin_factor,
        roi: map.roi,
        protocol: binned.meta.protocol,
        reference_frequency_mhz: Some(nu1_ref),
        frame: None,
        timestamp_ms: None,
    };
    write_map(&args.out, &map, &sidecar)?;
    if let Some(p) = &args.pgm {
        write_atomic(p, &render_pgm(&map, args.pgm_range_ut))?;
    }
    println!(
        "{}: {}x{} virtual pixels, {} valid",
        args.out.display(),
        map.width_v,
        map.height_v,
        map.valid_count()
    );
    Ok(())
}

pub fn build_curve(config: &RunConfig) -> CliResult<CalibrationCurve> {
    let c = &config.calibration;
    Ok(build_calibration(
        &config.sensing_protocol(),
        &config.spin,
        config.reference_field_mt(),
        c.sweep_lo_ut,
        c.sweep_hi_ut,
        c.n_samples,
    )?)
}

fn calibrate(args: &CalibrateArgs) -> CliResult<()> {
    let config = RunConfig::load(&args.config)?;
    let curve = build_curve(&config)?;
    write_atomic(&args.out, &to_json(&curve))?;
    println!(
        "{}: {} sensing interval [{}, {}] uT",
        args.out.display(),
        curve.protocol,
        curve.sensing_lo_ut,
        curve.sensing_hi_ut
    );
    Ok(())
}

fn read_curve(path: &Path) -> CliResult<CalibrationCurve> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let curve: CalibrationCurve = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::format(path, crate::error::FormatError::Metadata(e.to_string())))?;
    // Re-derive the sensing interval so a hand-edited file cannot disagree with its samples.
    CalibrationCurve::from_samples(curve.protocol, curve.samples).map_err(CliError::from)
}

fn frame_sidecar(recon: &TimeseriesRecon, protocol: qscm_core::spin::ProtocolKind, k: usize) -> MapSidecar {
    MapSidecar {
        width_v: recon.x_um.len(),
        height_v: recon.y_um.len(),
        bin_factor: recon.bin_factor,
        roi: recon.roi,
        protocol,
        reference_frequency_mhz: None,
        frame: Some(k),
        timestamp_ms: Some(recon.timestamps_ms[k]),
    }
}

fn recon(args: &ReconArgs) -> CliResult<()> {
    let config = RunConfig::load(&args.config)?;
    let curve = read_curve(&args.curve)?;
    let binned = load_binned(&config, &args.stack, AcquisitionKind::Timeseries)?;
    let recon = reconstruct_timeseries(&binned, &curve, config.recon.mode, None)?;

    // Everything is rendered before the first file is written.
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let traces = args.out_dir.join("traces.csv");
    let side = TracesSidecar {
        width_v: recon.x_um.len(),
        height_v: recon.y_um.len(),
        n_frames: recon.n_frames(),
        bin_factor: recon.bin_factor,
        roi: recon.roi,
        protocol: curve.protocol,
        sensing_lo_ut: curve.sensing_lo_ut,
        sensing_hi_ut: curve.sensing_hi_ut,
    };
    files.push((sidecar_path(&traces), to_json(&side)));
    files.push((traces, encode_traces_csv(&recon)));
    for &k in args.frames.iter().flat_map(|f| &f.0) {
        let map = recon.frame_map(k)?;
        let path = args.out_dir.join(format!("frame_{k:04}.csv"));
        files.push((sidecar_path(&path), encode_sidecar(&frame_sidecar(&recon, curve.protocol, k))));
        files.push((path, encode_map_csv(&map)));
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    let n_clipped = recon.clipped.iter().filter(|&&c| c).count();
    println!(
        "{}: {} frames of {}x{} virtual pixels, {} clipped samples",
        args.out_dir.display(),
        recon.n_frames(),
        recon.x_um.len(),
        recon.y_um.len(),
        n_clipped
    );
    Ok(())
}

/// Column profile of `mean(pulse frames) − mean(baseline frames)`; an empty
/// baseline counts as zero field.
pub fn pulse_profile(recon: &TimeseriesRecon, pulse: &[usize], baseline: &[usize]) -> CliResult<Vec<ProfilePoint>> {
    let n = recon.n_frames();
    if let Some(&k) = pulse.iter().chain(baseline).find(|&&k| k >= n) {
        return Err(CliError::Usage(format!("frame {k} out of {n} frames")));
    }
    let (_, h, w) = recon.fields_ut.dim();
    if pulse.is_empty() {
        return Err(CliError::Usage("no pulse frames".into()));
    }
    let mean_over = |frames: &[usize], r: usize, c: usize| {
        if frames.is_empty() {
            return 0.0;
        }
        frames.iter().map(|&k| recon.fields_ut[[k, r, c]]).sum::<f64>() / frames.len() as f64
    };
    Ok((0..w)
        .filter_map(|c| {
            let diffs: Vec<f64> = (0..h)
                .filter(|&r| recon.mask[[r, c]])
                .map(|r| mean_over(pulse, r, c) - mean_over(baseline, r, c))
                .filter(|v| v.is_finite())
                .collect();
            (!diffs.is_empty()).then(|| ProfilePoint {
                x_um: recon.x_um[c],
                field_ut: diffs.iter().sum::<f64>() / diffs.len() as f64,
                n_valid: diffs.len(),
            })
        })
        .collect())
}

#[derive(Serialize)]
struct PulseOutput {
    current_ma: f64,
    stderr_ma: f64,
    points_used: usize,
    pulse_frames: String,
    baseline_frames: String,
}

fn fit_current(args: &FitCurrentArgs) -> CliResult<()> {
    let config = RunConfig::load(&args.config)?;
    let thickness_um = config.scene.slab.thickness_um;
    let pitch = config.scene.slab.pixel_pitch_um;
    if let Some(map_path) = &args.map {
        let (map, sidecar) = read_map(map_path)?;
        let aperture = PixelAperture { bin_factor: sidecar.bin_factor, pixel_pitch_um: pitch };
        let fit = fit_wire_profile(&profile_across_wire(&map), thickness_um, &aperture)?;
        let reference = CurrentReference::Wire { fit, thickness_um, aperture };
        return emit(args.out.as_deref(), &to_json(&reference));
    }
    let traces_path = args.traces.as_ref().expect("clap enforces one input");
    let ref_path = args.reference.as_ref().expect("clap enforces --reference");
    let bytes = std::fs::read(ref_path).map_err(|e| CliError::io(ref_path, e))?;
    let reference: CurrentReference = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::format(ref_path, crate::error::FormatError::Metadata(e.to_string())))?;
    let (recon, _) = read_traces(traces_path)?;
    let pulse = args.pulse_frames.clone().expect("clap enforces --pulse-frames").0;
    let baseline = args.baseline_frames.clone().map(|f| f.0).unwrap_or_default();
    let profile = pulse_profile(&recon, &pulse, &baseline)?;
    let est = infer_pulse_current(&profile, Some(&reference))?;
    let out = PulseOutput {
        current_ma: est.current_ma,
        stderr_ma: est.stderr_ma,
        points_used: est.points_used,
        pulse_frames: format_frames(&pulse),
        baseline_frames: format_frames(&baseline),
    };
    emit(args.out.as_deref(), &to_json(&out))
}

/// Root-mean of the per-pixel sample variances over `frames`.
pub fn trace_noise_floor(recon: &TimeseriesRecon, frames: &[usize]) -> CliResult<f64> {
    let n = recon.n_frames();
    if let Some(&k) = frames.iter().find(|&&k| k >= n) {
        return Err(CliError::Usage(format!("frame {k} out of {n} frames")));
    }
    let (_, h, w) = recon.fields_ut.dim();
    let vars: Vec<f64> = (0..h * w)
        .filter(|&p| recon.mask[[p / w, p % w]])
        .filter_map(|p| {
            let trace: Vec<f64> = frames.iter().map(|&k| recon.fields_ut[[k, p / w, p % w]]).collect();
            noise_floor(&trace).map(|s| s * s)
        })
        .collect();
    if vars.is_empty() {
        return Err(CliError::Usage("need at least 2 frames and one valid pixel for a noise floor".into()));
    }
    Ok((vars.iter().sum::<f64>() / vars.len() as f64).sqrt())
}

fn report(args: &ReportArgs) -> CliResult<()> {
    let floor = match (&args.noise, &args.traces) {
        (Some(n), _) => *n,
        (None, Some(path)) => {
            let (recon, _) = read_traces(path)?;
            let floor = trace_noise_floor(&recon, &args.frames.as_ref().expect("clap enforces --frames").0)?;
            println!("noise floor {floor:.4} uT");
            floor
        }
        (None, None) => unreachable!("clap enforces one source"),
    };
    let s = sensitivity_report(floor, args.cycle_ms, args.sequences)?;
    println!("{s:.2} µT·Hz^-1/2");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_lists() {
        assert_eq!(parse_frames("0-3,8").unwrap().0, vec![0, 1, 2, 3, 8]);
        assert_eq!(parse_frames("5").unwrap().0, vec![5]);
        assert!(parse_frames("3-1").is_err());
        assert!(parse_frames("a").is_err());
        assert!(parse_frames("").is_err());
        assert_eq!(format_frames(&[0, 1, 2, 3, 8, 10, 11]), "0-3,8,10-11");
        assert_eq!(format_frames(&[]), "");
    }

    #[test]
    fn pgm_gray_mapping() {
        let map = FieldMap::new(
            ndarray::arr2(&[[-2.0, 0.0, 2.0, f64::NAN]]),
            ndarray::arr2(&[[true, true, true, false]]),
            ndarray::Array2::from_elem((1, 4), false),
            1,
            qscm_core::recon::Roi { x: 0, y: 0, width: 4, height: 1 },
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0.0],
        )
        .unwrap();
        let pgm = render_pgm(&map, None);
        assert!(pgm.starts_with(b"P5\n4 1\n255\n"));
        assert_eq!(&pgm[pgm.len() - 4..], &[1, 128, 255, 0]);
    }
}
