//! On-disk formats.
//!
//! Frame stack (`.qscm`), all integers little-endian:
//!
//! | offset | size | field                                      |
//! |--------|------|--------------------------------------------|
//! | 0      | 4    | magic `QSCM`                               |
//! | 4      | 4    | format version (`1`)                       |
//! | 8      | 4    | width                                      |
//! | 12     | 4    | height                                     |
//! | 16     | 4    | n_frames                                   |
//! | 20     | 4    | CRC-32 (IEEE) of the payload               |
//! | 24     | 8    | metadata length in bytes                   |
//! | 32     | …    | payload: per frame the I plane then the Q plane, `f32`, row-major from the top-left pixel |
//! | …      | …    | metadata: UTF-8 JSON                       |
//!
//! Map: CSV with header `x_um,y_um,b_ut,valid,clipped`, one row per virtual
//! pixel in row-major order, `b_ut` empty for excluded pixels, flags as
//! `0`/`1`. A JSON sidecar named `<map>.json` carries the grid description.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use qscm_core::framesim::{FrameStack, StackMeta};
use qscm_core::recon::{FieldMap, Roi, TimeseriesRecon};
use qscm_core::spin::ProtocolKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, FormatError};

pub const MAGIC: [u8; 4] = *b"QSCM";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
pub const MAP_HEADER: [&str; 5] = ["x_um", "y_um", "b_ut", "valid", "clipped"];

/// Where a stack came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub generator: String,
    /// Resolved run configuration, if the stack was synthesized.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

impl Provenance {
    pub fn here(config: Option<serde_json::Value>) -> Self {
        Self { generator: format!("qscm {}", env!("CARGO_PKG_VERSION")), config }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StackMetadata {
    meta: StackMeta,
    timestamps_ms: Vec<f64>,
    provenance: Provenance,
}

pub fn encode_stack(stack: &FrameStack, provenance: &Provenance) -> Vec<u8> {
    let (n, h, w) = stack.i_planes.dim();
    let mut payload = Vec::with_capacity(2 * n * h * w * 4);
    for k in 0..n {
        for planes in [&stack.i_planes, &stack.q_planes] {
            for v in planes.index_axis(ndarray::Axis(0), k).iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let metadata = serde_json::to_vec(&StackMetadata {
        meta: stack.meta.clone(),
        timestamps_ms: stack.timestamps_ms.clone(),
        provenance: provenance.clone(),
    })
    .expect("stack metadata serializes");

    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + metadata.len());
    out.extend_from_slice(&MAGIC);
    for v in [FORMAT_VERSION, w as u32, h as u32, n as u32, crc32fast::hash(&payload)] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(metadata.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&metadata);
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

pub fn decode_stack(bytes: &[u8]) -> Result<(FrameStack, Provenance), FormatError> {
    let truncated = |expected: u64| FormatError::Truncated { expected, actual: bytes.len() as u64 };
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(if bytes.len() < 4 && MAGIC.starts_with(bytes) { truncated(HEADER_LEN as u64) } else { FormatError::BadMagic });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN as u64));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let (w, h, n) = (u32_at(bytes, 8) as u64, u32_at(bytes, 12) as u64, u32_at(bytes, 16) as u64);
    let stored = u32_at(bytes, 20);
    let meta_len = u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes"));
    let payload_len = 2 * w * h * n * 4;
    let total = (HEADER_LEN as u64)
        .checked_add(payload_len)
        .and_then(|t| t.checked_add(meta_len))
        .ok_or_else(|| FormatError::Metadata("header sizes overflow".into()))?;
    if (bytes.len() as u64) < total {
        return Err(truncated(total));
    }
    if bytes.len() as u64 > total {
        return Err(FormatError::TrailingBytes(bytes.len() as u64 - total));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len as usize];
    let computed = crc32fast::hash(payload);
    if computed != stored {
        return Err(FormatError::Checksum { stored, computed });
    }
    let metadata: StackMetadata = serde_json::from_slice(&bytes[HEADER_LEN + payload_len as usize..])
        .map_err(|e| FormatError::Metadata(e.to_string()))?;

    let (n, h, w) = (n as usize, h as usize, w as usize);
    let plane = h * w;
    let mut i_vals = Vec::with_capacity(n * plane);
    let mut q_vals = Vec::with_capacity(n * plane);
    for (idx, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if (idx / plane) % 2 == 0 {
            i_vals.push(v);
        } else {
            q_vals.push(v);
        }
    }
    let shape_err = |e: ndarray::ShapeError| FormatError::Metadata(e.to_string());
    let stack = FrameStack::new(
        Array3::from_shape_vec((n, h, w), i_vals).map_err(shape_err)?,
        Array3::from_shape_vec((n, h, w), q_vals).map_err(shape_err)?,
        metadata.timestamps_ms,
        metadata.meta,
    )
    .map_err(|e| FormatError::Metadata(e.to_string()))?;
    Ok((stack, metadata.provenance))
}

/// Writes through a temporary file in the destination directory, so a
/// failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(&dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_stack(path: &Path, stack: &FrameStack, provenance: &Provenance) -> CliResult<()> {
    write_atomic(path, &encode_stack(stack, provenance))
}

pub fn read_stack(path: &Path) -> CliResult<(FrameStack, Provenance)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_stack(&bytes).map_err(|e| CliError::format(path, e))
}

/// Grid description stored next to a map CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSidecar {
    pub width_v: usize,
    pub height_v: usize,
    pub bin_factor: usize,
    pub roi: Roi,
    pub protocol: ProtocolKind,
    /// `ν₁` of the reference field for spectral maps.
    #[serde(default)]
    pub reference_frequency_mhz: Option<f64>,
    /// Frame index and timestamp for maps cut from a time series.
    #[serde(default)]
    pub frame: Option<usize>,
    #[serde(default)]
    pub timestamp_ms: Option<f64>,
}

pub fn sidecar_path(map_path: &Path) -> PathBuf {
    let mut s = map_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Floats are written in shortest round-trip form, so reading the file back
/// reproduces them bitwise.
pub fn encode_map_csv(map: &FieldMap) -> Vec<u8> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(MAP_HEADER).expect("in-memory write");
    for r in 0..map.height_v {
        for c in 0..map.width_v {
            let b = map.value(r, c).map(|v| v.to_string()).unwrap_or_default();
            wtr.write_record([
                map.x_um[c].to_string(),
                map.y_um[r].to_string(),
                b,
                flag(map.mask[[r, c]]).to_string(),
                flag(map.clipped[[r, c]]).to_string(),
            ])
            .expect("in-memory write");
        }
    }
    wtr.into_inner().expect("in-memory flush")
}

pub fn encode_sidecar(sidecar: &MapSidecar) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(sidecar).expect("sidecar serializes");
    v.push(b'\n');
    v
}

pub fn write_map(path: &Path, map: &FieldMap, sidecar: &MapSidecar) -> CliResult<()> {
    write_atomic(path, &encode_map_csv(map))?;
    write_atomic(&sidecar_path(path), &encode_sidecar(sidecar))
}

fn parse_flag(s: &str) -> Result<bool, FormatError> {
    match s {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(FormatError::Map(format!("flag {other:?} is not 0 or 1"))),
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64, FormatError> {
    s.parse().map_err(|_| FormatError::Map(format!("{what} {s:?} is not a number")))
}

pub fn decode_map(csv_bytes: &[u8], sidecar: &MapSidecar) -> Result<FieldMap, FormatError> {
    let (w, h) = (sidecar.width_v, sidecar.height_v);
    let mut rdr = csv::Reader::from_reader(csv_bytes);
    let header = rdr.headers().map_err(|e| FormatError::Map(e.to_string()))?;
    if header.iter().ne(MAP_HEADER) {
        return Err(FormatError::Map(format!("unexpected header {header:?}")));
    }
    let mut values = Array2::from_elem((h, w), f64::NAN);
    let mut mask = Array2::from_elem((h, w), false);
    let mut clipped = Array2::from_elem((h, w), false);
    let mut x_um = vec![0.0; w];
    let mut y_um = vec![0.0; h];
    let mut count = 0;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FormatError::Map(e.to_string()))?;
        if idx >= w * h {
            return Err(FormatError::Map(format!("more than {} rows", w * h)));
        }
        let (r, c) = (idx / w, idx % w);
        let x = parse_f64(&rec[0], "x_um")?;
        let y = parse_f64(&rec[1], "y_um")?;
        let valid = parse_flag(&rec[3])?;
        if r == 0 {
            x_um[c] = x;
        }
        if c == 0 {
            y_um[r] = y;
        }
        if valid {
            values[[r, c]] = parse_f64(&rec[2], "b_ut")?;
        } else if !rec[2].is_empty() {
            return Err(FormatError::Map(format!("row {idx}: excluded pixel carries a value")));
        }
        mask[[r, c]] = valid;
        clipped[[r, c]] = parse_flag(&rec[4])?;
        count += 1;
    }
    if count != w * h {
        return Err(FormatError::Map(format!("{count} rows for a {w}x{h} grid")));
    }
    FieldMap::new(values, mask, clipped, sidecar.bin_factor, sidecar.roi, x_um, y_um)
        .map_err(|e| FormatError::Map(e.to_string()))
}

pub fn read_map(path: &Path) -> CliResult<(FieldMap, MapSidecar)> {
    let side_path = sidecar_path(path);
    let side_bytes = std::fs::read(&side_path).map_err(|e| CliError::io(&side_path, e))?;
    let sidecar: MapSidecar = serde_json::from_slice(&side_bytes)
        .map_err(|e| CliError::format(&side_path, FormatError::Metadata(e.to_string())))?;
    let csv_bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let map = decode_map(&csv_bytes, &sidecar).map_err(|e| CliError::format(path, e))?;
    Ok((map, sidecar))
}

/// Description stored next to a traces CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracesSidecar {
    pub width_v: usize,
    pub height_v: usize,
    pub n_frames: usize,
    pub bin_factor: usize,
    pub roi: Roi,
    pub protocol: ProtocolKind,
    pub sensing_lo_ut: f64,
    pub sensing_hi_ut: f64,
}

pub const TRACES_HEADER: [&str; 9] = ["frame", "t_ms", "row", "col", "x_um", "y_um", "b_ut", "valid", "clipped"];

/// Traces CSV: one row per (frame, virtual pixel), frame-major then row-major.
pub fn encode_traces_csv(recon: &TimeseriesRecon) -> Vec<u8> {
    let (n, h, w) = recon.fields_ut.dim();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(TRACES_HEADER).expect("in-memory write");
    for k in 0..n {
        for r in 0..h {
            for c in 0..w {
                let valid = recon.mask[[r, c]];
                let b = if valid { recon.fields_ut[[k, r, c]].to_string() } else { String::new() };
                wtr.write_record([
                    k.to_string(),
                    recon.timestamps_ms[k].to_string(),
                    r.to_string(),
                    c.to_string(),
                    recon.x_um[c].to_string(),
                    recon.y_um[r].to_string(),
                    b,
                    flag(valid).to_string(),
                    flag(recon.clipped[[k, r, c]]).to_string(),
                ])
                .expect("in-memory write");
            }
        }
    }
    wtr.into_inner().expect("in-memory flush")
}

pub fn decode_traces(csv_bytes: &[u8], sidecar: &TracesSidecar) -> Result<TimeseriesRecon, FormatError> {
    let (n, h, w) = (sidecar.n_frames, sidecar.height_v, sidecar.width_v);
    let mut rdr = csv::Reader::from_reader(csv_bytes);
    let header = rdr.headers().map_err(|e| FormatError::Map(e.to_string()))?;
    if header.iter().ne(TRACES_HEADER) {
        return Err(FormatError::Map(format!("unexpected header {header:?}")));
    }
    let mut fields = Array3::from_elem((n, h, w), f64::NAN);
    let mut clipped = Array3::from_elem((n, h, w), false);
    let mut mask = Array2::from_elem((h, w), false);
    let mut timestamps = vec![0.0; n];
    let (mut x_um, mut y_um) = (vec![0.0; w], vec![0.0; h]);
    let mut count = 0;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FormatError::Map(e.to_string()))?;
        if idx >= n * h * w {
            return Err(FormatError::Map(format!("more than {} rows", n * h * w)));
        }
        let (k, r, c) = (idx / (h * w), idx / w % h, idx % w);
        if rec[0] != k.to_string() || rec[2] != r.to_string() || rec[3] != c.to_string() {
            return Err(FormatError::Map(format!("row {idx}: indices out of order")));
        }
        timestamps[k] = parse_f64(&rec[1], "t_ms")?;
        x_um[c] = parse_f64(&rec[4], "x_um")?;
        y_um[r] = parse_f64(&rec[5], "y_um")?;
        let valid = parse_flag(&rec[7])?;
        if valid {
            fields[[k, r, c]] = parse_f64(&rec[6], "b_ut")?;
        }
        mask[[r, c]] = valid;
        clipped[[k, r, c]] = parse_flag(&rec[8])?;
        count += 1;
    }
    if count != n * h * w {
        return Err(FormatError::Map(format!("{count} rows for {n} frames of {w}x{h}")));
    }
    Ok(TimeseriesRecon {
        fields_ut: fields,
        clipped,
        mask,
        timestamps_ms: timestamps,
        bin_factor: sidecar.bin_factor,
        roi: sidecar.roi,
        x_um,
        y_um,
    })
}

pub fn read_traces(path: &Path) -> CliResult<(TimeseriesRecon, TracesSidecar)> {
    let side_path = sidecar_path(path);
    let side_bytes = std::fs::read(&side_path).map_err(|e| CliError::io(&side_path, e))?;
    let sidecar: TracesSidecar = serde_json::from_slice(&side_bytes)
        .map_err(|e| CliError::format(&side_path, FormatError::Metadata(e.to_string())))?;
    let csv_bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let recon = decode_traces(&csv_bytes, &sidecar).map_err(|e| CliError::format(path, e))?;
    Ok((recon, sidecar))
}
