//! Dataset file parsing and writing.
//!
//! All measurement files are UTF-8 CSV with a `# key: value` comment header
//! followed by one column-header line and data rows. Angles are degrees,
//! fields tesla, frequencies GHz (MHz for echo fits), times microseconds
//! (echo) or milliseconds (CPMG). Parse failures report the file line.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::coherence::DecayTrace;
use crate::fieldcal::{EchoOrientation, EchoTrace};
use crate::fit::{DatasetKind, Plane, SpectroscopyDataset};
use crate::strain::{StrainGridPoint, StrainMapEntry, StrainTensor};
use crate::transitions::RotationMapPoint;

#[derive(Debug, Error)]
#[error("{path}:{line}: {message}")]
pub struct ParseError {
    pub path: String,
    pub line: usize,
    pub message: String,
}

impl ParseError {
    fn new(path: &str, line: usize, message: impl Into<String>) -> Self {
        Self {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}

/// The file kinds the CLI can ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    RotationMap,
    Odmr,
    Echo,
    Cpmg,
    StrainGrid,
    Pl,
}

impl FileKind {
    pub fn name(&self) -> &'static str {
        match self {
            FileKind::RotationMap => "rotation_map",
            FileKind::Odmr => "odmr",
            FileKind::Echo => "echo",
            FileKind::Cpmg => "cpmg",
            FileKind::StrainGrid => "strain_grid",
            FileKind::Pl => "pl",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            FileKind::RotationMap,
            FileKind::Odmr,
            FileKind::Echo,
            FileKind::Cpmg,
            FileKind::StrainGrid,
            FileKind::Pl,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }

    fn allowed_header_keys(&self) -> &'static [&'static str] {
        match self {
            FileKind::Odmr => &[
                "kind",
                "emitter",
                "field_magnitude_T",
                "plane",
                "b_parallel_T",
                "b_perp_T",
            ],
            FileKind::RotationMap => &[
                "kind",
                "emitter",
                "field_magnitude_T",
                "plane",
                "observable",
                "b_parallel_T",
                "b_perp_T",
            ],
            FileKind::Pl => &["kind", "emitter"],
            FileKind::Echo => &["kind", "orientation", "b_nominal_T"],
            FileKind::Cpmg => &["kind"],
            FileKind::StrainGrid => &["kind"],
        }
    }

    fn expected_columns(&self) -> &'static [&'static str] {
        match self {
            FileKind::Odmr => &["theta_deg", "qubit_GHz"],
            FileKind::RotationMap => &["theta_deg", "split_GHz"],
            FileKind::Pl => &["splitting_GHz"],
            FileKind::Echo => &["tau_us", "signal"],
            FileKind::Cpmg => &["n_pulses", "time_ms", "counts"],
            FileKind::StrainGrid => &[
                "x_um", "y_um", "eps_xx", "eps_yy", "eps_zz", "eps_xy", "eps_yz", "eps_zx",
            ],
        }
    }
}

/// A parsed dataset, typed by its file kind.
#[derive(Debug, Clone)]
pub enum TypedDataset {
    Spectroscopy(SpectroscopyDataset),
    Echo(EchoTrace),
    /// One decay trace per pulse number, ascending.
    Cpmg(Vec<DecayTrace>),
    StrainGrid(Vec<StrainGridPoint>),
}

struct RawFile {
    headers: Vec<(String, String, usize)>,
    columns: Vec<String>,
    rows: Vec<(usize, Vec<f64>)>,
}

fn read_raw(path: &str, text: &str, kind: FileKind) -> Result<RawFile, ParseError> {
    let mut headers = Vec::new();
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();

    for (index, raw_line) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if columns.is_some() {
                continue; // trailing comments are tolerated
            }
            let (key, value) = comment.split_once(':').ok_or_else(|| {
                ParseError::new(path, line_no, "header comment must be '# key: value'")
            })?;
            let key = key.trim().to_string();
            if !kind.allowed_header_keys().contains(&key.as_str()) {
                return Err(ParseError::new(
                    path,
                    line_no,
                    format!("unknown header key '{key}' for kind {}", kind.name()),
                ));
            }
            headers.push((key, value.trim().to_string(), line_no));
            continue;
        }
        if columns.is_none() {
            let got: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            let expected = kind.expected_columns();
            if got != expected {
                return Err(ParseError::new(
                    path,
                    line_no,
                    format!(
                        "column header mismatch: expected '{}', got '{}'",
                        expected.join(","),
                        line
                    ),
                ));
            }
            columns = Some(got);
            continue;
        }
        let mut values = Vec::new();
        for (col, cell) in line.split(',').enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                ParseError::new(
                    path,
                    line_no,
                    format!("column {} ('{}') is not a number", col + 1, cell.trim()),
                )
            })?;
            if !value.is_finite() {
                return Err(ParseError::new(
                    path,
                    line_no,
                    format!("column {} is not finite", col + 1),
                ));
            }
            values.push(value);
        }
        let expected = kind.expected_columns().len();
        if values.len() != expected {
            return Err(ParseError::new(
                path,
                line_no,
                format!("expected {expected} columns, got {}", values.len()),
            ));
        }
        rows.push((line_no, values));
    }

    let columns = columns
        .ok_or_else(|| ParseError::new(path, text.lines().count().max(1), "no column header"))?;
    if rows.is_empty() {
        return Err(ParseError::new(path, text.lines().count(), "no data rows"));
    }
    Ok(RawFile {
        headers,
        columns,
        rows,
    })
}

fn header<'a>(raw: &'a RawFile, key: &str) -> Option<&'a str> {
    raw.headers
        .iter()
        .find(|(k, _, _)| k == key)
        .map(|(_, v, _)| v.as_str())
}

fn required_header<'a>(
    raw: &'a RawFile,
    path: &str,
    key: &'static str,
) -> Result<&'a str, ParseError> {
    header(raw, key).ok_or_else(|| ParseError::new(path, 1, format!("missing header key '{key}'")))
}

fn header_f64(raw: &RawFile, path: &str, key: &'static str) -> Result<f64, ParseError> {
    let value = required_header(raw, path, key)?;
    value
        .parse()
        .map_err(|_| ParseError::new(path, 1, format!("header '{key}' is not a number")))
}

fn optional_header_f64(
    raw: &RawFile,
    path: &str,
    key: &'static str,
) -> Result<Option<f64>, ParseError> {
    match header(raw, key) {
        None => Ok(None),
        Some(value) => value
            .parse()
            .map(Some)
            .map_err(|_| ParseError::new(path, 1, format!("header '{key}' is not a number"))),
    }
}

fn check_kind(raw: &RawFile, path: &str, kind: FileKind) -> Result<(), ParseError> {
    let declared = required_header(raw, path, "kind")?;
    if declared != kind.name() {
        return Err(ParseError::new(
            path,
            1,
            format!(
                "file declares kind '{declared}' but was parsed as '{}'",
                kind.name()
            ),
        ));
    }
    Ok(())
}

/// Parse a dataset file of the given kind from disk.
pub fn parse_dataset(path: &Path, kind: FileKind) -> Result<TypedDataset, ParseError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ParseError::new(&display, 0, format!("cannot read file: {e}")))?;
    parse_dataset_str(&display, &text, kind)
}

/// Parse a dataset from already-loaded text (the path is for error labels).
pub fn parse_dataset_str(
    path: &str,
    text: &str,
    kind: FileKind,
) -> Result<TypedDataset, ParseError> {
    let raw = read_raw(path, text, kind)?;
    check_kind(&raw, path, kind)?;
    debug_assert_eq!(raw.columns.len(), kind.expected_columns().len());

    match kind {
        FileKind::Odmr | FileKind::RotationMap => {
            let emitter = required_header(&raw, path, "emitter")?.to_string();
            let field_magnitude = header_f64(&raw, path, "field_magnitude_T")?;
            let plane = match required_header(&raw, path, "plane")? {
                "yz" => Plane::Yz,
                "xy" => Plane::Xy,
                other => {
                    return Err(ParseError::new(
                        path,
                        1,
                        format!("plane must be 'yz' or 'xy', got '{other}'"),
                    ))
                }
            };
            let dataset_kind = if kind == FileKind::Odmr {
                DatasetKind::OdmrQubit
            } else {
                match required_header(&raw, path, "observable")? {
                    "allowed" => DatasetKind::AllowedSplit,
                    "forbidden" => DatasetKind::ForbiddenSplit,
                    other => {
                        return Err(ParseError::new(
                            path,
                            1,
                            format!("observable must be 'allowed' or 'forbidden', got '{other}'"),
                        ))
                    }
                }
            };
            let dataset = SpectroscopyDataset {
                emitter,
                kind: dataset_kind,
                points: raw.rows.iter().map(|(_, v)| (v[0], v[1])).collect(),
                field_magnitude,
                plane,
                b_parallel_cal: optional_header_f64(&raw, path, "b_parallel_T")?,
                b_perp_cal: optional_header_f64(&raw, path, "b_perp_T")?,
            };
            dataset
                .validate()
                .map_err(|e| ParseError::new(path, 1, e.to_string()))?;
            Ok(TypedDataset::Spectroscopy(dataset))
        }
        FileKind::Pl => {
            let emitter = required_header(&raw, path, "emitter")?.to_string();
            let dataset = SpectroscopyDataset {
                emitter,
                kind: DatasetKind::PlSplitting,
                points: raw.rows.iter().map(|(_, v)| (0.0, v[0])).collect(),
                field_magnitude: 0.0,
                plane: Plane::Yz,
                b_parallel_cal: None,
                b_perp_cal: None,
            };
            Ok(TypedDataset::Spectroscopy(dataset))
        }
        FileKind::Echo => {
            let orientation = match required_header(&raw, path, "orientation")? {
                "parallel" => EchoOrientation::Parallel,
                "perpendicular" => EchoOrientation::Perpendicular,
                other => {
                    return Err(ParseError::new(
                        path,
                        1,
                        format!("orientation must be 'parallel' or 'perpendicular', got '{other}'"),
                    ))
                }
            };
            let b_nominal = header_f64(&raw, path, "b_nominal_T")?;
            let points: Vec<(f64, f64)> = raw.rows.iter().map(|(_, v)| (v[0], v[1])).collect();
            let trace = EchoTrace::new(points, orientation, b_nominal)
                .map_err(|e| ParseError::new(path, 1, e.to_string()))?;
            Ok(TypedDataset::Echo(trace))
        }
        FileKind::Cpmg => {
            let mut by_n: Vec<(u32, Vec<(f64, f64)>)> = Vec::new();
            for (line_no, values) in &raw.rows {
                let n = values[0];
                if n < 1.0 || n.fract() != 0.0 || n > u32::MAX as f64 {
                    return Err(ParseError::new(
                        path,
                        *line_no,
                        format!("n_pulses must be a positive integer, got {n}"),
                    ));
                }
                let n = n as u32;
                if !n.is_power_of_two() {
                    return Err(ParseError::new(
                        path,
                        *line_no,
                        format!("CPMG pulse numbers must be powers of two, got {n}"),
                    ));
                }
                match by_n.iter_mut().find(|(k, _)| *k == n) {
                    Some((_, pts)) => pts.push((values[1], values[2])),
                    None => by_n.push((n, vec![(values[1], values[2])])),
                }
            }
            by_n.sort_by_key(|(n, _)| *n);
            let mut traces = Vec::new();
            for (n, points) in by_n {
                let trace = DecayTrace::new(n, points)
                    .map_err(|e| ParseError::new(path, 1, format!("N = {n}: {e}")))?;
                traces.push(trace);
            }
            Ok(TypedDataset::Cpmg(traces))
        }
        FileKind::StrainGrid => {
            let grid = raw
                .rows
                .iter()
                .map(|(_, v)| StrainGridPoint {
                    x_um: v[0],
                    y_um: v[1],
                    tensor: StrainTensor {
                        xx: v[2],
                        yy: v[3],
                        zz: v[4],
                        xy: v[5],
                        yz: v[6],
                        zx: v[7],
                    },
                })
                .collect();
            Ok(TypedDataset::StrainGrid(grid))
        }
    }
}

/// Serialize a spectroscopy dataset back to the CSV format.
pub fn write_spectroscopy_csv(dataset: &SpectroscopyDataset) -> String {
    let mut out = String::new();
    match dataset.kind {
        DatasetKind::PlSplitting => {
            writeln!(out, "# kind: pl").unwrap();
            writeln!(out, "# emitter: {}", dataset.emitter).unwrap();
            writeln!(out, "splitting_GHz").unwrap();
            for &(_, value) in &dataset.points {
                writeln!(out, "{value}").unwrap();
            }
        }
        DatasetKind::OdmrQubit => {
            writeln!(out, "# kind: odmr").unwrap();
            write_map_headers(&mut out, dataset);
            writeln!(out, "theta_deg,qubit_GHz").unwrap();
            for &(theta, value) in &dataset.points {
                writeln!(out, "{theta},{value}").unwrap();
            }
        }
        DatasetKind::AllowedSplit | DatasetKind::ForbiddenSplit => {
            writeln!(out, "# kind: rotation_map").unwrap();
            write_map_headers(&mut out, dataset);
            let observable = if dataset.kind == DatasetKind::AllowedSplit {
                "allowed"
            } else {
                "forbidden"
            };
            writeln!(out, "# observable: {observable}").unwrap();
            writeln!(out, "theta_deg,split_GHz").unwrap();
            for &(theta, value) in &dataset.points {
                writeln!(out, "{theta},{value}").unwrap();
            }
        }
    }
    out
}

fn write_map_headers(out: &mut String, dataset: &SpectroscopyDataset) {
    writeln!(out, "# emitter: {}", dataset.emitter).unwrap();
    writeln!(out, "# field_magnitude_T: {}", dataset.field_magnitude).unwrap();
    let plane = match dataset.plane {
        Plane::Yz => "yz",
        Plane::Xy => "xy",
    };
    writeln!(out, "# plane: {plane}").unwrap();
    if let Some(b) = dataset.b_parallel_cal {
        writeln!(out, "# b_parallel_T: {b}").unwrap();
    }
    if let Some(b) = dataset.b_perp_cal {
        writeln!(out, "# b_perp_T: {b}").unwrap();
    }
}

pub fn write_echo_csv(trace: &EchoTrace) -> String {
    let mut out = String::new();
    writeln!(out, "# kind: echo").unwrap();
    let orientation = match trace.orientation {
        EchoOrientation::Parallel => "parallel",
        EchoOrientation::Perpendicular => "perpendicular",
    };
    writeln!(out, "# orientation: {orientation}").unwrap();
    writeln!(out, "# b_nominal_T: {}", trace.b_nominal).unwrap();
    writeln!(out, "tau_us,signal").unwrap();
    for &(tau, signal) in &trace.points {
        writeln!(out, "{tau},{signal}").unwrap();
    }
    out
}

pub fn write_cpmg_csv(traces: &[DecayTrace]) -> String {
    let mut out = String::new();
    writeln!(out, "# kind: cpmg").unwrap();
    writeln!(out, "n_pulses,time_ms,counts").unwrap();
    for trace in traces {
        for &(time, counts) in &trace.points {
            writeln!(out, "{},{time},{counts}", trace.n_pulses).unwrap();
        }
    }
    out
}

pub fn write_strain_grid_csv(grid: &[StrainGridPoint]) -> String {
    let mut out = String::new();
    writeln!(out, "# kind: strain_grid").unwrap();
    writeln!(out, "x_um,y_um,eps_xx,eps_yy,eps_zz,eps_xy,eps_yz,eps_zx").unwrap();
    for p in grid {
        let t = p.tensor;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.x_um, p.y_um, t.xx, t.yy, t.zz, t.xy, t.yz, t.zx
        )
        .unwrap();
    }
    out
}

/// Rotation-map output rows: one line per grid angle.
pub fn write_rotation_map_csv(points: &[RotationMapPoint]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "theta_deg,phi_deg,qubit_GHz,allowed_split_GHz,forbidden_split_GHz"
    )
    .unwrap();
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.theta,
            p.phi,
            p.observables.qubit,
            p.observables.allowed_split,
            p.observables.forbidden_split
        )
        .unwrap();
    }
    out
}

/// Strain-map output rows: one line per grid point per orientation.
pub fn write_strain_map_csv(entries: &[StrainMapEntry]) -> String {
    let mut out = String::new();
    writeln!(out, "x_um,y_um,orientation,gs_splitting_GHz,zpl_shift_GHz").unwrap();
    for e in entries {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.x_um, e.y_um, e.orientation, e.gs_splitting_ghz, e.zpl_shift_ghz
        )
        .unwrap();
    }
    out
}
