//! CSV emission and the calibration-run file format.
//!
//! Every CSV starts with a header row; floats print with 17 significant
//! digits so values round-trip bit-exactly through the decimal encoding.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pnrd::{CalibrationPoint, CalibrationRun, SourceKind};

use crate::CliError;

/// Render a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// A buffered CSV writer bound to an output path.
pub struct CsvWriter {
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let file = File::create(path)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn header(&mut self, columns: &[&str]) -> Result<(), CliError> {
        self.raw_row(columns.iter().map(|c| c.to_string()))
    }

    pub fn row(&mut self, values: &[f64]) -> Result<(), CliError> {
        self.raw_row(values.iter().map(|&v| fmt_float(v)))
    }

    pub fn raw_row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<(), CliError> {
        let line = fields.into_iter().collect::<Vec<_>>().join(",");
        writeln!(self.out, "{line}").map_err(|e| CliError::Io(format!("write failed: {e}")))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out
            .flush()
            .map_err(|e| CliError::Io(format!("flush failed: {e}")))
    }
}

pub const RUN_CSV_HEADER: [&str; 12] = [
    "point",
    "mean_photons",
    "mean_count1",
    "mean_count1_se",
    "mean_count2",
    "mean_count2_se",
    "vdp",
    "vdp_se",
    "nrf",
    "nrf_se",
    "trials",
    "source",
];

/// Write a calibration run as one CSV row per grid point.
pub fn write_run_csv(path: &Path, run: &CalibrationRun) -> Result<(), CliError> {
    let mut w = CsvWriter::create(path)?;
    w.header(&RUN_CSV_HEADER)?;
    for p in run.points() {
        w.raw_row([
            p.pump_setting.to_string(),
            fmt_float(p.mean_photons),
            fmt_float(p.mean_count1),
            fmt_float(p.mean_count1_se),
            fmt_float(p.mean_count2),
            fmt_float(p.mean_count2_se),
            fmt_float(p.vdp),
            fmt_float(p.vdp_se),
            fmt_float(p.nrf),
            fmt_float(p.nrf_se),
            p.trials.to_string(),
            run.source_kind().to_string(),
        ])?;
    }
    w.finish()
}

/// Read a calibration run back from its CSV form.
pub fn read_run_csv(path: &Path) -> Result<CalibrationRun, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Usage(format!("{}: empty run file", path.display())))?;
    if header != RUN_CSV_HEADER.join(",") {
        return Err(CliError::Usage(format!(
            "{}: unexpected run header {header:?}",
            path.display()
        )));
    }
    let mut points = Vec::new();
    let mut kind: Option<SourceKind> = None;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != RUN_CSV_HEADER.len() {
            return Err(CliError::Usage(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                i + 2,
                fields.len(),
                RUN_CSV_HEADER.len()
            )));
        }
        let f = |j: usize| -> Result<f64, CliError> {
            fields[j].parse::<f64>().map_err(|_| {
                CliError::Usage(format!(
                    "{}: row {} column {} is not a number: {:?}",
                    path.display(),
                    i + 2,
                    RUN_CSV_HEADER[j],
                    fields[j]
                ))
            })
        };
        let row_kind = match fields[11] {
            "tmc" => SourceKind::Tmc,
            "twb" => SourceKind::Twb,
            "custom" => SourceKind::CustomCorrelated,
            other => {
                return Err(CliError::Usage(format!(
                    "{}: unknown source kind {other:?}",
                    path.display()
                )))
            }
        };
        if *kind.get_or_insert(row_kind) != row_kind {
            return Err(CliError::Usage(format!(
                "{}: inconsistent source kinds in run file",
                path.display()
            )));
        }
        points.push(CalibrationPoint {
            pump_setting: fields[0].parse().map_err(|_| {
                CliError::Usage(format!(
                    "{}: bad point index {:?}",
                    path.display(),
                    fields[0]
                ))
            })?,
            mean_photons: f(1)?,
            mean_count1: f(2)?,
            mean_count1_se: f(3)?,
            mean_count2: f(4)?,
            mean_count2_se: f(5)?,
            vdp: f(6)?,
            vdp_se: f(7)?,
            nrf: f(8)?,
            nrf_se: f(9)?,
            trials: fields[10].parse().map_err(|_| {
                CliError::Usage(format!(
                    "{}: bad trial count {:?}",
                    path.display(),
                    fields[10]
                ))
            })?,
        });
    }
    let kind =
        kind.ok_or_else(|| CliError::Usage(format!("{}: run file has no points", path.display())))?;
    CalibrationRun::new(kind, points).map_err(CliError::Core)
}

/// Derive a sibling output path by extending the file stem.
pub fn derived_path(path: &Path, suffix: &str) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}.{suffix}.{ext}"))
}
