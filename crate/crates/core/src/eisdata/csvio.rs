//! `eis.csv` and `capacity.csv` readers and writers.
//!
//! Floats are written with Rust's shortest round-trip rendering, so a
//! read-write-read cycle reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{CapacityRecord, EisCurve, EisDataError, CURVE_POINTS};

pub const EIS_HEADER: [&str; 7] = [
    "cell_id",
    "stage",
    "cycle",
    "point_index",
    "freq_hz",
    "re_z_ohm",
    "im_z_ohm",
];
pub const CAPACITY_HEADER: [&str; 3] = ["cell_id", "cycle", "capacity_mah"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsvOptions {
    /// Required number of points per curve; `None` accepts any complete curve.
    pub points_per_curve: Option<usize>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            points_per_curve: Some(CURVE_POINTS),
        }
    }
}

fn open(path: &Path) -> Result<File, EisDataError> {
    File::open(path).map_err(|source| EisDataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<File, EisDataError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| EisDataError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    File::create(path).map_err(|source| EisDataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_eis_csv(path: impl AsRef<Path>) -> Result<Vec<EisCurve>, EisDataError> {
    read_eis_csv(open(path.as_ref())?, CsvOptions::default())
}

pub fn load_capacity_csv(path: impl AsRef<Path>) -> Result<Vec<CapacityRecord>, EisDataError> {
    read_capacity_csv(open(path.as_ref())?)
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), EisDataError> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(EisDataError::Header {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    row: u64,
) -> Result<T, EisDataError> {
    let raw = record.get(idx).ok_or_else(|| EisDataError::Row {
        row,
        message: format!("missing column `{name}`"),
    })?;
    raw.trim().parse().map_err(|_| EisDataError::Row {
        row,
        message: format!("`{name}` is not a valid number: `{raw}`"),
    })
}

struct Point {
    row: u64,
    freq: f64,
    re: f64,
    im: f64,
}

/// Groups rows into curves keyed by `(cell_id, stage, cycle)`; within a curve
/// `point_index` runs from 0 with strictly falling frequency.
pub fn read_eis_csv<R: Read>(reader: R, opts: CsvOptions) -> Result<Vec<EisCurve>, EisDataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &EIS_HEADER)?;

    let mut groups: BTreeMap<(String, u8, u32), BTreeMap<usize, Point>> = BTreeMap::new();
    for result in rdr.records() {
        let record = result?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != EIS_HEADER.len() {
            return Err(EisDataError::Row {
                row,
                message: format!("expected {} columns, found {}", EIS_HEADER.len(), record.len()),
            });
        }
        let cell_id = record[0].trim().to_string();
        if cell_id.is_empty() {
            return Err(EisDataError::Row {
                row,
                message: "empty cell_id".into(),
            });
        }
        let stage: u8 = field(&record, 1, "stage", row)?;
        let cycle: u32 = field(&record, 2, "cycle", row)?;
        let point_index: usize = field(&record, 3, "point_index", row)?;
        let freq: f64 = field(&record, 4, "freq_hz", row)?;
        let re: f64 = field(&record, 5, "re_z_ohm", row)?;
        let im: f64 = field(&record, 6, "im_z_ohm", row)?;
        if !(freq.is_finite() && re.is_finite() && im.is_finite()) || freq <= 0.0 {
            return Err(EisDataError::Row {
                row,
                message: "frequency must be positive and impedance finite".into(),
            });
        }
        if !(1..=9).contains(&stage) {
            return Err(EisDataError::Row {
                row,
                message: format!("stage {stage} outside 1..=9"),
            });
        }
        let points = groups.entry((cell_id.clone(), stage, cycle)).or_default();
        if points.contains_key(&point_index) {
            return Err(EisDataError::Row {
                row,
                message: format!(
                    "duplicate point ({cell_id}, {stage}, {cycle}, {point_index})"
                ),
            });
        }
        points.insert(point_index, Point { row, freq, re, im });
    }

    let mut curves = Vec::with_capacity(groups.len());
    for ((cell_id, stage, cycle), points) in groups {
        let key = format!("({cell_id}, stage {stage}, cycle {cycle})");
        let n = points.len();
        if let Some(&(last, _)) = points.iter().next_back().as_ref() {
            if *last != n - 1 {
                return Err(EisDataError::Incomplete {
                    key,
                    message: format!("point_index values are not contiguous from 0 ({n} rows, max index {last})"),
                });
            }
        }
        if let Some(expected) = opts.points_per_curve {
            if n != expected {
                return Err(EisDataError::Incomplete {
                    key,
                    message: format!("{n} points, expected {expected}"),
                });
            }
        }
        let pts: Vec<&Point> = points.values().collect();
        if let Some(bad) = pts.windows(2).find(|w| w[1].freq >= w[0].freq) {
            return Err(EisDataError::Row {
                row: bad[1].row,
                message: format!("frequency not strictly descending within {key}"),
            });
        }
        curves.push(EisCurve::new(
            cell_id,
            stage,
            cycle,
            pts.iter().map(|p| p.freq).collect(),
            pts.iter().map(|p| p.re).collect(),
            pts.iter().map(|p| p.im).collect(),
        )?);
    }
    Ok(curves)
}

pub fn read_capacity_csv<R: Read>(reader: R) -> Result<Vec<CapacityRecord>, EisDataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &CAPACITY_HEADER)?;
    let mut seen = BTreeMap::new();
    for result in rdr.records() {
        let record = result?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != CAPACITY_HEADER.len() {
            return Err(EisDataError::Row {
                row,
                message: format!(
                    "expected {} columns, found {}",
                    CAPACITY_HEADER.len(),
                    record.len()
                ),
            });
        }
        let cell_id = record[0].trim().to_string();
        let cycle: u32 = field(&record, 1, "cycle", row)?;
        let capacity_mah: f64 = field(&record, 2, "capacity_mah", row)?;
        if !(capacity_mah > 0.0 && capacity_mah.is_finite()) {
            return Err(EisDataError::Row {
                row,
                message: format!("capacity must be positive, got {capacity_mah}"),
            });
        }
        if seen.insert((cell_id.clone(), cycle), capacity_mah).is_some() {
            return Err(EisDataError::Row {
                row,
                message: format!("duplicate capacity record ({cell_id}, {cycle})"),
            });
        }
    }
    Ok(seen
        .into_iter()
        .map(|((cell_id, cycle), capacity_mah)| CapacityRecord {
            cell_id,
            cycle,
            capacity_mah,
        })
        .collect())
}

/// Writes curves sorted by `(cell_id, stage, cycle, point_index)`.
pub fn write_eis_csv<W: Write>(writer: W, curves: &[EisCurve]) -> Result<(), EisDataError> {
    let mut sorted: Vec<&EisCurve> = curves.iter().collect();
    sorted.sort_by(|a, b| (&a.cell_id, a.stage, a.cycle).cmp(&(&b.cell_id, b.stage, b.cycle)));
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(EIS_HEADER)?;
    for c in sorted {
        let stage = c.stage.to_string();
        let cycle = c.cycle.to_string();
        for i in 0..c.len() {
            wtr.write_record([
                c.cell_id.as_str(),
                &stage,
                &cycle,
                &i.to_string(),
                &c.freq_hz[i].to_string(),
                &c.re_z_ohm[i].to_string(),
                &c.im_z_ohm[i].to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|source| EisDataError::Io {
        path: "<eis csv>".into(),
        source,
    })
}

pub fn write_capacity_csv<W: Write>(
    writer: W,
    records: &[CapacityRecord],
) -> Result<(), EisDataError> {
    let mut sorted: Vec<&CapacityRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.cell_id, a.cycle).cmp(&(&b.cell_id, b.cycle)));
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CAPACITY_HEADER)?;
    for r in sorted {
        wtr.write_record([
            r.cell_id.as_str(),
            &r.cycle.to_string(),
            &r.capacity_mah.to_string(),
        ])?;
    }
    wtr.flush().map_err(|source| EisDataError::Io {
        path: "<capacity csv>".into(),
        source,
    })
}

pub(crate) fn save_eis_csv(path: &Path, curves: &[EisCurve]) -> Result<(), EisDataError> {
    write_eis_csv(create(path)?, curves)
}

pub(crate) fn save_capacity_csv(
    path: &Path,
    records: &[CapacityRecord],
) -> Result<(), EisDataError> {
    write_capacity_csv(create(path)?, records)
}
