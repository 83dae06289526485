use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::Vector3;

use super::{column_index, fmt_num, parse_field, reader, writer, IoError};
use crate::fixtures::parse_yyyymmdd;
use crate::timegrid::{decimal_year, LosSample, LosSeries, TimeGridError};
use crate::validation::PixelVelocity;

const LOS_COLUMNS: [&str; 6] = ["pixel_id", "lon", "lat", "date", "los_mm", "var_mm2"];

#[derive(Debug, Clone, PartialEq)]
pub struct LosPixel {
    pub lon: f64,
    pub lat: f64,
    pub series: LosSeries,
}

/// One sensor's LOS file.
#[derive(Debug, Clone, PartialEq)]
pub struct LosDataset {
    pub sensor_id: String,
    /// Keyed by pixel id.
    pub pixels: BTreeMap<String, LosPixel>,
    /// Every acquisition date appearing in the file.
    pub dates: Vec<NaiveDate>,
}

struct PixelRows {
    lon: f64,
    lat: f64,
    samples: Vec<LosSample>,
    last_line: u64,
}

/// Read a LOS file. Each pixel's rows must appear in increasing date order.
pub fn ingest_los(path: &Path, sensor_id: &str) -> Result<LosDataset, IoError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| IoError::csv(path, e))?.clone();
    let idx = column_index(&headers, path, &LOS_COLUMNS)?;
    let mut pixels: BTreeMap<String, PixelRows> = BTreeMap::new();
    let mut dates = BTreeSet::new();

    for record in rdr.records() {
        let record = record.map_err(|e| IoError::csv(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| IoError::Row { path: path.to_path_buf(), line, message };

        let pixel_id: String = parse_field(&record, idx[0], "pixel_id", path)?;
        let lon: f64 = parse_field(&record, idx[1], "lon", path)?;
        let lat: f64 = parse_field(&record, idx[2], "lat", path)?;
        let code: u32 = parse_field(&record, idx[3], "date", path)?;
        let date = parse_yyyymmdd(code).ok_or_else(|| row_err(format!("invalid date {code}")))?;
        let los_mm: f64 = parse_field(&record, idx[4], "los_mm", path)?;
        let var_mm2: f64 = parse_field(&record, idx[5], "var_mm2", path)?;
        if pixel_id.is_empty() {
            return Err(row_err("empty pixel_id".into()));
        }
        if !(lon.is_finite() && lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
            return Err(row_err(format!("invalid location ({lon}, {lat})")));
        }
        if !los_mm.is_finite() {
            return Err(row_err(format!("non-finite los_mm {los_mm}")));
        }
        if !(var_mm2 >= 0.0) || !var_mm2.is_finite() {
            return Err(row_err(format!("negative or invalid variance {var_mm2}")));
        }

        let epoch = decimal_year(date);
        let entry = pixels.entry(pixel_id.clone()).or_insert(PixelRows { lon, lat, samples: Vec::new(), last_line: 0 });
        if let Some(prev) = entry.samples.last() {
            if epoch <= prev.epoch {
                return Err(row_err(format!(
                    "pixel {pixel_id}: date {code} not after the previous row (line {})",
                    entry.last_line
                )));
            }
        }
        entry.samples.push(LosSample { epoch, los_mm, var_mm2 });
        entry.last_line = line;
        dates.insert(date);
    }
    if pixels.is_empty() {
        return Err(IoError::Empty { path: path.to_path_buf() });
    }
    let pixels = pixels
        .into_iter()
        .map(|(id, rows)| {
            let series = LosSeries::new(sensor_id, id.clone(), rows.samples).map_err(|e: TimeGridError| {
                IoError::Invalid { path: path.to_path_buf(), message: format!("pixel {id}: {e}") }
            })?;
            Ok((id, LosPixel { lon: rows.lon, lat: rows.lat, series }))
        })
        .collect::<Result<_, IoError>>()?;
    Ok(LosDataset { sensor_id: sensor_id.to_string(), pixels, dates: dates.into_iter().collect() })
}

/// Write rows `(pixel_id, lon, lat, date, los_mm, var_mm2)` in the LOS format.
pub fn write_los<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (&'a str, f64, f64, NaiveDate, f64, f64)>,
) -> Result<(), IoError> {
    let mut w = writer(path)?;
    let csv_err = |e| IoError::csv(path, e);
    w.write_record(LOS_COLUMNS).map_err(csv_err)?;
    for (id, lon, lat, date, los, var) in rows {
        w.write_record([
            id.to_string(),
            fmt_num(lon),
            fmt_num(lat),
            date.format("%Y%m%d").to_string(),
            fmt_num(los),
            fmt_num(var),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

const VELOCITY_COLUMNS: [&str; 9] = ["pixel_id", "lon", "lat", "vx", "vy", "vz", "std_x", "std_y", "std_z"];

/// Read a velocity map as written by the `fuse` command.
pub fn ingest_velocities(path: &Path) -> Result<Vec<PixelVelocity>, IoError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| IoError::csv(path, e))?.clone();
    let idx = column_index(&headers, path, &VELOCITY_COLUMNS)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IoError::csv(path, e))?;
        let f = |i: usize| parse_field::<f64>(&record, idx[i], VELOCITY_COLUMNS[i], path);
        out.push(PixelVelocity {
            pixel_id: parse_field(&record, idx[0], "pixel_id", path)?,
            lon: f(1)?,
            lat: f(2)?,
            velocity: Vector3::new(f(3)?, f(4)?, f(5)?),
            std: Vector3::new(f(6)?, f(7)?, f(8)?),
        });
    }
    if out.is_empty() {
        return Err(IoError::Empty { path: path.to_path_buf() });
    }
    Ok(out)
}

pub(crate) fn velocity_header() -> [&'static str; 9] {
    VELOCITY_COLUMNS
}
