//! Delimited-text formats and the run configuration.
//!
//! LOS file (one per sensor):
//!
//! ```text
//! pixel_id,lon,lat,date,los_mm,var_mm2
//! px000001,-122.25,37.75,20070713,0,4
//! ```
//!
//! GNSS file:
//!
//! ```text
//! station_id,lon,lat,vx_mmyr,vy_mmyr,varx,vary,role
//! LUTZ,-121.86,37.29,-21.3,19.7,0.25,0.25,tie
//! ```
//!
//! Numbers are written with 6 significant digits.

mod config;
mod export;
mod format;
mod gnss;
mod los;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{GnssConfig, RunConfig, SensorConfig, TrajectoryFormat, ValidationConfig};
pub use export::{
    export_trajectories, write_comparison, write_grid, write_priors, write_resampled, write_validation,
    write_velocities,
};
pub use format::fmt_num;
pub use gnss::{ingest_gnss, write_gnss};
pub use los::{ingest_los, ingest_velocities, write_los, LosDataset, LosPixel};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Row { path: PathBuf, line: u64, message: String },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: &'static str },
    #[error("{path}: no data rows")]
    Empty { path: PathBuf },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io { path: path.into(), source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, err: csv::Error) -> Self {
        let path = path.into();
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(source) => IoError::Io { path, source },
            kind => IoError::Row { path, line, message: format!("{kind:?}") },
        }
    }
}

/// Column positions by header name.
pub(crate) fn column_index(
    headers: &csv::StringRecord,
    path: &std::path::Path,
    names: &[&'static str],
) -> Result<Vec<usize>, IoError> {
    names
        .iter()
        .map(|&name| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or_else(|| IoError::MissingColumn { path: path.to_path_buf(), column: name })
        })
        .collect()
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    path: &std::path::Path,
) -> Result<T, IoError> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| IoError::Row {
        path: path.to_path_buf(),
        line: record.position().map(|p| p.line()).unwrap_or(0),
        message: format!("cannot parse {name} from `{raw}`"),
    })
}

pub(crate) fn reader(path: &std::path::Path) -> Result<csv::Reader<std::fs::File>, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file))
}

pub(crate) fn writer(path: &std::path::Path) -> Result<csv::Writer<std::fs::File>, IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| IoError::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}
