use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::TrajectoryFormat;
use super::los::{velocity_header, write_los};
use super::{fmt_num, writer, IoError};
use crate::filter::PixelTrajectory;
use crate::gnss_field::{PixelLocation, PixelVelocityPrior};
use crate::synth::ComparisonReport;
use crate::timegrid::{ResampledSeries, TimeGrid};
use crate::validation::{PixelVelocity, ValidationReport};

const COMPONENTS: [&str; 3] = ["dx", "dy", "dz"];

fn epoch_label(grid: &TimeGrid, k: usize) -> String {
    match grid.dates() {
        Some(d) => d[k].format("%Y%m%d").to_string(),
        None => format!("e{k:04}"),
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| IoError::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| IoError::csv(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Write filtered trajectories into `out_dir`; returns the files written.
///
/// `long-table` writes `trajectories.csv` with one row per pixel and epoch:
/// displacement (mm) and the upper triangle of P (mm²). `per-epoch-raster`
/// writes `trajectories/<epoch>_<component>.csv` with one row per pixel.
pub fn export_trajectories(
    out_dir: &Path,
    trajectories: &[PixelTrajectory],
    locations: &[PixelLocation],
    grid: &TimeGrid,
    format: TrajectoryFormat,
) -> Result<Vec<PathBuf>, IoError> {
    for t in trajectories {
        if t.len() != grid.len() {
            return Err(IoError::Invalid {
                path: out_dir.to_path_buf(),
                message: format!("pixel {}: {} states for {} epochs", t.pixel_id, t.len(), grid.len()),
            });
        }
    }
    match format {
        TrajectoryFormat::LongTable => {
            let path = out_dir.join("trajectories.csv");
            let header = [
                "pixel_id", "date", "epoch", "dx", "dy", "dz", "p_xx", "p_xy", "p_xz", "p_yy", "p_yz", "p_zz",
            ];
            let rows = trajectories.iter().flat_map(|t| {
                t.states.iter().enumerate().map(move |(k, s)| {
                    let p = &s.p;
                    let mut row = vec![t.pixel_id.clone(), epoch_label(grid, k), fmt_num(grid.epochs()[k])];
                    row.extend(s.x.iter().map(|&v| fmt_num(v)));
                    row.extend([p[(0, 0)], p[(0, 1)], p[(0, 2)], p[(1, 1)], p[(1, 2)], p[(2, 2)]].map(fmt_num));
                    row
                })
            });
            write_rows(&path, &header, rows)?;
            Ok(vec![path])
        }
        TrajectoryFormat::PerEpochRaster => {
            let loc: BTreeMap<&str, &PixelLocation> = locations.iter().map(|l| (l.pixel_id.as_str(), l)).collect();
            let mut located = Vec::with_capacity(trajectories.len());
            for t in trajectories {
                let l = loc.get(t.pixel_id.as_str()).ok_or_else(|| IoError::Invalid {
                    path: out_dir.to_path_buf(),
                    message: format!("no location for pixel {}", t.pixel_id),
                })?;
                located.push((t, *l));
            }
            let dir = out_dir.join("trajectories");
            let mut files = Vec::with_capacity(3 * grid.len());
            for k in 0..grid.len() {
                let label = epoch_label(grid, k);
                for (c, name) in COMPONENTS.iter().enumerate() {
                    let path = dir.join(format!("{label}_{name}.csv"));
                    let rows = located.iter().map(|(t, l)| {
                        vec![t.pixel_id.clone(), fmt_num(l.lon), fmt_num(l.lat), fmt_num(t.states[k].x[c])]
                    });
                    write_rows(&path, &["pixel_id", "lon", "lat", "value"], rows)?;
                    files.push(path);
                }
            }
            Ok(files)
        }
    }
}

pub fn write_velocities(path: &Path, velocities: &[PixelVelocity]) -> Result<(), IoError> {
    let rows = velocities.iter().map(|v| {
        let mut row = vec![v.pixel_id.clone(), fmt_num(v.lon), fmt_num(v.lat)];
        row.extend(v.velocity.iter().chain(v.std.iter()).map(|&x| fmt_num(x)));
        row
    });
    write_rows(path, &velocity_header(), rows)
}

pub fn write_priors(path: &Path, priors: &[PixelVelocityPrior]) -> Result<(), IoError> {
    let header = ["pixel_id", "lon", "lat", "vx", "vy", "var_x", "var_y", "nearest_station", "distance_km"];
    let rows = priors.iter().map(|p| {
        vec![
            p.pixel_id.clone(),
            fmt_num(p.lon),
            fmt_num(p.lat),
            fmt_num(p.vx),
            fmt_num(p.vy),
            fmt_num(p.var_x),
            fmt_num(p.var_y),
            p.nearest_station_id.clone(),
            fmt_num(p.distance_km),
        ]
    });
    write_rows(path, &header, rows)
}

/// Grid epochs with a 0/1 availability column per sensor.
pub fn write_grid(path: &Path, grid: &TimeGrid) -> Result<(), IoError> {
    let mut header = vec!["index", "date", "epoch"];
    header.extend(grid.sensors().iter().map(String::as_str));
    let avail: Vec<&[bool]> = grid.sensors().iter().filter_map(|s| grid.availability(s)).collect();
    let rows = (0..grid.len()).map(|k| {
        let mut row = vec![k.to_string(), epoch_label(grid, k), fmt_num(grid.epochs()[k])];
        row.extend(avail.iter().map(|a| if a[k] { "1" } else { "0" }.to_string()));
        row
    });
    write_rows(path, &header, rows)
}

/// Resampled series of one sensor in the LOS format, grid epochs only.
pub fn write_resampled(
    path: &Path,
    series: &[ResampledSeries],
    locations: &BTreeMap<String, (f64, f64)>,
    grid: &TimeGrid,
) -> Result<(), IoError> {
    let invalid = |message: String| IoError::Invalid { path: path.to_path_buf(), message };
    let dates = grid.dates().ok_or_else(|| invalid("grid has no calendar dates".into()))?;
    let mut rows = Vec::new();
    for s in series {
        let &(lon, lat) = locations.get(&s.pixel_id).ok_or_else(|| invalid(format!("no location for pixel {}", s.pixel_id)))?;
        for (k, v) in s.values.iter().enumerate() {
            if let Some(v) = v {
                rows.push((s.pixel_id.as_str(), lon, lat, dates[k], v.los_mm, v.var_mm2));
            }
        }
    }
    write_los(path, rows)
}

/// `validation_stations.csv`, `validation_histogram.csv` and `validation_summary.txt` in `out_dir`.
pub fn write_validation(out_dir: &Path, report: &ValidationReport, bin_width: f64) -> Result<Vec<PathBuf>, IoError> {
    let stations = out_dir.join("validation_stations.csv");
    let header = ["station_id", "n_pixels", "est_vx", "est_vy", "ref_vx", "ref_vy", "diff_vx", "diff_vy"];
    let rows = report.stations.iter().map(|m| {
        let d = m.difference();
        vec![
            m.station_id.clone(),
            m.n_pixels.to_string(),
            fmt_num(m.estimated[0]),
            fmt_num(m.estimated[1]),
            fmt_num(m.reference[0]),
            fmt_num(m.reference[1]),
            fmt_num(d[0]),
            fmt_num(d[1]),
        ]
    });
    write_rows(&stations, &header, rows)?;

    let histogram = out_dir.join("validation_histogram.csv");
    let bins = report
        .histogram(bin_width)
        .map_err(|e| IoError::Invalid { path: histogram.clone(), message: e.to_string() })?;
    let rows = bins
        .iter()
        .map(|b| vec![fmt_num(b.lower), fmt_num(b.upper), b.count_x.to_string(), b.count_y.to_string()]);
    write_rows(&histogram, &["lower", "upper", "count_vx", "count_vy"], rows)?;

    let summary = out_dir.join("validation_summary.txt");
    std::fs::write(&summary, report.summary()).map_err(|e| IoError::io(&summary, e))?;
    Ok(vec![stations, histogram, summary])
}

/// RMSE and maximum error per method and component.
pub fn write_comparison(path: &Path, report: &ComparisonReport) -> Result<(), IoError> {
    let methods = [("fused", &report.fused), ("fused_common", &report.fused_common), ("baseline_2d", &report.baseline)];
    let rows = methods.iter().flat_map(|(name, stats)| {
        let rmse = stats.rmse();
        (0..3).map(move |c| {
            vec![
                name.to_string(),
                COMPONENTS[c].to_string(),
                fmt_num(rmse[c]),
                fmt_num(stats.max_abs[c]),
                stats.count.to_string(),
            ]
        })
    });
    write_rows(path, &["method", "component", "rmse_mm", "max_abs_mm", "epochs"], rows)
}
