use std::collections::BTreeSet;
use std::path::Path;

use super::{column_index, fmt_num, parse_field, reader, writer, IoError};
use crate::gnss_field::{GnssStation, StationRole};

const GNSS_COLUMNS: [&str; 8] = ["station_id", "lon", "lat", "vx_mmyr", "vy_mmyr", "varx", "vary", "role"];

/// Read a GNSS station table. Station ids must be unique.
pub fn ingest_gnss(path: &Path) -> Result<Vec<GnssStation>, IoError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| IoError::csv(path, e))?.clone();
    let idx = column_index(&headers, path, &GNSS_COLUMNS)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IoError::csv(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| IoError::Row { path: path.to_path_buf(), line, message };
        let f = |i: usize| parse_field::<f64>(&record, idx[i], GNSS_COLUMNS[i], path);

        let station_id: String = parse_field(&record, idx[0], "station_id", path)?;
        if station_id.is_empty() {
            return Err(row_err("empty station_id".into()));
        }
        if !seen.insert(station_id.clone()) {
            return Err(row_err(format!("duplicate station id `{station_id}`")));
        }
        let role_raw = record.get(idx[7]).unwrap_or("");
        let role: StationRole = role_raw.parse().map_err(|e| row_err(format!("{e}")))?;
        let station = GnssStation {
            station_id,
            lon: f(1)?,
            lat: f(2)?,
            vx: f(3)?,
            vy: f(4)?,
            var_x: f(5)?,
            var_y: f(6)?,
            role,
        };
        if !(station.var_x >= 0.0 && station.var_y >= 0.0) {
            return Err(row_err(format!("negative variance ({}, {})", station.var_x, station.var_y)));
        }
        if ![station.lon, station.lat, station.vx, station.vy].iter().all(|v| v.is_finite()) {
            return Err(row_err("non-finite value".into()));
        }
        out.push(station);
    }
    if out.is_empty() {
        return Err(IoError::Empty { path: path.to_path_buf() });
    }
    Ok(out)
}

pub fn write_gnss(path: &Path, stations: &[GnssStation]) -> Result<(), IoError> {
    let mut w = writer(path)?;
    let csv_err = |e| IoError::csv(path, e);
    w.write_record(GNSS_COLUMNS).map_err(csv_err)?;
    for s in stations {
        w.write_record([
            s.station_id.clone(),
            fmt_num(s.lon),
            fmt_num(s.lat),
            fmt_num(s.vx),
            fmt_num(s.vy),
            fmt_num(s.var_x),
            fmt_num(s.var_y),
            s.role.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "station_id,lon,lat,vx_mmyr,vy_mmyr,varx,vary,role\n";

    #[test]
    fn tie_and_check_counts() {
        let mut text = HEADER.to_string();
        for i in 0..54 {
            let role = if i < 26 { "tie" } else { "check" };
            text += &format!("S{i:03},-122.{i:02},37.5,1.5,-2,0.25,0.36,{role}\n");
        }
        let st = ingest_gnss(file(&text).path()).unwrap();
        assert_eq!(st.len(), 54);
        assert_eq!(st.iter().filter(|s| s.role == StationRole::Tie).count(), 26);
        assert_eq!(st.iter().filter(|s| s.role == StationRole::Check).count(), 28);
        assert_eq!(st[0].var_y, 0.36);
    }

    #[test]
    fn unknown_role_and_duplicates() {
        let err = ingest_gnss(file(&format!("{HEADER}A,0,0,1,1,1,1,anchor\n")).path()).unwrap_err();
        assert!(err.to_string().contains("anchor"));
        let err = ingest_gnss(file(&format!("{HEADER}A,0,0,1,1,1,1,tie\nA,1,1,1,1,1,1,check\n")).path()).unwrap_err();
        assert!(matches!(err, IoError::Row { line: 3, .. }));
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn round_trip() {
        let st = vec![GnssStation {
            station_id: "LUTZ".into(),
            lon: -121.865,
            lat: 37.2865,
            vx: -21.3,
            vy: 19.7,
            var_x: 0.25,
            var_y: 0.3,
            role: StationRole::Check,
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        write_gnss(&p, &st).unwrap();
        assert_eq!(ingest_gnss(&p).unwrap(), st);
    }
}
