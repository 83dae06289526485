//! Check-station validation of fused velocities and re-referencing of
//! trajectories to a station.

use std::fmt::Write as _;

use nalgebra::Vector3;
use thiserror::Error;

use crate::filter::PixelTrajectory;
use crate::gnss_field::{haversine_km, GnssStation, PixelLocation, StationRole};

pub const DEFAULT_RADIUS_M: f64 = 200.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("radius must be positive, got {0} m")]
    InvalidRadius(f64),
    #[error("no pixels within {radius_m} m of the reference point")]
    EmptyReference { radius_m: f64 },
    #[error("trajectory {pixel} has {got} epochs, expected {expected}")]
    LengthMismatch { pixel: String, expected: usize, got: usize },
    #[error("histogram bin width must be positive, got {0}")]
    InvalidBinWidth(f64),
}

fn distance_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    1000.0 * haversine_km(lon1, lat1, lon2, lat2)
}

/// Indices of pixels within `radius_m` of a point.
pub fn select_pixels_near(pixels: &[PixelLocation], lon: f64, lat: f64, radius_m: f64) -> Result<Vec<usize>, ValidationError> {
    if !(radius_m > 0.0) {
        return Err(ValidationError::InvalidRadius(radius_m));
    }
    Ok(pixels
        .iter()
        .enumerate()
        .filter(|(_, p)| distance_m(p.lon, p.lat, lon, lat) <= radius_m)
        .map(|(i, _)| i)
        .collect())
}

/// Subtract the mean trajectory of the selected pixels from every trajectory.
/// Covariances are left unchanged.
pub fn reference_to_station(
    trajectories: &[PixelTrajectory],
    selection: &[usize],
) -> Result<Vec<PixelTrajectory>, ValidationError> {
    let Some(&first) = selection.first() else {
        return Err(ValidationError::EmptyReference { radius_m: f64::NAN });
    };
    let m = trajectories[first].len();
    for t in trajectories {
        if t.len() != m {
            return Err(ValidationError::LengthMismatch { pixel: t.pixel_id.clone(), expected: m, got: t.len() });
        }
    }
    let n = selection.len() as f64;
    let reference: Vec<Vector3<f64>> = (0..m)
        .map(|k| selection.iter().map(|&i| trajectories[i].states[k].x).sum::<Vector3<f64>>() / n)
        .collect();
    Ok(trajectories
        .iter()
        .map(|t| {
            let mut out = t.clone();
            for (s, r) in out.states.iter_mut().zip(&reference) {
                s.x -= r;
            }
            out
        })
        .collect())
}

/// Velocity estimate of one pixel, mm/yr.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelVelocity {
    pub pixel_id: String,
    pub lon: f64,
    pub lat: f64,
    pub velocity: Vector3<f64>,
    pub std: Vector3<f64>,
}

/// Unweighted mean velocity of pixels within `radius_m`; `None` if there are none.
pub fn average_pixels_near_station(
    pixels: &[PixelVelocity],
    lon: f64,
    lat: f64,
    radius_m: f64,
) -> Result<Option<(Vector3<f64>, usize)>, ValidationError> {
    if !(radius_m > 0.0) {
        return Err(ValidationError::InvalidRadius(radius_m));
    }
    let (sum, n) = pixels
        .iter()
        .filter(|p| distance_m(p.lon, p.lat, lon, lat) <= radius_m)
        .fold((Vector3::zeros(), 0usize), |(s, n), p| (s + p.velocity, n + 1));
    Ok((n > 0).then(|| (sum / n as f64, n)))
}

/// Estimated vs reference horizontal velocity at one station.
#[derive(Debug, Clone, PartialEq)]
pub struct StationMatch {
    pub station_id: String,
    /// (v_x, v_y) from the fused velocity map.
    pub estimated: [f64; 2],
    /// (v_x, v_y) measured by the station.
    pub reference: [f64; 2],
    pub n_pixels: usize,
}

impl StationMatch {
    pub fn difference(&self) -> [f64; 2] {
        [self.estimated[0] - self.reference[0], self.estimated[1] - self.reference[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count_x: usize,
    pub count_y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Sorted by station id.
    pub stations: Vec<StationMatch>,
    /// Stations with no pixel inside the radius.
    pub excluded: Vec<String>,
    pub radius_m: f64,
    /// Mean difference (x, y); `None` without matches.
    pub mean: Option<[f64; 2]>,
    /// Sample standard deviation (n − 1); `None` with fewer than 2 matches.
    pub std: Option<[f64; 2]>,
}

impl ValidationReport {
    pub fn count(&self) -> usize {
        self.stations.len()
    }

    pub fn histogram(&self, bin_width: f64) -> Result<Vec<HistogramBin>, ValidationError> {
        if !(bin_width > 0.0) {
            return Err(ValidationError::InvalidBinWidth(bin_width));
        }
        let diffs: Vec<[f64; 2]> = self.stations.iter().map(StationMatch::difference).collect();
        if diffs.is_empty() {
            return Ok(Vec::new());
        }
        let lo = diffs.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let hi = diffs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let first = (lo / bin_width).floor() as i64;
        let last = (hi / bin_width).floor() as i64;
        let mut bins: Vec<HistogramBin> = (first..=last)
            .map(|b| HistogramBin {
                lower: b as f64 * bin_width,
                upper: (b + 1) as f64 * bin_width,
                count_x: 0,
                count_y: 0,
            })
            .collect();
        for d in &diffs {
            bins[((d[0] / bin_width).floor() as i64 - first) as usize].count_x += 1;
            bins[((d[1] / bin_width).floor() as i64 - first) as usize].count_y += 1;
        }
        Ok(bins)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "check stations matched: {}", self.count());
        let _ = writeln!(s, "stations excluded (no pixels within {} m): {}", self.radius_m, self.excluded.len());
        for id in &self.excluded {
            let _ = writeln!(s, "  excluded: {id}");
        }
        match self.mean {
            Some([x, y]) => {
                let _ = writeln!(s, "mean difference  v_x: {x:.3} mm/yr  v_y: {y:.3} mm/yr");
            }
            None => s.push_str("mean difference  undefined\n"),
        }
        match self.std {
            Some([x, y]) => {
                let _ = writeln!(s, "std of difference  v_x: {x:.3} mm/yr  v_y: {y:.3} mm/yr");
            }
            None => s.push_str("std of difference  undefined (fewer than 2 stations)\n"),
        }
        s
    }
}

/// Mean and sample standard deviation of the estimated-minus-reference differences.
pub fn difference_stats(matches: &[StationMatch], excluded: &[String], radius_m: f64) -> ValidationReport {
    let mut stations = matches.to_vec();
    stations.sort_by(|a, b| a.station_id.cmp(&b.station_id));
    let mut excluded = excluded.to_vec();
    excluded.sort();

    let n = stations.len();
    let diffs: Vec<[f64; 2]> = stations.iter().map(StationMatch::difference).collect();
    let mean = (n > 0).then(|| {
        let s = diffs.iter().fold([0.0; 2], |a, d| [a[0] + d[0], a[1] + d[1]]);
        [s[0] / n as f64, s[1] / n as f64]
    });
    let std = match mean {
        Some(m) if n >= 2 => {
            let ss = diffs.iter().fold([0.0; 2], |a, d| [a[0] + (d[0] - m[0]).powi(2), a[1] + (d[1] - m[1]).powi(2)]);
            Some([(ss[0] / (n - 1) as f64).sqrt(), (ss[1] / (n - 1) as f64).sqrt()])
        }
        _ => None,
    };
    ValidationReport { stations, excluded, radius_m, mean, std }
}

/// Compare the velocity map against every `check` station.
pub fn validate_check_stations(
    pixels: &[PixelVelocity],
    stations: &[GnssStation],
    radius_m: f64,
) -> Result<ValidationReport, ValidationError> {
    let mut matches = Vec::new();
    let mut excluded = Vec::new();
    for s in stations.iter().filter(|s| s.role == StationRole::Check) {
        match average_pixels_near_station(pixels, s.lon, s.lat, radius_m)? {
            Some((v, n)) => matches.push(StationMatch {
                station_id: s.station_id.clone(),
                estimated: [v.x, v.y],
                reference: [s.vx, s.vy],
                n_pixels: n,
            }),
            None => excluded.push(s.station_id.clone()),
        }
    }
    Ok(difference_stats(&matches, &excluded, radius_m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::FilterState;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    fn traj(id: &str, xs: &[f64]) -> PixelTrajectory {
        PixelTrajectory {
            pixel_id: id.into(),
            epochs: (0..xs.len()).map(|k| k as f64).collect(),
            states: xs
                .iter()
                .map(|&v| FilterState { x: Vector3::new(v, 2.0 * v, -v), p: Matrix3::identity() })
                .collect(),
        }
    }

    fn pv(id: &str, lon: f64, lat: f64, vx: f64) -> PixelVelocity {
        PixelVelocity { pixel_id: id.into(), lon, lat, velocity: Vector3::new(vx, 0.0, 0.0), std: Vector3::zeros() }
    }

    fn m(id: &str, est: [f64; 2], reference: [f64; 2]) -> StationMatch {
        StationMatch { station_id: id.into(), estimated: est, reference, n_pixels: 1 }
    }

    #[test]
    fn reference_examples() {
        let f = traj("f", &[0.0, 1.0, 3.0]);
        let g = traj("g", &[0.0, 4.0, 4.0]);
        let out = reference_to_station(&[f.clone(), g.clone()], &[0]).unwrap();
        assert!(out[0].displacements().all(|x| x == Vector3::zeros()));
        let expected: Vec<f64> = vec![0.0, 3.0, 1.0];
        assert_eq!(out[1].displacements().map(|x| x.x).collect::<Vec<_>>(), expected);

        let twice = reference_to_station(&out, &[0]).unwrap();
        assert_eq!(twice, out);

        assert!(matches!(reference_to_station(&[f], &[]), Err(ValidationError::EmptyReference { .. })));
    }

    #[test]
    fn averaging_examples() {
        let px = vec![pv("a", -122.0, 37.0, 2.0), pv("b", -122.0005, 37.0, 4.0), pv("c", -121.9, 37.0, 100.0)];
        let (v, n) = average_pixels_near_station(&px[..1], -122.0, 37.0, 200.0).unwrap().unwrap();
        assert_eq!((v.x, n), (2.0, 1));
        let (v, n) = average_pixels_near_station(&px, -122.0, 37.0, 200.0).unwrap().unwrap();
        assert_eq!((v.x, n), (3.0, 2));
        assert_eq!(average_pixels_near_station(&px, -120.0, 37.0, 200.0).unwrap(), None);
        assert!(average_pixels_near_station(&px, -120.0, 37.0, 0.0).is_err());
    }

    #[test]
    fn stats_examples() {
        let r = difference_stats(&[m("a", [1.0, 2.0], [1.0, 2.0]), m("b", [3.0, 0.0], [3.0, 0.0])], &[], 200.0);
        assert_eq!(r.std, Some([0.0, 0.0]));
        assert_eq!(r.mean, Some([0.0, 0.0]));

        let r = difference_stats(&[m("a", [1.0, 0.0], [0.0, 0.0]), m("b", [-1.0, 0.0], [0.0, 0.0])], &[], 200.0);
        assert_eq!(r.mean.unwrap()[0], 0.0);
        assert!((r.std.unwrap()[0] - 2f64.sqrt()).abs() < 1e-12);

        let r = difference_stats(&[m("a", [1.0, 0.0], [0.0, 0.0])], &["z".into()], 200.0);
        assert_eq!(r.count(), 1);
        assert_eq!(r.std, None);
        assert_eq!(r.excluded, vec!["z".to_string()]);
        assert!(r.summary().contains("undefined"));
    }

    #[test]
    fn histogram_counts_everything() {
        let r = difference_stats(
            &[m("a", [0.5, -1.5], [0.0, 0.0]), m("b", [2.2, 0.1], [0.0, 0.0]), m("c", [-0.4, 0.9], [0.0, 0.0])],
            &[],
            200.0,
        );
        let h = r.histogram(1.0).unwrap();
        assert_eq!(h.iter().map(|b| b.count_x).sum::<usize>(), 3);
        assert_eq!(h.iter().map(|b| b.count_y).sum::<usize>(), 3);
        assert_eq!(h.first().unwrap().lower, -2.0);
        assert_eq!(h.last().unwrap().upper, 3.0);
        assert!(r.histogram(0.0).is_err());
    }

    #[test]
    fn check_stations_only() {
        let px = vec![pv("a", -122.0, 37.0, 5.0)];
        let station = |id: &str, role| GnssStation {
            station_id: id.into(),
            lon: -122.0,
            lat: 37.0,
            vx: 4.0,
            vy: 0.0,
            var_x: 1.0,
            var_y: 1.0,
            role,
        };
        let r = validate_check_stations(&px, &[station("T", StationRole::Tie), station("C", StationRole::Check)], 200.0)
            .unwrap();
        assert_eq!(r.count(), 1);
        assert_eq!(r.stations[0].difference(), [1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn stats_invariant_under_ordering(diffs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..30), seed in any::<u64>()) {
            let ms: Vec<StationMatch> = diffs.iter().enumerate().map(|(i, &(x, y))| m(&format!("S{i:03}"), [x, y], [0.0, 0.0])).collect();
            let mut shuffled = ms.clone();
            // deterministic permutation
            let n = shuffled.len();
            for i in 0..n {
                let j = (seed as usize).wrapping_mul(i + 7) % n;
                shuffled.swap(i, j);
            }
            prop_assert_eq!(difference_stats(&ms, &[], 200.0), difference_stats(&shuffled, &[], 200.0));
        }

        #[test]
        fn referencing_preserves_differences(a in prop::collection::vec(-50.0f64..50.0, 5), b in prop::collection::vec(-50.0f64..50.0, 5), c in prop::collection::vec(-50.0f64..50.0, 5)) {
            let trajs = vec![traj("a", &a), traj("b", &b), traj("c", &c)];
            let out = reference_to_station(&trajs, &[0, 2]).unwrap();
            for k in 0..5 {
                let before = trajs[1].states[k].x - trajs[0].states[k].x;
                let after = out[1].states[k].x - out[0].states[k].x;
                prop_assert!((before - after).amax() <= 1e-12);
            }
        }
    }
}
