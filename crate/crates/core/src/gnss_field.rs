//! GNSS horizontal velocities interpolated onto pixels.
//!
//! Velocities come from ordinary kriging over the tie stations. The variance
//! attached to each pixel prior is the nearest tie station's variance,
//! inflated with distance as `σ² (1 + D/S)²`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnssError {
    #[error("no tie stations available")]
    NoTieStations,
    #[error("empty station set")]
    NoStations,
    #[error("scaling distance S must be positive, got {0}")]
    InvalidScale(f64),
    #[error("distance must be non-negative, got {0}")]
    InvalidDistance(f64),
    #[error("station variance must be non-negative, got {0}")]
    InvalidVariance(f64),
    #[error("invalid variogram: {0}")]
    InvalidVariogram(String),
    #[error("unknown station role `{0}` (expected `tie` or `check`)")]
    UnknownRole(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StationRole {
    Tie,
    Check,
}

impl fmt::Display for StationRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StationRole::Tie => "tie",
            StationRole::Check => "check",
        })
    }
}

impl FromStr for StationRole {
    type Err = GnssError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tie" => Ok(StationRole::Tie),
            "check" => Ok(StationRole::Check),
            other => Err(GnssError::UnknownRole(other.to_string())),
        }
    }
}

/// A GNSS station with horizontal velocity (mm/yr) and its variances.
#[derive(Debug, Clone, PartialEq)]
pub struct GnssStation {
    pub station_id: String,
    pub lon: f64,
    pub lat: f64,
    pub vx: f64,
    pub vy: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub role: StationRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelLocation {
    pub pixel_id: String,
    pub lon: f64,
    pub lat: f64,
}

/// Great-circle distance in km.
pub fn haversine_km(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (lon2 - lon1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramModel {
    #[default]
    Exponential,
}

/// `γ(d) = nugget + sill (1 − exp(−d / range))` for d > 0, `γ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Variogram {
    pub model: VariogramModel,
    pub range_km: f64,
    pub sill: f64,
    pub nugget: f64,
}

impl Default for Variogram {
    fn default() -> Self {
        Self { model: VariogramModel::Exponential, range_km: 30.0, sill: 1.0, nugget: 0.0 }
    }
}

impl Variogram {
    pub fn validate(&self) -> Result<(), GnssError> {
        if !(self.range_km > 0.0) || !self.range_km.is_finite() {
            return Err(GnssError::InvalidVariogram(format!("range_km = {}", self.range_km)));
        }
        if !(self.sill >= 0.0 && self.nugget >= 0.0) || self.sill + self.nugget <= 0.0 {
            return Err(GnssError::InvalidVariogram(format!(
                "sill = {}, nugget = {}",
                self.sill, self.nugget
            )));
        }
        Ok(())
    }

    pub fn gamma(&self, d_km: f64) -> f64 {
        if d_km <= 0.0 {
            return 0.0;
        }
        match self.model {
            VariogramModel::Exponential => self.nugget + self.sill * (1.0 - (-d_km / self.range_km).exp()),
        }
    }
}

/// `σ² (1 + D/S)²`
pub fn inflate_variance(station_var: f64, distance_km: f64, scale_km: f64) -> Result<f64, GnssError> {
    if !(scale_km > 0.0) {
        return Err(GnssError::InvalidScale(scale_km));
    }
    if !(distance_km >= 0.0) {
        return Err(GnssError::InvalidDistance(distance_km));
    }
    if !(station_var >= 0.0) {
        return Err(GnssError::InvalidVariance(station_var));
    }
    let factor = 1.0 + distance_km / scale_km;
    Ok(station_var * factor * factor)
}

/// Closest station to a point; equidistant stations resolve to the smaller id.
pub fn nearest_station<'a>(
    lon: f64,
    lat: f64,
    stations: &'a [GnssStation],
) -> Result<(&'a GnssStation, f64), GnssError> {
    stations
        .iter()
        .map(|s| (s, haversine_km(lon, lat, s.lon, s.lat)))
        .min_by(|(a, da), (b, db)| da.total_cmp(db).then_with(|| a.station_id.cmp(&b.station_id)))
        .ok_or(GnssError::NoStations)
}

/// Station id and distance (km) of the closest station.
pub fn nearest_station_distance(lon: f64, lat: f64, stations: &[GnssStation]) -> Result<(String, f64), GnssError> {
    nearest_station(lon, lat, stations).map(|(s, d)| (s.station_id.clone(), d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigedVelocity {
    pub vx: f64,
    pub vy: f64,
    pub weight_sum: f64,
    /// Set when the kriging system could not be solved and the nearest
    /// station's value was used instead.
    pub fallback: bool,
}

/// Ordinary kriging over a fixed station set. The left-hand side of the
/// system is factorized once and reused for every target point.
pub struct OrdinaryKriging<'a> {
    stations: &'a [GnssStation],
    variogram: Variogram,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl<'a> OrdinaryKriging<'a> {
    pub fn new(stations: &'a [GnssStation], variogram: Variogram) -> Result<Self, GnssError> {
        if stations.is_empty() {
            return Err(GnssError::NoTieStations);
        }
        variogram.validate()?;
        let n = stations.len();
        let mut lhs = DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (&stations[i], &stations[j]);
                let g = variogram.gamma(haversine_km(a.lon, a.lat, b.lon, b.lat));
                lhs[(i, j)] = g;
                lhs[(j, i)] = g;
            }
            lhs[(i, n)] = 1.0;
            lhs[(n, i)] = 1.0;
        }
        let lu = lhs.lu();
        let lu = lu.is_invertible().then_some(lu);
        Ok(Self { stations, variogram, lu })
    }

    /// Kriging weights at a point, or `None` if the system is singular.
    pub fn weights(&self, lon: f64, lat: f64) -> Option<DVector<f64>> {
        let lu = self.lu.as_ref()?;
        let n = self.stations.len();
        let mut rhs = DVector::<f64>::zeros(n + 1);
        for (i, s) in self.stations.iter().enumerate() {
            rhs[i] = self.variogram.gamma(haversine_km(lon, lat, s.lon, s.lat));
        }
        rhs[n] = 1.0;
        let sol = lu.solve(&rhs)?;
        let w = sol.rows(0, n).into_owned();
        let sum = w.sum();
        (w.iter().all(|x| x.is_finite()) && (sum - 1.0).abs() <= 1e-6).then_some(w)
    }

    pub fn estimate(&self, lon: f64, lat: f64) -> KrigedVelocity {
        match self.weights(lon, lat) {
            Some(w) => {
                let (vx, vy) = w
                    .iter()
                    .zip(self.stations)
                    .fold((0.0, 0.0), |(x, y), (wi, s)| (x + wi * s.vx, y + wi * s.vy));
                KrigedVelocity { vx, vy, weight_sum: w.sum(), fallback: false }
            }
            None => {
                let (s, _) = nearest_station(lon, lat, self.stations).expect("non-empty station set");
                KrigedVelocity { vx: s.vx, vy: s.vy, weight_sum: 1.0, fallback: true }
            }
        }
    }
}

/// Per-pixel ordinary-kriging estimates from the tie stations.
pub fn krige_velocities(
    tie_stations: &[GnssStation],
    pixels: &[PixelLocation],
    variogram: Variogram,
) -> Result<Vec<KrigedVelocity>, GnssError> {
    let krig = OrdinaryKriging::new(tie_stations, variogram)?;
    Ok(pixels.par_iter().map(|p| krig.estimate(p.lon, p.lat)).collect())
}

/// GNSS velocity prior for one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelVelocityPrior {
    pub pixel_id: String,
    pub lon: f64,
    pub lat: f64,
    pub vx: f64,
    pub vy: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub nearest_station_id: String,
    pub distance_km: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PriorOutcome {
    pub priors: Vec<PixelVelocityPrior>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub variogram: Variogram,
    pub scale_km: f64,
}

impl Default for PriorParams {
    fn default() -> Self {
        Self { variogram: Variogram::default(), scale_km: 10.0 }
    }
}

/// Velocity priors for every pixel. Only stations with the `tie` role are used.
pub fn build_priors(
    stations: &[GnssStation],
    pixels: &[PixelLocation],
    params: &PriorParams,
) -> Result<PriorOutcome, GnssError> {
    if !(params.scale_km > 0.0) {
        return Err(GnssError::InvalidScale(params.scale_km));
    }
    let tie: Vec<GnssStation> = stations.iter().filter(|s| s.role == StationRole::Tie).cloned().collect();
    let krig = OrdinaryKriging::new(&tie, params.variogram)?;
    let results: Vec<(PixelVelocityPrior, bool)> = pixels
        .par_iter()
        .map(|p| {
            let est = krig.estimate(p.lon, p.lat);
            let (nearest, d) = nearest_station(p.lon, p.lat, &tie)?;
            let prior = PixelVelocityPrior {
                pixel_id: p.pixel_id.clone(),
                lon: p.lon,
                lat: p.lat,
                vx: est.vx,
                vy: est.vy,
                var_x: inflate_variance(nearest.var_x, d, params.scale_km)?,
                var_y: inflate_variance(nearest.var_y, d, params.scale_km)?,
                nearest_station_id: nearest.station_id.clone(),
                distance_km: d,
            };
            Ok((prior, est.fallback))
        })
        .collect::<Result<_, GnssError>>()?;

    let mut out = PriorOutcome::default();
    for (prior, fallback) in results {
        if fallback {
            out.warnings.push(format!(
                "pixel {}: singular kriging system, using nearest station {}",
                prior.pixel_id, prior.nearest_station_id
            ));
        }
        out.priors.push(prior);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn station(id: &str, lon: f64, lat: f64, vx: f64, vy: f64, role: StationRole) -> GnssStation {
        GnssStation { station_id: id.into(), lon, lat, vx, vy, var_x: 1.0, var_y: 2.0, role }
    }

    fn pixel(id: &str, lon: f64, lat: f64) -> PixelLocation {
        PixelLocation { pixel_id: id.into(), lon, lat }
    }

    #[test]
    fn inflation_examples() {
        assert_eq!(inflate_variance(4.0, 0.0, 10.0).unwrap(), 4.0);
        assert_eq!(inflate_variance(4.0, 10.0, 10.0).unwrap(), 16.0);
        assert_eq!(inflate_variance(1.0, 20.0, 10.0).unwrap(), 9.0);
        assert_eq!(inflate_variance(1.0, 1.0, 0.0), Err(GnssError::InvalidScale(0.0)));
        assert_eq!(inflate_variance(1.0, 1.0, -2.0), Err(GnssError::InvalidScale(-2.0)));
    }

    #[test]
    fn haversine_tenth_degree_north() {
        // R · Δφ for a pure meridional offset
        let expected = EARTH_RADIUS_KM * 0.1f64.to_radians();
        let d = haversine_km(-122.0, 37.0, -122.0, 37.1);
        assert!((d - expected).abs() < 1e-9);
        assert!((d - 11.12).abs() < 0.01);
    }

    #[test]
    fn nearest_station_cases() {
        let stations = vec![
            station("B", -122.0, 37.0, 0.0, 0.0, StationRole::Tie),
            station("A", -122.2, 37.0, 0.0, 0.0, StationRole::Tie),
        ];
        assert_eq!(nearest_station_distance(-122.0, 37.0, &stations).unwrap(), ("B".into(), 0.0));
        // mirror-image stations: equidistant, smaller id wins
        let mirrored = vec![
            station("B", 0.1, 37.0, 0.0, 0.0, StationRole::Tie),
            station("A", -0.1, 37.0, 0.0, 0.0, StationRole::Tie),
        ];
        let (id, _) = nearest_station_distance(0.0, 37.0, &mirrored).unwrap();
        assert_eq!(id, "A");
        assert_eq!(nearest_station_distance(0.0, 0.0, &[]), Err(GnssError::NoStations));
    }

    #[test]
    fn single_station_everywhere() {
        let st = vec![station("A", -122.0, 37.0, 10.0, -5.0, StationRole::Tie)];
        let px = vec![pixel("p1", -122.3, 37.4), pixel("p2", -121.0, 36.0)];
        for v in krige_velocities(&st, &px, Variogram::default()).unwrap() {
            assert!((v.vx - 10.0).abs() < 1e-12 && (v.vy + 5.0).abs() < 1e-12);
            assert!(!v.fallback);
        }
    }

    #[test]
    fn exact_at_station() {
        let st = vec![
            station("A", -122.0, 37.0, 1.0, 2.0, StationRole::Tie),
            station("B", -122.3, 37.2, 5.0, -1.0, StationRole::Tie),
            station("C", -121.8, 37.5, -3.0, 4.0, StationRole::Tie),
        ];
        let v = krige_velocities(&st, &[pixel("p", -122.3, 37.2)], Variogram::default()).unwrap();
        assert!((v[0].vx - 5.0).abs() < 1e-9 && (v[0].vy + 1.0).abs() < 1e-9);
    }

    #[test]
    fn square_center_gets_equal_weights() {
        let v = 7.5;
        let st = vec![
            station("A", -122.1, 36.9, v, v, StationRole::Tie),
            station("B", -121.9, 36.9, v, v, StationRole::Tie),
            station("C", -122.1, 37.1, v, v, StationRole::Tie),
            station("D", -121.9, 37.1, v, v, StationRole::Tie),
        ];
        let krig = OrdinaryKriging::new(&st, Variogram::default()).unwrap();
        let est = krig.estimate(-122.0, 37.0);
        assert!((est.vx - v).abs() < 1e-9);

        // On a sphere the "square" is slightly trapezoidal, so weights are
        // only near 0.25; on an equator-symmetric square they are exact.
        let sym = vec![
            station("A", -0.1, -0.1, 0.0, 0.0, StationRole::Tie),
            station("B", 0.1, -0.1, 0.0, 0.0, StationRole::Tie),
            station("C", -0.1, 0.1, 0.0, 0.0, StationRole::Tie),
            station("D", 0.1, 0.1, 0.0, 0.0, StationRole::Tie),
        ];
        let w = OrdinaryKriging::new(&sym, Variogram::default()).unwrap().weights(0.0, 0.0).unwrap();
        for wi in w.iter() {
            assert!((wi - 0.25).abs() < 1e-9, "{w}");
        }
    }

    #[test]
    fn duplicate_stations_fall_back_to_nearest() {
        let st = vec![
            station("A", -122.0, 37.0, 1.0, 1.0, StationRole::Tie),
            station("B", -122.0, 37.0, 3.0, 3.0, StationRole::Tie),
        ];
        let out = build_priors(&st, &[pixel("p", -122.01, 37.0)], &PriorParams::default()).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.priors[0].nearest_station_id, "A");
        assert_eq!(out.priors[0].vx, 1.0);
    }

    #[test]
    fn no_tie_stations_rejected() {
        let st = vec![station("A", -122.0, 37.0, 1.0, 1.0, StationRole::Check)];
        assert_eq!(
            build_priors(&st, &[pixel("p", -122.0, 37.0)], &PriorParams::default()).unwrap_err(),
            GnssError::NoTieStations
        );
    }

    #[test]
    fn prior_variance_inflated_from_nearest() {
        let st = vec![station("A", -122.0, 37.0, 1.0, 1.0, StationRole::Tie)];
        let params = PriorParams { scale_km: 10.0, ..Default::default() };
        let out = build_priors(&st, &[pixel("p", -122.0, 37.1)], &params).unwrap();
        let p = &out.priors[0];
        let f = (1.0 + p.distance_km / 10.0).powi(2);
        assert!((p.var_x - f).abs() < 1e-12);
        assert!((p.var_y - 2.0 * f).abs() < 1e-12);
    }

    fn stations_strategy() -> impl Strategy<Value = Vec<GnssStation>> {
        prop::collection::vec((-122.5f64..-121.5, 37.0f64..38.0, -20.0f64..20.0, -20.0f64..20.0, any::<bool>()), 1..12)
            .prop_map(|v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (lon, lat, vx, vy, tie))| {
                        let role = if tie || i == 0 { StationRole::Tie } else { StationRole::Check };
                        station(&format!("S{i:02}"), lon, lat, vx, vy, role)
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(st in stations_strategy(), lon in -122.6f64..-121.4, lat in 36.9f64..38.1) {
            let krig = OrdinaryKriging::new(&st, Variogram::default()).unwrap();
            if let Some(w) = krig.weights(lon, lat) {
                prop_assert!((w.sum() - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn constant_field_reproduced(st in stations_strategy(), lon in -122.6f64..-121.4, lat in 36.9f64..38.1) {
            let st: Vec<_> = st.into_iter().map(|s| GnssStation { vx: 4.0, vy: -2.5, ..s }).collect();
            let est = OrdinaryKriging::new(&st, Variogram::default()).unwrap().estimate(lon, lat);
            prop_assert!((est.vx - 4.0).abs() <= 1e-9 && (est.vy + 2.5).abs() <= 1e-9);
        }

        #[test]
        fn check_stations_ignored(st in stations_strategy(), lon in -122.6f64..-121.4, lat in 36.9f64..38.1) {
            let px = vec![pixel("p", lon, lat)];
            let all = build_priors(&st, &px, &PriorParams::default()).unwrap();
            let tie_only: Vec<_> = st.iter().filter(|s| s.role == StationRole::Tie).cloned().collect();
            let only = build_priors(&tie_only, &px, &PriorParams::default()).unwrap();
            prop_assert_eq!(all.priors, only.priors);
        }

        #[test]
        fn inflation_monotone(var in 0.0f64..100.0, d1 in 0.0f64..200.0, d2 in 0.0f64..200.0, s in 0.1f64..50.0) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let a = inflate_variance(var, lo, s).unwrap();
            let b = inflate_variance(var, hi, s).unwrap();
            prop_assert!(b >= a);
            prop_assert!(a >= var);
        }
    }
}
