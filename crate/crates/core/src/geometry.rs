//! SAR viewing geometry and line-of-sight projection.
//!
//! Convention used throughout the crate: the LOS unit vector points from the
//! ground target toward the satellite and is expressed in local
//! (east, north, up) coordinates. A positive LOS displacement therefore means
//! motion toward the satellite.
//!
//! With incidence angle θ and look azimuth α (heading + 90° for right-looking
//! sensors, heading − 90° for left-looking ones):
//!
//! ```text
//! C_x = -sin θ · sin α
//! C_y = -sin θ · cos α
//! C_z =  cos θ
//! ```

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("incidence angle {0}° outside the open interval (0, 90)")]
    Incidence(f64),
    #[error("heading angle {0}° outside [0, 360)")]
    Heading(f64),
    #[error("unknown look side `{0}` (expected `right` or `left`)")]
    LookSide(String),
}

/// Side of the flight track the antenna points to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LookSide {
    #[default]
    Right,
    Left,
}

impl fmt::Display for LookSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LookSide::Right => f.write_str("right"),
            LookSide::Left => f.write_str("left"),
        }
    }
}

impl FromStr for LookSide {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "right" | "r" => Ok(LookSide::Right),
            "left" | "l" => Ok(LookSide::Left),
            other => Err(GeometryError::LookSide(other.to_string())),
        }
    }
}

/// Target-to-satellite unit vector in (east, north, up) for the given angles.
pub fn los_unit_vector(
    incidence_deg: f64,
    heading_deg: f64,
    look_side: LookSide,
) -> Result<Vector3<f64>, GeometryError> {
    if !(incidence_deg > 0.0 && incidence_deg < 90.0) {
        return Err(GeometryError::Incidence(incidence_deg));
    }
    if !(0.0..360.0).contains(&heading_deg) {
        return Err(GeometryError::Heading(heading_deg));
    }
    let look_azimuth = match look_side {
        LookSide::Right => heading_deg + 90.0,
        LookSide::Left => heading_deg - 90.0,
    }
    .to_radians();
    let (sin_inc, cos_inc) = incidence_deg.to_radians().sin_cos();
    let (sin_az, cos_az) = look_azimuth.sin_cos();
    Ok(Vector3::new(-sin_inc * sin_az, -sin_inc * cos_az, cos_inc))
}

/// One sensor's viewing geometry together with its derived unit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGeometry {
    sensor_id: String,
    incidence_deg: f64,
    heading_deg: f64,
    look_side: LookSide,
    unit_vector: Vector3<f64>,
}

impl SensorGeometry {
    pub fn new(
        sensor_id: impl Into<String>,
        incidence_deg: f64,
        heading_deg: f64,
        look_side: LookSide,
    ) -> Result<Self, GeometryError> {
        let unit_vector = los_unit_vector(incidence_deg, heading_deg, look_side)?;
        Ok(Self {
            sensor_id: sensor_id.into(),
            incidence_deg,
            heading_deg,
            look_side,
            unit_vector,
        })
    }

    pub fn sensor_id(&self) -> &str {
        &self.sensor_id
    }

    pub fn incidence_deg(&self) -> f64 {
        self.incidence_deg
    }

    pub fn heading_deg(&self) -> f64 {
        self.heading_deg
    }

    pub fn look_side(&self) -> LookSide {
        self.look_side
    }

    /// (C_x, C_y, C_z).
    pub fn unit_vector(&self) -> Vector3<f64> {
        self.unit_vector
    }

    pub fn project(&self, displacement: &Vector3<f64>) -> f64 {
        project_to_los(self, displacement)
    }
}

/// LOS component of a 3D (east, north, up) displacement.
pub fn project_to_los(geom: &SensorGeometry, displacement: &Vector3<f64>) -> f64 {
    geom.unit_vector.dot(displacement)
}

/// Sensors keyed and ordered by id. Measurement rows are always assembled in
/// this order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorSet(Vec<SensorGeometry>);

impl SensorSet {
    /// Returns the duplicated id on failure.
    pub fn new(mut sensors: Vec<SensorGeometry>) -> Result<Self, String> {
        sensors.sort_by(|a, b| a.sensor_id.cmp(&b.sensor_id));
        if let Some(w) = sensors.windows(2).find(|w| w[0].sensor_id == w[1].sensor_id) {
            return Err(w[0].sensor_id.clone());
        }
        Ok(Self(sensors))
    }

    pub fn get(&self, sensor_id: &str) -> Option<&SensorGeometry> {
        self.0
            .binary_search_by(|g| g.sensor_id.as_str().cmp(sensor_id))
            .ok()
            .map(|i| &self.0[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SensorGeometry> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<'a> IntoIterator for &'a SensorSet {
    type Item = &'a SensorGeometry;
    type IntoIter = std::slice::Iter<'a, SensorGeometry>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}
