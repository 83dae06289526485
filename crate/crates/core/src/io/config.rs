use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{LookSide, SensorGeometry, SensorSet};
use crate::gnss_field::{PriorParams, Variogram};
use crate::timegrid::VarianceMode;
use crate::validation::DEFAULT_RADIUS_M;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryFormat {
    #[default]
    LongTable,
    PerEpochRaster,
}

impl fmt::Display for TrajectoryFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrajectoryFormat::LongTable => "long-table",
            TrajectoryFormat::PerEpochRaster => "per-epoch-raster",
        })
    }
}

impl FromStr for TrajectoryFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "long-table" => Ok(TrajectoryFormat::LongTable),
            "per-epoch-raster" => Ok(TrajectoryFormat::PerEpochRaster),
            other => Err(format!("unknown trajectory format `{other}` (expected long-table or per-epoch-raster)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub id: String,
    pub incidence_deg: f64,
    pub heading_deg: f64,
    #[serde(default)]
    pub look_side: LookSide,
    pub los_file: PathBuf,
}

/// GNSS input. Roles come from the file's `role` column unless explicit
/// lists or a random split are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnssConfig {
    pub file: PathBuf,
    /// Station ids used as ties; everything else becomes a check station.
    #[serde(default)]
    pub tie: Option<Vec<String>>,
    /// Station ids used as checks; everything else becomes a tie station.
    #[serde(default)]
    pub check: Option<Vec<String>>,
    /// Fraction of stations drawn at random (from `seed`) as checks.
    #[serde(default)]
    pub random_check_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    /// Trajectories are referenced to the pixels around this station.
    #[serde(default)]
    pub reference_station: Option<String>,
    #[serde(default = "default_radius")]
    pub radius_m: f64,
    /// mm/yr
    #[serde(default = "default_bin")]
    pub histogram_bin: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { reference_station: None, radius_m: DEFAULT_RADIUS_M, histogram_bin: default_bin() }
    }
}

fn default_radius() -> f64 {
    DEFAULT_RADIUS_M
}
fn default_bin() -> f64 {
    1.0
}
fn default_scale() -> f64 {
    10.0
}
fn default_q_z() -> f64 {
    1.0
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Run configuration file.
///
/// ```toml
/// output_dir = "out"
/// seed = 1
/// q_z = 1.0
///
/// [[sensors]]
/// id = "envisat_des"
/// incidence_deg = 23.0
/// heading_deg = 193.0
/// los_file = "envisat_des.csv"
///
/// [gnss]
/// file = "gnss.csv"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub variance_mode: VarianceMode,
    /// km
    #[serde(default = "default_scale")]
    pub scale_km: f64,
    /// mm²/yr
    #[serde(default = "default_q_z")]
    pub q_z: f64,
    #[serde(default)]
    pub trajectory_format: TrajectoryFormat,
    pub sensors: Vec<SensorConfig>,
    pub gnss: Option<GnssConfig>,
    #[serde(default)]
    pub variogram: Variogram,
    #[serde(default)]
    pub validation: ValidationConfig,
}

impl RunConfig {
    /// Parse a config file; relative paths are resolved against its directory.
    pub fn from_file(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|message| IoError::Invalid { path: path.to_path_buf(), message })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        for s in &mut self.sensors {
            join(&mut s.los_file);
        }
        if let Some(g) = &mut self.gnss {
            join(&mut g.file);
        }
    }

    /// Check ranges and that every input file exists.
    pub fn validate(&self) -> Result<(), String> {
        if self.sensors.is_empty() {
            return Err("at least one sensor is required".into());
        }
        self.sensor_set()?;
        for s in &self.sensors {
            if !s.los_file.is_file() {
                return Err(format!("sensor `{}`: LOS file {} not found", s.id, s.los_file.display()));
            }
        }
        if !(self.q_z >= 0.0) || !self.q_z.is_finite() {
            return Err(format!("q_z must be >= 0, got {}", self.q_z));
        }
        if !(self.scale_km > 0.0) || !self.scale_km.is_finite() {
            return Err(format!("scale_km must be > 0, got {}", self.scale_km));
        }
        self.variogram.validate().map_err(|e| e.to_string())?;
        let v = &self.validation;
        if !(v.radius_m > 0.0) {
            return Err(format!("validation.radius_m must be > 0, got {}", v.radius_m));
        }
        if !(v.histogram_bin > 0.0) {
            return Err(format!("validation.histogram_bin must be > 0, got {}", v.histogram_bin));
        }
        if let Some(g) = &self.gnss {
            if !g.file.is_file() {
                return Err(format!("GNSS file {} not found", g.file.display()));
            }
            let chosen = [g.tie.is_some(), g.check.is_some(), g.random_check_fraction.is_some()];
            if chosen.iter().filter(|&&c| c).count() > 1 {
                return Err("gnss: give at most one of tie, check, random_check_fraction".into());
            }
            if let Some(f) = g.random_check_fraction {
                if !(0.0..1.0).contains(&f) {
                    return Err(format!("gnss.random_check_fraction must be in [0, 1), got {f}"));
                }
            }
        } else if v.reference_station.is_some() {
            return Err("validation.reference_station requires a [gnss] section".into());
        }
        Ok(())
    }

    pub fn sensor_set(&self) -> Result<SensorSet, String> {
        let geoms = self
            .sensors
            .iter()
            .map(|s| {
                SensorGeometry::new(&s.id, s.incidence_deg, s.heading_deg, s.look_side)
                    .map_err(|e| format!("sensor `{}`: {e}", s.id))
            })
            .collect::<Result<Vec<_>, _>>()?;
        SensorSet::new(geoms).map_err(|id| format!("duplicate sensor id `{id}`"))
    }

    pub fn prior_params(&self) -> PriorParams {
        PriorParams { variogram: self.variogram, scale_km: self.scale_km }
    }
}
