//! Synthetic deformation scenes and the 3D-filter vs 2D-inversion benchmark.
//!
//! Truth per component: `trend·(t−t₁) + amp·sin(2π(t−t₁) + phase) + step·H(t − t_step)`
//! with `H(0) = 1`. The 2D baseline solves each epoch for (east, up) by
//! weighted least squares, assuming zero north motion.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{run_pixel_filter, FilterError, PixelInputs, PixelTrajectory, ProcessModel};
use crate::fixtures::parse_yyyymmdd;
use crate::geometry::{GeometryError, LookSide, SensorGeometry, SensorSet};
use crate::timegrid::{
    build_union_grid, decimal_year, interpolate_series, LosSample, LosSeries, TimeGrid, TimeGridError, VarianceMode,
};

/// The built-in three-sensor scenario.
pub const DEFAULT_SCENARIO_TOML: &str = include_str!("../scenarios/table1_default.toml");

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    TimeGrid(#[from] TimeGridError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Signal of one displacement component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentSignal {
    /// mm/yr
    pub trend: f64,
    /// mm
    pub annual_amp: f64,
    /// rad
    pub annual_phase: f64,
    /// mm
    pub step: f64,
    /// Decimal year; mid-span of the grid when unset.
    pub step_epoch: Option<f64>,
}

impl ComponentSignal {
    fn value(&self, t: f64, t_ref: f64, step_epoch: f64) -> f64 {
        let dt = t - t_ref;
        let mut v = self.trend * dt + self.annual_amp * (2.0 * std::f64::consts::PI * dt + self.annual_phase).sin();
        if self.step != 0.0 && t >= step_epoch {
            v += self.step;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthModel {
    pub east: ComponentSignal,
    pub north: ComponentSignal,
    pub up: ComponentSignal,
    /// Per-sensor LOS noise standard deviation, mm. Missing sensors are noise-free.
    pub noise_std: BTreeMap<String, f64>,
    pub seed: u64,
}

impl TruthModel {
    pub fn components(&self) -> [&ComponentSignal; 3] {
        [&self.east, &self.north, &self.up]
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<(), SynthError> {
        if let Some((id, s)) = self.noise_std.iter().find(|(_, s)| !(**s >= 0.0)) {
            return Err(SynthError::Invalid(format!("noise_std for `{id}` is {s}")));
        }
        let (lo, hi) = span(grid)?;
        for c in self.components() {
            if let Some(t) = c.step_epoch {
                if c.step != 0.0 && !(t >= lo && t <= hi) {
                    return Err(SynthError::Invalid(format!("step epoch {t} outside grid span [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    /// Displacement (east, north, up) at `t`, relative to `t_ref` = the first grid epoch.
    pub fn displacement_at(&self, t: f64, t_ref: f64, t_mid: f64) -> Vector3<f64> {
        let [e, n, u] = self.components().map(|c| c.value(t, t_ref, c.step_epoch.unwrap_or(t_mid)));
        Vector3::new(e, n, u)
    }

    pub fn noise_for(&self, sensor: &str) -> f64 {
        self.noise_std.get(sensor).copied().unwrap_or(0.0)
    }
}

fn span(grid: &TimeGrid) -> Result<(f64, f64), SynthError> {
    match (grid.epochs().first(), grid.epochs().last()) {
        (Some(&lo), Some(&hi)) => Ok((lo, hi)),
        _ => Err(SynthError::Invalid("empty grid".into())),
    }
}

/// Truth displacement at every grid epoch.
pub fn generate_truth_series(model: &TruthModel, grid: &TimeGrid) -> Vec<Vector3<f64>> {
    let Ok((lo, hi)) = span(grid) else {
        return Vec::new();
    };
    let mid = 0.5 * (lo + hi);
    grid.epochs().iter().map(|&t| model.displacement_at(t, lo, mid)).collect()
}

/// Noisy LOS observations of the truth at each sensor's own epochs.
///
/// `stream` selects an independent random stream for the same seed, so
/// pixels can be simulated in any order and still get identical noise.
pub fn forward_project(
    model: &TruthModel,
    grid: &TimeGrid,
    sensors: &SensorSet,
    acquisitions: &[(String, Vec<f64>)],
    pixel_id: &str,
    stream: u64,
) -> Result<Vec<LosSeries>, SynthError> {
    let (lo, hi) = span(grid)?;
    let mid = 0.5 * (lo + hi);
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(stream);
    let mut out = Vec::with_capacity(sensors.len());
    for geom in sensors {
        let Some((_, epochs)) = acquisitions.iter().find(|(id, _)| id == geom.sensor_id()) else {
            continue;
        };
        let std = model.noise_for(geom.sensor_id());
        let noise = Normal::new(0.0, std).map_err(|e| SynthError::Invalid(e.to_string()))?;
        let samples = epochs
            .iter()
            .map(|&t| {
                let clean = geom.project(&model.displacement_at(t, lo, mid));
                let e = if std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                LosSample { epoch: t, los_mm: clean + e, var_mm2: std * std }
            })
            .collect();
        out.push(LosSeries::new(geom.sensor_id(), pixel_id, samples)?);
    }
    Ok(out)
}

/// Epoch-wise (east, up) weighted least squares with north fixed at zero.
/// `None` where fewer than two usable rows exist or the rows are collinear.
pub fn invert_2d_epochwise(inputs: &PixelInputs, sensors: &SensorSet, epochs: usize) -> Vec<Option<[f64; 2]>> {
    (0..epochs)
        .map(|k| {
            let mut normal = Matrix2::zeros();
            let mut rhs = Vector2::zeros();
            let mut rows = 0;
            for geom in sensors {
                let Some(v) = inputs.series.iter().find(|s| s.sensor_id == geom.sensor_id()).and_then(|s| s.get(k))
                else {
                    continue;
                };
                if !(v.var_mm2 > 0.0) {
                    continue;
                }
                let c = geom.unit_vector();
                let row = Vector2::new(c.x, c.z);
                let w = 1.0 / v.var_mm2;
                normal += w * row * row.transpose();
                rhs += w * v.los_mm * row;
                rows += 1;
            }
            if rows < 2 || normal.determinant() <= 1e-12 * normal.trace().powi(2) {
                return None;
            }
            normal.lu().solve(&rhs).map(|s| [s.x, s.y])
        })
        .collect()
}

/// Running per-component error statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    pub sum_sq: [f64; 3],
    pub max_abs: [f64; 3],
    pub count: usize,
}

impl ErrorStats {
    pub fn push(&mut self, err: [f64; 3]) {
        for c in 0..3 {
            self.sum_sq[c] += err[c] * err[c];
            self.max_abs[c] = self.max_abs[c].max(err[c].abs());
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &ErrorStats) {
        for c in 0..3 {
            self.sum_sq[c] += other.sum_sq[c];
            self.max_abs[c] = self.max_abs[c].max(other.max_abs[c]);
        }
        self.count += other.count;
    }

    pub fn rmse(&self) -> [f64; 3] {
        if self.count == 0 {
            return [f64::NAN; 3];
        }
        self.sum_sq.map(|s| (s / self.count as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub epoch: f64,
    pub truth: Vector3<f64>,
    pub fused: Vector3<f64>,
    /// (east, up) of the 2D inversion, if solvable at this epoch.
    pub baseline: Option<[f64; 2]>,
}

/// 3D filter and 2D baseline errors against truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonReport {
    /// Filter, all epochs.
    pub fused: ErrorStats,
    /// Filter, restricted to epochs where the baseline is defined.
    pub fused_common: ErrorStats,
    /// Baseline (east, 0, up); the north column holds the error of assuming zero.
    pub baseline: ErrorStats,
    pub baseline_missing: usize,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn merge(&mut self, other: &ComparisonReport) {
        self.fused.merge(&other.fused);
        self.fused_common.merge(&other.fused_common);
        self.baseline.merge(&other.baseline);
        self.baseline_missing += other.baseline_missing;
    }
}

pub fn compare_runs(
    truth: &[Vector3<f64>],
    fused: &PixelTrajectory,
    baseline: &[Option<[f64; 2]>],
) -> Result<ComparisonReport, SynthError> {
    if truth.len() != fused.len() || truth.len() != baseline.len() || fused.epochs.len() != truth.len() {
        return Err(SynthError::GridMismatch(format!(
            "truth {}, fused {}, baseline {}",
            truth.len(),
            fused.len(),
            baseline.len()
        )));
    }
    let mut report = ComparisonReport::default();
    for (k, (t, b)) in truth.iter().zip(baseline).enumerate() {
        let x = fused.states[k].x;
        let err = [x.x - t.x, x.y - t.y, x.z - t.z];
        report.fused.push(err);
        match b {
            Some([e, u]) => {
                report.fused_common.push(err);
                report.baseline.push([e - t.x, -t.y, u - t.z]);
            }
            None => report.baseline_missing += 1,
        }
        report.rows.push(ComparisonRow { epoch: fused.epochs[k], truth: *t, fused: x, baseline: *b });
    }
    Ok(report)
}

/// A sensor of a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSensor {
    pub id: String,
    pub incidence_deg: f64,
    pub heading_deg: f64,
    #[serde(default)]
    pub look_side: LookSide,
    /// Acquisition dates, YYYYMMDD.
    pub dates: Vec<u32>,
    /// mm
    #[serde(default)]
    pub noise_std: f64,
}

/// A complete synthetic experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub pixels: usize,
    /// mm²/yr
    pub q_z: f64,
    #[serde(default)]
    pub variance_mode: VarianceMode,
    /// Lower bound on LOS variances handed to the estimators, mm². Lets
    /// noise-free scenarios run; the filter rejects zero variances.
    #[serde(default = "default_variance_floor")]
    pub variance_floor_mm2: f64,
    /// Variance assigned to the GNSS velocity priors, (mm/yr)².
    #[serde(default)]
    pub gnss_var: f64,
    #[serde(default = "default_center_lon")]
    pub center_lon: f64,
    #[serde(default = "default_center_lat")]
    pub center_lat: f64,
    /// Pixel spacing, degrees.
    #[serde(default = "default_spacing")]
    pub spacing_deg: f64,
    #[serde(default = "default_tie")]
    pub gnss_tie: usize,
    #[serde(default = "default_check")]
    pub gnss_check: usize,
    pub truth: Truth,
    pub sensors: Vec<ScenarioSensor>,
}

/// Truth signal of a scenario file; noise and seed live on the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Truth {
    pub east: ComponentSignal,
    pub north: ComponentSignal,
    pub up: ComponentSignal,
}

fn default_variance_floor() -> f64 {
    1e-6
}
fn default_center_lon() -> f64 {
    -122.25
}
fn default_center_lat() -> f64 {
    37.75
}
fn default_spacing() -> f64 {
    0.002
}
fn default_tie() -> usize {
    26
}
fn default_check() -> usize {
    28
}

/// Everything derived from a scenario that the estimators need.
pub struct PreparedScenario {
    pub model: TruthModel,
    pub sensors: SensorSet,
    pub grid: TimeGrid,
    pub acquisitions: Vec<(String, Vec<f64>)>,
    pub truth: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub report: ComparisonReport,
    /// Per-pixel reports in pixel order.
    pub pixels: Vec<ComparisonReport>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::Invalid(e.to_string()))
    }

    pub fn prepare(&self) -> Result<PreparedScenario, SynthError> {
        if self.sensors.is_empty() {
            return Err(SynthError::Invalid("scenario has no sensors".into()));
        }
        if !(self.q_z >= 0.0) || !(self.variance_floor_mm2 > 0.0) || !(self.gnss_var >= 0.0) {
            return Err(SynthError::Invalid("q_z, gnss_var must be >= 0 and variance_floor_mm2 > 0".into()));
        }
        let geoms = self
            .sensors
            .iter()
            .map(|s| SensorGeometry::new(&s.id, s.incidence_deg, s.heading_deg, s.look_side))
            .collect::<Result<Vec<_>, _>>()?;
        let sensors = SensorSet::new(geoms).map_err(|id| SynthError::Invalid(format!("duplicate sensor `{id}`")))?;
        let mut date_lists = Vec::new();
        for s in &self.sensors {
            let dates = s
                .dates
                .iter()
                .map(|&c| parse_yyyymmdd(c).ok_or_else(|| SynthError::Invalid(format!("sensor `{}`: bad date {c}", s.id))))
                .collect::<Result<Vec<_>, _>>()?;
            date_lists.push((s.id.clone(), dates));
        }
        let grid = build_union_grid(&date_lists)?;
        let acquisitions = date_lists
            .iter()
            .map(|(id, d)| {
                let mut t: Vec<f64> = d.iter().copied().map(decimal_year).collect();
                t.sort_by(f64::total_cmp);
                t.dedup();
                (id.clone(), t)
            })
            .collect();
        let model = TruthModel {
            east: self.truth.east,
            north: self.truth.north,
            up: self.truth.up,
            noise_std: self.sensors.iter().map(|s| (s.id.clone(), s.noise_std)).collect(),
            seed: self.seed,
        };
        model.validate(&grid)?;
        let truth = generate_truth_series(&model, &grid);
        Ok(PreparedScenario { model, sensors, grid, acquisitions, truth })
    }

    /// Exact GNSS velocity prior: the truth's horizontal trends.
    pub fn process_model(&self) -> ProcessModel {
        ProcessModel {
            velocity: [self.truth.east.trend, self.truth.north.trend],
            velocity_var: [self.gnss_var, self.gnss_var],
            q_z: self.q_z,
        }
    }

    /// Pixel location on a square lattice centered on the scene center.
    pub fn pixel_location(&self, index: usize) -> (f64, f64) {
        let side = (self.pixels as f64).sqrt().ceil().max(1.0) as usize;
        let (row, col) = (index / side, index % side);
        let half = (side as f64 - 1.0) / 2.0;
        (
            self.center_lon + (col as f64 - half) * self.spacing_deg,
            self.center_lat + (row as f64 - half) * self.spacing_deg,
        )
    }

    pub fn pixel_id(index: usize) -> String {
        format!("px{index:06}")
    }

    /// Simulate, resample, filter and invert one pixel.
    pub fn run_pixel(&self, prep: &PreparedScenario, index: usize) -> Result<ComparisonReport, SynthError> {
        let id = Self::pixel_id(index);
        let series = forward_project(&prep.model, &prep.grid, &prep.sensors, &prep.acquisitions, &id, index as u64)?;
        let inputs = self.filter_inputs(prep, &id, &series)?;
        let fused = run_pixel_filter(&inputs, &self.process_model(), &prep.sensors, &prep.grid)?;
        let baseline = invert_2d_epochwise(&inputs, &prep.sensors, prep.grid.len());
        compare_runs(&prep.truth, &fused, &baseline)
    }

    /// Resampled inputs with variances floored at `variance_floor_mm2`.
    pub fn filter_inputs(&self, prep: &PreparedScenario, pixel_id: &str, series: &[LosSeries]) -> Result<PixelInputs, SynthError> {
        let mut resampled = Vec::with_capacity(series.len());
        for s in series {
            let mut r = interpolate_series(s, &prep.grid, self.variance_mode)?;
            for v in r.values.iter_mut().flatten() {
                v.var_mm2 = v.var_mm2.max(self.variance_floor_mm2);
            }
            resampled.push(r);
        }
        Ok(PixelInputs { pixel_id: pixel_id.to_string(), series: resampled })
    }

    /// Run every pixel. Results do not depend on the worker count.
    pub fn run(&self) -> Result<ScenarioResult, SynthError> {
        let prep = self.prepare()?;
        let pixels = (0..self.pixels)
            .into_par_iter()
            .map(|i| {
                self.run_pixel(&prep, i).map(|mut r| {
                    r.rows.clear();
                    r
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut report = ComparisonReport::default();
        for p in &pixels {
            report.merge(p);
        }
        Ok(ScenarioResult { report, pixels })
    }
}

/// Acquisition lists in the scenario-file shape for the built-in data set.
pub fn table1_sensors(noise_std: f64) -> Vec<ScenarioSensor> {
    use crate::fixtures::*;
    [
        (ALOS_ASC, &ALOS_ASC_DATES[..]),
        (ENVISAT_ASC, &ENVISAT_ASC_DATES[..]),
        (ENVISAT_DES, &ENVISAT_DES_DATES[..]),
    ]
    .into_iter()
    .zip(ANGLES)
    .map(|((id, dates), (_, inc, head))| {
        ScenarioSensor {
            id: id.to_string(),
            incidence_deg: inc,
            heading_deg: head,
            look_side: LookSide::Right,
            dates: dates.to_vec(),
            noise_std,
        }
    })
    .collect()
}
