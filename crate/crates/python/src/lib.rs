use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fusion3d::filter::{self, EpochSystem, FilterError, FilterState, ProcessModel};
use fusion3d::fixtures::parse_yyyymmdd;
use fusion3d::io::RunConfig;
use fusion3d::pipeline::{self, PipelineError};
use fusion3d::synth::{Scenario, DEFAULT_SCENARIO_TOML};
use fusion3d::timegrid::{build_union_grid, interpolate_pair, LosSample};
use fusion3d::{LookSide, SensorGeometry, VarianceMode};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn filter_err(e: FilterError) -> PyErr {
    match e {
        FilterError::Singular { .. } => PyArithmeticError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Numerical { .. } => PyArithmeticError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn look_side(s: &str) -> PyResult<LookSide> {
    s.parse().map_err(value_err)
}

/// LOS unit vector (east, north, up), target to satellite.
#[pyfunction]
#[pyo3(signature = (incidence_deg, heading_deg, look_side="right"))]
fn los_unit_vector(incidence_deg: f64, heading_deg: f64, look_side: &str) -> PyResult<(f64, f64, f64)> {
    let c = fusion3d::los_unit_vector(incidence_deg, heading_deg, self::look_side(look_side)?).map_err(value_err)?;
    Ok((c.x, c.y, c.z))
}

#[pyfunction]
#[pyo3(signature = (displacement, incidence_deg, heading_deg, look_side="right"))]
fn project_to_los(displacement: [f64; 3], incidence_deg: f64, heading_deg: f64, look_side: &str) -> PyResult<f64> {
    let geom = SensorGeometry::new("sensor", incidence_deg, heading_deg, self::look_side(look_side)?).map_err(value_err)?;
    Ok(fusion3d::project_to_los(&geom, &Vector3::from(displacement)))
}

#[pyfunction]
#[pyo3(signature = (station_var, distance_km, scale_km=10.0))]
fn inflate_variance(station_var: f64, distance_km: f64, scale_km: f64) -> PyResult<f64> {
    fusion3d::inflate_variance(station_var, distance_km, scale_km).map_err(value_err)
}

/// Interpolate between samples `a` and `b`, each `(epoch, los_mm, var_mm2)`.
#[pyfunction]
#[pyo3(signature = (a, b, t_c, mode="paper"))]
fn interpolate(a: (f64, f64, f64), b: (f64, f64, f64), t_c: f64, mode: &str) -> PyResult<(f64, f64)> {
    let mode: VarianceMode = mode.parse().map_err(value_err)?;
    if !(a.0 <= t_c && t_c <= b.0 && a.0 < b.0) {
        return Err(value_err(format!("t_c = {t_c} outside [{}, {}]", a.0, b.0)));
    }
    let sa = LosSample { epoch: a.0, los_mm: a.1, var_mm2: a.2 };
    let sb = LosSample { epoch: b.0, los_mm: b.1, var_mm2: b.2 };
    Ok(interpolate_pair(&sa, &sb, t_c, mode))
}

/// Union epoch grid (decimal years) of per-sensor YYYYMMDD date lists.
#[pyfunction]
fn union_grid(dates: BTreeMap<String, Vec<u32>>) -> PyResult<Vec<f64>> {
    let lists = dates
        .into_iter()
        .map(|(id, codes)| {
            let d = codes
                .iter()
                .map(|&c| parse_yyyymmdd(c).ok_or_else(|| value_err(format!("sensor {id}: invalid date {c}"))))
                .collect::<PyResult<Vec<_>>>()?;
            Ok((id, d))
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(build_union_grid(&lists).map_err(value_err)?.epochs().to_vec())
}

/// Kalman filter state: displacement `x` (mm) and covariance `p` (mm²).
#[pyclass(name = "FilterState")]
#[derive(Clone)]
struct PyFilterState {
    inner: FilterState,
}

#[pymethods]
impl PyFilterState {
    #[new]
    #[pyo3(signature = (x=[0.0; 3], p=None))]
    fn new(x: [f64; 3], p: Option<[[f64; 3]; 3]>) -> Self {
        let p = p.map_or_else(Matrix3::zeros, |rows| Matrix3::from_fn(|i, j| rows[i][j]));
        Self { inner: FilterState { x: Vector3::from(x), p } }
    }

    #[getter]
    fn x(&self) -> [f64; 3] {
        self.inner.x.into()
    }

    #[getter]
    fn p(&self) -> [[f64; 3]; 3] {
        let p = &self.inner.p;
        std::array::from_fn(|i| std::array::from_fn(|j| p[(i, j)]))
    }

    fn std(&self) -> [f64; 3] {
        self.inner.std().into()
    }

    /// Advance by `dt` years with GNSS velocity `(vx, vy)` and its variance.
    #[pyo3(signature = (dt, velocity, velocity_var, q_z=1.0))]
    fn predict(&self, dt: f64, velocity: [f64; 2], velocity_var: [f64; 2], q_z: f64) -> PyResult<Self> {
        let model = ProcessModel { velocity, velocity_var, q_z };
        Ok(Self { inner: filter::predict(&self.inner, dt, &model).map_err(filter_err)? })
    }

    /// Measurement update with rows of unit vectors, observations and variances.
    fn update(&self, rows: Vec<[f64; 3]>, y: Vec<f64>, r: Vec<f64>) -> PyResult<Self> {
        let n = rows.len();
        let a = DMatrix::from_row_iterator(n, 3, rows.iter().flatten().copied());
        let ids = (0..n).map(|i| format!("row{i}")).collect();
        let sys = EpochSystem::new(0, ids, DVector::from_vec(y), a, DVector::from_vec(r)).map_err(filter_err)?;
        Ok(Self { inner: filter::update(&self.inner, &sys).map_err(filter_err)? })
    }

    fn __repr__(&self) -> String {
        let x = self.inner.x;
        format!("FilterState(x=[{}, {}, {}])", x.x, x.y, x.z)
    }
}

fn scenario(toml: Option<&str>, pixels: Option<usize>, seed: Option<u64>) -> PyResult<Scenario> {
    let mut s = Scenario::from_toml(toml.unwrap_or(DEFAULT_SCENARIO_TOML)).map_err(value_err)?;
    if let Some(p) = pixels {
        s.pixels = p;
    }
    if let Some(v) = seed {
        s.seed = v;
    }
    Ok(s)
}

/// Run a synthetic scenario; returns RMSE per component for the 3D filter
/// and the 2D baseline.
#[pyfunction]
#[pyo3(signature = (scenario_toml=None, pixels=None, seed=None))]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario_toml: Option<&str>,
    pixels: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let s = scenario(scenario_toml, pixels, seed)?;
    let result = py.allow_threads(|| s.run()).map_err(value_err)?;
    let out = PyDict::new_bound(py);
    out.set_item("fused_rmse", result.report.fused.rmse())?;
    out.set_item("fused_common_rmse", result.report.fused_common.rmse())?;
    out.set_item("baseline_rmse", result.report.baseline.rmse())?;
    out.set_item("baseline_missing", result.report.baseline_missing)?;
    out.set_item("pixels", result.pixels.len())?;
    Ok(out)
}

/// Write a synthetic data set to `out_dir`; returns the path of its run config.
#[pyfunction]
#[pyo3(signature = (out_dir, scenario_toml=None, pixels=None, seed=None))]
fn write_synthetic_dataset(
    py: Python<'_>,
    out_dir: PathBuf,
    scenario_toml: Option<&str>,
    pixels: Option<usize>,
    seed: Option<u64>,
) -> PyResult<PathBuf> {
    let s = scenario(scenario_toml, pixels, seed)?;
    let out = py.allow_threads(|| pipeline::write_synthetic_dataset(&s, &out_dir)).map_err(pipeline_err)?;
    Ok(out.config)
}

/// Run the fusion pipeline for a config file; returns a summary dict.
#[pyfunction]
#[pyo3(signature = (config, output_dir=None, workers=None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    config: PathBuf,
    output_dir: Option<PathBuf>,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = RunConfig::from_file(&config).map_err(value_err)?;
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let summary = py.allow_threads(|| pipeline::run_pipeline(&cfg)).map_err(pipeline_err)?;
    let out = PyDict::new_bound(py);
    out.set_item("pixels", summary.pixels)?;
    out.set_item("epochs", summary.epochs)?;
    out.set_item("files", summary.files)?;
    out.set_item("warnings", summary.warnings)?;
    if let Some(v) = summary.validation {
        out.set_item("validation_matched", v.count())?;
        out.set_item("validation_mean", v.mean)?;
        out.set_item("validation_std", v.std)?;
    }
    Ok(out)
}

#[pymodule]
fn fusion3d_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(los_unit_vector, m)?)?;
    m.add_function(wrap_pyfunction!(project_to_los, m)?)?;
    m.add_function(wrap_pyfunction!(inflate_variance, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(union_grid, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_class::<PyFilterState>()?;
    Ok(())
}
