//! Per-pixel Kalman filter fusing LOS observations with GNSS velocity priors.
//!
//! State: `X = (dx, dy, dz)` in mm, relative to the first grid epoch.
//!
//! ```text
//! predict:  X⁻ = X + B u            P⁻ = P + Q
//! update:   K  = P⁻ Aᵀ (A P⁻ Aᵀ + R)⁻¹
//!           X⁺ = X⁻ + K (Y − A X⁻)   P⁺ = P⁻ − K A P⁻
//! ```
//!
//! with `B u = (Δt V̄x, Δt V̄y, 0)`, `Q = diag(σ̄x² Δt², σ̄y² Δt², q_z Δt)` and
//! `R = diag(σ̄²)` of the interpolated LOS samples. `X₀ = 0`, `P₀ = 0`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::SensorSet;
use crate::gnss_field::PixelVelocityPrior;
use crate::timegrid::{ResampledSeries, TimeGrid};

/// Above this the innovation covariance is treated as singular.
pub const MAX_INNOVATION_CONDITION: f64 = 1e13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("no geometry for sensor `{0}`")]
    MissingGeometry(String),
    #[error("non-positive variance {value} for sensor `{sensor}` at epoch {epoch}")]
    NonPositiveVariance { sensor: String, epoch: usize, value: f64 },
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("singular innovation covariance at epoch {epoch} (condition number {condition:.3e})")]
    Singular { epoch: usize, condition: f64 },
    #[error("series for sensor `{sensor}` has {got} epochs, grid has {expected}")]
    GridMismatch { sensor: String, expected: usize, got: usize },
    #[error("epoch system dimensions disagree: {0}")]
    Dimension(String),
    #[error("velocity fit needs at least 2 epochs, got {0}")]
    TooFewEpochs(usize),
    #[error("pixel {pixel}: {source}")]
    Pixel {
        pixel: String,
        #[source]
        source: Box<FilterError>,
    },
}

/// Measurement system at one epoch: `Y = A X + e`, `e ~ N(0, diag(r))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSystem {
    pub epoch: usize,
    pub sensors: Vec<String>,
    pub y: DVector<f64>,
    pub a: DMatrix<f64>,
    pub r: DVector<f64>,
}

impl EpochSystem {
    pub fn new(epoch: usize, sensors: Vec<String>, y: DVector<f64>, a: DMatrix<f64>, r: DVector<f64>) -> Result<Self, FilterError> {
        let n = y.len();
        if a.nrows() != n || a.ncols() != 3 || r.len() != n || sensors.len() != n {
            return Err(FilterError::Dimension(format!(
                "y {n}, A {}x{}, r {}, sensors {}",
                a.nrows(),
                a.ncols(),
                r.len(),
                sensors.len()
            )));
        }
        if let Some((i, &v)) = r.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(FilterError::NonPositiveVariance { sensor: sensors[i].clone(), epoch, value: v });
        }
        Ok(Self { epoch, sensors, y, a, r })
    }

    pub fn empty(epoch: usize) -> Self {
        Self { epoch, sensors: Vec::new(), y: DVector::zeros(0), a: DMatrix::zeros(0, 3), r: DVector::zeros(0) }
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub x: Vector3<f64>,
    pub p: Matrix3<f64>,
}

impl FilterState {
    pub fn zero() -> Self {
        Self { x: Vector3::zeros(), p: Matrix3::zeros() }
    }

    pub fn std(&self) -> Vector3<f64> {
        self.p.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Dynamics driven by the pixel's GNSS velocity prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessModel {
    /// (V̄x, V̄y) in mm/yr.
    pub velocity: [f64; 2],
    /// (σ̄x², σ̄y²) in (mm/yr)².
    pub velocity_var: [f64; 2],
    /// Vertical random-walk density, mm²/yr.
    pub q_z: f64,
}

impl ProcessModel {
    pub fn from_prior(prior: &PixelVelocityPrior, q_z: f64) -> Self {
        Self { velocity: [prior.vx, prior.vy], velocity_var: [prior.var_x, prior.var_y], q_z }
    }

    /// `B u` for a step of `dt` years.
    pub fn control(&self, dt: f64) -> Vector3<f64> {
        Vector3::new(dt * self.velocity[0], dt * self.velocity[1], 0.0)
    }

    /// Diagonal of `Q` for a step of `dt` years.
    pub fn noise(&self, dt: f64) -> Vector3<f64> {
        Vector3::new(self.velocity_var[0] * dt * dt, self.velocity_var[1] * dt * dt, self.q_z * dt)
    }
}

/// Prediction with an explicit state shift and process covariance.
pub fn predict_with(state: &FilterState, shift: &Vector3<f64>, q: &Matrix3<f64>) -> FilterState {
    FilterState { x: state.x + shift, p: symmetrize(&(state.p + q)) }
}

pub fn predict(state: &FilterState, dt: f64, model: &ProcessModel) -> Result<FilterState, FilterError> {
    if !(dt > 0.0) {
        return Err(FilterError::InvalidStep(dt));
    }
    Ok(predict_with(state, &model.control(dt), &Matrix3::from_diagonal(&model.noise(dt))))
}

pub fn update(pred: &FilterState, sys: &EpochSystem) -> Result<FilterState, FilterError> {
    if sys.rows() == 0 {
        return Ok(*pred);
    }
    let p = DMatrix::from_column_slice(3, 3, pred.p.as_slice());
    let x = DVector::from_column_slice(pred.x.as_slice());
    let ap = &sys.a * &p;
    let mut s = &ap * sys.a.transpose();
    for i in 0..sys.rows() {
        s[(i, i)] += sys.r[i];
    }
    let s = (&s + s.transpose()) * 0.5;

    let condition = condition_number(&s);
    let chol = match s.cholesky() {
        Some(c) if condition <= MAX_INNOVATION_CONDITION => c,
        _ => return Err(FilterError::Singular { epoch: sys.epoch, condition }),
    };
    // S Kᵀ = A P, since both S and P are symmetric
    let k = chol.solve(&ap).transpose();
    let innovation = &sys.y - &sys.a * &x;
    let x_post = x + &k * innovation;
    let p_post = p - &k * ap;

    Ok(FilterState {
        x: Vector3::new(x_post[0], x_post[1], x_post[2]),
        p: symmetrize(&Matrix3::from_column_slice(p_post.as_slice())),
    })
}

fn condition_number(s: &DMatrix<f64>) -> f64 {
    let eig = s.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// The resampled series of one pixel, at most one per sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelInputs {
    pub pixel_id: String,
    pub series: Vec<ResampledSeries>,
}

/// Rows for every sensor available at epoch `k`, in sorted sensor order.
pub fn assemble_epoch_system(inputs: &PixelInputs, sensors: &SensorSet, k: usize) -> Result<EpochSystem, FilterError> {
    for s in &inputs.series {
        if sensors.get(&s.sensor_id).is_none() {
            return Err(FilterError::MissingGeometry(s.sensor_id.clone()));
        }
    }
    let mut ids = Vec::new();
    let mut y = Vec::new();
    let mut rows = Vec::new();
    let mut r = Vec::new();
    for geom in sensors {
        let Some(sample) = inputs.series.iter().find(|s| s.sensor_id == geom.sensor_id()).and_then(|s| s.get(k)) else {
            continue;
        };
        if !(sample.var_mm2 > 0.0) {
            return Err(FilterError::NonPositiveVariance {
                sensor: geom.sensor_id().to_string(),
                epoch: k,
                value: sample.var_mm2,
            });
        }
        ids.push(geom.sensor_id().to_string());
        y.push(sample.los_mm);
        rows.push(geom.unit_vector());
        r.push(sample.var_mm2);
    }
    let a = DMatrix::from_row_iterator(rows.len(), 3, rows.iter().flat_map(|c| c.iter().copied()));
    EpochSystem::new(k, ids, DVector::from_vec(y), a, DVector::from_vec(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Vertical random-walk density, mm²/yr.
    pub q_z: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { q_z: 1.0 }
    }
}

/// Posterior states of one pixel at every grid epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTrajectory {
    pub pixel_id: String,
    pub epochs: Vec<f64>,
    pub states: Vec<FilterState>,
}

impl PixelTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn displacements(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.states.iter().map(|s| s.x)
    }
}

/// Forward pass over the grid for one pixel.
pub fn run_pixel_filter(
    inputs: &PixelInputs,
    model: &ProcessModel,
    sensors: &SensorSet,
    grid: &TimeGrid,
) -> Result<PixelTrajectory, FilterError> {
    for s in &inputs.series {
        if s.values.len() != grid.len() {
            return Err(FilterError::GridMismatch {
                sensor: s.sensor_id.clone(),
                expected: grid.len(),
                got: s.values.len(),
            });
        }
    }
    let epochs = grid.epochs();
    let mut states = Vec::with_capacity(epochs.len());
    let mut state = FilterState::zero();
    for k in 0..epochs.len() {
        if k > 0 {
            state = predict(&state, epochs[k] - epochs[k - 1], model)?;
        }
        let sys = assemble_epoch_system(inputs, sensors, k)?;
        state = update(&state, &sys)?;
        states.push(state);
    }
    Ok(PixelTrajectory { pixel_id: inputs.pixel_id.clone(), epochs: epochs.to_vec(), states })
}

/// Filter many pixels in parallel; output order follows input order.
pub fn run_filters(
    pixels: &[(PixelInputs, ProcessModel)],
    sensors: &SensorSet,
    grid: &TimeGrid,
) -> Result<Vec<PixelTrajectory>, FilterError> {
    pixels
        .par_iter()
        .map(|(inputs, model)| {
            run_pixel_filter(inputs, model, sensors, grid).map_err(|e| FilterError::Pixel {
                pixel: inputs.pixel_id.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Linear-trend velocity per component with its standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityEstimate {
    /// mm/yr
    pub velocity: Vector3<f64>,
    /// mm/yr; NaN with exactly two epochs (no residual degrees of freedom).
    pub std: Vector3<f64>,
}

/// Ordinary least-squares line through each displacement component.
pub fn estimate_velocity(traj: &PixelTrajectory) -> Result<VelocityEstimate, FilterError> {
    let n = traj.len();
    if n < 2 || traj.epochs.len() != n {
        return Err(FilterError::TooFewEpochs(n.min(traj.epochs.len())));
    }
    let nf = n as f64;
    let t_mean = traj.epochs.iter().sum::<f64>() / nf;
    let sxx: f64 = traj.epochs.iter().map(|t| (t - t_mean).powi(2)).sum();
    let mut velocity = Vector3::zeros();
    let mut std = Vector3::zeros();
    for c in 0..3 {
        let y_mean = traj.states.iter().map(|s| s.x[c]).sum::<f64>() / nf;
        let sxy: f64 = traj.epochs.iter().zip(&traj.states).map(|(t, s)| (t - t_mean) * (s.x[c] - y_mean)).sum();
        let slope = sxy / sxx;
        let intercept = y_mean - slope * t_mean;
        let rss: f64 = traj
            .epochs
            .iter()
            .zip(&traj.states)
            .map(|(t, s)| (s.x[c] - intercept - slope * t).powi(2))
            .sum();
        velocity[c] = slope;
        std[c] = if n > 2 { (rss / (nf - 2.0) / sxx).sqrt() } else { f64::NAN };
    }
    Ok(VelocityEstimate { velocity, std })
}
