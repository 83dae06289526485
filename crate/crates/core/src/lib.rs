//! Fusion of multi-geometry InSAR line-of-sight time series with GNSS
//! horizontal velocities into 3D (east, north, up) displacement time series.
//!
//! The pipeline runs per pixel:
//!
//! 1. [`timegrid`]: resample each sensor's LOS series onto the union epoch grid.
//! 2. [`gnss_field`]: krige GNSS velocities to the pixel and inflate their variances.
//! 3. [`filter`]: Kalman-filter the epoch systems, with the GNSS velocity as control input.
//!
//! [`synth`] and [`validation`] provide a synthetic benchmark and a
//! check-station harness; [`io`] and [`pipeline`] handle files and orchestration.

pub mod filter;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod gnss_field;
pub mod synth;
pub mod timegrid;
pub mod validation;

pub use filter::{
    assemble_epoch_system, estimate_velocity, predict, run_pixel_filter, update, EpochSystem, FilterConfig,
    FilterError, FilterState, PixelInputs, PixelTrajectory, ProcessModel, VelocityEstimate,
};
pub use geometry::{los_unit_vector, project_to_los, LookSide, SensorGeometry, SensorSet};
pub use gnss_field::{
    build_priors, inflate_variance, krige_velocities, nearest_station_distance, GnssStation, PixelLocation,
    PixelVelocityPrior, StationRole, Variogram,
};
pub use timegrid::{
    build_union_grid, interpolate_series, resample_dataset, LosSample, LosSeries, ResampledSeries, TimeGrid,
    VarianceMode,
};
