//! End-to-end runs: ingest, resample, priors, filter, velocities, validation, export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::filter::{estimate_velocity, run_filters, FilterError, PixelInputs, PixelTrajectory, ProcessModel};
use crate::fixtures::parse_yyyymmdd;
use crate::geometry::SensorSet;
use crate::gnss_field::{build_priors, GnssStation, PixelLocation, PixelVelocityPrior, StationRole};
use crate::io::{self, GnssConfig, IoError, LosDataset, RunConfig, SensorConfig, ValidationConfig};
use crate::synth::{Scenario, SynthError};
use crate::timegrid::{build_union_grid, resample_dataset, ResampledSeries, TimeGrid};
use crate::validation::{select_pixels_near, validate_check_stations, PixelVelocity, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Resample,
    Priors,
    Filter,
    Reference,
    Velocity,
    Validation,
    Export,
    Synth,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Resample => "resample",
            Stage::Priors => "priors",
            Stage::Filter => "filter",
            Stage::Reference => "reference",
            Stage::Velocity => "velocity",
            Stage::Validation => "validation",
            Stage::Export => "export",
            Stage::Synth => "synth",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Data { stage: Stage, message: String },
    #[error("{stage}: {message}")]
    Numerical { stage: Stage, message: String },
}

impl PipelineError {
    /// Process exit status: 1 config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data { .. } => 2,
            PipelineError::Numerical { .. } => 3,
        }
    }

    fn data(stage: Stage, e: impl fmt::Display) -> Self {
        PipelineError::Data { stage, message: e.to_string() }
    }

    fn numerical(stage: Stage, e: impl fmt::Display) -> Self {
        PipelineError::Numerical { stage, message: e.to_string() }
    }

    fn io(stage: Stage, e: IoError) -> Self {
        Self::data(stage, e)
    }

    fn filter(e: FilterError) -> Self {
        let inner = match &e {
            FilterError::Pixel { source, .. } => source.as_ref(),
            other => other,
        };
        match inner {
            FilterError::Singular { .. } | FilterError::InvalidStep(_) | FilterError::Dimension(_) => {
                Self::numerical(Stage::Filter, e)
            }
            _ => Self::data(Stage::Filter, e),
        }
    }
}

/// What a run produced.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub pixels: usize,
    pub epochs: usize,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub validation: Option<ValidationReport>,
}

/// Run `f` on a pool with `workers` threads; 0 uses the global pool.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

struct Loaded {
    sensors: SensorSet,
    datasets: Vec<LosDataset>,
    grid: TimeGrid,
    /// Sorted by pixel id.
    locations: Vec<PixelLocation>,
}

fn load(cfg: &RunConfig) -> Result<Loaded, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let sensors = cfg.sensor_set().map_err(PipelineError::Config)?;
    let mut configs: Vec<&SensorConfig> = cfg.sensors.iter().collect();
    configs.sort_by(|a, b| a.id.cmp(&b.id));
    let datasets = configs
        .iter()
        .map(|s| io::ingest_los(&s.los_file, &s.id).map_err(|e| PipelineError::io(Stage::Ingest, e)))
        .collect::<Result<Vec<_>, _>>()?;
    let date_lists: Vec<_> = datasets.iter().map(|d| (d.sensor_id.clone(), d.dates.clone())).collect();
    let grid = build_union_grid(&date_lists).map_err(|e| PipelineError::data(Stage::Resample, e))?;

    let mut located: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for d in &datasets {
        for (id, px) in &d.pixels {
            located.entry(id.as_str()).or_insert((px.lon, px.lat));
        }
    }
    let locations = located
        .into_iter()
        .map(|(id, (lon, lat))| PixelLocation { pixel_id: id.to_string(), lon, lat })
        .collect();
    Ok(Loaded { sensors, datasets, grid, locations })
}

/// Resampled series per sensor, in sorted sensor order.
fn resample(cfg: &RunConfig, loaded: &Loaded) -> Result<Vec<Vec<ResampledSeries>>, PipelineError> {
    loaded
        .datasets
        .iter()
        .map(|d| {
            let series: Vec<_> = d.pixels.values().map(|p| p.series.clone()).collect();
            let out = resample_dataset(&series, &loaded.grid, cfg.variance_mode);
            match out.failures.first() {
                Some(f) => Err(PipelineError::data(
                    Stage::Resample,
                    format!("sensor {}: {f} ({} pixels failed)", d.sensor_id, out.failures.len()),
                )),
                None => Ok(out.resampled),
            }
        })
        .collect()
}

fn write_resampled_all(
    cfg: &RunConfig,
    loaded: &Loaded,
    resampled: &[Vec<ResampledSeries>],
) -> Result<Vec<PathBuf>, PipelineError> {
    let locs: BTreeMap<String, (f64, f64)> =
        loaded.locations.iter().map(|l| (l.pixel_id.clone(), (l.lon, l.lat))).collect();
    let mut files = Vec::new();
    let grid_path = cfg.output_dir.join("grid.csv");
    io::write_grid(&grid_path, &loaded.grid).map_err(|e| PipelineError::io(Stage::Export, e))?;
    files.push(grid_path);
    for (d, series) in loaded.datasets.iter().zip(resampled) {
        let path = cfg.output_dir.join(format!("resampled_{}.csv", d.sensor_id));
        io::write_resampled(&path, series, &locs, &loaded.grid).map_err(|e| PipelineError::io(Stage::Export, e))?;
        files.push(path);
    }
    Ok(files)
}

/// Resample every LOS file onto the union grid and write the results.
pub fn run_resample(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    with_workers(cfg.workers, || {
        let loaded = load(cfg)?;
        let resampled = resample(cfg, &loaded)?;
        let files = write_resampled_all(cfg, &loaded, &resampled)?;
        Ok(RunSummary { pixels: loaded.locations.len(), epochs: loaded.grid.len(), files, ..Default::default() })
    })?
}

/// Apply the configured tie/check split.
pub fn assign_roles(stations: &mut [GnssStation], gnss: &GnssConfig, seed: u64) -> Result<(), PipelineError> {
    let known: BTreeSet<&str> = stations.iter().map(|s| s.station_id.as_str()).collect();
    let check_unknown = |ids: &[String]| {
        ids.iter().find(|id| !known.contains(id.as_str())).map_or(Ok(()), |id| {
            Err(PipelineError::Config(format!("gnss: unknown station `{id}` in role list")))
        })
    };
    if let Some(tie) = &gnss.tie {
        check_unknown(tie)?;
        for s in stations.iter_mut() {
            s.role = if tie.contains(&s.station_id) { StationRole::Tie } else { StationRole::Check };
        }
    } else if let Some(check) = &gnss.check {
        check_unknown(check)?;
        for s in stations.iter_mut() {
            s.role = if check.contains(&s.station_id) { StationRole::Check } else { StationRole::Tie };
        }
    } else if let Some(frac) = gnss.random_check_fraction {
        let mut ids: Vec<String> = stations.iter().map(|s| s.station_id.clone()).collect();
        ids.sort();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_check = (frac * ids.len() as f64).round() as usize;
        let check: BTreeSet<&String> = ids[..n_check].iter().collect();
        for s in stations.iter_mut() {
            s.role = if check.contains(&s.station_id) { StationRole::Check } else { StationRole::Tie };
        }
    }
    Ok(())
}

/// Velocity fit of every trajectory.
pub fn velocities(trajs: &[PixelTrajectory], locations: &[PixelLocation]) -> Result<Vec<PixelVelocity>, PipelineError> {
    trajs
        .par_iter()
        .zip(locations)
        .map(|(t, l)| {
            let v = estimate_velocity(t).map_err(|e| PipelineError::data(Stage::Velocity, format!("pixel {}: {e}", t.pixel_id)))?;
            Ok(PixelVelocity { pixel_id: t.pixel_id.clone(), lon: l.lon, lat: l.lat, velocity: v.velocity, std: v.std })
        })
        .collect()
}

/// Full fusion run. Outputs depend only on the config and input files,
/// never on the worker count.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    with_workers(cfg.workers, || fuse(cfg))?
}

fn fuse(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let gnss = cfg.gnss.as_ref().ok_or_else(|| PipelineError::Config("fusion needs a [gnss] section".into()))?;
    let loaded = load(cfg)?;
    let resampled = resample(cfg, &loaded)?;
    let mut files = write_resampled_all(cfg, &loaded, &resampled)?;
    let mut warnings = Vec::new();

    let mut stations = io::ingest_gnss(&gnss.file).map_err(|e| PipelineError::io(Stage::Ingest, e))?;
    assign_roles(&mut stations, gnss, cfg.seed)?;
    let priors = build_priors(&stations, &loaded.locations, &cfg.prior_params())
        .map_err(|e| PipelineError::data(Stage::Priors, e))?;
    warnings.extend(priors.warnings.iter().cloned());
    let priors: Vec<PixelVelocityPrior> = priors.priors;
    let path = cfg.output_dir.join("priors.csv");
    io::write_priors(&path, &priors).map_err(|e| PipelineError::io(Stage::Export, e))?;
    files.push(path);

    let mut by_pixel: BTreeMap<&str, Vec<ResampledSeries>> = BTreeMap::new();
    for series in resampled.iter().flatten() {
        by_pixel.entry(series.pixel_id.as_str()).or_default().push(series.clone());
    }
    let work: Vec<(PixelInputs, ProcessModel)> = priors
        .iter()
        .map(|p| {
            let series = by_pixel.remove(p.pixel_id.as_str()).unwrap_or_default();
            (PixelInputs { pixel_id: p.pixel_id.clone(), series }, ProcessModel::from_prior(p, cfg.q_z))
        })
        .collect();
    let mut trajs = run_filters(&work, &loaded.sensors, &loaded.grid).map_err(PipelineError::filter)?;

    let v = &cfg.validation;
    if let Some(reference) = &v.reference_station {
        let st = stations
            .iter()
            .find(|s| &s.station_id == reference)
            .ok_or_else(|| PipelineError::Config(format!("reference station `{reference}` not in GNSS file")))?;
        let selection = select_pixels_near(&loaded.locations, st.lon, st.lat, v.radius_m)
            .map_err(|e| PipelineError::data(Stage::Reference, e))?;
        if selection.is_empty() {
            return Err(PipelineError::data(
                Stage::Reference,
                format!("no pixels within {} m of reference station {reference}", v.radius_m),
            ));
        }
        trajs = crate::validation::reference_to_station(&trajs, &selection)
            .map_err(|e| PipelineError::data(Stage::Reference, e))?;
    }
    files.extend(
        io::export_trajectories(&cfg.output_dir, &trajs, &loaded.locations, &loaded.grid, cfg.trajectory_format)
            .map_err(|e| PipelineError::io(Stage::Export, e))?,
    );

    let vel = velocities(&trajs, &loaded.locations)?;
    let path = cfg.output_dir.join("velocities.csv");
    io::write_velocities(&path, &vel).map_err(|e| PipelineError::io(Stage::Export, e))?;
    files.push(path);

    let validation = if stations.iter().any(|s| s.role == StationRole::Check) {
        let (report, written) = validate_and_write(&vel, &stations, v, &cfg.output_dir)?;
        files.extend(written);
        Some(report)
    } else {
        None
    };
    Ok(RunSummary { pixels: trajs.len(), epochs: loaded.grid.len(), files, warnings, validation })
}

fn validate_and_write(
    vel: &[PixelVelocity],
    stations: &[GnssStation],
    v: &ValidationConfig,
    out_dir: &Path,
) -> Result<(ValidationReport, Vec<PathBuf>), PipelineError> {
    let report =
        validate_check_stations(vel, stations, v.radius_m).map_err(|e| PipelineError::data(Stage::Validation, e))?;
    let files =
        io::write_validation(out_dir, &report, v.histogram_bin).map_err(|e| PipelineError::io(Stage::Export, e))?;
    Ok((report, files))
}

/// Compare an existing velocity map against the check stations of a GNSS file.
pub fn run_validate(
    velocities_file: &Path,
    gnss: &GnssConfig,
    seed: u64,
    v: &ValidationConfig,
    out_dir: &Path,
) -> Result<(ValidationReport, Vec<PathBuf>), PipelineError> {
    let vel = io::ingest_velocities(velocities_file).map_err(|e| PipelineError::io(Stage::Ingest, e))?;
    let mut stations = io::ingest_gnss(&gnss.file).map_err(|e| PipelineError::io(Stage::Ingest, e))?;
    assign_roles(&mut stations, gnss, seed)?;
    validate_and_write(&vel, &stations, v, out_dir)
}

/// Files of a synthetic data set.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub config: PathBuf,
    pub files: Vec<PathBuf>,
    pub comparison: crate::synth::ComparisonReport,
}

fn synth_err(e: SynthError) -> PipelineError {
    match e {
        SynthError::Invalid(_) | SynthError::Geometry(_) => PipelineError::Config(e.to_string()),
        SynthError::Filter(f) => PipelineError::filter(f),
        other => PipelineError::data(Stage::Synth, other),
    }
}

/// Write a synthetic scene as LOS and GNSS files plus a ready-to-run
/// `run.toml`, and the 3D vs 2D benchmark against the truth.
///
/// Tie stations sit on a ring around the scene, check stations on pixels;
/// all carry the truth's horizontal trends.
pub fn write_synthetic_dataset(scenario: &Scenario, out_dir: &Path) -> Result<SynthOutput, PipelineError> {
    let prep = scenario.prepare().map_err(synth_err)?;
    let ids: Vec<String> = (0..scenario.pixels).map(Scenario::pixel_id).collect();
    let series: Vec<Vec<_>> = (0..scenario.pixels)
        .into_par_iter()
        .map(|i| {
            crate::synth::forward_project(&prep.model, &prep.grid, &prep.sensors, &prep.acquisitions, &ids[i], i as u64)
        })
        .collect::<Result<_, _>>()
        .map_err(synth_err)?;

    let export = |e| PipelineError::io(Stage::Export, e);
    let mut files = Vec::new();
    let mut sensor_cfgs = Vec::new();
    for geom in &prep.sensors {
        let id = geom.sensor_id();
        let sc = scenario.sensors.iter().find(|s| s.id == id).expect("prepared sensors come from the scenario");
        let mut dates: Vec<_> = sc.dates.iter().filter_map(|&c| parse_yyyymmdd(c)).collect();
        dates.sort();
        dates.dedup();
        let mut rows = Vec::new();
        for (i, px) in series.iter().enumerate() {
            let (lon, lat) = scenario.pixel_location(i);
            let s = px.iter().find(|s| s.sensor_id() == id).expect("one series per sensor");
            for (sample, &date) in s.samples().iter().zip(&dates) {
                rows.push((ids[i].as_str(), lon, lat, date, sample.los_mm, sample.var_mm2.max(scenario.variance_floor_mm2)));
            }
        }
        let file = format!("los_{id}.csv");
        io::write_los(&out_dir.join(&file), rows).map_err(export)?;
        files.push(out_dir.join(&file));
        sensor_cfgs.push(SensorConfig {
            id: id.to_string(),
            incidence_deg: geom.incidence_deg(),
            heading_deg: geom.heading_deg(),
            look_side: geom.look_side(),
            los_file: PathBuf::from(file),
        });
    }

    let stations = synthetic_stations(scenario);
    io::write_gnss(&out_dir.join("gnss.csv"), &stations).map_err(export)?;
    files.push(out_dir.join("gnss.csv"));

    let truth_path = out_dir.join("truth.csv");
    let grid = &prep.grid;
    let rows = prep.truth.iter().enumerate().map(|(k, t): (usize, &Vector3<f64>)| {
        let mut row = vec![k.to_string(), io::fmt_num(grid.epochs()[k])];
        row.extend(t.iter().map(|&v| io::fmt_num(v)));
        row
    });
    let csv_err = |e| PipelineError::io(Stage::Export, IoError::csv(&truth_path, e));
    let mut w = io::writer(&truth_path).map_err(export)?;
    w.write_record(["index", "epoch", "dx", "dy", "dz"]).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| PipelineError::io(Stage::Export, IoError::io(&truth_path, e)))?;
    files.push(truth_path);

    let result = scenario.run().map_err(synth_err)?;
    let cmp_path = out_dir.join("comparison.csv");
    io::write_comparison(&cmp_path, &result.report).map_err(export)?;
    files.push(cmp_path);

    let cfg = RunConfig {
        output_dir: PathBuf::from("out"),
        seed: scenario.seed,
        workers: 0,
        variance_mode: scenario.variance_mode,
        scale_km: 10.0,
        q_z: scenario.q_z,
        trajectory_format: Default::default(),
        sensors: sensor_cfgs,
        gnss: Some(GnssConfig { file: "gnss.csv".into(), tie: None, check: None, random_check_fraction: None }),
        variogram: Default::default(),
        validation: Default::default(),
    };
    let config = out_dir.join("run.toml");
    std::fs::write(&config, cfg.to_toml()).map_err(|e| PipelineError::io(Stage::Export, IoError::io(&config, e)))?;
    files.push(config.clone());
    Ok(SynthOutput { config, files, comparison: result.report })
}

fn synthetic_stations(scenario: &Scenario) -> Vec<GnssStation> {
    let side = (scenario.pixels as f64).sqrt().ceil().max(1.0);
    let radius = side * scenario.spacing_deg;
    let (vx, vy) = (scenario.truth.east.trend, scenario.truth.north.trend);
    let var = scenario.gnss_var;
    let mut out = Vec::with_capacity(scenario.gnss_tie + scenario.gnss_check);
    for i in 0..scenario.gnss_tie {
        let a = std::f64::consts::TAU * i as f64 / scenario.gnss_tie as f64;
        out.push(GnssStation {
            station_id: format!("T{i:03}"),
            lon: scenario.center_lon + radius * a.cos(),
            lat: scenario.center_lat + radius * a.sin(),
            vx,
            vy,
            var_x: var,
            var_y: var,
            role: StationRole::Tie,
        });
    }
    let n_check = scenario.gnss_check.min(scenario.pixels);
    for i in 0..n_check {
        let (lon, lat) = scenario.pixel_location(i * scenario.pixels / n_check);
        out.push(GnssStation {
            station_id: format!("C{i:03}"),
            lon,
            lat,
            vx,
            vy,
            var_x: var,
            var_y: var,
            role: StationRole::Check,
        });
    }
    out
}
