//! Union acquisition grid and linear resampling of LOS series onto it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeGridError {
    #[error("no acquisition lists supplied")]
    EmptyInput,
    #[error("sensor `{0}` has no acquisitions")]
    EmptySensor(String),
    #[error("epoch {0} is not finite")]
    NonFiniteEpoch(f64),
    #[error("series needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("epochs not strictly increasing at sample {index} ({previous} then {current})")]
    NonMonotonic { index: usize, previous: f64, current: f64 },
    #[error("invalid variance {value} at sample {index}")]
    InvalidVariance { index: usize, value: f64 },
    #[error("non-finite LOS value at sample {0}")]
    NonFiniteValue(usize),
    #[error("unknown variance mode `{0}` (expected `paper` or `standard`)")]
    UnknownMode(String),
}

/// Calendar date to decimal year: `year + (day_of_year - 1) / 365.25`,
/// taking the date at 00:00 UTC.
pub fn decimal_year(date: NaiveDate) -> f64 {
    date.year() as f64 + date.ordinal0() as f64 / 365.25
}

/// Ordered union of all sensors' acquisition epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    epochs: Vec<f64>,
    dates: Option<Vec<NaiveDate>>,
    sensors: Vec<String>,
    // availability[s][k]: epoch k lies inside sensor s's acquisition span
    availability: Vec<Vec<bool>>,
}

/// Build the union grid from per-sensor acquisition dates.
pub fn build_union_grid(date_lists: &[(String, Vec<NaiveDate>)]) -> Result<TimeGrid, TimeGridError> {
    if date_lists.is_empty() {
        return Err(TimeGridError::EmptyInput);
    }
    let mut union = BTreeSet::new();
    for (sensor, dates) in date_lists {
        if dates.is_empty() {
            return Err(TimeGridError::EmptySensor(sensor.clone()));
        }
        union.extend(dates.iter().copied());
    }
    let dates: Vec<NaiveDate> = union.into_iter().collect();
    let epochs: Vec<f64> = dates.iter().copied().map(decimal_year).collect();
    let mut grid = TimeGrid::with_spans(
        epochs,
        date_lists.iter().map(|(sensor, d)| {
            let lo = decimal_year(*d.iter().min().unwrap());
            let hi = decimal_year(*d.iter().max().unwrap());
            (sensor.clone(), lo, hi)
        }),
    );
    grid.dates = Some(dates);
    Ok(grid)
}

impl TimeGrid {
    /// Union grid over per-sensor decimal-year epoch lists.
    pub fn from_epoch_lists(lists: &[(String, Vec<f64>)]) -> Result<Self, TimeGridError> {
        if lists.is_empty() {
            return Err(TimeGridError::EmptyInput);
        }
        let mut all = Vec::new();
        let mut spans = Vec::with_capacity(lists.len());
        for (sensor, epochs) in lists {
            if epochs.is_empty() {
                return Err(TimeGridError::EmptySensor(sensor.clone()));
            }
            if let Some(&bad) = epochs.iter().find(|t| !t.is_finite()) {
                return Err(TimeGridError::NonFiniteEpoch(bad));
            }
            let lo = epochs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = epochs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            spans.push((sensor.clone(), lo, hi));
            all.extend_from_slice(epochs);
        }
        all.sort_by(f64::total_cmp);
        all.dedup();
        Ok(Self::with_spans(all, spans))
    }

    /// A grid with no per-sensor bookkeeping. Epochs must be strictly increasing.
    pub fn from_epochs(epochs: Vec<f64>) -> Result<Self, TimeGridError> {
        check_increasing(&epochs)?;
        Ok(Self { epochs, dates: None, sensors: Vec::new(), availability: Vec::new() })
    }

    fn with_spans(epochs: Vec<f64>, spans: impl IntoIterator<Item = (String, f64, f64)>) -> Self {
        let (sensors, availability) = spans
            .into_iter()
            .map(|(sensor, lo, hi)| {
                let mask = epochs.iter().map(|&t| t >= lo && t <= hi).collect();
                (sensor, mask)
            })
            .unzip();
        Self { epochs, dates: None, sensors, availability }
    }

    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    pub fn dates(&self) -> Option<&[NaiveDate]> {
        self.dates.as_deref()
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn sensors(&self) -> &[String] {
        &self.sensors
    }

    /// Availability mask of one sensor, if the grid was built with it.
    pub fn availability(&self, sensor: &str) -> Option<&[bool]> {
        self.sensors.iter().position(|s| s == sensor).map(|i| self.availability[i].as_slice())
    }
}

fn check_increasing(epochs: &[f64]) -> Result<(), TimeGridError> {
    if let Some(&bad) = epochs.iter().find(|t| !t.is_finite()) {
        return Err(TimeGridError::NonFiniteEpoch(bad));
    }
    for (i, w) in epochs.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(TimeGridError::NonMonotonic { index: i + 1, previous: w[0], current: w[1] });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LosSample {
    /// Decimal year.
    pub epoch: f64,
    pub los_mm: f64,
    pub var_mm2: f64,
}

/// One pixel's LOS time series from one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LosSeries {
    sensor_id: String,
    pixel_id: String,
    samples: Vec<LosSample>,
}

impl LosSeries {
    pub fn new(
        sensor_id: impl Into<String>,
        pixel_id: impl Into<String>,
        samples: Vec<LosSample>,
    ) -> Result<Self, TimeGridError> {
        for (i, s) in samples.iter().enumerate() {
            if !s.epoch.is_finite() {
                return Err(TimeGridError::NonFiniteEpoch(s.epoch));
            }
            if !s.los_mm.is_finite() {
                return Err(TimeGridError::NonFiniteValue(i));
            }
            if !(s.var_mm2 >= 0.0) || !s.var_mm2.is_finite() {
                return Err(TimeGridError::InvalidVariance { index: i, value: s.var_mm2 });
            }
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].epoch <= w[0].epoch {
                return Err(TimeGridError::NonMonotonic {
                    index: i + 1,
                    previous: w[0].epoch,
                    current: w[1].epoch,
                });
            }
        }
        Ok(Self { sensor_id: sensor_id.into(), pixel_id: pixel_id.into(), samples })
    }

    pub fn sensor_id(&self) -> &str {
        &self.sensor_id
    }

    pub fn pixel_id(&self) -> &str {
        &self.pixel_id
    }

    pub fn samples(&self) -> &[LosSample] {
        &self.samples
    }
}

/// How the interpolated variance is propagated from the bracketing samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// `(f σ_b)² + (f σ_a)² + σ_a²`
    #[default]
    Paper,
    /// `f² σ_b² + (1 − f)² σ_a²`, the propagation for independent endpoints.
    Standard,
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceMode::Paper => "paper",
            VarianceMode::Standard => "standard",
        })
    }
}

impl FromStr for VarianceMode {
    type Err = TimeGridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(VarianceMode::Paper),
            "standard" => Ok(VarianceMode::Standard),
            other => Err(TimeGridError::UnknownMode(other.to_string())),
        }
    }
}

/// Linear interpolation between two samples at `t_c`, returning (value, variance).
pub fn interpolate_pair(a: &LosSample, b: &LosSample, t_c: f64, mode: VarianceMode) -> (f64, f64) {
    let f = (t_c - a.epoch) / (b.epoch - a.epoch);
    let value = f * (b.los_mm - a.los_mm) + a.los_mm;
    let var = match mode {
        VarianceMode::Paper => f * f * b.var_mm2 + f * f * a.var_mm2 + a.var_mm2,
        VarianceMode::Standard => f * f * b.var_mm2 + (1.0 - f) * (1.0 - f) * a.var_mm2,
    };
    (value, var)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolated {
    pub los_mm: f64,
    pub var_mm2: f64,
}

/// A LOS series aligned to a [`TimeGrid`]; `None` where the grid epoch lies
/// outside the series span.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledSeries {
    pub sensor_id: String,
    pub pixel_id: String,
    pub values: Vec<Option<Interpolated>>,
}

impl ResampledSeries {
    pub fn get(&self, k: usize) -> Option<Interpolated> {
        self.values.get(k).copied().flatten()
    }

    pub fn available_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// Resample one series onto the grid. No extrapolation beyond the series span.
pub fn interpolate_series(
    series: &LosSeries,
    grid: &TimeGrid,
    mode: VarianceMode,
) -> Result<ResampledSeries, TimeGridError> {
    let samples = series.samples();
    if samples.len() < 2 {
        return Err(TimeGridError::TooFewSamples(samples.len()));
    }
    let first = samples[0].epoch;
    let last = samples[samples.len() - 1].epoch;

    // index of the last sample with epoch <= t_c; grid is sorted so it only advances
    let mut a = 0;
    let values = grid
        .epochs()
        .iter()
        .map(|&t_c| {
            if t_c < first || t_c > last {
                return None;
            }
            while a + 1 < samples.len() && samples[a + 1].epoch <= t_c {
                a += 1;
            }
            let sa = &samples[a];
            if sa.epoch == t_c {
                return Some(Interpolated { los_mm: sa.los_mm, var_mm2: sa.var_mm2 });
            }
            let (los_mm, var_mm2) = interpolate_pair(sa, &samples[a + 1], t_c, mode);
            Some(Interpolated { los_mm, var_mm2 })
        })
        .collect();
    Ok(ResampledSeries {
        sensor_id: series.sensor_id().to_string(),
        pixel_id: series.pixel_id().to_string(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelFailure {
    pub pixel_id: String,
    pub error: TimeGridError,
}

impl fmt::Display for PixelFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pixel {}: {}", self.pixel_id, self.error)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ResampleOutcome {
    pub resampled: Vec<ResampledSeries>,
    pub failures: Vec<PixelFailure>,
}

/// Resample every pixel of one sensor. Failing pixels are listed, the rest
/// succeed; input order is preserved in both lists.
pub fn resample_dataset(series: &[LosSeries], grid: &TimeGrid, mode: VarianceMode) -> ResampleOutcome {
    let results: Vec<_> = series.par_iter().map(|s| (s, interpolate_series(s, grid, mode))).collect();
    let mut out = ResampleOutcome::default();
    for (s, r) in results {
        match r {
            Ok(r) => out.resampled.push(r),
            Err(error) => out.failures.push(PixelFailure { pixel_id: s.pixel_id().to_string(), error }),
        }
    }
    out
}
