use std::path::Path;
use std::process::Command;

use fusion3d::gnss_field::{build_priors, PriorParams, StationRole};
use fusion3d::io::{self, GnssConfig, RunConfig, TrajectoryFormat};
use fusion3d::pipeline::{self, assign_roles, PipelineError};
use fusion3d::synth::{Scenario, DEFAULT_SCENARIO_TOML};

fn small_scenario(pixels: usize) -> Scenario {
    let mut s = Scenario::from_toml(DEFAULT_SCENARIO_TOML).unwrap();
    s.pixels = pixels;
    s
}

fn dataset(dir: &Path, pixels: usize) -> RunConfig {
    let out = pipeline::write_synthetic_dataset(&small_scenario(pixels), dir).unwrap();
    RunConfig::from_file(&out.config).unwrap()
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fusion3d")).args(args).output().unwrap()
}

#[test]
fn fuse_writes_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 16);
    let summary = pipeline::run_pipeline(&cfg).unwrap();
    assert_eq!((summary.pixels, summary.epochs), (16, 74));
    for name in [
        "grid.csv",
        "resampled_alos_asc.csv",
        "resampled_envisat_asc.csv",
        "resampled_envisat_des.csv",
        "priors.csv",
        "trajectories.csv",
        "velocities.csv",
        "validation_stations.csv",
        "validation_histogram.csv",
        "validation_summary.txt",
    ] {
        assert!(cfg.output_dir.join(name).is_file(), "{name} missing");
    }
    let rows = std::fs::read_to_string(cfg.output_dir.join("trajectories.csv")).unwrap().lines().count();
    assert_eq!(rows, 16 * 74 + 1);

    let v = io::ingest_velocities(&cfg.output_dir.join("velocities.csv")).unwrap();
    assert_eq!(v.len(), 16);
    assert!(v.iter().all(|p| p.velocity.x == 5.0 && p.velocity.y == 10.0));
    let report = summary.validation.unwrap();
    let std = report.std.unwrap();
    assert!(std[0] < 1e-12 && std[1] < 1e-12, "{std:?}");
}

#[test]
fn raster_export_writes_three_files_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = dataset(dir.path(), 4);
    cfg.trajectory_format = TrajectoryFormat::PerEpochRaster;
    pipeline::run_pipeline(&cfg).unwrap();
    let n = std::fs::read_dir(cfg.output_dir.join("trajectories")).unwrap().count();
    assert_eq!(n, 3 * 74);
}

#[test]
fn resampled_output_reingests_at_stored_precision() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 4);
    pipeline::run_resample(&cfg).unwrap();
    let path = cfg.output_dir.join("resampled_envisat_asc.csv");
    let first = io::ingest_los(&path, "envisat_asc").unwrap();
    let again = dir.path().join("again.csv");
    let rows: Vec<_> = first
        .pixels
        .iter()
        .flat_map(|(id, p)| {
            p.series.samples().iter().zip(&first.dates).map(move |(s, &d)| (id.as_str(), p.lon, p.lat, d, s.los_mm, s.var_mm2))
        })
        .collect();
    io::write_los(&again, rows).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    // envisat_asc starts after the grid does, so it covers fewer epochs
    assert!(first.dates.len() < 74);
}

#[test]
fn check_stations_do_not_touch_priors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 9);
    let mut stations = io::ingest_gnss(&cfg.gnss.as_ref().unwrap().file).unwrap();
    for (i, s) in stations.iter_mut().enumerate() {
        s.vx += i as f64;
    }
    let pixels: Vec<_> = (0..9)
        .map(|i| {
            let (lon, lat) = small_scenario(9).pixel_location(i);
            fusion3d::PixelLocation { pixel_id: Scenario::pixel_id(i), lon, lat }
        })
        .collect();
    let all = build_priors(&stations, &pixels, &PriorParams::default()).unwrap();
    let tie_only: Vec<_> = stations.iter().filter(|s| s.role == StationRole::Tie).cloned().collect();
    let ties = build_priors(&tie_only, &pixels, &PriorParams::default()).unwrap();
    assert_eq!(all.priors, ties.priors);
}

#[test]
fn role_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 4);
    let file = cfg.gnss.unwrap().file;
    let base = io::ingest_gnss(&file).unwrap();
    let split = |g: &GnssConfig, seed| {
        let mut s = base.clone();
        assign_roles(&mut s, g, seed).map(|_| s.iter().filter(|s| s.role == StationRole::Check).count())
    };
    let random = GnssConfig { file: file.clone(), tie: None, check: None, random_check_fraction: Some(0.5) };
    assert_eq!(split(&random, 1).unwrap(), (base.len() as f64 * 0.5).round() as usize);
    let explicit = GnssConfig { file: file.clone(), tie: None, check: Some(vec!["T000".into()]), random_check_fraction: None };
    assert_eq!(split(&explicit, 0).unwrap(), 1);
    let unknown = GnssConfig { file, tie: Some(vec!["NOPE".into()]), check: None, random_check_fraction: None };
    assert!(matches!(split(&unknown, 0), Err(PipelineError::Config(_))));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.toml");
    std::fs::write(&cfg, "sensors = []\n").unwrap();
    let out = cli(&["fuse", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least one sensor"));

    let data = dir.path().join("data");
    let cfg = dataset(&data, 4);
    let los = &cfg.sensors[0].los_file;
    let text = std::fs::read_to_string(los).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = lines[3].rsplit_once(',').map(|(head, _)| format!("{head},-1")).unwrap();
    std::fs::write(los, lines.join("\n")).unwrap();
    let out = cli(&["fuse", "-c", data.join("run.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ingest") && err.contains("line 4"), "{err}");

    let out = cli(&["geom", "--incidence", "23", "--heading", "193"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sensor,23,193,right,0.380717,-0.0878954,0.920505"));
    assert_eq!(cli(&["geom", "--incidence", "95", "--heading", "10"]).status.code(), Some(1));
}

#[test]
fn validate_subcommand_reads_fuse_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path(), 9);
    pipeline::run_pipeline(&cfg).unwrap();
    let out_dir = dir.path().join("val");
    let out = cli(&[
        "validate",
        "--velocities",
        cfg.output_dir.join("velocities.csv").to_str().unwrap(),
        "--gnss-file",
        cfg.gnss.as_ref().unwrap().file.to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // fuse validates full-precision velocities, validate reads the rounded file
    let table = |p: &Path| -> Vec<Vec<String>> {
        std::fs::read_to_string(p).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
    };
    let (a, b) = (table(&out_dir.join("validation_stations.csv")), table(&cfg.output_dir.join("validation_stations.csv")));
    assert_eq!(a.len(), b.len());
    assert_eq!(a[0], b[0]);
    for (ra, rb) in a[1..].iter().zip(&b[1..]) {
        assert_eq!(ra[..2], rb[..2]);
        for (x, y) in ra[2..].iter().zip(&rb[2..]) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= 1e-5 * y.abs().max(1.0), "{x} vs {y}");
        }
    }
}
