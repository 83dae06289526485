use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fusion3d::fixtures;
use fusion3d::io::{fmt_num, GnssConfig, RunConfig, TrajectoryFormat, ValidationConfig};
use fusion3d::pipeline::{self, PipelineError, RunSummary};
use fusion3d::synth::Scenario;
use fusion3d::{LookSide, SensorGeometry, VarianceMode};

/// Fuse multi-geometry InSAR LOS time series with GNSS velocities into 3D displacement.
#[derive(Parser)]
#[command(name = "fusion3d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline described by a config file.
    Fuse(RunArgs),
    /// Resample LOS files onto the union epoch grid only.
    Resample(RunArgs),
    /// Write a synthetic data set and the 3D vs 2D benchmark.
    Synth(SynthArgs),
    /// Compare a velocity map against GNSS check stations.
    Validate(ValidateArgs),
    /// Print LOS unit vectors (east, north, up).
    Geom(GeomArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, env = "FUSION3D_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    variance_mode: Option<VarianceMode>,
    /// Distance scale of the GNSS variance inflation, km.
    #[arg(long)]
    scale_km: Option<f64>,
    /// Vertical random-walk density, mm²/yr.
    #[arg(long)]
    q_z: Option<f64>,
    #[arg(long)]
    trajectory_format: Option<TrajectoryFormat>,
    #[arg(long)]
    gnss_file: Option<PathBuf>,
    #[arg(long)]
    reference_station: Option<String>,
    #[arg(long)]
    radius_m: Option<f64>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::from_file(&self.config).map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.variance_mode {
            cfg.variance_mode = v;
        }
        if let Some(v) = self.scale_km {
            cfg.scale_km = v;
        }
        if let Some(v) = self.q_z {
            cfg.q_z = v;
        }
        if let Some(v) = self.trajectory_format {
            cfg.trajectory_format = v;
        }
        if let Some(v) = &self.gnss_file {
            match &mut cfg.gnss {
                Some(g) => g.file = v.clone(),
                None => cfg.gnss = Some(GnssConfig { file: v.clone(), tie: None, check: None, random_check_fraction: None }),
            }
        }
        if let Some(v) = &self.reference_station {
            cfg.validation.reference_station = Some(v.clone());
        }
        if let Some(v) = self.radius_m {
            cfg.validation.radius_m = v;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario file (TOML); the built-in three-sensor scenario if omitted.
    #[arg(short, long)]
    scenario: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    pixels: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    q_z: Option<f64>,
    #[arg(long, env = "FUSION3D_WORKERS", default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct ValidateArgs {
    /// Velocity map written by `fuse`.
    #[arg(long)]
    velocities: PathBuf,
    #[arg(long)]
    gnss_file: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = fusion3d::validation::DEFAULT_RADIUS_M)]
    radius_m: f64,
    /// mm/yr
    #[arg(long, default_value_t = 1.0)]
    histogram_bin: f64,
}

#[derive(Args)]
struct GeomArgs {
    /// Print the sensors of this run configuration.
    #[arg(short, long, conflicts_with_all = ["incidence", "heading"])]
    config: Option<PathBuf>,
    #[arg(long, requires = "heading")]
    incidence: Option<f64>,
    #[arg(long, requires = "incidence")]
    heading: Option<f64>,
    #[arg(long, default_value_t = LookSide::Right)]
    look_side: LookSide,
}

fn report(summary: &RunSummary) {
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    println!("pixels: {}  epochs: {}", summary.pixels, summary.epochs);
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    if let Some(v) = &summary.validation {
        print!("{}", v.summary());
    }
}

fn print_geometries(geoms: &[SensorGeometry]) {
    println!("sensor,incidence_deg,heading_deg,look_side,c_east,c_north,c_up");
    for g in geoms {
        let c = g.unit_vector();
        println!(
            "{},{},{},{},{},{},{}",
            g.sensor_id(),
            fmt_num(g.incidence_deg()),
            fmt_num(g.heading_deg()),
            g.look_side(),
            fmt_num(c.x),
            fmt_num(c.y),
            fmt_num(c.z)
        );
    }
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario, PipelineError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?,
        None => fusion3d::synth::DEFAULT_SCENARIO_TOML.to_string(),
    };
    Scenario::from_toml(&text).map_err(|e| PipelineError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Fuse(args) => report(&pipeline::run_pipeline(&args.load()?)?),
        Command::Resample(args) => report(&pipeline::run_resample(&args.load()?)?),
        Command::Synth(args) => {
            let mut scenario = load_scenario(args.scenario.as_deref())?;
            if let Some(v) = args.pixels {
                scenario.pixels = v;
            }
            if let Some(v) = args.seed {
                scenario.seed = v;
            }
            if let Some(v) = args.q_z {
                scenario.q_z = v;
            }
            let out = pipeline::with_workers(args.workers, || pipeline::write_synthetic_dataset(&scenario, &args.out))??;
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            let (f, b) = (out.comparison.fused_common.rmse(), out.comparison.baseline.rmse());
            println!("rmse_mm        dx        dy        dz");
            println!("3d filter {:9.4} {:9.4} {:9.4}", f[0], f[1], f[2]);
            println!("2d        {:9.4} {:9.4} {:9.4}", b[0], b[1], b[2]);
        }
        Command::Validate(args) => {
            let gnss = GnssConfig { file: args.gnss_file, tie: None, check: None, random_check_fraction: None };
            let v = ValidationConfig { reference_station: None, radius_m: args.radius_m, histogram_bin: args.histogram_bin };
            let (report, files) = pipeline::run_validate(&args.velocities, &gnss, 0, &v, &args.out)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            print!("{}", report.summary());
        }
        Command::Geom(args) => {
            let geoms = if let Some(path) = &args.config {
                let cfg = RunConfig::from_file(path).map_err(|e| PipelineError::Config(e.to_string()))?;
                cfg.sensor_set().map_err(PipelineError::Config)?.iter().cloned().collect()
            } else if let (Some(inc), Some(head)) = (args.incidence, args.heading) {
                vec![SensorGeometry::new("sensor", inc, head, args.look_side)
                    .map_err(|e| PipelineError::Config(e.to_string()))?]
            } else {
                fixtures::geometries()
            };
            print_geometries(&geoms);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
