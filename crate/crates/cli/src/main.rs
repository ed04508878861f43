//! `beaconpark`: calibrate path-loss models, replay the distance and
//! proximity experiments in simulation, and serve the parking lot.
//!
//! Exit codes: 0 success, 1 runtime error, 2 input error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, Context};
use beaconpark_core::parking::protocol::{Clock, SimulatedClock, SystemClock};
use beaconpark_core::parking::server::Server;
use beaconpark_core::pathloss::{fit_model, CalibrationDataset, ModelError, PathLossModel};
use beaconpark_core::simulator::{
    calibrate_noise, calibration_distances, generate_calibration, particle_sweep, percentile,
    run_distance_experiment, run_proximity_experiment, write_distance_csv, write_proximity_csv, Grid, Scenario,
    ScenarioFile,
};
use beaconpark_core::{LotConfig, ParkingService, StubGateway};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "beaconpark", version, about = "Beacon proximity estimation and parking lot service")]
struct Cli {
    /// Master seed; overrides the seed in scenario files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for results and the run manifest.
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a path-loss model to a calibration CSV (distance_m,rssi_dbm).
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a simulated calibration CSV.
    Simulate {
        #[arg(long, value_enum, default_value_t = Environment::Indoor)]
        model: Environment,
        /// Shadowing standard deviation, dB.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Seconds captured per distance (one advertisement per second).
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distance-estimation experiment; writes distance.csv and distance_cdf.csv.
    Distance {
        #[arg(long)]
        scenario: PathBuf,
        /// Sweep the particle count from 200 to 2000.
        #[arg(long)]
        sweep: bool,
    },
    /// Proximity-identification experiment; writes proximity.csv.
    Proximity {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Pick the shadowing sigma whose raw accuracy at (x, y) matches a target,
    /// and write the scenario back with that sigma.
    TuneNoise {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        y: f64,
        /// Target raw accuracy as a fraction.
        #[arg(long)]
        target: f64,
        #[arg(long, default_value_t = 3)]
        repetitions: u32,
    },
    /// Serve the parking line protocol over TCP.
    Serve {
        #[arg(long)]
        lot: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7070")]
        bind: String,
        #[arg(long, value_enum, default_value_t = ClockKind::System)]
        clock: ClockKind,
        /// Event journal; defaults to journal.jsonl in the output directory.
        #[arg(long)]
        journal: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Environment {
    Indoor,
    Outdoor,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ClockKind {
    System,
    Simulated,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

type CmdResult = Result<(), Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

#[derive(Serialize)]
struct Versions {
    beaconpark: &'static str,
    core: &'static str,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    scenario_path: Option<&'a Path>,
    seed: u64,
    output_dir: &'a Path,
    versions: Versions,
}

/// Writes `bytes` to `path` via a temp file in the same directory and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| anyhow!(e.error))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_manifest(dir: &Path, command: &str, scenario_path: Option<&Path>, seed: u64) -> CmdResult {
    let manifest = RunManifest {
        command,
        scenario_path,
        seed,
        output_dir: dir,
        versions: Versions {
            beaconpark: env!("CARGO_PKG_VERSION"),
            core: beaconpark_core::VERSION,
        },
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(runtime)?;
    write_atomic(&dir.join("manifest.json"), &json).map_err(runtime)
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioFile, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input)?;
    let mut file = ScenarioFile::from_json(&text)
        .with_context(|| format!("invalid scenario {}", path.display()))
        .map_err(input)?;
    if let Some(seed) = seed {
        file.scenario.seed = seed;
        file.filter.seed = seed;
    }
    Ok(file)
}

fn fmt_interval((lo, hi): (f64, f64)) -> String {
    if lo.is_finite() && hi.is_finite() {
        format!("[{lo:.4}, {hi:.4}]")
    } else {
        "unbounded".to_string()
    }
}

fn cmd_calibrate(cli: &Cli, csv: &Path, out: &Path) -> CmdResult {
    let file = std::fs::File::open(csv)
        .with_context(|| format!("reading {}", csv.display()))
        .map_err(input)?;
    let data = CalibrationDataset::from_csv(file).map_err(input)?;
    let fit = fit_model(&data).map_err(input)?;
    // the fit is the result file; its directory gets the manifest
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_manifest(dir, "calibrate", None, cli.seed.unwrap_or(0))?;
    let json = serde_json::to_vec_pretty(&fit).map_err(runtime)?;
    write_atomic(out, &json).map_err(runtime)?;
    println!("n = {:.6} 95% CI {}", fit.model.n, fmt_interval(fit.n_ci95));
    println!("C = {:.6} 95% CI {}", fit.model.c, fmt_interval(fit.c_ci95));
    println!("residual std = {:.6} dB", fit.residual_std);
    Ok(())
}

fn cmd_simulate(cli: &Cli, env: Environment, sigma: f64, duration: f64, out: &Path) -> CmdResult {
    let model = match env {
        Environment::Indoor => PathLossModel::INDOOR,
        Environment::Outdoor => PathLossModel::OUTDOOR,
    };
    let seed = cli.seed.unwrap_or(0);
    let scenario = Scenario::new(model, sigma, duration, seed);
    scenario.validate().map_err(input)?;
    let data = generate_calibration(&scenario, &calibration_distances()).map_err(runtime)?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_manifest(dir, "simulate", None, seed)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf).map_err(runtime)?;
    write_atomic(out, &buf).map_err(runtime)
}

fn cmd_distance(cli: &Cli, path: &Path, sweep: bool) -> CmdResult {
    let file = load_scenario(path, cli.seed)?;
    let Grid::Distances(distances) = &file.experiment.grid else {
        return Err(input(anyhow!("distance experiment needs a list of distances as its grid")));
    };
    let counts = if sweep {
        particle_sweep()
    } else {
        vec![file.filter.particle_count]
    };
    write_manifest(&cli.out_dir, "distance", Some(path), file.scenario.seed)?;

    let mut reports = Vec::new();
    for n in counts {
        let config = file.filter.with_particles(n);
        let report = run_distance_experiment(&file.scenario, distances, &config, file.experiment.repetitions)
            .map_err(|e| match e {
                beaconpark_core::SimError::Scenario(_) => input(e),
                e => runtime(e),
            })?;
        log::info!("N = {n}: done");
        reports.push(report);
    }

    let mut table = Vec::new();
    write_distance_csv(&mut table, &reports).map_err(runtime)?;
    write_atomic(&cli.out_dir.join("distance.csv"), &table).map_err(runtime)?;

    let mut cdf = String::from("particles,quantile,raw_error_m,filtered_error_m\n");
    for report in &reports {
        let (raw, filtered) = (report.raw_step_errors(), report.filtered_step_errors());
        for q in 0..=100 {
            let q = q as f64 / 100.0;
            cdf.push_str(&format!(
                "{},{q:.2},{:.4},{:.4}\n",
                report.particles,
                percentile(&raw, q),
                percentile(&filtered, q)
            ));
        }
    }
    write_atomic(&cli.out_dir.join("distance_cdf.csv"), cdf.as_bytes()).map_err(runtime)?;
    println!("wrote {}", cli.out_dir.join("distance.csv").display());
    Ok(())
}

fn cmd_proximity(cli: &Cli, path: &Path) -> CmdResult {
    let file = load_scenario(path, cli.seed)?;
    let Grid::Pairs(pairs) = &file.experiment.grid else {
        return Err(input(anyhow!("proximity experiment needs a list of [X, Y] pairs as its grid")));
    };
    write_manifest(&cli.out_dir, "proximity", Some(path), file.scenario.seed)?;
    let cells = run_proximity_experiment(&file.scenario, pairs, &file.filter, file.experiment.repetitions)
        .map_err(|e| match e {
            beaconpark_core::SimError::Scenario(_) => input(e),
            e => runtime(e),
        })?;
    let mut buf = Vec::new();
    write_proximity_csv(&mut buf, &cells).map_err(runtime)?;
    write_atomic(&cli.out_dir.join("proximity.csv"), &buf).map_err(runtime)?;
    println!("wrote {}", cli.out_dir.join("proximity.csv").display());
    Ok(())
}

fn cmd_tune_noise(cli: &Cli, path: &Path, x: f64, y: f64, target: f64, reps: u32) -> CmdResult {
    if !(0.0..=1.0).contains(&target) || !(x > 0.0 && y > 0.0) || reps == 0 {
        return Err(input(anyhow!("need X > 0, Y > 0, target in [0, 1], repetitions >= 1")));
    }
    let mut file = load_scenario(path, cli.seed)?;
    write_manifest(&cli.out_dir, "tune-noise", Some(path), file.scenario.seed)?;
    let sigma = calibrate_noise(&file.scenario, x, y, target, reps).map_err(runtime)?;
    file.scenario.noise_sigma_db = sigma;
    let json = serde_json::to_vec_pretty(&file).map_err(runtime)?;
    write_atomic(&cli.out_dir.join("scenario.json"), &json).map_err(runtime)?;
    println!("noise_sigma_db = {sigma}");
    Ok(())
}

fn cmd_serve(cli: &Cli, lot: &Path, bind: &str, clock: ClockKind, journal: Option<&Path>) -> CmdResult {
    let config = LotConfig::load(lot).map_err(input)?;
    let journal = journal.map(Path::to_path_buf).unwrap_or_else(|| cli.out_dir.join("journal.jsonl"));
    if let Some(dir) = journal.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(runtime)?;
    }
    let service = ParkingService::open(&config, &journal, StubGateway::default()).map_err(|e| match e {
        beaconpark_core::ParkingError::Config(_) => input(e),
        e => runtime(e),
    })?;
    let clock: Arc<dyn Clock> = match clock {
        ClockKind::System => Arc::new(SystemClock),
        ClockKind::Simulated => Arc::new(SimulatedClock::new(0)),
    };
    let server = Server::bind(bind, Arc::new(Mutex::new(service)), clock)
        .with_context(|| format!("binding {bind}"))
        .map_err(runtime)?;
    let addr = server.local_addr().map_err(runtime)?;
    println!("listening on {addr}");
    std::io::stdout().flush().map_err(runtime)?;
    server.run();
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Calibrate { input, out } => cmd_calibrate(cli, input, out),
        Command::Simulate {
            model,
            sigma,
            duration,
            out,
        } => cmd_simulate(cli, *model, *sigma, *duration, out),
        Command::Distance { scenario, sweep } => cmd_distance(cli, scenario, *sweep),
        Command::Proximity { scenario } => cmd_proximity(cli, scenario),
        Command::TuneNoise {
            scenario,
            x,
            y,
            target,
            repetitions,
        } => cmd_tune_noise(cli, scenario, *x, *y, *target, *repetitions),
        Command::Serve {
            lot,
            bind,
            clock,
            journal,
        } => cmd_serve(cli, lot, bind, *clock, journal.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            match e.downcast_ref::<ModelError>() {
                Some(ModelError::RankDeficient) => eprintln!("ERR rank-deficient"),
                _ => eprintln!("ERR input: {e:#}"),
            }
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("ERR {e:#}");
            ExitCode::from(1)
        }
    }
}
