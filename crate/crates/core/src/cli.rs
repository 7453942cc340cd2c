//! `gridforge` command line. Exit codes: 0 success, 1 invalid input,
//! 2 failure while running.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::aggregate::compare_controllers;
use crate::csv_out::write_csv;
use crate::error::{GridError, ScenarioError, SimError};
use crate::grid::{init_steady_state, BASE_KV, BASE_MVA};
use crate::presets;
use crate::scenario::ScenarioFile;
use crate::sim::{dispatch_targets, DeviceModel, Simulation};
use crate::stability::{characteristic_roots_b, check_stability, off_diagonal_b, Matrix3};

pub const OUT_ENV: &str = "GRIDFORGE_OUT";
const DEFAULT_OUT: &str = "results";
/// Step for the grid-gradient central difference in `linearize`, rad.
const GRADIENT_STEP: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "gridforge", version, about = "Phasor-domain grid simulator with dynamic-inertia VSG control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario file, a directory of them, or a preset, and write CSV.
    Simulate {
        scenario: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Linearize a VSG at a point of the run and report the stability verdict.
    Linearize {
        scenario: String,
        #[arg(long, default_value_t = 0.0)]
        at: f64,
        /// Device name; defaults to the first VSG.
        #[arg(long)]
        device: Option<String>,
    },
    /// Frequency cost of the reference controllers on the aggregate plant.
    OracleCompare { scenario: String },
    /// Print the converged initial power flow.
    Init { scenario: String },
    /// List the shipped presets, or write them as TOML files into a directory.
    Presets {
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidScenario(_) | SimError::Control(_) | SimError::Grid(_) => Failure::Invalid(e.to_string()),
            SimError::NonFiniteState { .. } | SimError::NonFiniteControl { .. } => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<GridError> for Failure {
    fn from(e: GridError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Scenario files named by `arg`: a file, every `*.toml` in a directory, or
/// a preset name.
fn resolve(arg: &str) -> Result<Vec<(String, ScenarioFile)>, Failure> {
    let path = Path::new(arg);
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| io_failure(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Failure::Invalid(format!("{arg}: no .toml scenarios in directory")));
        }
        return files.into_iter().map(|p| Ok((p.display().to_string(), ScenarioFile::load(&p)?))).collect();
    }
    if path.exists() {
        return Ok(vec![(arg.to_string(), ScenarioFile::load(path)?)]);
    }
    match presets::preset(arg.trim_end_matches(".toml")) {
        Some(f) => Ok(vec![(format!("preset {arg}"), f)]),
        None => Err(Failure::Invalid(format!("{arg}: no such scenario file or preset"))),
    }
}

fn single(arg: &str) -> Result<(String, ScenarioFile), Failure> {
    let mut files = resolve(arg)?;
    if files.len() != 1 {
        return Err(Failure::Invalid(format!("{arg}: expected a single scenario")));
    }
    Ok(files.remove(0))
}

fn out_dir(flag: Option<PathBuf>, file: &ScenarioFile) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| file.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn simulate(
    arg: &str,
    out: Option<PathBuf>,
    dt: Option<f64>,
    duration: Option<f64>,
    stdout: &mut dyn Write,
) -> Result<(), Failure> {
    for (origin, mut file) in resolve(arg)? {
        if let Some(dt) = dt {
            file.sim.dt_s = dt;
        }
        if let Some(d) = duration {
            file.sim.duration_s = d;
        }
        let scenario = file.to_scenario()?;
        let result = Simulation::new(scenario)?.run()?;

        let dir = out_dir(out.clone(), &file);
        std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
        let csv = dir.join(format!("{}.csv", file.name));
        write_csv(&result, &csv).map_err(|e| Failure::Runtime(e.to_string()))?;
        let echo = dir.join(format!("{}.scenario.toml", file.name));
        let text = format!("# materialized scenario, source: {origin}\n{}", file.echo());
        std::fs::write(&echo, text).map_err(|e| io_failure(&echo, e))?;

        let m = &result.metrics;
        let recovery = m.recovery_s.map_or("none".to_string(), |r| format!("{r:.3} s"));
        let _ = writeln!(
            stdout,
            "{}: nadir {:.4} Hz, RoCoF {:.3} Hz/s, recovery {recovery}, angle spread {:.3} rad, survival {} -> {}",
            file.name,
            m.nadir_hz,
            m.rocof_max_hz_s,
            m.max_angle_spread_rad,
            m.survival,
            csv.display()
        );
    }
    Ok(())
}

fn matrix_rows(m: &Matrix3) -> String {
    (0..3)
        .map(|r| format!("  [{:>14.6e} {:>14.6e} {:>14.6e}]", m[(r, 0)], m[(r, 1)], m[(r, 2)]))
        .collect::<Vec<_>>()
        .join("\n")
}

fn linearize(arg: &str, at: f64, device: Option<String>, stdout: &mut dyn Write) -> Result<(), Failure> {
    let (_, file) = single(arg)?;
    let mut sim = Simulation::new(file.to_scenario()?)?;
    sim.advance_to(at)?;
    let n = file.devices.len();
    let index = match &device {
        Some(name) => file
            .devices
            .iter()
            .position(|d| &d.name == name)
            .ok_or_else(|| Failure::Invalid(format!("no device named {name}")))?,
        None => (0..n)
            .find(|&k| matches!(sim.device_spec(k).model, DeviceModel::Vsg(_)) && sim.is_online(k))
            .ok_or_else(|| Failure::Invalid(format!("{}: no online VSG to linearize", file.name)))?,
    };
    let (point, params) = sim.linearization_point(index, GRADIENT_STEP)?;
    let report = check_stability(&point, &params);
    let b = off_diagonal_b(&point, &params);

    let mut text = format!(
        "scenario: {}\ndevice: {} at t = {} s\npoint: omega0={:.6e} theta0={:.6e} gamma0={:.6e} f_ref0={:.6e} grad_f_ref0={:.6e} grad_f_max0={:.6e}\n",
        file.name,
        sim.device_spec(index).name,
        point.t0,
        point.omega0,
        point.theta0,
        point.gamma0,
        point.f_ref0,
        point.grad_f_ref0,
        point.grad_f_max0
    );
    text += &format!(
        "A:\n{}\ndet(A) = {:.6e} (row-equilibrated {:.6e})\n",
        matrix_rows(&report.a),
        report.det_a,
        report.det_balanced
    );
    let eig: Vec<String> = report.eigenvalues_a.iter().map(|z| format!("{:.6e}{:+.6e}i", z.re, z.im)).collect();
    text += &format!("eigenvalues(A): {}\nB:\n{}\n", eig.join(", "), matrix_rows(&b));
    match characteristic_roots_b(&point, &params) {
        Ok(roots) => {
            let r: Vec<String> = roots.iter().map(|z| format!("{:.6e}{:+.6e}i", z.re, z.im)).collect();
            text += &format!("roots(B): {}\n", r.join(", "));
        }
        Err(e) => text += &format!("roots(B): {e}\n"),
    }
    text += &format!("verdict: {}\n", if report.stable { "certified stable" } else { "not certified" });
    let _ = stdout.write_all(text.as_bytes());
    Ok(())
}

fn oracle_compare(arg: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    let (_, file) = single(arg)?;
    let setup = file.oracle_setup()?;
    let costs = compare_controllers(&setup.plant, &setup.vsg, setup.p_sync, setup.dt)?;
    let mut text = format!("{:<28} {:>14}\n", "controller", "cost_pu2s");
    for c in costs {
        text += &format!("{:<28} {:>14.6e}\n", c.name, c.cost);
    }
    let _ = stdout.write_all(text.as_bytes());
    Ok(())
}

fn init(arg: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    let (_, file) = single(arg)?;
    let scenario = file.to_scenario()?;
    let ss = init_steady_state(&scenario.grid, &dispatch_targets(&scenario.devices))?;
    let mut text = format!(
        "scenario: {}\nconverged in {} iterations, mismatch {:.3e} pu\n{:>5} {:>10} {:>10} {:>10}\n",
        file.name, ss.iterations, ss.mismatch, "bus", "v_pu", "v_kv", "angle_deg"
    );
    for (bus, v) in scenario.grid.buses.iter().zip(&ss.bus_voltages) {
        text +=
            &format!("{:>5} {:>10.5} {:>10.3} {:>10.4}\n", bus.id, v.norm(), v.norm() * BASE_KV, v.arg().to_degrees());
    }
    text += &format!("{:<10} {:>10} {:>10} {:>10} {:>10}\n", "device", "p_mw", "q_mvar", "emf_pu", "emf_deg");
    for (d, op) in scenario.devices.iter().zip(&ss.devices) {
        text += &format!(
            "{:<10} {:>10.3} {:>10.3} {:>10.5} {:>10.4}\n",
            d.name,
            op.p * BASE_MVA,
            op.q * BASE_MVA,
            op.emf.norm(),
            op.emf.arg().to_degrees()
        );
    }
    let _ = stdout.write_all(text.as_bytes());
    Ok(())
}

fn write_presets(dir: Option<PathBuf>, stdout: &mut dyn Write) -> Result<(), Failure> {
    let Some(dir) = dir else {
        for name in presets::preset_names() {
            let _ = writeln!(stdout, "{name}");
        }
        return Ok(());
    };
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    for name in presets::preset_names() {
        let file = presets::preset(&name).expect("listed preset exists");
        let path = dir.join(format!("{name}.toml"));
        std::fs::write(&path, file.echo()).map_err(|e| io_failure(&path, e))?;
    }
    Ok(())
}

/// Run the CLI with explicit output streams; returns the exit code.
pub fn run_cli(argv: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let _ = write!(stderr, "{e}");
            return 1;
        }
    };
    let outcome = match cli.command {
        Command::Simulate { scenario, out, dt, duration } => simulate(&scenario, out, dt, duration, stdout),
        Command::Linearize { scenario, at, device } => linearize(&scenario, at, device, stdout),
        Command::OracleCompare { scenario } => oracle_compare(&scenario, stdout),
        Command::Init { scenario } => init(&scenario, stdout),
        Command::Presets { write } => write_presets(write, stdout),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Invalid(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            2
        }
    }
}

pub fn cli_dispatch(argv: Vec<String>) -> i32 {
    run_cli(&argv, &mut std::io::stdout(), &mut std::io::stderr())
}
