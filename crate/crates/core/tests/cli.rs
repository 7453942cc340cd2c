use std::path::Path;

use gridforge_core::cli::run_cli;
use gridforge_core::csv_out::parse_csv;

fn cli(args: &[&str]) -> (i32, String, String) {
    let argv: Vec<String> = std::iter::once("gridforge").chain(args.iter().copied()).map(String::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_cli(&argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn scenario_file(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const SMALL: &str = r#"
name = "small"
[sim]
duration_s = 0.5

[[grid.buses]]
id = 1
kind = "device"

[[grid.buses]]
id = 2
kind = "load"

[[grid.lines]]
id = 1
from = 1
to = 2
x_pu = 0.1

[[grid.loads]]
bus = 2
p_mw = 50.0
q_mvar = 10.0

[[devices]]
name = "inv"
bus = 1
kind = "vsg"
p_dispatch_mw = 50.0
v_target_pu = 1.0

[devices.vsg]
p_max_mw = 100.0
p_min_mw = 0.0

[[events]]
time_s = 0.2
kind = "load_step"
bus = 2
dp_mw = 5.0
"#;

#[test]
fn simulate_writes_csv_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario_file(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let (code, stdout, stderr) = cli(&["simulate", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("small:"), "{stdout}");

    let csv = std::fs::read_to_string(out.join("small.csv")).unwrap();
    let parsed = parse_csv(&csv).unwrap();
    assert_eq!(parsed.device_names, vec!["inv"]);
    assert_eq!(parsed.column("t").unwrap().len(), 51);
    assert!(parsed.column("inv_p_out_mw").is_some());
    assert!(parsed.column("bus2_v_kv").is_some());

    let echo = std::fs::read_to_string(out.join("small.scenario.toml")).unwrap();
    assert!(echo.starts_with("# "));
    let again = scenario_file(dir.path(), "again.toml", &echo);
    let (code, _, stderr) = cli(&["simulate", &again, "--out", dir.path().join("out2").to_str().unwrap()]);
    assert_eq!(code, 0, "{stderr}");
    assert_eq!(csv, std::fs::read_to_string(dir.path().join("out2").join("small.csv")).unwrap());
}

#[test]
fn dt_and_duration_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario_file(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("o");
    let (code, _, err) =
        cli(&["simulate", &path, "--out", out.to_str().unwrap(), "--dt", "0.002", "--duration", "0.2"]);
    assert_eq!(code, 0, "{err}");
    let parsed = parse_csv(&std::fs::read_to_string(out.join("small.csv")).unwrap()).unwrap();
    let t = parsed.column("t").unwrap();
    assert_eq!(t.len(), 11);
    assert!((t[1] - 0.02).abs() < 1e-12);
}

#[test]
fn directory_runs_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("scen");
    std::fs::create_dir(&scen).unwrap();
    scenario_file(&scen, "a.toml", SMALL);
    scenario_file(&scen, "b.toml", &SMALL.replace("name = \"small\"", "name = \"other\""));
    let out = dir.path().join("o");
    let (code, _, err) = cli(&["simulate", scen.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.join("small.csv").exists() && out.join("other.csv").exists());
}

#[test]
fn invalid_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = cli(&["simulate", "/nonexistent/x.toml"]);
    assert_eq!(code, 1);
    assert!(err.contains("error"));

    let bad = scenario_file(dir.path(), "bad.toml", &format!("{SMALL}\nbogus = 1\n"));
    let (code, _, err) = cli(&["simulate", &bad, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("bogus"), "{err}");

    let dangling = scenario_file(dir.path(), "dangling.toml", &SMALL.replace("to = 2", "to = 7"));
    assert_eq!(cli(&["simulate", &dangling, "--out", dir.path().to_str().unwrap()]).0, 1);

    let (code, _, err) = cli(&["simulate", "x", "--frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"));
    assert_eq!(cli(&[]).0, 1);
}

#[test]
fn help_exits_zero() {
    let (code, out, _) = cli(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["simulate", "linearize", "oracle-compare", "init"] {
        assert!(out.contains(sub), "{out}");
    }
}

#[test]
fn init_prints_power_flow() {
    let (code, out, err) = cli(&["init", "nine_bus_3sg_loadstep"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("converged"));
    let bus1 = out.lines().find(|l| l.trim_start().starts_with("1 ")).unwrap();
    assert!(bus1.contains("1.04000"), "{bus1}");
}

#[test]
fn linearize_reports_a_verdict() {
    let (code, out, err) = cli(&["linearize", "nine_bus_3ibr_loadstep", "--at", "0.5"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("det(A)"));
    assert!(out.contains("verdict: "));
    let (code, _, _) = cli(&["linearize", "nine_bus_3sg_loadstep"]);
    assert_eq!(code, 1, "no VSG to linearize");
    let (code, _, _) = cli(&["linearize", "nine_bus_3ibr_loadstep", "--device", "nope"]);
    assert_eq!(code, 1);
}

#[test]
fn oracle_compare_orders_controllers() {
    let (code, out, err) = cli(&["oracle-compare", "nine_bus_3ibr_loadstep"]);
    assert_eq!(code, 0, "{err}");
    let costs: Vec<f64> = out.lines().skip(1).map(|l| l.split_whitespace().last().unwrap().parse().unwrap()).collect();
    assert_eq!(costs.len(), 5);
    assert!(costs[0] <= costs[1] && costs[1] <= costs[2]);
}

#[test]
fn presets_list_and_write() {
    let (code, out, _) = cli(&["presets"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), 20);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["presets", "--write", dir.path().to_str().unwrap()]).0, 0);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 20);
}
