//! Python module `gridforge`.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gridforge_core::aggregate::compare_controllers;
use gridforge_core::csv_out::csv_string;
use gridforge_core::error::SimError;
use gridforge_core::grid::{init_steady_state, BASE_MVA};
use gridforge_core::presets;
use gridforge_core::scenario::ScenarioFile;
use gridforge_core::sim::{dispatch_targets, DeviceModel, Simulation, SimulationResult};
use gridforge_core::stability::check_stability;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn sim_err(e: SimError) -> PyErr {
    match e {
        SimError::NonFiniteState { .. } | SimError::NonFiniteControl { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => value_err(e),
    }
}

/// A validated scenario document.
#[pyclass(name = "Scenario", module = "gridforge", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    file: ScenarioFile,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { file: ScenarioFile::from_toml(text, "<string>").map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { file: ScenarioFile::load(Path::new(path)).map_err(value_err)? })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        presets::preset(name)
            .map(|file| Self { file })
            .ok_or_else(|| PyValueError::new_err(format!("unknown preset {name}")))
    }

    #[getter]
    fn name(&self) -> String {
        self.file.name.clone()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.file.sim.dt_s
    }

    #[setter]
    fn set_dt(&mut self, dt: f64) {
        self.file.sim.dt_s = dt;
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.file.sim.duration_s
    }

    #[setter]
    fn set_duration(&mut self, d: f64) {
        self.file.sim.duration_s = d;
    }

    fn device_names(&self) -> Vec<String> {
        self.file.devices.iter().map(|d| d.name.clone()).collect()
    }

    fn to_toml(&self) -> String {
        self.file.echo()
    }

    fn simulate(&self) -> PyResult<PyRunResult> {
        let scenario = self.file.to_scenario().map_err(value_err)?;
        let result = Simulation::new(scenario).and_then(|s| s.run()).map_err(sim_err)?;
        Ok(PyRunResult { result })
    }

    /// Bus voltages `(id, |V| pu, angle rad)` and device `(name, P MW, Q MVar)`
    /// of the initial power flow.
    #[allow(clippy::type_complexity)]
    fn power_flow(&self) -> PyResult<(Vec<(usize, f64, f64)>, Vec<(String, f64, f64)>)> {
        let scenario = self.file.to_scenario().map_err(value_err)?;
        let ss = init_steady_state(&scenario.grid, &dispatch_targets(&scenario.devices)).map_err(value_err)?;
        let buses = scenario.grid.buses.iter().zip(&ss.bus_voltages).map(|(b, v)| (b.id, v.norm(), v.arg())).collect();
        let devices = scenario
            .devices
            .iter()
            .zip(&ss.devices)
            .map(|(d, op)| (d.name.clone(), op.p * BASE_MVA, op.q * BASE_MVA))
            .collect();
        Ok((buses, devices))
    }

    /// Linearize a VSG at time `at`; returns `(A as row lists, eigenvalues, stable)`.
    #[pyo3(signature = (at=0.0, device=None))]
    #[allow(clippy::type_complexity)]
    fn linearize(&self, at: f64, device: Option<&str>) -> PyResult<(Vec<Vec<f64>>, Vec<(f64, f64)>, bool)> {
        let mut sim = Simulation::new(self.file.to_scenario().map_err(value_err)?).map_err(sim_err)?;
        sim.advance_to(at).map_err(sim_err)?;
        let n = self.file.devices.len();
        let index = match device {
            Some(name) => self.file.devices.iter().position(|d| d.name == name),
            None => (0..n).find(|&k| matches!(sim.device_spec(k).model, DeviceModel::Vsg(_)) && sim.is_online(k)),
        }
        .ok_or_else(|| PyValueError::new_err("no VSG to linearize"))?;
        let (point, params) = sim.linearization_point(index, 1e-6).map_err(sim_err)?;
        let report = check_stability(&point, &params);
        let a = (0..3).map(|r| (0..3).map(|c| report.a[(r, c)]).collect()).collect();
        let eig = report.eigenvalues_a.iter().map(|z| (z.re, z.im)).collect();
        Ok((a, eig, report.stable))
    }

    /// Frequency cost of each reference controller on the aggregate plant.
    fn oracle_compare(&self) -> PyResult<Vec<(String, f64)>> {
        let setup = self.file.oracle_setup().map_err(value_err)?;
        let costs = compare_controllers(&setup.plant, &setup.vsg, setup.p_sync, setup.dt).map_err(sim_err)?;
        Ok(costs.into_iter().map(|c| (c.name, c.cost)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario({:?}, {} devices, {} events)",
            self.file.name,
            self.file.devices.len(),
            self.file.events.len()
        )
    }
}

/// Recorded trajectories of one run.
#[pyclass(name = "SimulationResult", module = "gridforge")]
struct PyRunResult {
    result: SimulationResult,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn t(&self) -> Vec<f64> {
        self.result.t.clone()
    }

    /// Every CSV column keyed by its header name.
    fn columns(&self) -> BTreeMap<String, Vec<f64>> {
        let r = &self.result;
        let mut out = BTreeMap::new();
        for (d, s) in r.devices.iter().zip(&r.series) {
            out.insert(format!("{}_omega_hz", d.name), s.omega_hz.clone());
            out.insert(format!("{}_theta_rad", d.name), s.theta_rad.clone());
            out.insert(format!("{}_gamma_pu", d.name), s.gamma_pu.clone());
            out.insert(format!("{}_p_out_mw", d.name), s.p_out_mw.clone());
            out.insert(format!("{}_q_out_mvar", d.name), s.q_out_mvar.clone());
            out.insert(format!("{}_v_out_pu", d.name), s.v_out_pu.clone());
        }
        for (id, v) in r.bus_ids.iter().zip(&r.bus_v_pu) {
            out.insert(format!("bus{id}_v_pu"), v.clone());
        }
        out.insert("t".into(), r.t.clone());
        out
    }

    fn metrics(&self) -> BTreeMap<&'static str, Option<f64>> {
        let m = &self.result.metrics;
        BTreeMap::from([
            ("nadir_hz", Some(m.nadir_hz)),
            ("rocof_max_hz_s", Some(m.rocof_max_hz_s)),
            ("recovery_s", m.recovery_s),
            ("max_angle_spread_rad", Some(m.max_angle_spread_rad)),
            ("max_balance_residual_pu", Some(self.result.max_balance_residual)),
        ])
    }

    #[getter]
    fn survival(&self) -> bool {
        self.result.metrics.survival
    }

    fn to_csv(&self) -> String {
        csv_string(&self.result)
    }
}

#[pyfunction]
fn preset_names() -> Vec<String> {
    presets::preset_names()
}

#[pymodule]
fn gridforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    Ok(())
}
