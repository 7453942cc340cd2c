//! Scenario files: TOML in physical units, converted to per-unit once here.
//!
//! Every optional key is filled in by [`ScenarioFile::materialize`], and
//! [`ScenarioFile::echo`] writes the fully materialized document back out.
//! Parsing an echo yields the same file, which is what the CLI stores next
//! to each result.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::AggregateParams;
use crate::error::ScenarioError;
use crate::grid::{Bus, BusKind, GridModel, Line, LineStatus, LoadSpec, BASE_KV, BASE_MVA, DEFAULT_FAULT_CONDUCTANCE};
use crate::sg::{SgParams, OMEGA_S};
use crate::sim::{DeviceModel, DeviceSpec, Event, EventKind, Scenario};
use crate::vsg::{VoltageLoopParams, VsgParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub oracle: OracleSection,
    pub grid: GridSection,
    pub devices: Vec<DeviceEntry>,
    #[serde(default)]
    pub events: Vec<EventEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt_s: f64,
    pub duration_s: f64,
    pub recording_stride: usize,
    pub fault_substeps: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { dt_s: 1e-3, duration_s: 20.0, recording_stride: 10, fault_substeps: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Result directory; the CLI flag and `GRIDFORGE_OUT` take precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSetup {
    pub plant: AggregateParams,
    pub vsg: VsgParams,
    pub p_sync: f64,
    pub dt: f64,
}

/// Aggregate single-bus plant used by `oracle-compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub m_s_pu: f64,
    pub d_s_pu: f64,
    /// `P_G - P_L` after the step, pu.
    pub imbalance_pu: f64,
    pub p_min_pu: f64,
    pub p_max_pu: f64,
    pub horizon_s: f64,
    pub dt_s: f64,
    /// Synchronising power of the stiff coupling between VSG and plant, pu.
    pub p_sync_pu: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            m_s_pu: 0.2,
            d_s_pu: 0.3,
            imbalance_pu: -0.3,
            p_min_pu: -0.35,
            p_max_pu: 0.35,
            horizon_s: 10.0,
            dt_s: 1e-3,
            p_sync_pu: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub buses: Vec<BusEntry>,
    #[serde(default)]
    pub lines: Vec<LineEntry>,
    #[serde(default)]
    pub loads: Vec<LoadEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKindEntry {
    Device,
    Load,
    Passive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusEntry {
    pub id: usize,
    #[serde(default = "passive")]
    pub kind: BusKindEntry,
    #[serde(default = "base_kv")]
    pub nominal_kv: f64,
}

fn passive() -> BusKindEntry {
    BusKindEntry::Passive
}

fn base_kv() -> f64 {
    BASE_KV
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineStatusEntry {
    Closed,
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub r_pu: f64,
    pub x_pu: f64,
    /// Total line charging susceptance, pu.
    #[serde(default)]
    pub charging_pu: f64,
    #[serde(default = "closed")]
    pub status: LineStatusEntry,
}

fn closed() -> LineStatusEntry {
    LineStatusEntry::Closed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEntry {
    pub bus: usize,
    pub p_mw: f64,
    #[serde(default)]
    pub q_mvar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKindEntry {
    Vsg,
    Sg,
    Stiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceEntry {
    pub name: String,
    pub bus: usize,
    pub kind: DeviceKindEntry,
    pub p_dispatch_mw: f64,
    #[serde(default = "one")]
    pub v_target_pu: f64,
    #[serde(default = "default_coupling")]
    pub coupling_x_pu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_limit_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vsg: Option<VsgEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sg: Option<SgEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage: Option<VoltageEntry>,
}

fn one() -> f64 {
    1.0
}

fn default_coupling() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VsgEntry {
    pub tau_omega_s: f64,
    pub tau_gamma_s: f64,
    pub c_alpha: f64,
    pub c_theta: f64,
    pub c_omega: f64,
    pub alpha_min: f64,
    pub p_max_mw: f64,
    pub p_min_mw: f64,
    pub omega_ref_rad_s: f64,
}

impl Default for VsgEntry {
    fn default() -> Self {
        let d = VsgParams::default();
        Self {
            tau_omega_s: d.tau_omega,
            tau_gamma_s: d.tau_gamma,
            c_alpha: d.c_alpha,
            c_theta: d.c_theta,
            c_omega: d.c_omega,
            alpha_min: d.alpha_min,
            p_max_mw: d.p_max * BASE_MVA,
            p_min_mw: d.p_min * BASE_MVA,
            omega_ref_rad_s: d.omega_ref,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgEntry {
    /// Inertia constant on the system base, s.
    pub inertia_h_s: f64,
    /// Damping in MW per unit speed deviation.
    pub damping_mw: f64,
    pub x_pu: f64,
    pub xq_t_pu: f64,
    pub xq_st_pu: f64,
    pub tq_st_s: f64,
    pub governor_droop: f64,
    pub governor_time_constant_s: f64,
    pub rating_mva: f64,
}

impl Default for SgEntry {
    fn default() -> Self {
        Self {
            inertia_h_s: 23.64,
            damping_mw: 68.95,
            x_pu: 0.0,
            xq_t_pu: 0.0969,
            xq_st_pu: 0.06,
            tq_st_s: 0.05,
            governor_droop: 0.05,
            governor_time_constant_s: 0.0,
            rating_mva: BASE_MVA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoltageEntry {
    pub c_p: f64,
    pub c_i_per_s: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
}

impl Default for VoltageEntry {
    fn default() -> Self {
        let d = VoltageLoopParams::default();
        Self { c_p: d.c_p, c_i_per_s: d.c_i, v_min_pu: d.v_min, v_max_pu: d.v_max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKindEntry {
    ApplyFault,
    ClearFault,
    TripLine,
    RecloseLine,
    LoadStep,
    DisconnectDevice,
}

impl EventKindEntry {
    fn as_str(self) -> &'static str {
        match self {
            EventKindEntry::ApplyFault => "apply_fault",
            EventKindEntry::ClearFault => "clear_fault",
            EventKindEntry::TripLine => "trip_line",
            EventKindEntry::RecloseLine => "reclose_line",
            EventKindEntry::LoadStep => "load_step",
            EventKindEntry::DisconnectDevice => "disconnect_device",
        }
    }
}

/// One timed event. Which of the optional keys are required depends on
/// `kind`; see [`ScenarioFile::to_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub time_s: f64,
    pub kind: EventKindEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conductance_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dq_mvar: Option<f64>,
}

impl EventEntry {
    pub fn new(time_s: f64, kind: EventKindEntry) -> Self {
        Self { time_s, kind, bus: None, line: None, device: None, conductance_pu: None, dp_mw: None, dq_mvar: None }
    }
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::InvalidValue { key: key.into(), reason: reason.into() }
}

impl ScenarioFile {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let mut file: ScenarioFile =
            toml::from_str(text).map_err(|e| ScenarioError::Schema { path: origin.into(), message: e.to_string() })?;
        file.materialize()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Fill every optional key with its default so the echo is explicit.
    pub fn materialize(&mut self) -> Result<(), ScenarioError> {
        for d in &mut self.devices {
            let key = |k: &str| format!("devices.{}.{k}", d.name);
            match d.kind {
                DeviceKindEntry::Vsg => {
                    if d.sg.is_some() {
                        return Err(invalid(key("sg"), "only allowed on kind = \"sg\""));
                    }
                    d.vsg.get_or_insert_with(VsgEntry::default);
                    d.voltage.get_or_insert_with(VoltageEntry::default);
                }
                DeviceKindEntry::Sg => {
                    if d.vsg.is_some() {
                        return Err(invalid(key("vsg"), "only allowed on kind = \"vsg\""));
                    }
                    d.sg.get_or_insert_with(SgEntry::default);
                    d.voltage.get_or_insert_with(VoltageEntry::default);
                }
                DeviceKindEntry::Stiff => {
                    if d.vsg.is_some() || d.sg.is_some() || d.voltage.is_some() {
                        return Err(invalid(key("kind"), "a stiff source takes no controller tables"));
                    }
                }
            }
        }
        for e in &mut self.events {
            if e.kind == EventKindEntry::ApplyFault {
                e.conductance_pu.get_or_insert(DEFAULT_FAULT_CONDUCTANCE);
            }
            if e.kind == EventKindEntry::LoadStep {
                e.dq_mvar.get_or_insert(0.0);
            }
        }
        Ok(())
    }

    /// The materialized document as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    /// Aggregate plant and VSG gains for `oracle-compare`: the first VSG's
    /// controller (or the defaults) acting against the oracle limits.
    pub fn oracle_setup(&self) -> Result<OracleSetup, ScenarioError> {
        let o = &self.oracle;
        let plant = AggregateParams {
            m_s: o.m_s_pu,
            d_s: o.d_s_pu,
            p_g: 0.0,
            p_l: -o.imbalance_pu,
            p_min: o.p_min_pu,
            p_max: o.p_max_pu,
            horizon: o.horizon_s,
        };
        if !(plant.m_s > 0.0 && plant.d_s >= 0.0) {
            return Err(invalid("oracle", "need m_s_pu > 0 and d_s_pu >= 0"));
        }
        if !(plant.p_min < 0.0 && plant.p_max > 0.0) {
            return Err(invalid("oracle", "need p_min_pu < 0 < p_max_pu"));
        }
        if !(o.horizon_s > 0.0 && o.dt_s > 0.0 && o.dt_s < o.horizon_s && o.p_sync_pu > 0.0) {
            return Err(invalid("oracle", "need 0 < dt_s < horizon_s and p_sync_pu > 0"));
        }
        let v = self
            .devices
            .iter()
            .find(|d| d.kind == DeviceKindEntry::Vsg)
            .and_then(|d| d.vsg.clone())
            .unwrap_or_default();
        let vsg = VsgParams {
            tau_omega: v.tau_omega_s,
            tau_gamma: v.tau_gamma_s,
            c_alpha: v.c_alpha,
            c_theta: v.c_theta,
            c_omega: v.c_omega,
            alpha_min: v.alpha_min,
            p_ref: 0.0,
            p_max: o.p_max_pu,
            p_min: o.p_min_pu,
            omega_ref: 0.0,
            voltage: VoltageLoopParams::default(),
        };
        vsg.validate().map_err(|e| invalid("oracle", e.to_string()))?;
        Ok(OracleSetup { plant, vsg, p_sync: o.p_sync_pu, dt: o.dt_s })
    }

    pub fn to_scenario(&self) -> Result<Scenario, ScenarioError> {
        let mut file = self.clone();
        file.materialize()?;
        let s = &file.sim;
        if !(s.dt_s > 0.0) {
            return Err(invalid("sim.dt_s", format!("must be positive, got {}", s.dt_s)));
        }
        if !(s.duration_s >= 0.0) {
            return Err(invalid("sim.duration_s", format!("must be non-negative, got {}", s.duration_s)));
        }
        if s.recording_stride == 0 {
            return Err(invalid("sim.recording_stride", "must be at least 1"));
        }
        if s.fault_substeps == 0 {
            return Err(invalid("sim.fault_substeps", "must be at least 1"));
        }

        let grid = file.grid_model()?;
        let has_bus = |id: usize| grid.buses.iter().any(|b| b.id == id);
        let mut devices = Vec::with_capacity(file.devices.len());
        for (i, d) in file.devices.iter().enumerate() {
            if file.devices[..i].iter().any(|o| o.name == d.name) {
                return Err(invalid(format!("devices.{}", d.name), "duplicate device name"));
            }
            if !has_bus(d.bus) {
                return Err(ScenarioError::MissingEntity {
                    entity: "bus",
                    id: d.bus.to_string(),
                    by: format!("device {}", d.name),
                });
            }
            devices.push(device_spec(d)?);
        }

        let mut events = Vec::with_capacity(file.events.len());
        for (i, e) in file.events.iter().enumerate() {
            events.push(file.event(i, e, &grid)?);
        }
        events.sort_by(|a: &Event, b: &Event| a.time.total_cmp(&b.time));

        let scenario = Scenario {
            name: file.name.clone(),
            grid,
            devices,
            events,
            dt: s.dt_s,
            duration: s.duration_s,
            recording_stride: s.recording_stride,
            fault_substeps: s.fault_substeps,
        };
        scenario.validate().map_err(|e| invalid("scenario", e.to_string()))?;
        Ok(scenario)
    }

    fn grid_model(&self) -> Result<GridModel, ScenarioError> {
        let buses = self
            .grid
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                kind: match b.kind {
                    BusKindEntry::Device => BusKind::Device,
                    BusKindEntry::Load => BusKind::Load,
                    BusKindEntry::Passive => BusKind::Passive,
                },
                nominal_kv: b.nominal_kv,
            })
            .collect();
        let mut lines = Vec::with_capacity(self.grid.lines.len());
        for l in &self.grid.lines {
            if self.grid.lines.iter().filter(|o| o.id == l.id).count() > 1 {
                return Err(invalid(format!("grid.lines.{}", l.id), "duplicate line id"));
            }
            if l.r_pu == 0.0 && l.x_pu == 0.0 {
                return Err(invalid(format!("grid.lines.{}", l.id), "zero impedance"));
            }
            let mut line = Line::from_impedance(l.id, l.from, l.to, l.r_pu, l.x_pu, l.charging_pu);
            if l.status == LineStatusEntry::Open {
                line.status = LineStatus::Open;
            }
            lines.push(line);
        }
        let loads = self
            .grid
            .loads
            .iter()
            .map(|l| LoadSpec { bus: l.bus, p: l.p_mw / BASE_MVA, q: l.q_mvar / BASE_MVA })
            .collect();
        let grid = GridModel { buses, lines, loads };
        grid.validate().map_err(|e| invalid("grid", e.to_string()))?;
        Ok(grid)
    }

    fn event(&self, index: usize, e: &EventEntry, grid: &GridModel) -> Result<Event, ScenarioError> {
        let by = format!("event {} ({})", index + 1, e.kind.as_str());
        let require =
            |v: Option<usize>, key: &str| v.ok_or_else(|| invalid(format!("events.{}.{key}", index + 1), "required"));
        let check_bus = |bus: usize| {
            if grid.bus_index(bus).is_some() {
                Ok(bus)
            } else {
                Err(ScenarioError::MissingEntity { entity: "bus", id: bus.to_string(), by: by.clone() })
            }
        };
        let check_line = |line: usize| {
            if grid.line(line).is_some() {
                Ok(line)
            } else {
                Err(ScenarioError::MissingEntity { entity: "line", id: line.to_string(), by: by.clone() })
            }
        };
        if !(e.time_s >= 0.0 && e.time_s.is_finite()) {
            return Err(invalid(
                format!("events.{}.time_s", index + 1),
                format!("must be a non-negative time, got {}", e.time_s),
            ));
        }
        let kind = match e.kind {
            EventKindEntry::ApplyFault => {
                let conductance = e.conductance_pu.unwrap_or(DEFAULT_FAULT_CONDUCTANCE);
                if !(conductance > 0.0) {
                    return Err(invalid(format!("events.{}.conductance_pu", index + 1), "must be positive"));
                }
                EventKind::ApplyFault { bus: check_bus(require(e.bus, "bus")?)?, conductance }
            }
            EventKindEntry::ClearFault => EventKind::ClearFault { bus: check_bus(require(e.bus, "bus")?)? },
            EventKindEntry::TripLine => EventKind::TripLine { line: check_line(require(e.line, "line")?)? },
            EventKindEntry::RecloseLine => EventKind::RecloseLine { line: check_line(require(e.line, "line")?)? },
            EventKindEntry::LoadStep => {
                let dp = e.dp_mw.ok_or_else(|| invalid(format!("events.{}.dp_mw", index + 1), "required"))?;
                EventKind::LoadStep {
                    bus: check_bus(require(e.bus, "bus")?)?,
                    dp: dp / BASE_MVA,
                    dq: e.dq_mvar.unwrap_or(0.0) / BASE_MVA,
                }
            }
            EventKindEntry::DisconnectDevice => {
                let name =
                    e.device.as_ref().ok_or_else(|| invalid(format!("events.{}.device", index + 1), "required"))?;
                let device = self.devices.iter().position(|d| &d.name == name).ok_or_else(|| {
                    ScenarioError::MissingEntity { entity: "device", id: name.clone(), by: by.clone() }
                })?;
                EventKind::DisconnectDevice { device }
            }
        };
        Ok(Event { time: e.time_s, kind })
    }
}

fn voltage_params(v: &VoltageEntry) -> VoltageLoopParams {
    VoltageLoopParams {
        c_p: v.c_p,
        c_i: v.c_i_per_s,
        v_min: v.v_min_pu,
        v_max: v.v_max_pu,
        ..VoltageLoopParams::default()
    }
}

fn device_spec(d: &DeviceEntry) -> Result<DeviceSpec, ScenarioError> {
    let voltage = d.voltage.as_ref().map(voltage_params).unwrap_or_default();
    let model = match d.kind {
        DeviceKindEntry::Vsg => {
            let v = d.vsg.clone().unwrap_or_default();
            DeviceModel::Vsg(VsgParams {
                tau_omega: v.tau_omega_s,
                tau_gamma: v.tau_gamma_s,
                c_alpha: v.c_alpha,
                c_theta: v.c_theta,
                c_omega: v.c_omega,
                alpha_min: v.alpha_min,
                p_ref: d.p_dispatch_mw / BASE_MVA,
                p_max: v.p_max_mw / BASE_MVA,
                p_min: v.p_min_mw / BASE_MVA,
                omega_ref: v.omega_ref_rad_s,
                voltage,
            })
        }
        DeviceKindEntry::Sg => {
            let s = d.sg.clone().unwrap_or_default();
            if !(s.inertia_h_s > 0.0) {
                return Err(invalid(format!("devices.{}.sg.inertia_h_s", d.name), "must be positive"));
            }
            if !(s.rating_mva > 0.0) {
                return Err(invalid(format!("devices.{}.sg.rating_mva", d.name), "must be positive"));
            }
            DeviceModel::Sg(SgParams {
                m: 2.0 * s.inertia_h_s / OMEGA_S,
                d: s.damping_mw / BASE_MVA / OMEGA_S,
                x: s.x_pu,
                xq_t: s.xq_t_pu,
                xq_st: s.xq_st_pu,
                tq_st: s.tq_st_s,
                p_mech: d.p_dispatch_mw / BASE_MVA,
                governor_droop: s.governor_droop,
                governor_time_constant: s.governor_time_constant_s,
                rating: s.rating_mva / BASE_MVA,
                voltage,
            })
        }
        DeviceKindEntry::Stiff => DeviceModel::Stiff,
    };
    if let DeviceModel::Sg(p) = &model {
        p.validate().map_err(|e| invalid(format!("devices.{}.sg", d.name), e.to_string()))?;
    }
    if !(d.coupling_x_pu > 0.0) {
        return Err(invalid(format!("devices.{}.coupling_x_pu", d.name), "must be positive"));
    }
    if !(d.v_target_pu > 0.0) {
        return Err(invalid(format!("devices.{}.v_target_pu", d.name), "must be positive"));
    }
    Ok(DeviceSpec {
        name: d.name.clone(),
        bus: d.bus,
        model,
        p_dispatch: d.p_dispatch_mw / BASE_MVA,
        v_target: d.v_target_pu,
        coupling_x: d.coupling_x_pu,
        current_limit: d.current_limit_pu,
    })
}

/// Read, validate and convert a scenario file.
pub fn parse_scenario(path: &Path) -> Result<(ScenarioFile, Scenario), ScenarioError> {
    let file = ScenarioFile::load(path)?;
    let scenario = file.to_scenario()?;
    Ok((file, scenario))
}
