//! Quasi-static simulation: device states are integrated with classical
//! RK4 and the network is re-solved algebraically at every stage.

pub mod metrics;

use std::f64::consts::PI;

use nalgebra::DMatrix;

pub use metrics::{compute_metrics, IslandEpoch, Metrics, MetricsInput, NOMINAL_HZ};

use crate::error::SimError;
use crate::grid::{
    build_admittance, init_steady_state, AdmittanceMatrix, DispatchTarget, FaultShunt, GridModel, LineStatus, LoadSpec,
    NetworkSolution, NetworkSolver, C64,
};
use crate::sg::{governor_derivative, swing_derivatives, SgParams, SgState};
use crate::stability::LinearizationPoint;
use crate::vsg::{vsg_derivatives, VoltageLoopParams, VsgMeasurements, VsgParams, VsgState};

/// Every device carries this many state slots; unused ones stay zero.
pub const STATE_DIM: usize = 4;
const ALGEBRAIC_TOL: f64 = 1e-13;
const ALGEBRAIC_MAX_ITER: usize = 200;
/// Events land on the first step boundary at or after `t - EVENT_SNAP`.
const EVENT_SNAP: f64 = 1e-9;

pub type DeviceState = [f64; STATE_DIM];

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceModel {
    Vsg(VsgParams),
    Sg(SgParams),
    /// Fixed EMF behind its coupling reactance.
    Stiff,
}

impl DeviceModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DeviceModel::Vsg(_) => "vsg",
            DeviceModel::Sg(_) => "sg",
            DeviceModel::Stiff => "stiff",
        }
    }

    fn voltage(&self) -> Option<&VoltageLoopParams> {
        match self {
            DeviceModel::Vsg(p) => Some(&p.voltage),
            DeviceModel::Sg(p) => Some(&p.voltage),
            DeviceModel::Stiff => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub name: String,
    pub bus: usize,
    pub model: DeviceModel,
    /// Active power target for the initial power flow, pu.
    pub p_dispatch: f64,
    /// Terminal voltage target, pu.
    pub v_target: f64,
    pub coupling_x: f64,
    /// Converter current limit, pu.
    pub current_limit: Option<f64>,
}

impl DeviceSpec {
    pub fn coupling_admittance(&self) -> C64 {
        C64::new(0.0, -1.0 / self.coupling_x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    ApplyFault { bus: usize, conductance: f64 },
    ClearFault { bus: usize },
    TripLine { line: usize },
    RecloseLine { line: usize },
    LoadStep { bus: usize, dp: f64, dq: f64 },
    DisconnectDevice { device: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub grid: GridModel,
    pub devices: Vec<DeviceSpec>,
    pub events: Vec<Event>,
    pub dt: f64,
    pub duration: f64,
    pub recording_stride: usize,
    /// Step subdivision while a fault is applied.
    pub fault_substeps: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be non-negative, got {}", self.duration));
        }
        if self.recording_stride == 0 || self.fault_substeps == 0 {
            return bad("recording_stride and fault_substeps must be at least 1".into());
        }
        self.grid.validate()?;
        if self.devices.is_empty() {
            return bad("scenario has no devices".into());
        }
        for d in &self.devices {
            if self.grid.bus_index(d.bus).is_none() {
                return bad(format!("device {} sits on unknown bus {}", d.name, d.bus));
            }
            if !(d.coupling_x > 0.0) {
                return bad(format!("device {}: coupling reactance must be positive", d.name));
            }
            if let Some(limit) = d.current_limit {
                if !(limit > 0.0) {
                    return bad(format!("device {}: current limit must be positive", d.name));
                }
            }
        }
        for e in &self.events {
            if !(e.time >= 0.0 && e.time.is_finite()) {
                return bad(format!("event time {} is invalid", e.time));
            }
            match e.kind {
                EventKind::ApplyFault { bus, conductance } => {
                    if self.grid.bus_index(bus).is_none() {
                        return bad(format!("fault at unknown bus {bus}"));
                    }
                    if !(conductance > 0.0) {
                        return bad(format!("fault conductance must be positive, got {conductance}"));
                    }
                }
                EventKind::ClearFault { bus } | EventKind::LoadStep { bus, .. } => {
                    if self.grid.bus_index(bus).is_none() {
                        return bad(format!("event references unknown bus {bus}"));
                    }
                }
                EventKind::TripLine { line } | EventKind::RecloseLine { line } => {
                    if self.grid.line(line).is_none() {
                        return bad(format!("event references unknown line {line}"));
                    }
                }
                EventKind::DisconnectDevice { device } => {
                    if device >= self.devices.len() {
                        return bad(format!("event references unknown device index {device}"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeviceSeries {
    pub omega_hz: Vec<f64>,
    pub theta_rad: Vec<f64>,
    pub gamma_pu: Vec<f64>,
    pub p_out_mw: Vec<f64>,
    pub q_out_mvar: Vec<f64>,
    pub v_out_pu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceInfo {
    pub name: String,
    pub kind: String,
    pub bus: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseRecord {
    pub t: f64,
    pub buses: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub scenario: String,
    pub devices: Vec<DeviceInfo>,
    pub bus_ids: Vec<usize>,
    pub t: Vec<f64>,
    pub series: Vec<DeviceSeries>,
    pub bus_v_pu: Vec<Vec<f64>>,
    pub epochs: Vec<IslandEpoch>,
    pub collapses: Vec<CollapseRecord>,
    pub disturbance_t: f64,
    /// Largest power-balance residual over recorded steps, pu.
    pub max_balance_residual: f64,
    /// Largest state derivative magnitude at the final time.
    pub final_max_derivative: f64,
    pub metrics: Metrics,
}

impl SimulationResult {
    pub fn collapsed(&self) -> bool {
        !self.collapses.is_empty()
    }

    pub fn recompute_metrics(&self) -> Metrics {
        let freq: Vec<Vec<f64>> = self.series.iter().map(|s| s.omega_hz.clone()).collect();
        let theta: Vec<Vec<f64>> = self.series.iter().map(|s| s.theta_rad.clone()).collect();
        compute_metrics(&MetricsInput {
            t: &self.t,
            freq_hz: &freq,
            theta_rad: &theta,
            epochs: &self.epochs,
            collapse: self.collapsed(),
            disturbance_t: self.disturbance_t,
        })
    }
}

#[derive(Debug, Clone)]
struct Device {
    spec: DeviceSpec,
    online: bool,
    x: DeviceState,
    /// Warm start for the algebraic voltage loop: PI output and current
    /// limit scale.
    mag: f64,
    scale: f64,
    fixed_emf: C64,
}

impl Device {
    fn internal_angle(&self, x: &DeviceState, t: f64) -> f64 {
        match &self.spec.model {
            DeviceModel::Vsg(p) => x[1] - p.c_theta * x[2] + p.omega_ref * t,
            DeviceModel::Sg(_) => x[0],
            DeviceModel::Stiff => self.fixed_emf.arg(),
        }
    }

    /// Electrical frequency of the internal source. For a VSG this is the
    /// rate of the output angle, shifts included.
    fn frequency_hz(&self, x: &DeviceState, dx: &DeviceState) -> f64 {
        match &self.spec.model {
            DeviceModel::Vsg(p) => NOMINAL_HZ + (p.omega_ref + dx[1] - p.c_theta * dx[2]) / (2.0 * PI),
            DeviceModel::Sg(_) => NOMINAL_HZ + x[1] / (2.0 * PI),
            DeviceModel::Stiff => NOMINAL_HZ,
        }
    }

    fn integral(&self, x: &DeviceState) -> f64 {
        match self.spec.model {
            DeviceModel::Vsg(_) => x[3],
            DeviceModel::Sg(_) => x[2],
            DeviceModel::Stiff => 0.0,
        }
    }
}

#[derive(Debug)]
struct Topology {
    admittance: AdmittanceMatrix,
    solver: NetworkSolver,
    /// Online devices in source order.
    sources: Vec<usize>,
    transfer: DMatrix<C64>,
    /// Device groups sharing an island.
    groups: Vec<Vec<usize>>,
    /// Angle reference device of each device's island.
    reference: Vec<Option<usize>>,
}

impl Topology {
    fn build(grid: &GridModel, faults: &[FaultShunt], devices: &[Device]) -> Result<Self, SimError> {
        let admittance = build_admittance(&grid.buses, &grid.lines, &grid.loads, faults)?;
        let sources: Vec<usize> = (0..devices.len()).filter(|&k| devices[k].online).collect();
        let couplings: Vec<(usize, C64)> =
            sources.iter().map(|&k| (devices[k].spec.bus, devices[k].spec.coupling_admittance())).collect();
        let solver = NetworkSolver::new(&admittance, &couplings)?;
        let transfer = solver.source_transfer();

        let islands = solver.source_islands();
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for (s, &k) in sources.iter().enumerate() {
            match groups.iter_mut().find(|(isl, _)| *isl == islands[s]) {
                Some((_, g)) => g.push(k),
                None => groups.push((islands[s], vec![k])),
            }
        }
        let groups: Vec<Vec<usize>> = groups.into_iter().map(|(_, g)| g).collect();
        let mut reference = vec![None; devices.len()];
        for g in &groups {
            for &k in g {
                reference[k] = Some(g[0]);
            }
        }
        Ok(Self { admittance, solver, sources, transfer, groups, reference })
    }
}

struct Stage {
    deriv: Vec<DeviceState>,
    solution: NetworkSolution,
}

/// A running simulation. Construct with [`Simulation::new`], then call
/// [`Simulation::run`] or drive it step by step.
pub struct Simulation {
    scenario: Scenario,
    grid: GridModel,
    faults: Vec<FaultShunt>,
    devices: Vec<Device>,
    topo: Topology,
    /// Events with their snapped step index, stable-sorted by time.
    events: Vec<(usize, Event)>,
    next_event: usize,
    step: usize,
    epochs: Vec<IslandEpoch>,
    collapses: Vec<CollapseRecord>,
}

pub fn dispatch_targets(devices: &[DeviceSpec]) -> Vec<DispatchTarget> {
    devices
        .iter()
        .map(|d| DispatchTarget { bus: d.bus, p: d.p_dispatch, v: d.v_target, coupling: d.coupling_admittance() })
        .collect()
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let ss = init_steady_state(&scenario.grid, &dispatch_targets(&scenario.devices))?;

        let mut devices = Vec::with_capacity(scenario.devices.len());
        for (spec, op) in scenario.devices.iter().zip(&ss.devices) {
            let mut spec = spec.clone();
            let (v_term, e_mag, e_ang) = (op.terminal.norm(), op.emf.norm(), op.emf.arg());
            let invalid =
                |e: crate::error::ControlError| SimError::InvalidScenario(format!("device {}: {e}", spec.name));
            let x = match &mut spec.model {
                DeviceModel::Vsg(p) => {
                    p.p_ref = op.p;
                    p.voltage.v_ref = v_term;
                    p.voltage.v_setpoint = e_mag;
                    p.validate().map_err(invalid)?;
                    [0.0, e_ang, 0.0, 0.0]
                }
                DeviceModel::Sg(p) => {
                    p.p_mech = op.p;
                    p.voltage.v_ref = v_term;
                    p.voltage.v_setpoint = e_mag;
                    p.validate().map_err(invalid)?;
                    [e_ang, 0.0, 0.0, op.p]
                }
                DeviceModel::Stiff => [0.0; STATE_DIM],
            };
            if let Some(limit) = spec.current_limit {
                let current = C64::new(op.p, op.q).norm() / v_term;
                if current > limit * (1.0 + 1e-9) {
                    return Err(SimError::InvalidScenario(format!(
                        "device {}: initial current {current:.4} pu exceeds its limit {limit:.4} pu",
                        spec.name
                    )));
                }
            }
            devices.push(Device { spec, online: true, x, mag: e_mag, scale: 1.0, fixed_emf: op.emf });
        }

        let grid = scenario.grid.clone();
        let topo = Topology::build(&grid, &[], &devices)?;
        let mut events: Vec<(usize, Event)> = scenario
            .events
            .iter()
            .map(|e| (((e.time - EVENT_SNAP) / scenario.dt).ceil().max(0.0) as usize, e.clone()))
            .collect();
        events.sort_by(|a, b| a.1.time.total_cmp(&b.1.time));
        let epochs = vec![IslandEpoch { t: 0.0, groups: topo.groups.clone() }];
        let collapses = if topo.solver.collapsed().is_empty() {
            Vec::new()
        } else {
            topo.solver.collapsed().iter().map(|b| CollapseRecord { t: 0.0, buses: b.clone() }).collect()
        };
        Ok(Self {
            scenario,
            grid,
            faults: Vec::new(),
            devices,
            topo,
            events,
            next_event: 0,
            step: 0,
            epochs,
            collapses,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.scenario.dt
    }

    pub fn device_states(&self) -> Vec<DeviceState> {
        self.devices.iter().map(|d| d.x).collect()
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.topo.admittance
    }

    /// Overwrite one device's states, e.g. to apply a perturbation.
    pub fn set_device_state(&mut self, device: usize, x: DeviceState) {
        self.devices[device].x = x;
    }

    pub fn device_spec(&self, device: usize) -> &DeviceSpec {
        &self.devices[device].spec
    }

    pub fn is_online(&self, device: usize) -> bool {
        self.devices[device].online
    }

    /// Step until the clock reaches `t`.
    pub fn advance_to(&mut self, t: f64) -> Result<(), SimError> {
        while self.time() < t - EVENT_SNAP {
            self.advance()?;
        }
        self.apply_due_events()?;
        Ok(())
    }

    /// Active power of `device` if its state were `x`, everything else held.
    pub fn device_power_with_state(&mut self, device: usize, x: DeviceState) -> Result<f64, SimError> {
        let mut states = self.device_states();
        states[device] = x;
        let stage = self.evaluate(self.time(), &states)?;
        let s = self.topo.sources.iter().position(|&k| k == device).ok_or_else(|| {
            SimError::InvalidScenario(format!("device {} is offline", self.devices[device].spec.name))
        })?;
        Ok(stage.solution.injections[s].0)
    }

    /// Linearization point of a VSG at the current time, with the grid
    /// gradient taken by a central difference of its output angle.
    pub fn linearization_point(&mut self, device: usize, h: f64) -> Result<(LinearizationPoint, VsgParams), SimError> {
        let DeviceModel::Vsg(params) = self.devices[device].spec.model else {
            return Err(SimError::InvalidScenario(format!("device {} is not a VSG", self.devices[device].spec.name)));
        };
        let x = self.devices[device].x;
        let shifted = |d: f64| {
            let mut y = x;
            y[1] += d;
            y
        };
        let f0 = self.device_power_with_state(device, x)?;
        let grad = (self.device_power_with_state(device, shifted(h))?
            - self.device_power_with_state(device, shifted(-h))?)
            / (2.0 * h);
        let point = LinearizationPoint {
            omega0: x[0],
            theta0: x[1],
            gamma0: x[2],
            t0: self.time(),
            f_ref0: f0 - params.p_ref,
            grad_f_ref0: grad,
            grad_f_max0: grad,
        };
        Ok((point, params))
    }

    /// Largest derivative magnitude over all states of online devices.
    pub fn max_state_derivative(&mut self) -> Result<f64, SimError> {
        let x = self.device_states();
        let stage = self.evaluate(self.time(), &x)?;
        Ok(max_abs(&stage.deriv))
    }

    /// Solve the voltage loops and current limits for fixed angles. The
    /// per-device update is exact given the other EMFs, so Gauss-Seidel
    /// sweeps converge quickly.
    fn algebraic_emfs(&mut self, t: f64, x: &[DeviceState]) -> Vec<C64> {
        let topo = &self.topo;
        let n = topo.sources.len();
        let phase: Vec<C64> =
            topo.sources.iter().map(|&k| C64::from_polar(1.0, self.devices[k].internal_angle(&x[k], t))).collect();
        let mut emf: Vec<C64> = topo
            .sources
            .iter()
            .enumerate()
            .map(|(s, &k)| {
                let d = &self.devices[k];
                match d.spec.model {
                    DeviceModel::Stiff => d.fixed_emf,
                    _ => phase[s] * d.mag * d.scale,
                }
            })
            .collect();

        for _ in 0..ALGEBRAIC_MAX_ITER {
            let mut change = 0.0_f64;
            for s in 0..n {
                let k = topo.sources[s];
                let d = &self.devices[k];
                let Some(vloop) = d.spec.model.voltage() else { continue };
                let others: C64 = (0..n).filter(|&j| j != s).map(|j| topo.transfer[(s, j)] * emf[j]).sum();
                let v_term = others + topo.transfer[(s, s)] * emf[s];
                let mag = vloop.output(v_term.norm(), d.integral(&x[k]));
                let scale = match d.spec.current_limit {
                    Some(limit) => {
                        let yc = topo.solver.coupling(s);
                        let a = yc * (C64::new(1.0, 0.0) - topo.transfer[(s, s)]) * phase[s] * mag;
                        let b = yc * others;
                        limit_scale(a, b, limit)
                    }
                    None => 1.0,
                };
                let new = phase[s] * mag * scale;
                change = change.max((new - emf[s]).norm());
                emf[s] = new;
                let d = &mut self.devices[k];
                d.mag = mag;
                d.scale = scale;
            }
            if change < ALGEBRAIC_TOL {
                break;
            }
        }
        emf
    }

    fn evaluate(&mut self, t: f64, x: &[DeviceState]) -> Result<Stage, SimError> {
        let emfs = self.algebraic_emfs(t, x);
        let solution = self.topo.solver.solve(&emfs);
        let mut deriv = vec![[0.0; STATE_DIM]; self.devices.len()];
        for (s, &k) in self.topo.sources.iter().enumerate() {
            let dev = &self.devices[k];
            let (p, q) = solution.injections[s];
            let v = solution.bus_voltages[self.topo.admittance.index_of(dev.spec.bus).expect("validated bus")].norm();
            let xk = &x[k];
            deriv[k] = match &dev.spec.model {
                DeviceModel::Vsg(params) => {
                    let state = VsgState { omega: xk[0], theta: xk[1], gamma: xk[2], v_err_int: xk[3] };
                    let d = vsg_derivatives(&state, params, &VsgMeasurements { p_out: p, q_out: q, v_out: v })
                        .map_err(|_| SimError::NonFiniteControl { controller: dev.spec.name.clone(), t })?;
                    [d.domega, d.dtheta, d.dgamma, params.voltage.integral_rate(v, xk[3])]
                }
                DeviceModel::Sg(params) => {
                    let state = SgState { delta: xk[0], omega: xk[1], v_err_int: xk[2], p_gov: xk[3] };
                    let (dd, dw) = swing_derivatives(&state, params, p);
                    [dd, dw, params.voltage.integral_rate(v, xk[2]), governor_derivative(&state, params)]
                }
                DeviceModel::Stiff => [0.0; STATE_DIM],
            };
        }
        Ok(Stage { deriv, solution })
    }

    fn rk4(&mut self, t: f64, h: f64, k1: Option<Stage>) -> Result<(), SimError> {
        let x0 = self.device_states();
        let k1 = match k1 {
            Some(k) => k.deriv,
            None => self.evaluate(t, &x0)?.deriv,
        };
        let shift = |x: &[DeviceState], k: &[DeviceState], c: f64| -> Vec<DeviceState> {
            x.iter().zip(k).map(|(xi, ki)| std::array::from_fn(|j| xi[j] + c * ki[j])).collect()
        };
        let k2 = self.evaluate(t + 0.5 * h, &shift(&x0, &k1, 0.5 * h))?.deriv;
        let k3 = self.evaluate(t + 0.5 * h, &shift(&x0, &k2, 0.5 * h))?.deriv;
        let k4 = self.evaluate(t + h, &shift(&x0, &k3, h))?.deriv;
        for (i, dev) in self.devices.iter_mut().enumerate() {
            if !dev.online {
                continue;
            }
            for j in 0..STATE_DIM {
                dev.x[j] = x0[i][j] + h / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
            }
            if dev.x.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFiniteState { t: t + h, device: dev.spec.name.clone() });
            }
        }
        Ok(())
    }

    fn apply_event(&mut self, event: &Event) -> Result<(), SimError> {
        match event.kind {
            EventKind::ApplyFault { bus, conductance } => {
                self.faults.retain(|f| f.bus != bus);
                self.faults.push(FaultShunt { bus, conductance });
            }
            EventKind::ClearFault { bus } => self.faults.retain(|f| f.bus != bus),
            EventKind::TripLine { line } | EventKind::RecloseLine { line } => {
                let status = if matches!(event.kind, EventKind::TripLine { .. }) {
                    LineStatus::Open
                } else {
                    LineStatus::Closed
                };
                self.grid
                    .line_mut(line)
                    .ok_or_else(|| SimError::InvalidScenario(format!("unknown line {line}")))?
                    .status = status;
            }
            EventKind::LoadStep { bus, dp, dq } => match self.grid.loads.iter_mut().find(|l| l.bus == bus) {
                Some(load) => {
                    load.p += dp;
                    load.q += dq;
                }
                None => self.grid.loads.push(LoadSpec { bus, p: dp, q: dq }),
            },
            EventKind::DisconnectDevice { device } => self.devices[device].online = false,
        }
        Ok(())
    }

    fn apply_due_events(&mut self) -> Result<bool, SimError> {
        let mut changed = false;
        while self.next_event < self.events.len() && self.events[self.next_event].0 <= self.step {
            let event = self.events[self.next_event].1.clone();
            self.apply_event(&event)?;
            self.next_event += 1;
            changed = true;
        }
        if changed {
            let t = self.time();
            self.topo = Topology::build(&self.grid, &self.faults, &self.devices)?;
            if self.epochs.last().map(|e| &e.groups) != Some(&self.topo.groups) {
                self.epochs.push(IslandEpoch { t, groups: self.topo.groups.clone() });
            }
            for buses in self.topo.solver.collapsed() {
                if !self.collapses.iter().any(|c| &c.buses == buses) {
                    self.collapses.push(CollapseRecord { t, buses: buses.clone() });
                }
            }
        }
        Ok(changed)
    }

    /// Advance one base step, refining while a fault is applied.
    pub fn advance(&mut self) -> Result<(), SimError> {
        self.apply_due_events()?;
        self.advance_inner(None)
    }

    fn advance_inner(&mut self, k1: Option<Stage>) -> Result<(), SimError> {
        let dt = self.scenario.dt;
        let t0 = self.time();
        let sub = if self.faults.is_empty() { 1 } else { self.scenario.fault_substeps };
        let h = dt / sub as f64;
        let mut k1 = k1;
        for s in 0..sub {
            self.rk4(t0 + s as f64 * h, h, k1.take())?;
        }
        self.step += 1;
        Ok(())
    }

    fn balance_residual(&self, stage: &Stage) -> f64 {
        let adm = &self.topo.admittance;
        let v = &stage.solution.bus_voltages;
        let generated: f64 = stage.solution.injections.iter().map(|(p, _)| p).sum();
        let mut consumed: f64 =
            (0..adm.n()).map(|i| v[i].norm_sqr() * (adm.load_shunt[i].re + adm.fault_shunt[i].re)).sum();
        for line in self.grid.lines.iter().filter(|l| l.is_closed()) {
            let (a, b) = (adm.index_of(line.from).unwrap(), adm.index_of(line.to).unwrap());
            consumed += line.g * (v[a] - v[b]).norm_sqr();
        }
        (generated - consumed).abs()
    }

    fn record(&self, rec: &mut Recorder, stage: &Stage, x: &[DeviceState]) {
        let t = self.time();
        rec.t.push(t);
        let mut source_pos = vec![None; self.devices.len()];
        for (s, &k) in self.topo.sources.iter().enumerate() {
            source_pos[k] = Some(s);
        }
        for (k, dev) in self.devices.iter().enumerate() {
            let series = &mut rec.series[k];
            match source_pos[k] {
                Some(s) => {
                    let (p, q) = stage.solution.injections[s];
                    let bus = self.topo.admittance.index_of(dev.spec.bus).unwrap();
                    let reference = self.topo.reference[k].expect("online device has a reference");
                    let rel = dev.internal_angle(&x[k], t) - self.devices[reference].internal_angle(&x[reference], t);
                    series.omega_hz.push(dev.frequency_hz(&x[k], &stage.deriv[k]));
                    series.theta_rad.push(rel);
                    series.gamma_pu.push(match dev.spec.model {
                        DeviceModel::Vsg(_) => x[k][2],
                        _ => 0.0,
                    });
                    series.p_out_mw.push(p * crate::grid::BASE_MVA);
                    series.q_out_mvar.push(q * crate::grid::BASE_MVA);
                    series.v_out_pu.push(stage.solution.bus_voltages[bus].norm());
                }
                None => {
                    for col in [
                        &mut series.omega_hz,
                        &mut series.theta_rad,
                        &mut series.gamma_pu,
                        &mut series.p_out_mw,
                        &mut series.q_out_mvar,
                        &mut series.v_out_pu,
                    ] {
                        col.push(f64::NAN);
                    }
                }
            }
        }
        for (i, v) in stage.solution.bus_voltages.iter().enumerate() {
            rec.bus_v[i].push(v.norm());
        }
        rec.max_residual = rec.max_residual.max(self.balance_residual(stage));
    }

    pub fn run(mut self) -> Result<SimulationResult, SimError> {
        let n_steps = (self.scenario.duration / self.scenario.dt).round() as usize;
        let stride = self.scenario.recording_stride;
        let mut rec = Recorder {
            t: Vec::new(),
            series: vec![DeviceSeries::default(); self.devices.len()],
            bus_v: vec![Vec::new(); self.grid.buses.len()],
            max_residual: 0.0,
        };
        let disturbance_t =
            self.events.iter().find(|(idx, _)| *idx <= n_steps).map_or(0.0, |(idx, _)| *idx as f64 * self.scenario.dt);

        let final_derivative;
        loop {
            self.apply_due_events()?;
            let t = self.time();
            let x = self.device_states();
            let stage = self.evaluate(t, &x)?;
            if self.step.is_multiple_of(stride) || self.step == n_steps {
                self.record(&mut rec, &stage, &x);
            }
            if self.step == n_steps {
                final_derivative = max_abs(&stage.deriv);
                break;
            }
            self.advance_inner(Some(stage))?;
        }

        let mut result = SimulationResult {
            scenario: self.scenario.name.clone(),
            devices: self
                .devices
                .iter()
                .map(|d| DeviceInfo {
                    name: d.spec.name.clone(),
                    kind: d.spec.model.kind_name().into(),
                    bus: d.spec.bus,
                })
                .collect(),
            bus_ids: self.grid.buses.iter().map(|b| b.id).collect(),
            t: rec.t,
            series: rec.series,
            bus_v_pu: rec.bus_v,
            epochs: self.epochs,
            collapses: self.collapses,
            disturbance_t,
            max_balance_residual: rec.max_residual,
            final_max_derivative: final_derivative,
            metrics: Metrics {
                nadir_hz: NOMINAL_HZ,
                rocof_max_hz_s: 0.0,
                recovery_s: None,
                max_angle_spread_rad: 0.0,
                survival: true,
            },
        };
        result.metrics = result.recompute_metrics();
        Ok(result)
    }
}

struct Recorder {
    t: Vec<f64>,
    series: Vec<DeviceSeries>,
    bus_v: Vec<Vec<f64>>,
    max_residual: f64,
}

fn max_abs(d: &[DeviceState]) -> f64 {
    d.iter().flat_map(|x| x.iter()).fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Largest `s` in `[0, 1]` with `|s a - b| <= limit`, where `s a - b` is the
/// device current as a function of its EMF scale. When the limit cannot be
/// met the current-minimising scale is returned.
fn limit_scale(a: C64, b: C64, limit: f64) -> f64 {
    if (a - b).norm() <= limit {
        return 1.0;
    }
    let aa = a.norm_sqr();
    if aa == 0.0 {
        return 1.0;
    }
    let ab = (a * b.conj()).re;
    let c = b.norm_sqr() - limit * limit;
    let disc = ab * ab - aa * c;
    if disc < 0.0 {
        return (ab / aa).clamp(0.0, 1.0);
    }
    ((ab + disc.sqrt()) / aa).clamp(0.0, 1.0)
}

pub fn run(scenario: Scenario) -> Result<SimulationResult, SimError> {
    Simulation::new(scenario)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Bus, BusKind, Line, BASE_KV};

    fn bus(id: usize) -> Bus {
        Bus { id, kind: BusKind::Passive, nominal_kv: BASE_KV }
    }

    #[test]
    fn limit_scale_hits_the_limit() {
        let a = C64::new(0.0, -8.0);
        let b = C64::new(0.0, -6.0);
        let s = limit_scale(a, b, 1.0);
        assert!(((a * s - b).norm() - 1.0).abs() < 1e-12);
        assert_eq!(limit_scale(a, b, 5.0), 1.0);
    }

    fn two_machine() -> Scenario {
        Scenario {
            name: "two".into(),
            grid: GridModel {
                buses: vec![bus(1), bus(2)],
                lines: vec![Line::from_impedance(1, 1, 2, 0.01, 0.1, 0.0)],
                loads: vec![LoadSpec { bus: 2, p: 0.8, q: 0.2 }],
            },
            devices: vec![
                DeviceSpec {
                    name: "g".into(),
                    bus: 1,
                    model: DeviceModel::Sg(SgParams { m: 0.1, d: 0.01, governor_droop: 0.05, ..SgParams::default() }),
                    p_dispatch: 0.4,
                    v_target: 1.02,
                    coupling_x: 0.1,
                    current_limit: None,
                },
                DeviceSpec {
                    name: "v".into(),
                    bus: 2,
                    model: DeviceModel::Vsg(VsgParams { p_max: 1.0, p_min: -1.0, ..VsgParams::default() }),
                    p_dispatch: 0.4,
                    v_target: 1.0,
                    coupling_x: 0.15,
                    current_limit: Some(2.0),
                },
            ],
            events: vec![],
            dt: 1e-3,
            duration: 1.0,
            recording_stride: 10,
            fault_substeps: 10,
        }
    }

    #[test]
    fn equilibrium_is_preserved() {
        let sc = two_machine();
        let x0 = Simulation::new(sc.clone()).unwrap().device_states();
        let mut sim = Simulation::new(sc).unwrap();
        assert!(sim.max_state_derivative().unwrap() < 1e-6);
        for _ in 0..1000 {
            sim.advance().unwrap();
        }
        for (a, b) in sim.device_states().iter().zip(&x0) {
            for j in 0..STATE_DIM {
                assert!((a[j] - b[j]).abs() < 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn quiescent_run_records_expected_rows() {
        let r = run(two_machine()).unwrap();
        assert_eq!(r.t.len(), 101);
        assert!(r.max_balance_residual < 1e-9);
        assert_eq!(r.metrics.recovery_s, Some(0.0));
    }

    #[test]
    fn fault_clear_restores_admittance_bit_exactly() {
        let mut sc = two_machine();
        sc.events = vec![
            Event { time: 0.1, kind: EventKind::ApplyFault { bus: 2, conductance: 50.0 } },
            Event { time: 0.2, kind: EventKind::ClearFault { bus: 2 } },
            Event { time: 0.3, kind: EventKind::TripLine { line: 1 } },
            Event { time: 0.4, kind: EventKind::RecloseLine { line: 1 } },
        ];
        let mut sim = Simulation::new(sc).unwrap();
        let y0 = sim.admittance().y.clone();
        for _ in 0..150 {
            sim.advance().unwrap();
        }
        assert_ne!(sim.admittance().y, y0);
        for _ in 0..100 {
            sim.advance().unwrap();
        }
        assert_eq!(sim.admittance().y, y0);
        for _ in 0..200 {
            sim.advance().unwrap();
        }
        assert_eq!(sim.admittance().y, y0);
    }

    #[test]
    fn disconnected_device_reports_nan() {
        let mut sc = two_machine();
        sc.events = vec![Event { time: 0.5, kind: EventKind::DisconnectDevice { device: 0 } }];
        let r = run(sc).unwrap();
        assert!(r.series[0].omega_hz.last().unwrap().is_nan());
        assert!(r.series[1].p_out_mw.last().unwrap().is_finite());
        assert_eq!(r.epochs.len(), 2);
        assert_eq!(r.epochs[1].groups, vec![vec![1]]);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut sc = two_machine();
        sc.dt = 0.0;
        assert!(matches!(Simulation::new(sc), Err(SimError::InvalidScenario(_))));
        let mut sc = two_machine();
        sc.events = vec![Event { time: 0.1, kind: EventKind::TripLine { line: 99 } }];
        assert!(Simulation::new(sc).is_err());
    }
}
