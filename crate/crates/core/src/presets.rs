//! Shipped nine-bus scenarios. Network data is the standard WSCC 9-bus
//! system on a 100 MVA base; units 1..k are inverters in the `kibr` mixes.

use crate::scenario::{
    BusEntry, BusKindEntry, DeviceEntry, DeviceKindEntry, EventEntry, EventKindEntry, GridSection, LineEntry,
    LineStatusEntry, LoadEntry, OracleSection, OutputSection, ScenarioFile, SgEntry, SimSection, VoltageEntry,
    VsgEntry,
};

pub const MIXES: [&str; 4] = ["3sg", "1ibr", "2ibr", "3ibr"];
pub const FAMILIES: [&str; 5] = ["loadstep", "fault15", "fault300", "disconnect", "island"];

/// Line ids of the branches the events refer to.
pub const LINE_5_7: usize = 6;
pub const LINE_6_9: usize = 7;

pub const DISTURBANCE_T: f64 = 1.0;
const RECLOSE_DELAY: f64 = 0.5;

struct Unit {
    bus: usize,
    dispatch_mw: f64,
    v_target: f64,
    /// Transient reactance, used as the machine's coupling.
    xd_t: f64,
    h: f64,
    rating_mva: f64,
    xq_t: f64,
    ibr_mw: f64,
}

const UNITS: [Unit; 3] = [
    Unit {
        bus: 1,
        dispatch_mw: 71.6,
        v_target: 1.04,
        xd_t: 0.0608,
        h: 23.64,
        rating_mva: 247.5,
        xq_t: 0.0969,
        ibr_mw: 150.0,
    },
    Unit {
        bus: 2,
        dispatch_mw: 163.0,
        v_target: 1.025,
        xd_t: 0.1198,
        h: 6.4,
        rating_mva: 192.0,
        xq_t: 0.1969,
        ibr_mw: 250.0,
    },
    Unit {
        bus: 3,
        dispatch_mw: 85.0,
        v_target: 1.025,
        xd_t: 0.1813,
        h: 3.01,
        rating_mva: 128.0,
        xq_t: 0.25,
        ibr_mw: 100.0,
    },
];

/// `(id, from, to, r, x, total charging)`.
const LINES: [(usize, usize, usize, f64, f64, f64); 9] = [
    (1, 1, 4, 0.0, 0.0576, 0.0),
    (2, 2, 7, 0.0, 0.0625, 0.0),
    (3, 3, 9, 0.0, 0.0586, 0.0),
    (4, 4, 5, 0.010, 0.085, 0.176),
    (5, 4, 6, 0.017, 0.092, 0.158),
    (LINE_5_7, 5, 7, 0.032, 0.161, 0.306),
    (LINE_6_9, 6, 9, 0.039, 0.170, 0.358),
    (8, 7, 8, 0.0085, 0.072, 0.149),
    (9, 8, 9, 0.0119, 0.1008, 0.209),
];

const LOADS: [(usize, f64, f64); 3] = [(5, 125.0, 50.0), (6, 90.0, 30.0), (8, 100.0, 35.0)];

pub const IBR_COUPLING_X: f64 = 0.15;
pub const SG_GOVERNOR_LAG_S: f64 = 0.5;
/// Equivalent damping of the classical machine model, MW per unit speed.
pub const SG_DAMPING_MW: f64 = 700.0;

pub fn nine_bus_grid() -> GridSection {
    let buses = (1..=9)
        .map(|id| BusEntry {
            id,
            kind: match id {
                1..=3 => BusKindEntry::Device,
                5 | 6 | 8 => BusKindEntry::Load,
                _ => BusKindEntry::Passive,
            },
            nominal_kv: match id {
                1 => 16.5,
                2 => 18.0,
                3 => 13.8,
                _ => 230.0,
            },
        })
        .collect();
    let lines = LINES
        .iter()
        .map(|&(id, from, to, r, x, b)| LineEntry {
            id,
            from,
            to,
            r_pu: r,
            x_pu: x,
            charging_pu: b,
            status: LineStatusEntry::Closed,
        })
        .collect();
    let loads = LOADS.iter().map(|&(bus, p, q)| LoadEntry { bus, p_mw: p, q_mvar: q }).collect();
    GridSection { buses, lines, loads }
}

fn ibr(k: usize, u: &Unit) -> DeviceEntry {
    DeviceEntry {
        name: format!("unit{}", k + 1),
        bus: u.bus,
        kind: DeviceKindEntry::Vsg,
        p_dispatch_mw: u.dispatch_mw,
        v_target_pu: u.v_target,
        coupling_x_pu: IBR_COUPLING_X,
        current_limit_pu: Some(u.ibr_mw / 100.0),
        vsg: Some(VsgEntry { p_max_mw: u.ibr_mw, p_min_mw: 0.0, ..VsgEntry::default() }),
        sg: None,
        voltage: Some(VoltageEntry::default()),
    }
}

fn sg(k: usize, u: &Unit) -> DeviceEntry {
    DeviceEntry {
        name: format!("unit{}", k + 1),
        bus: u.bus,
        kind: DeviceKindEntry::Sg,
        p_dispatch_mw: u.dispatch_mw,
        v_target_pu: u.v_target,
        coupling_x_pu: u.xd_t,
        current_limit_pu: None,
        vsg: None,
        sg: Some(SgEntry {
            inertia_h_s: u.h,
            xq_t_pu: u.xq_t,
            xq_st_pu: 0.6 * u.xq_t,
            rating_mva: u.rating_mva,
            governor_time_constant_s: SG_GOVERNOR_LAG_S,
            damping_mw: SG_DAMPING_MW,
            ..SgEntry::default()
        }),
        voltage: Some(VoltageEntry::default()),
    }
}

fn ibr_count(mix: &str) -> Option<usize> {
    match mix {
        "3sg" => Some(0),
        "1ibr" => Some(1),
        "2ibr" => Some(2),
        "3ibr" => Some(3),
        _ => None,
    }
}

fn fault_events(duration: f64) -> Vec<EventEntry> {
    let t_clear = DISTURBANCE_T + duration;
    let bus7 = |kind| EventEntry { bus: Some(7), ..EventEntry::new(DISTURBANCE_T, kind) };
    let line = |t, kind| EventEntry { line: Some(LINE_5_7), ..EventEntry::new(t, kind) };
    vec![
        bus7(EventKindEntry::ApplyFault),
        EventEntry { time_s: t_clear, ..bus7(EventKindEntry::ClearFault) },
        line(t_clear, EventKindEntry::TripLine),
        line(t_clear + RECLOSE_DELAY, EventKindEntry::RecloseLine),
    ]
}

fn events(family: &str) -> Option<Vec<EventEntry>> {
    Some(match family {
        "loadstep" => LOADS
            .iter()
            .map(|&(bus, _, _)| EventEntry {
                bus: Some(bus),
                dp_mw: Some(30.0),
                dq_mvar: Some(0.01),
                ..EventEntry::new(DISTURBANCE_T, EventKindEntry::LoadStep)
            })
            .collect(),
        "fault15" => fault_events(0.015),
        "fault300" => fault_events(0.3),
        "disconnect" => vec![EventEntry {
            device: Some("unit1".into()),
            ..EventEntry::new(DISTURBANCE_T, EventKindEntry::DisconnectDevice)
        }],
        "island" => [LINE_5_7, LINE_6_9]
            .iter()
            .map(|&l| EventEntry { line: Some(l), ..EventEntry::new(DISTURBANCE_T, EventKindEntry::TripLine) })
            .collect(),
        _ => return None,
    })
}

pub fn preset_names() -> Vec<String> {
    FAMILIES.iter().flat_map(|f| MIXES.iter().map(move |m| format!("nine_bus_{m}_{f}"))).collect()
}

/// `nine_bus_{mix}_{family}`, or `None` for an unknown name.
pub fn preset(name: &str) -> Option<ScenarioFile> {
    let rest = name.strip_prefix("nine_bus_")?;
    let (mix, family) = rest.split_once('_')?;
    let n_ibr = ibr_count(mix)?;
    let events = events(family)?;
    let devices = UNITS.iter().enumerate().map(|(k, u)| if k < n_ibr { ibr(k, u) } else { sg(k, u) }).collect();
    let mut file = ScenarioFile {
        name: name.to_string(),
        description: format!(
            "WSCC 9-bus, {n_ibr} of 3 units inverter-based, {family} disturbance at t = {DISTURBANCE_T} s"
        ),
        sim: SimSection { duration_s: 20.0, ..SimSection::default() },
        output: OutputSection::default(),
        oracle: OracleSection::default(),
        grid: nine_bus_grid(),
        devices,
        events,
    };
    file.materialize().expect("presets are consistent");
    Some(file)
}
