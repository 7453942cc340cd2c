use nalgebra::{DMatrix, DVector};

use super::{build_admittance, GridModel, C64};
use crate::error::GridError;

const TOLERANCE: f64 = 1e-11;
const MAX_ITERATIONS: usize = 50;
/// Largest share of island load the reference device may pick up beyond
/// its own target before the dispatch is declared infeasible.
const MAX_SLACK_PICKUP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchTarget {
    pub bus: usize,
    pub p: f64,
    pub v: f64,
    /// Coupling admittance between the internal EMF and the terminal.
    pub coupling: C64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceOperatingPoint {
    pub p: f64,
    pub q: f64,
    pub terminal: C64,
    pub emf: C64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub bus_voltages: Vec<C64>,
    pub devices: Vec<DeviceOperatingPoint>,
    pub iterations: usize,
    pub mismatch: f64,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum BusRole {
    Slack,
    Pv,
    Pq,
    Dead,
}

/// Newton power flow with constant-impedance loads. The first device of
/// each island holds the angle reference and absorbs losses; every other
/// device bus is regulated to its voltage target.
pub fn init_steady_state(grid: &GridModel, dispatch: &[DispatchTarget]) -> Result<SteadyState, GridError> {
    grid.validate()?;
    let y = build_admittance(&grid.buses, &grid.lines, &grid.loads, &[])?;
    let n = y.n();

    let dev_bus: Vec<usize> = dispatch
        .iter()
        .map(|d| y.index_of(d.bus).ok_or(GridError::UnknownBus { what: "device".into(), bus: d.bus }))
        .collect::<Result<_, _>>()?;

    let mut role = vec![BusRole::Dead; n];
    let mut v_spec = vec![1.0; n];
    let mut p_spec = vec![0.0; n];
    let mut slack_device = Vec::new();
    for island in &y.islands {
        let devices: Vec<usize> = (0..dispatch.len()).filter(|&k| island.contains(&dev_bus[k])).collect();
        let Some(&first) = devices.first() else { continue };
        for &b in island {
            role[b] = BusRole::Pq;
        }
        for &k in &devices {
            let b = dev_bus[k];
            if role[b] == BusRole::Pq {
                role[b] = BusRole::Pv;
                v_spec[b] = dispatch[k].v;
            }
            p_spec[b] += dispatch[k].p;
        }
        role[dev_bus[first]] = BusRole::Slack;
        slack_device.push(first);
    }

    let angle_idx: Vec<usize> = (0..n).filter(|&i| matches!(role[i], BusRole::Pv | BusRole::Pq)).collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&i| role[i] == BusRole::Pq).collect();

    let mut vm: Vec<f64> = (0..n)
        .map(|i| match role[i] {
            BusRole::Slack | BusRole::Pv => v_spec[i],
            BusRole::Pq => 1.0,
            BusRole::Dead => 0.0,
        })
        .collect();
    let mut va = vec![0.0; n];

    let g = y.y.map(|c| c.re);
    let b = y.y.map(|c| c.im);

    let injections = |vm: &[f64], va: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                if g[(i, k)] == 0.0 && b[(i, k)] == 0.0 {
                    continue;
                }
                let t = va[i] - va[k];
                p[i] += vm[i] * vm[k] * (g[(i, k)] * t.cos() + b[(i, k)] * t.sin());
                q[i] += vm[i] * vm[k] * (g[(i, k)] * t.sin() - b[(i, k)] * t.cos());
            }
        }
        (p, q)
    };

    let mut iterations = 0;
    let mismatch;
    loop {
        let (p, q) = injections(&vm, &va);
        let mut f = Vec::with_capacity(angle_idx.len() + mag_idx.len());
        f.extend(angle_idx.iter().map(|&i| p_spec[i] - p[i]));
        f.extend(mag_idx.iter().map(|&i| -q[i]));
        let worst = f.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if worst < TOLERANCE {
            mismatch = worst;
            break;
        }
        if iterations == MAX_ITERATIONS || !worst.is_finite() {
            return Err(GridError::InfeasibleDispatch {
                reason: "power flow did not converge".into(),
                mismatch: worst,
                iterations,
            });
        }

        let m = f.len();
        let na = angle_idx.len();
        let mut jac = DMatrix::<f64>::zeros(m, m);
        for (r, &i) in angle_idx.iter().chain(mag_idx.iter()).enumerate() {
            let is_p = r < na;
            for (c, &k) in angle_idx.iter().chain(mag_idx.iter()).enumerate() {
                let wrt_angle = c < na;
                let (gik, bik) = (g[(i, k)], b[(i, k)]);
                let t = va[i] - va[k];
                let val = if i != k {
                    match (is_p, wrt_angle) {
                        (true, true) => vm[i] * vm[k] * (gik * t.sin() - bik * t.cos()),
                        (true, false) => vm[i] * (gik * t.cos() + bik * t.sin()),
                        (false, true) => -vm[i] * vm[k] * (gik * t.cos() + bik * t.sin()),
                        (false, false) => vm[i] * (gik * t.sin() - bik * t.cos()),
                    }
                } else {
                    match (is_p, wrt_angle) {
                        (true, true) => -q[i] - bik * vm[i] * vm[i],
                        (true, false) => p[i] / vm[i] + gik * vm[i],
                        (false, true) => p[i] - gik * vm[i] * vm[i],
                        (false, false) => q[i] / vm[i] - bik * vm[i],
                    }
                };
                jac[(r, c)] = val;
            }
        }
        let dx = jac.lu().solve(&DVector::from_vec(f)).ok_or_else(|| GridError::InfeasibleDispatch {
            reason: "singular power-flow Jacobian".into(),
            mismatch: worst,
            iterations,
        })?;
        for (r, &i) in angle_idx.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            vm[i] += dx[na + r];
        }
        iterations += 1;
    }

    let v: Vec<C64> = (0..n).map(|i| C64::from_polar(vm[i], va[i])).collect();
    let yv = &y.y * DVector::from_vec(v.clone());
    let s_bus: Vec<C64> = (0..n).map(|i| v[i] * yv[i].conj()).collect();

    let mut devices: Vec<DeviceOperatingPoint> = Vec::with_capacity(dispatch.len());
    for (k, d) in dispatch.iter().enumerate() {
        let bus = dev_bus[k];
        let sharing: Vec<usize> = (0..dispatch.len()).filter(|&j| dev_bus[j] == bus).collect();
        let q = s_bus[bus].im / sharing.len() as f64;
        let p = if slack_device.contains(&k) {
            s_bus[bus].re - sharing.iter().filter(|&&j| j != k).map(|&j| dispatch[j].p).sum::<f64>()
        } else {
            d.p
        };
        let terminal = v[bus];
        let current = (C64::new(p, q) / terminal).conj();
        devices.push(DeviceOperatingPoint { p, q, terminal, emf: terminal + current / d.coupling });
    }

    for (&k, island) in
        slack_device.iter().zip(y.islands.iter().filter(|isl| (0..dispatch.len()).any(|j| isl.contains(&dev_bus[j]))))
    {
        let load: f64 = island.iter().map(|&i| vm[i] * vm[i] * y.load_shunt[i].re).sum();
        let pickup = devices[k].p - dispatch[k].p;
        if pickup > MAX_SLACK_PICKUP * load + 1e-9 {
            return Err(GridError::InfeasibleDispatch {
                reason: format!(
                    "dispatch short by {:.4} pu; reference device may cover at most {:.4} pu",
                    pickup,
                    MAX_SLACK_PICKUP * load
                ),
                mismatch,
                iterations,
            });
        }
    }

    Ok(SteadyState { bus_voltages: v, devices, iterations, mismatch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Bus, BusKind, Line, LoadSpec, BASE_KV};

    fn bus(id: usize) -> Bus {
        Bus { id, kind: BusKind::Passive, nominal_kv: BASE_KV }
    }

    fn target(bus: usize, p: f64, v: f64) -> DispatchTarget {
        DispatchTarget { bus, p, v, coupling: C64::new(0.0, -1.0 / 0.15) }
    }

    #[test]
    fn zero_load_flat_start_needs_no_correction() {
        let grid = GridModel { buses: vec![bus(1)], lines: vec![], loads: vec![] };
        let ss = init_steady_state(&grid, &[target(1, 0.0, 1.0)]).unwrap();
        assert_eq!(ss.iterations, 0);
        assert_eq!(ss.bus_voltages[0], C64::new(1.0, 0.0));
        assert_eq!(ss.devices[0].emf, C64::new(1.0, 0.0));
    }

    #[test]
    fn two_bus_load_is_served() {
        let grid = GridModel {
            buses: vec![bus(1), bus(2)],
            lines: vec![Line::from_impedance(1, 1, 2, 0.01, 0.1, 0.0)],
            loads: vec![LoadSpec { bus: 2, p: 0.5, q: 0.2 }],
        };
        let ss = init_steady_state(&grid, &[target(1, 0.5, 1.02)]).unwrap();
        assert!(ss.mismatch < 1e-8);
        let v2 = ss.bus_voltages[1].norm();
        let load = 0.5 * v2 * v2;
        assert!(ss.devices[0].p > load, "losses are covered by the reference device");
        assert!(ss.devices[0].p - load < 0.01);
    }

    #[test]
    fn half_dispatch_is_infeasible() {
        let grid = GridModel {
            buses: vec![bus(1), bus(2), bus(3)],
            lines: vec![Line::from_impedance(1, 1, 3, 0.0, 0.1, 0.0), Line::from_impedance(2, 2, 3, 0.0, 0.1, 0.0)],
            loads: vec![LoadSpec { bus: 3, p: 1.0, q: 0.0 }],
        };
        let err = init_steady_state(&grid, &[target(1, 0.25, 1.0), target(2, 0.25, 1.0)]).unwrap_err();
        assert!(matches!(err, GridError::InfeasibleDispatch { .. }), "{err}");
    }
}
