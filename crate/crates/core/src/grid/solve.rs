use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::{AdmittanceMatrix, C64};
use crate::error::GridError;

/// A device seen by the network: internal EMF behind a coupling admittance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceSource {
    pub bus: usize,
    pub emf: C64,
    pub coupling: C64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSolution {
    pub bus_voltages: Vec<C64>,
    /// Current flowing from each source into its terminal bus.
    pub source_currents: Vec<C64>,
    /// `(P, Q)` delivered at each source terminal, pu.
    pub injections: Vec<(f64, f64)>,
    /// Islands (as bus ids) that carry load but no source.
    pub collapsed: Vec<Vec<usize>>,
}

#[derive(Debug)]
struct IslandFactor {
    buses: Vec<usize>,
    /// Position of every network bus inside this island, if any.
    local: Vec<Option<usize>>,
    lu: Option<LU<C64, Dyn, Dyn>>,
}

/// Factorises `Y + diag(couplings)` once per topology and reuses it for
/// every right-hand side.
#[derive(Debug)]
pub struct NetworkSolver {
    n: usize,
    bus_ids: Vec<usize>,
    islands: Vec<IslandFactor>,
    source_bus: Vec<usize>,
    coupling: Vec<C64>,
    collapsed: Vec<Vec<usize>>,
    y_aug: DMatrix<C64>,
}

impl NetworkSolver {
    /// `sources` gives `(bus id, coupling admittance)` per source, in the
    /// order EMFs will later be supplied to [`NetworkSolver::solve`].
    pub fn new(y: &AdmittanceMatrix, sources: &[(usize, C64)]) -> Result<Self, GridError> {
        let n = y.n();
        let mut source_bus = Vec::with_capacity(sources.len());
        let mut y_aug = y.y.clone();
        for &(bus, yc) in sources {
            let i = y.index_of(bus).ok_or(GridError::UnknownBus { what: "device".into(), bus })?;
            source_bus.push(i);
            y_aug[(i, i)] += yc;
        }

        let mut islands = Vec::with_capacity(y.islands.len());
        let mut collapsed = Vec::new();
        for island in &y.islands {
            let mut local = vec![None; n];
            for (k, &b) in island.iter().enumerate() {
                local[b] = Some(k);
            }
            let has_source = source_bus.iter().any(|b| local[*b].is_some());
            let lu = if has_source {
                let m = island.len();
                let sub = DMatrix::from_fn(m, m, |r, c| y_aug[(island[r], island[c])]);
                let lu = sub.lu();
                if !lu.is_invertible() {
                    return Err(GridError::Singular(format!(
                        "island with buses {:?} has a singular admittance matrix",
                        island.iter().map(|&b| y.bus_ids[b]).collect::<Vec<_>>()
                    )));
                }
                Some(lu)
            } else {
                if island.iter().any(|&b| y.load_shunt[b] != C64::new(0.0, 0.0)) {
                    collapsed.push(island.iter().map(|&b| y.bus_ids[b]).collect());
                }
                None
            };
            islands.push(IslandFactor { buses: island.clone(), local, lu });
        }

        Ok(Self {
            n,
            bus_ids: y.bus_ids.clone(),
            islands,
            source_bus,
            coupling: sources.iter().map(|s| s.1).collect(),
            collapsed,
            y_aug,
        })
    }

    pub fn source_count(&self) -> usize {
        self.source_bus.len()
    }

    pub fn collapsed(&self) -> &[Vec<usize>] {
        &self.collapsed
    }

    /// Island index of each source.
    pub fn source_islands(&self) -> Vec<usize> {
        self.source_bus.iter().map(|&b| self.islands.iter().position(|isl| isl.local[b].is_some()).unwrap()).collect()
    }

    pub fn island_buses(&self) -> Vec<Vec<usize>> {
        self.islands.iter().map(|isl| isl.buses.iter().map(|&b| self.bus_ids[b]).collect()).collect()
    }

    pub fn solve(&self, emfs: &[C64]) -> NetworkSolution {
        assert_eq!(emfs.len(), self.source_bus.len(), "one EMF per source");
        let mut v = vec![C64::new(0.0, 0.0); self.n];
        for island in &self.islands {
            let Some(lu) = &island.lu else { continue };
            let mut rhs = DVector::from_element(island.buses.len(), C64::new(0.0, 0.0));
            for (k, &b) in self.source_bus.iter().enumerate() {
                if let Some(pos) = island.local[b] {
                    rhs[pos] += self.coupling[k] * emfs[k];
                }
            }
            let x = lu.solve(&rhs).expect("factor checked invertible");
            for (pos, &b) in island.buses.iter().enumerate() {
                v[b] = x[pos];
            }
        }

        let mut currents = Vec::with_capacity(emfs.len());
        let mut injections = Vec::with_capacity(emfs.len());
        for (k, &b) in self.source_bus.iter().enumerate() {
            let i = self.coupling[k] * (emfs[k] - v[b]);
            let s = v[b] * i.conj();
            currents.push(i);
            injections.push((s.re, s.im));
        }
        NetworkSolution { bus_voltages: v, source_currents: currents, injections, collapsed: self.collapsed.clone() }
    }

    /// `W[(k, j)]`: terminal voltage of source `k` per unit EMF of source `j`.
    pub fn source_transfer(&self) -> DMatrix<C64> {
        let m = self.source_bus.len();
        let mut w = DMatrix::from_element(m, m, C64::new(0.0, 0.0));
        let mut unit = vec![C64::new(0.0, 0.0); m];
        for j in 0..m {
            unit[j] = C64::new(1.0, 0.0);
            let v = self.solve(&unit).bus_voltages;
            for (k, &b) in self.source_bus.iter().enumerate() {
                w[(k, j)] = v[b];
            }
            unit[j] = C64::new(0.0, 0.0);
        }
        w
    }

    pub fn coupling(&self, source: usize) -> C64 {
        self.coupling[source]
    }

    /// `max |(Y + diag(yc)) V - sum(yc E)|` over energised buses.
    pub fn residual(&self, emfs: &[C64], v: &[C64]) -> f64 {
        let mut rhs = vec![C64::new(0.0, 0.0); self.n];
        for (k, &b) in self.source_bus.iter().enumerate() {
            rhs[b] += self.coupling[k] * emfs[k];
        }
        let mut worst = 0.0_f64;
        for island in self.islands.iter().filter(|i| i.lu.is_some()) {
            for &r in &island.buses {
                let mut acc = -rhs[r];
                for &c in &island.buses {
                    acc += self.y_aug[(r, c)] * v[c];
                }
                worst = worst.max(acc.norm());
            }
        }
        worst
    }
}

/// One-shot network solve: voltages of every bus given the device sources.
/// Islands without a source are left at zero; those with load are reported
/// in [`NetworkSolution::collapsed`].
pub fn solve_bus_voltages(y: &AdmittanceMatrix, sources: &[DeviceSource]) -> Result<NetworkSolution, GridError> {
    let couplings: Vec<(usize, C64)> = sources.iter().map(|s| (s.bus, s.coupling)).collect();
    let solver = NetworkSolver::new(y, &couplings)?;
    let emfs: Vec<C64> = sources.iter().map(|s| s.emf).collect();
    Ok(solver.solve(&emfs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_admittance, Bus, BusKind, Line, LineStatus, LoadSpec, BASE_KV};

    fn buses(ids: &[usize]) -> Vec<Bus> {
        ids.iter().map(|&id| Bus { id, kind: BusKind::Passive, nominal_kv: BASE_KV }).collect()
    }

    #[test]
    fn single_device_without_load_carries_no_current() {
        let y = build_admittance(&buses(&[1]), &[], &[], &[]).unwrap();
        let emf = C64::from_polar(1.03, 0.2);
        let sol =
            solve_bus_voltages(&y, &[DeviceSource { bus: 1, emf, coupling: C64::new(0.0, -1.0 / 0.15) }]).unwrap();
        assert!((sol.bus_voltages[0] - emf).norm() < 1e-15);
        assert_eq!(sol.injections[0], (0.0, 0.0));
    }

    #[test]
    fn source_behind_lossless_branch_matches_transfer_formula() {
        // both sources sit behind their own reactance; the series path is
        // 0.15 + 0.2 + 0.05 pu, so the EMF-to-EMF transfer is exact
        let line = Line::from_impedance(1, 1, 2, 0.0, 0.2, 0.0);
        let y = build_admittance(&buses(&[1, 2]), &[line], &[], &[]).unwrap();
        let sol = solve_bus_voltages(
            &y,
            &[
                DeviceSource { bus: 1, emf: C64::from_polar(1.0, 0.1), coupling: C64::new(0.0, -1.0 / 0.15) },
                DeviceSource { bus: 2, emf: C64::from_polar(0.98, 0.0), coupling: C64::new(0.0, -1.0 / 0.05) },
            ],
        )
        .unwrap();
        let p = sol.injections[0].0;
        let expected = crate::grid::injection_power(1.0, 0.98, 0.0, 1.0 / 0.4, 0.1);
        assert!((p - expected).abs() < 1e-12, "{p} vs {expected}");
        assert!((sol.injections[0].0 + sol.injections[1].0).abs() < 1e-12);
    }

    #[test]
    fn transfer_matrix_reproduces_solution() {
        let line = Line::from_impedance(1, 1, 2, 0.01, 0.2, 0.05);
        let loads = [LoadSpec { bus: 2, p: 0.4, q: 0.1 }];
        let y = build_admittance(&buses(&[1, 2]), &[line], &loads, &[]).unwrap();
        let couplings = [(1, C64::new(0.0, -1.0 / 0.15)), (2, C64::new(0.0, -1.0 / 0.1))];
        let solver = NetworkSolver::new(&y, &couplings).unwrap();
        let emfs = [C64::from_polar(1.05, 0.2), C64::from_polar(0.97, -0.1)];
        let w = solver.source_transfer();
        let sol = solver.solve(&emfs);
        for k in 0..2 {
            let v = w[(k, 0)] * emfs[0] + w[(k, 1)] * emfs[1];
            assert!((v - sol.bus_voltages[k]).norm() < 1e-13);
        }
        assert!(solver.residual(&emfs, &sol.bus_voltages) < 1e-12);
    }

    #[test]
    fn dead_island_with_load_collapses() {
        let mut l = Line::from_impedance(1, 1, 2, 0.0, 0.1, 0.0);
        l.status = LineStatus::Open;
        let loads = [LoadSpec { bus: 2, p: 0.5, q: 0.0 }];
        let y = build_admittance(&buses(&[1, 2]), &[l], &loads, &[]).unwrap();
        let sol =
            solve_bus_voltages(&y, &[DeviceSource { bus: 1, emf: C64::new(1.0, 0.0), coupling: C64::new(0.0, -5.0) }])
                .unwrap();
        assert_eq!(sol.collapsed, vec![vec![2]]);
        assert_eq!(sol.bus_voltages[1], C64::new(0.0, 0.0));
    }
}
