//! Single-bus aggregate plant and its bang-bang optimal control, used as a
//! reference when comparing frequency controllers.

use crate::error::SimError;
use crate::vsg::{vsg_derivatives, VsgMeasurements, VsgParams, VsgState};

/// `|omega_S|` below this is treated as zero.
pub const PMP_DEADBAND: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateParams {
    pub m_s: f64,
    pub d_s: f64,
    pub p_g: f64,
    pub p_l: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub horizon: f64,
}

impl AggregateParams {
    /// Output that exactly cancels the generation/load imbalance.
    pub fn balancing_power(&self) -> f64 {
        self.p_l - self.p_g
    }
}

/// Bang-bang control: `P_min` while the grid runs fast, `P_max` while it
/// runs slow, and the balancing power on the switching surface.
pub fn pmp_control(omega_s: f64, params: &AggregateParams) -> f64 {
    if omega_s > PMP_DEADBAND {
        params.p_min
    } else if omega_s < -PMP_DEADBAND {
        params.p_max
    } else {
        params.balancing_power().clamp(params.p_min, params.p_max)
    }
}

/// A controller acting on the aggregate plant. Controllers may carry their
/// own states, integrated alongside the plant.
pub trait AggregateController {
    fn name(&self) -> String;
    fn initial_state(&self) -> Vec<f64> {
        Vec::new()
    }
    /// Requested output; the plant clamps it to the limits.
    fn output(&self, t: f64, omega_s: f64, theta_s: f64, x: &[f64]) -> f64;
    fn derivatives(
        &self,
        _t: f64,
        _omega_s: f64,
        _theta_s: f64,
        _x: &[f64],
        _p_out: f64,
        _dx: &mut [f64],
    ) -> Result<(), SimError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub omega: Vec<f64>,
    pub p_out: Vec<f64>,
    /// Controller states at each sample.
    pub states: Vec<Vec<f64>>,
}

pub struct Pmp(pub AggregateParams);

impl AggregateController for Pmp {
    fn name(&self) -> String {
        "pmp".into()
    }
    fn output(&self, _t: f64, omega_s: f64, _theta_s: f64, _x: &[f64]) -> f64 {
        pmp_control(omega_s, &self.0)
    }
}

pub struct ConstantOutput(pub f64);

impl AggregateController for ConstantOutput {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }
    fn output(&self, _t: f64, _omega_s: f64, _theta_s: f64, _x: &[f64]) -> f64 {
        self.0
    }
}

/// Proportional frequency droop, `P = -gain * omega_S`.
pub struct Droop {
    pub gain: f64,
}

impl AggregateController for Droop {
    fn name(&self) -> String {
        format!("droop({})", self.gain)
    }
    fn output(&self, _t: f64, omega_s: f64, _theta_s: f64, _x: &[f64]) -> f64 {
        -self.gain * omega_s
    }
}

/// The dynamic-inertia VSG, tied to the plant through a stiff coupling
/// `P = p_sync sin(theta_out - theta_S)`. States are `[omega, theta, gamma]`.
pub struct DynamicVsg {
    pub params: VsgParams,
    pub p_sync: f64,
}

impl AggregateController for DynamicVsg {
    fn name(&self) -> String {
        "dynamic-vsg".into()
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; 3]
    }
    fn output(&self, _t: f64, _omega_s: f64, theta_s: f64, x: &[f64]) -> f64 {
        self.p_sync * (x[1] - self.params.c_theta * x[2] - theta_s).sin()
    }
    fn derivatives(
        &self,
        t: f64,
        _omega_s: f64,
        _theta_s: f64,
        x: &[f64],
        p_out: f64,
        dx: &mut [f64],
    ) -> Result<(), SimError> {
        let s = VsgState { omega: x[0], theta: x[1], gamma: x[2], v_err_int: 0.0 };
        let m = VsgMeasurements { p_out, q_out: 0.0, v_out: 1.0 };
        let d = vsg_derivatives(&s, &self.params, &m)
            .map_err(|_| SimError::NonFiniteControl { controller: self.name(), t })?;
        dx[0] = d.domega;
        dx[1] = d.dtheta;
        dx[2] = d.dgamma;
        Ok(())
    }
}

/// A conventional VSG with constant inverted damping and no limit shifts.
/// States are `[omega, theta]`.
pub struct FixedVsg {
    pub tau_omega: f64,
    pub alpha: f64,
    pub p_ref: f64,
    pub p_sync: f64,
}

impl AggregateController for FixedVsg {
    fn name(&self) -> String {
        format!("fixed-vsg(alpha={:.4})", self.alpha)
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; 2]
    }
    fn output(&self, _t: f64, _omega_s: f64, theta_s: f64, x: &[f64]) -> f64 {
        self.p_sync * (x[1] - theta_s).sin()
    }
    fn derivatives(
        &self,
        _t: f64,
        _omega_s: f64,
        _theta_s: f64,
        x: &[f64],
        p_out: f64,
        dx: &mut [f64],
    ) -> Result<(), SimError> {
        dx[0] = (-x[0] + self.alpha * (self.p_ref - p_out)) / self.tau_omega;
        dx[1] = x[0];
        Ok(())
    }
}

/// The plant receives the clamped output; the controller's own states see
/// what it asked for, so a limit penalty can register the violation.
fn rhs(
    controller: &dyn AggregateController,
    params: &AggregateParams,
    t: f64,
    y: &[f64],
    dy: &mut [f64],
) -> Result<f64, SimError> {
    let requested = controller.output(t, y[0], y[1], &y[2..]);
    if !requested.is_finite() {
        return Err(SimError::NonFiniteControl { controller: controller.name(), t });
    }
    let u = requested.clamp(params.p_min, params.p_max);
    dy[0] = (-params.d_s * y[0] + params.p_g - params.p_l + u) / params.m_s;
    dy[1] = y[0];
    controller.derivatives(t, y[0], y[1], &y[2..], requested, &mut dy[2..])?;
    Ok(u)
}

/// Classical RK4 over `[0, T]` starting from a synchronous plant.
pub fn simulate_aggregate(
    params: &AggregateParams,
    controller: &dyn AggregateController,
    dt: f64,
) -> Result<Trajectory, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidScenario(format!("dt must be positive, got {dt}")));
    }
    let steps = (params.horizon / dt).round() as usize;
    let mut y = vec![0.0, 0.0];
    y.extend(controller.initial_state());
    let n = y.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut traj = Trajectory::default();

    for step in 0..=steps {
        let t = step as f64 * dt;
        let u = rhs(controller, params, t, &y, &mut k1)?;
        traj.t.push(t);
        traj.omega.push(y[0]);
        traj.p_out.push(u);
        traj.states.push(y[2..].to_vec());
        if step == steps {
            break;
        }
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        rhs(controller, params, t + 0.5 * dt, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        rhs(controller, params, t + 0.5 * dt, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + dt * k3[i];
        }
        rhs(controller, params, t + dt, &tmp, &mut k4)?;
        for i in 0..n {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState { t: t + dt, device: format!("{} state {bad}", controller.name()) });
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerCost {
    pub name: String,
    pub cost: f64,
}

/// Frequency cost of the bang-bang reference, the dynamic VSG, a VSG with
/// the dynamic run's mean inverted damping held constant, a proportional
/// droop and a zero output, all on the same plant. `vsg.p_ref` is the
/// pre-disturbance output, which must be zero for a balanced start.
pub fn compare_controllers(
    params: &AggregateParams,
    vsg: &VsgParams,
    p_sync: f64,
    dt: f64,
) -> Result<Vec<ControllerCost>, SimError> {
    let dynamic = DynamicVsg { params: *vsg, p_sync };
    let traj = simulate_aggregate(params, &dynamic, dt)?;
    let mean_alpha = traj.states.iter().map(|x| vsg.inverted_damping(x[2])).sum::<f64>() / traj.states.len() as f64;
    let fixed = FixedVsg { tau_omega: vsg.tau_omega, alpha: mean_alpha, p_ref: vsg.p_ref, p_sync };
    let droop = Droop { gain: 1.0 };
    let zero = ConstantOutput(0.0);

    let mut out = vec![ControllerCost {
        name: "pmp".into(),
        cost: frequency_cost(&simulate_aggregate(params, &Pmp(*params), dt)?),
    }];
    out.push(ControllerCost { name: dynamic.name(), cost: frequency_cost(&traj) });
    for c in [&fixed as &dyn AggregateController, &droop, &zero] {
        out.push(ControllerCost { name: c.name(), cost: frequency_cost(&simulate_aggregate(params, c, dt)?) });
    }
    Ok(out)
}

/// Trapezoid quadrature of `omega^2 / 2`.
pub fn frequency_cost(traj: &Trajectory) -> f64 {
    traj.t.windows(2).zip(traj.omega.windows(2)).map(|(t, w)| 0.25 * (t[1] - t[0]) * (w[0] * w[0] + w[1] * w[1])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn plant(deficit: f64) -> AggregateParams {
        AggregateParams { m_s: 0.2, d_s: 0.3, p_g: 1.0, p_l: 1.0 - deficit, p_min: -0.3, p_max: 0.3, horizon: 10.0 }
    }

    #[test]
    fn pmp_branches() {
        let p = plant(-0.3);
        assert_eq!(pmp_control(-0.1, &p), 0.3);
        assert_eq!(pmp_control(0.1, &p), -0.3);
        assert_abs_diff_eq!(pmp_control(0.0, &p), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(pmp_control(5e-10, &p), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn balanced_start_stays_synchronous() {
        let p = plant(0.0);
        for c in [&Pmp(p) as &dyn AggregateController, &ConstantOutput(0.0), &Droop { gain: 2.0 }] {
            let tr = simulate_aggregate(&p, c, 1e-3).unwrap();
            assert!(tr.omega.iter().all(|w| *w == 0.0), "{}", c.name());
        }
    }

    #[test]
    fn pmp_holds_sliding_mode() {
        let p = plant(-0.3);
        let tr = simulate_aggregate(&p, &Pmp(p), 1e-3).unwrap();
        assert!(tr.omega.last().unwrap().abs() < 1e-6);
        assert!(tr.p_out.iter().all(|u| (p.p_min..=p.p_max).contains(u)));
    }

    #[test]
    fn constant_output_settles_at_droop_offset() {
        let p = AggregateParams { horizon: 30.0, ..plant(-0.3) };
        let tr = simulate_aggregate(&p, &ConstantOutput(0.0), 1e-3).unwrap();
        assert_abs_diff_eq!(*tr.omega.last().unwrap(), -0.3 / p.d_s, epsilon = 1e-6);
    }

    #[test]
    fn output_is_clamped() {
        let p = plant(-0.3);
        let tr = simulate_aggregate(&p, &ConstantOutput(5.0), 1e-3).unwrap();
        assert!(tr.p_out.iter().all(|u| *u == 0.3));
    }

    #[test]
    fn non_finite_controller_is_reported() {
        let p = plant(-0.3);
        let err = simulate_aggregate(&p, &ConstantOutput(f64::NAN), 1e-3).unwrap_err();
        assert!(matches!(err, SimError::NonFiniteControl { t, .. } if t == 0.0));
    }

    #[test]
    fn cost_examples() {
        let zero =
            Trajectory { t: vec![0.0, 1.0, 2.0], omega: vec![0.0; 3], p_out: vec![0.0; 3], ..Default::default() };
        assert_eq!(frequency_cost(&zero), 0.0);
        let c = Trajectory { t: vec![0.0, 0.5, 3.0], omega: vec![0.2; 3], p_out: vec![0.0; 3], ..Default::default() };
        assert_abs_diff_eq!(frequency_cost(&c), 0.5 * 0.04 * 3.0, epsilon = 1e-15);
        let dt = 1e-3;
        let t: Vec<f64> = (0..=40_000).map(|k| k as f64 * dt).collect();
        let omega: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        let tr = Trajectory { p_out: vec![0.0; t.len()], t, omega, ..Default::default() };
        assert_abs_diff_eq!(frequency_cost(&tr), 0.25, epsilon = 1e-6);
    }
}
