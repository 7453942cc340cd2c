//! Classical synchronous machine: swing equation, droop governor and the
//! reactance-based damping estimate.

use crate::error::ControlError;
use crate::vsg::VoltageLoopParams;

/// Synchronous speed at 60 Hz, rad/s.
pub const OMEGA_S: f64 = 2.0 * std::f64::consts::PI * 60.0;

/// Machine constants on the system base. Speed is in rad/s, so `m` is in
/// pu·s²/rad and `d` in pu·s/rad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgParams {
    pub m: f64,
    pub d: f64,
    /// Step-up transformer reactance, pu.
    pub x: f64,
    pub xq_t: f64,
    pub xq_st: f64,
    pub tq_st: f64,
    pub p_mech: f64,
    /// Speed droop on the machine rating; zero disables the governor.
    pub governor_droop: f64,
    /// Governor lag, s. Zero makes the droop act instantly.
    pub governor_time_constant: f64,
    /// Machine rating on the system base.
    pub rating: f64,
    pub voltage: VoltageLoopParams,
}

impl Default for SgParams {
    fn default() -> Self {
        Self {
            m: 2.0 * 6.4 / (OMEGA_S),
            d: 68.95 / 100.0 / OMEGA_S,
            x: 0.0,
            xq_t: 0.1969,
            xq_st: 0.1,
            tq_st: 0.05,
            p_mech: 0.0,
            governor_droop: 0.05,
            governor_time_constant: 0.0,
            rating: 1.0,
            voltage: VoltageLoopParams::default(),
        }
    }
}

impl SgParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.m > 0.0) {
            return Err(ControlError::InvalidParameter {
                name: "m",
                reason: format!("must be positive, got {}", self.m),
            });
        }
        if !(self.d >= 0.0) {
            return Err(ControlError::InvalidParameter {
                name: "d",
                reason: format!("must be non-negative, got {}", self.d),
            });
        }
        if !(self.xq_t > self.xq_st && self.xq_st > 0.0) {
            return Err(ControlError::InvalidParameter {
                name: "xq_st",
                reason: format!("need xq_t > xq_st > 0, got {} / {}", self.xq_t, self.xq_st),
            });
        }
        if !(self.tq_st > 0.0) {
            return Err(ControlError::InvalidParameter { name: "tq_st", reason: "must be positive".into() });
        }
        if self.governor_droop < 0.0 || self.governor_time_constant < 0.0 {
            return Err(ControlError::InvalidParameter {
                name: "governor",
                reason: "droop and time constant must be non-negative".into(),
            });
        }
        self.voltage.validate()
    }

    /// Governor gain in pu power per rad/s.
    pub fn governor_gain(&self) -> f64 {
        if self.governor_droop > 0.0 {
            self.rating / (self.governor_droop * OMEGA_S)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SgState {
    /// Rotor angle, unwrapped.
    pub delta: f64,
    pub omega: f64,
    pub v_err_int: f64,
    /// Governor output; only used when the governor has a lag.
    pub p_gov: f64,
}

fn droop_power(state: &SgState, params: &SgParams) -> f64 {
    params.p_mech - params.governor_gain() * state.omega
}

pub fn swing_derivatives(state: &SgState, params: &SgParams, p_elec: f64) -> (f64, f64) {
    let p_mech = if params.governor_time_constant > 0.0 { state.p_gov } else { droop_power(state, params) };
    (state.omega, (-params.d * state.omega + p_mech - p_elec) / params.m)
}

/// Rate of the lagged governor output; zero for an instantaneous droop.
pub fn governor_derivative(state: &SgState, params: &SgParams) -> f64 {
    if params.governor_time_constant > 0.0 {
        (droop_power(state, params) - state.p_gov) / params.governor_time_constant
    } else {
        0.0
    }
}

/// `D = (X'q - X''q)/(X + X'q) * X'q/X''q * T''q * V`.
pub fn damping_from_reactances(x: f64, xq_t: f64, xq_st: f64, tq_st: f64, v_out: f64) -> Result<f64, ControlError> {
    if xq_st == 0.0 {
        return Err(ControlError::InvalidParameter { name: "xq_st", reason: "division by zero".into() });
    }
    if x + xq_t == 0.0 {
        return Err(ControlError::InvalidParameter { name: "x + xq_t", reason: "division by zero".into() });
    }
    Ok((xq_t - xq_st) / (x + xq_t) * (xq_t / xq_st) * tq_st * v_out)
}

/// True when two rotor angles in one island have drifted more than half a
/// turn apart.
pub fn lost_synchronism(deltas: &[f64]) -> bool {
    let (lo, hi) = deltas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    hi - lo > std::f64::consts::PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn machine() -> SgParams {
        SgParams { m: 10.0, d: 2.0, p_mech: 1.0, governor_droop: 0.0, ..SgParams::default() }
    }

    #[test]
    fn swing_examples() {
        let p = machine();
        assert_eq!(swing_derivatives(&SgState::default(), &p, 1.0), (0.0, 0.0));
        let (dd, dw) = swing_derivatives(&SgState { omega: 0.1, ..Default::default() }, &p, 0.9);
        assert_eq!(dd, 0.1);
        assert_abs_diff_eq!(dw, -0.01, epsilon = 1e-15);
        let p = SgParams { d: 0.0, ..p };
        assert_eq!(swing_derivatives(&SgState { omega: 0.5, ..Default::default() }, &p, 1.0), (0.5, 0.0));
    }

    #[test]
    fn governor_opposes_speed() {
        let p = SgParams { governor_droop: 0.05, rating: 2.0, d: 0.0, ..machine() };
        let (_, dw) = swing_derivatives(&SgState { omega: 1.0, ..Default::default() }, &p, 1.0);
        assert_abs_diff_eq!(dw, -2.0 / (0.05 * OMEGA_S) / 10.0, epsilon = 1e-15);
    }

    #[test]
    fn lagged_governor_tracks_droop() {
        let p = SgParams { governor_droop: 0.05, governor_time_constant: 0.5, ..machine() };
        let s = SgState { omega: 0.2, p_gov: 1.0, ..Default::default() };
        let (_, dw) = swing_derivatives(&s, &p, 1.0);
        assert_abs_diff_eq!(dw, -p.d * 0.2 / p.m, epsilon = 1e-15);
        let target = 1.0 - p.governor_gain() * 0.2;
        assert_abs_diff_eq!(governor_derivative(&s, &p), (target - 1.0) / 0.5, epsilon = 1e-15);
        assert_eq!(governor_derivative(&s, &machine()), 0.0);
    }

    #[test]
    fn damping_examples() {
        assert_abs_diff_eq!(damping_from_reactances(0.1, 0.5, 0.2, 0.05, 1.0).unwrap(), 0.0625, epsilon = 1e-15);
        assert_eq!(damping_from_reactances(0.1, 0.3, 0.3, 0.05, 1.0).unwrap(), 0.0);
        assert_eq!(damping_from_reactances(0.1, 0.5, 0.2, 0.05, 0.0).unwrap(), 0.0);
        assert!(damping_from_reactances(0.1, 0.5, 0.0, 0.05, 1.0).is_err());
        assert!(damping_from_reactances(-0.5, 0.5, 0.2, 0.05, 1.0).is_err());
    }

    #[test]
    fn synchronism_detector() {
        assert!(!lost_synchronism(&[0.0, 1.0, 3.0]));
        assert!(lost_synchronism(&[-0.2, 3.0]));
        assert!(!lost_synchronism(&[]));
    }

    proptest! {
        #[test]
        fn damping_monotonicity(
            x in 0.0..0.5f64,
            xq_st in 0.05..0.3f64,
            extra in 0.01..0.5f64,
            tq in 0.01..0.2f64,
            v in 0.1..1.5f64,
            step in 0.001..0.1f64,
        ) {
            let xq_t = xq_st + extra;
            let d = damping_from_reactances(x, xq_t, xq_st, tq, v).unwrap();
            prop_assert!(damping_from_reactances(x, xq_t, xq_st, tq + step, v).unwrap() > d);
            prop_assert!(damping_from_reactances(x, xq_t, xq_st, tq, v + step).unwrap() > d);
            prop_assert!(damping_from_reactances(x + step, xq_t, xq_st, tq, v).unwrap() < d);
        }
    }
}
