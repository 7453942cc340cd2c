//! Virtual synchronous generator with dynamic inertia and damping.
//!
//! States are the frequency deviation `omega`, the internal angle `theta`,
//! the filtered limit penalty `gamma` and the voltage-error integral.

use crate::error::ControlError;

/// Voltage PI loop shared by inverters and synchronous machines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageLoopParams {
    /// Terminal voltage reference, pu.
    pub v_ref: f64,
    /// Nominal internal voltage the PI correction is added to, pu.
    pub v_setpoint: f64,
    pub c_p: f64,
    pub c_i: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for VoltageLoopParams {
    fn default() -> Self {
        Self { v_ref: 1.0, v_setpoint: 1.0, c_p: 0.2, c_i: 2.0, v_min: 0.7, v_max: 1.5 }
    }
}

impl VoltageLoopParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.v_min < self.v_max) {
            return Err(ControlError::InvalidParameter {
                name: "v_min",
                reason: format!("must be below v_max ({} >= {})", self.v_min, self.v_max),
            });
        }
        if !(self.v_min..=self.v_max).contains(&self.v_setpoint) {
            return Err(ControlError::InvalidParameter {
                name: "v_setpoint",
                reason: format!("{} outside [{}, {}]", self.v_setpoint, self.v_min, self.v_max),
            });
        }
        if self.c_p < 0.0 || self.c_i < 0.0 {
            return Err(ControlError::InvalidParameter {
                name: "c_p/c_i",
                reason: "gains must be non-negative".into(),
            });
        }
        Ok(())
    }

    fn unclamped(&self, error: f64, integral: f64) -> f64 {
        self.v_setpoint + self.c_p * error + self.c_i * integral
    }

    /// Clamped output for the given terminal voltage and integral.
    pub fn output(&self, v_out: f64, integral: f64) -> f64 {
        self.unclamped(self.v_ref - v_out, integral).clamp(self.v_min, self.v_max)
    }

    /// Rate of the integral state: the error, or zero while the output is
    /// saturated in the direction the error would push it.
    pub fn integral_rate(&self, v_out: f64, integral: f64) -> f64 {
        let e = self.v_ref - v_out;
        let u = self.unclamped(e, integral);
        if (u >= self.v_max && e > 0.0) || (u <= self.v_min && e < 0.0) {
            0.0
        } else {
            e
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VsgParams {
    pub tau_omega: f64,
    pub tau_gamma: f64,
    pub c_alpha: f64,
    pub c_theta: f64,
    pub c_omega: f64,
    /// Optional floor on the inverted damping; zero leaves it inactive.
    pub alpha_min: f64,
    pub p_ref: f64,
    pub p_max: f64,
    pub p_min: f64,
    pub omega_ref: f64,
    pub voltage: VoltageLoopParams,
}

impl Default for VsgParams {
    fn default() -> Self {
        Self {
            tau_omega: 0.5,
            tau_gamma: 0.05,
            c_alpha: 10.0,
            c_theta: 0.1,
            c_omega: 1.0,
            alpha_min: 0.0,
            p_ref: 0.0,
            p_max: 1.0,
            p_min: 0.0,
            omega_ref: 0.0,
            voltage: VoltageLoopParams::default(),
        }
    }
}

impl VsgParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        let positive = [
            ("tau_omega", self.tau_omega),
            ("tau_gamma", self.tau_gamma),
            ("c_alpha", self.c_alpha),
            ("c_theta", self.c_theta),
            ("c_omega", self.c_omega),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ControlError::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        if !(self.alpha_min >= 0.0) {
            return Err(ControlError::InvalidParameter {
                name: "alpha_min",
                reason: format!("must be non-negative, got {}", self.alpha_min),
            });
        }
        if !(self.p_min < self.p_ref && self.p_ref <= self.p_max) {
            return Err(ControlError::InvalidParameter {
                name: "p_ref",
                reason: format!("need p_min < p_ref <= p_max, got {} / {} / {}", self.p_min, self.p_ref, self.p_max),
            });
        }
        self.voltage.validate()
    }

    /// `alpha = max(c_alpha |gamma|, alpha_min)`.
    pub fn inverted_damping(&self, gamma: f64) -> f64 {
        (self.c_alpha * gamma.abs()).max(self.alpha_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VsgState {
    pub omega: f64,
    pub theta: f64,
    pub gamma: f64,
    pub v_err_int: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VsgMeasurements {
    pub p_out: f64,
    pub q_out: f64,
    pub v_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VsgOutput {
    pub theta_set: f64,
    pub v_set: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VsgDerivatives {
    pub domega: f64,
    pub dtheta: f64,
    pub dgamma: f64,
}

/// Violation of the active-power band; positive above `p_max`, negative
/// below `p_min`, zero inside.
pub fn limit_penalty_target(p_out: f64, p_max: f64, p_min: f64) -> f64 {
    let upper = (p_out - p_max).max(0.0);
    let lower = (p_out - p_min).min(0.0);
    debug_assert!(upper == 0.0 || lower == 0.0, "both limits active with p_min < p_max");
    upper + lower
}

pub fn vsg_derivatives(
    state: &VsgState,
    params: &VsgParams,
    meas: &VsgMeasurements,
) -> Result<VsgDerivatives, ControlError> {
    if !meas.p_out.is_finite() {
        return Err(ControlError::PoisonedMeasurement("p_out"));
    }
    if !meas.q_out.is_finite() {
        return Err(ControlError::PoisonedMeasurement("q_out"));
    }
    if !meas.v_out.is_finite() {
        return Err(ControlError::PoisonedMeasurement("v_out"));
    }
    let alpha = params.inverted_damping(state.gamma);
    let penalty = limit_penalty_target(meas.p_out, params.p_max, params.p_min);
    Ok(VsgDerivatives {
        domega: (-state.omega + alpha * (params.p_ref - meas.p_out)) / params.tau_omega,
        dtheta: state.omega - params.c_omega * state.gamma,
        dgamma: (-state.gamma + penalty) / params.tau_gamma,
    })
}

pub fn vsg_output_angle(state: &VsgState, params: &VsgParams, t: f64) -> f64 {
    state.theta - params.c_theta * state.gamma + params.omega_ref * t
}

pub fn vsg_output(state: &VsgState, params: &VsgParams, meas: &VsgMeasurements, t: f64) -> VsgOutput {
    VsgOutput {
        theta_set: vsg_output_angle(state, params, t),
        v_set: params.voltage.output(meas.v_out, state.v_err_int),
    }
}

/// One discrete PI update. The integral advances by the trapezoid rule
/// unless the output is saturated against the error sign.
pub fn voltage_pi(v_err_int: f64, prev_error: f64, params: &VoltageLoopParams, v_out: f64, dt: f64) -> (f64, f64) {
    assert!(dt > 0.0, "dt must be positive");
    let e = params.v_ref - v_out;
    let candidate = v_err_int + 0.5 * dt * (prev_error + e);
    let u = params.unclamped(e, candidate);
    let frozen = (u > params.v_max && e > 0.0) || (u < params.v_min && e < 0.0);
    let integral = if frozen { v_err_int } else { candidate };
    (params.unclamped(e, integral).clamp(params.v_min, params.v_max), integral)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VirtualParameters {
    Finite {
        inertia: f64,
        damping: f64,
    },
    /// `alpha = 0`: the sliding regime with frozen frequency.
    Infinite,
}

pub fn effective_virtual_parameters(params: &VsgParams, gamma: f64) -> VirtualParameters {
    let alpha = params.inverted_damping(gamma);
    if alpha == 0.0 {
        VirtualParameters::Infinite
    } else {
        VirtualParameters::Finite { inertia: params.tau_omega / alpha, damping: 1.0 / alpha }
    }
}
