use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("topology error: line {line} references unknown bus {bus}")]
    DanglingLine { line: usize, bus: usize },
    #[error("topology error: line {line} connects bus {bus} to itself")]
    SelfLoop { line: usize, bus: usize },
    #[error("topology error: duplicate bus id {0}")]
    DuplicateBus(usize),
    #[error("topology error: {what} references unknown bus {bus}")]
    UnknownBus { what: String, bus: usize },
    #[error("network is singular: {0}")]
    Singular(String),
    #[error("infeasible dispatch: {reason} (final mismatch {mismatch:.3e} pu after {iterations} iterations)")]
    InfeasibleDispatch { reason: String, mismatch: f64, iterations: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("poisoned measurement: {0} is not finite")]
    PoisonedMeasurement(&'static str),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("dynamics evaluation returned a non-finite value at component {0}")]
    NonFinite(usize),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("non-finite state at t={t:.6} s in device {device}")]
    NonFiniteState { t: f64, device: String },
    #[error("controller {controller} returned a non-finite output at t={t:.6} s")]
    NonFiniteControl { controller: String, t: f64 },
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{entity} {id} does not exist (referenced by {by})")]
    MissingEntity { entity: &'static str, id: String, by: String },
    #[error("invalid value for {key}: {reason}")]
    InvalidValue { key: String, reason: String },
}
