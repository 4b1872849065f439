use thiserror::Error;

use crate::field::FieldKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("field kind mismatch: expected {expected:?}, found {found:?}")]
    KindMismatch {
        expected: FieldKind,
        found: FieldKind,
    },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("field data has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("input must have zero mean, found mean {mean:e}")]
    NonZeroMean { mean: f64 },

    #[error("density must be positive, found {value:e}{}", at_node(*.slice, *.node))]
    NonPositiveDensity {
        value: f64,
        slice: Option<usize>,
        node: Option<usize>,
    },

    #[error("operator bundle violation: {0}")]
    BundleViolation(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time step {dt:e} exceeds the advective stability bound {bound:e}")]
    StabilityBound { dt: f64, bound: f64 },

    #[error("energy is negative (min {min_energy:e}); Z must be at least {z_floor:e}")]
    EnergyFloor { min_energy: f64, z_floor: f64 },

    #[error("degenerate local state: {0}")]
    Degenerate(String),

    #[error("driver halted at step {step}: {reason}")]
    DriverHalt { step: usize, reason: String },

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at_node(slice: Option<usize>, node: Option<usize>) -> String {
    match (slice, node) {
        (Some(s), Some(n)) => format!(" at slice {s}, node {n}"),
        (Some(s), None) => format!(" at slice {s}"),
        (None, Some(n)) => format!(" at node {n}"),
        (None, None) => String::new(),
    }
}
