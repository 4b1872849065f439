//! Convex-integration laboratory on the flat torus `[-1, 1]^N`.
//!
//! Spectral calculus, pointwise symmetric-matrix algebra, subsolution
//! certificates, oscillatory perturbations and the iteration drivers built on
//! them, plus the Euler-Fourier and quantum-fluid model bundles.

// `!(x > 0.0)` also rejects NaN, which is the point
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::should_implement_trait)]

pub mod cif;
pub mod driver;
pub mod error;
pub mod field;
pub mod grid;
pub mod models;
pub mod oscillator;
pub mod relaxation;
pub mod spectral;
pub mod tensor;
pub mod torus;

pub use driver::{
    run_improvement, run_jump_recursion, weak_distance, DriverOutcome, IterationRecord,
    IterationSchedule, IterationTrace,
};
pub use error::{Error, Result};
pub use field::{sym_index, Field, FieldKind, SpaceTimeField, SpaceTimeMask};
pub use grid::TorusGrid;
pub use models::{
    Capillarity, EulerFourierBundle, EulerFourierData, GammaLaw, QuantumData, ScalarSpec, Substeps,
};
pub use oscillator::{oscillatory_step, LocalState, OscillatorParams, PerturbationPair};
pub use relaxation::{
    verify_subsolution, verify_weak_solution, OperatorBundle, SubsolutionState, Tolerances,
    VerificationReport,
};
