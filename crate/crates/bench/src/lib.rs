//! Shared fixtures for the criterion benches.

use std::f64::consts::PI;

use cil_core::oscillator::LocalState;
use cil_core::tensor::SymMat;
use cil_core::{Field, FieldKind, SpaceTimeMask, TorusGrid};

/// Deterministic spread of symmetric matrices of the given dimension.
pub fn matrices(dim: usize, count: usize) -> Vec<SymMat> {
    let len = dim * (dim + 1) / 2;
    (0..count)
        .map(|i| {
            let packed: Vec<f64> = (0..len)
                .map(|j| ((i * 7 + j * 13) as f64 * 0.618).sin())
                .collect();
            SymMat::from_packed(dim, &packed)
        })
        .collect()
}

/// A smooth vector field with both a gradient and a solenoidal part.
pub fn smooth_vector(dim: usize, n: usize) -> Field {
    let grid = TorusGrid::uniform(dim, n, 2, 1.0).expect("valid grid");
    Field::from_fn(&grid, FieldKind::Vector, |x, out| {
        for (a, o) in out.iter_mut().enumerate() {
            let b = (a + 1) % x.len();
            *o = (PI * x[a]).sin() * (2.0 * PI * x[b]).cos() + 0.3 * (3.0 * PI * x[b]).sin();
        }
    })
}

/// Constant local state `h = 0, r = 1, e = 1` on the open time interval.
pub fn constant_state(n: usize, nt: usize) -> LocalState {
    let t = (nt - 1) as f64;
    let grid = TorusGrid::uniform(2, n, nt, t).expect("valid grid");
    let umask = SpaceTimeMask::time_window(&grid, 0.0, t);
    LocalState::constant(&umask, &[0.0, 0.0], 1.0, 1.0).expect("valid state")
}
